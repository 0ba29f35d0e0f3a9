#include "dhhqa/distort.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "dhhqa/rng.hpp"

namespace fs = std::filesystem;

namespace dhhqa {

const char* to_string(DistortionKind k) {
  switch (k) {
    case DistortionKind::GeometryNoise: return "geometry_noise";
    case DistortionKind::GeometryShift: return "geometry_shift";
    case DistortionKind::GeometrySimplify: return "geometry_simplify";
    case DistortionKind::GeometryQuantize: return "geometry_quantize";
    case DistortionKind::TextureDownsample: return "texture_downsample";
    case DistortionKind::TextureQuantize: return "texture_quantize";
    case DistortionKind::ColorNoise: return "color_noise";
  }
  return "?";
}

DistortionKind distortion_kind_from_string(const std::string& s) {
  for (int i = 0; i < kNumDistortionKinds; ++i) {
    const auto k = static_cast<DistortionKind>(i);
    if (s == to_string(k)) return k;
  }
  throw std::invalid_argument("unknown distortion kind: " + s);
}

void DistortionSpec::validate() const {
  if (level < 1 || level > kNumDistortionLevels)
    throw std::invalid_argument("distortion level must be in 1..4");
}

namespace {

TexturedMesh geometry_noise(const TexturedMesh& mesh, int level, std::uint64_t seed) {
  TexturedMesh out = mesh;
  const double sigma = level * 0.001 * mesh.bbox_diagonal();
  Rng rng(seed);
  for (Vec3& v : out.vertices)
    for (int k = 0; k < 3; ++k) v[k] += sigma * rng.gaussian();
  return estimate_normals(out);
}

TexturedMesh geometry_shift(const TexturedMesh& mesh, int level, std::uint64_t seed) {
  TexturedMesh out = mesh;
  const double diag = mesh.bbox_diagonal();
  const double amplitude = level * 0.002 * diag;
  Rng rng(seed);
  // three random sinusoids, each with its own displacement direction,
  // wave vector and phase; per-sinusoid amplitude sums to the total
  struct Wave {
    Vec3 dir, k;
    double phase;
  };
  std::array<Wave, 3> waves;
  for (Wave& w : waves) {
    Vec3 d{rng.gaussian(), rng.gaussian(), rng.gaussian()};
    const double dl = norm(d);
    w.dir = dl > 0.0 ? d * (1.0 / dl) : Vec3{1, 0, 0};
    Vec3 kv{rng.gaussian(), rng.gaussian(), rng.gaussian()};
    const double kl = norm(kv);
    const double freq = 2.0 * M_PI / diag * rng.uniform(1.0, 3.0);
    w.k = kl > 0.0 ? kv * (freq / kl) : Vec3{freq, 0, 0};
    w.phase = rng.uniform(0.0, 2.0 * M_PI);
  }
  for (Vec3& v : out.vertices) {
    Vec3 disp{0, 0, 0};
    for (const Wave& w : waves)
      disp = disp + w.dir * ((amplitude / 3.0) * std::sin(dot(w.k, v) + w.phase));
    v = v + disp;
  }
  return estimate_normals(out);
}

// faces surviving vertex clustering at a given grid resolution
std::size_t surviving_faces(const TexturedMesh& mesh, const Vec3& bmin, const Vec3& ext,
                            double cells, std::vector<std::int64_t>& cluster_of) {
  cluster_of.resize(mesh.vertices.size());
  for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
    std::int64_t id = 0;
    for (int k = 0; k < 3; ++k) {
      const double t = ext[k] > 0.0 ? (mesh.vertices[i][k] - bmin[k]) / ext[k] : 0.0;
      const auto cell = static_cast<std::int64_t>(
          std::min(std::floor(t * cells), cells - 1.0));
      id = id * static_cast<std::int64_t>(cells + 1.0) + std::max<std::int64_t>(cell, 0);
    }
    cluster_of[i] = id;
  }
  std::size_t n = 0;
  for (const Face& f : mesh.faces) {
    const auto a = cluster_of[f.v[0]], b = cluster_of[f.v[1]], c = cluster_of[f.v[2]];
    if (a != b && b != c && a != c) ++n;
  }
  return n;
}

TexturedMesh geometry_simplify(const TexturedMesh& mesh, int level) {
  const double fraction = std::pow(0.5, level);  // 50, 25, 12.5, 6.25 %
  const auto target = static_cast<double>(mesh.faces.size()) * fraction;
  const Vec3 bmin = mesh.bbox_min();
  const Vec3 ext = mesh.bbox_max() - bmin;

  // bisection on the clustering grid resolution: more cells keep more faces
  std::vector<std::int64_t> cluster_of;
  double lo = 1.0, hi = 1024.0;
  double best_cells = hi;
  double best_err = std::abs(static_cast<double>(surviving_faces(mesh, bmin, ext, hi, cluster_of)) - target);
  for (int it = 0; it < 60; ++it) {
    const double mid = 0.5 * (lo + hi);
    const auto n = static_cast<double>(surviving_faces(mesh, bmin, ext, mid, cluster_of));
    if (std::abs(n - target) < best_err) {
      best_err = std::abs(n - target);
      best_cells = mid;
    }
    if (n > target)
      hi = mid;
    else
      lo = mid;
  }

  surviving_faces(mesh, bmin, ext, best_cells, cluster_of);
  // cluster centroid positions
  std::map<std::int64_t, std::pair<Vec3, int>> clusters;
  for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
    auto& [sum, cnt] = clusters[cluster_of[i]];
    sum = sum + mesh.vertices[i];
    ++cnt;
  }
  std::map<std::int64_t, int> new_index;
  TexturedMesh out;
  out.name = mesh.name;
  out.uvs = mesh.uvs;
  out.texture = mesh.texture;
  for (auto& [id, sc] : clusters) {
    new_index[id] = static_cast<int>(out.vertices.size());
    out.vertices.push_back(sc.first * (1.0 / sc.second));
  }
  for (const Face& f : mesh.faces) {
    const auto a = cluster_of[f.v[0]], b = cluster_of[f.v[1]], c = cluster_of[f.v[2]];
    if (a == b || b == c || a == c) continue;
    Face nf = f;
    nf.v = {new_index[a], new_index[b], new_index[c]};
    nf.n = {-1, -1, -1};
    out.faces.push_back(nf);
  }
  if (out.faces.size() < 4) throw std::runtime_error("geometry_simplify: fewer than 4 faces would remain");
  return estimate_normals(out);
}

TexturedMesh geometry_quantize(const TexturedMesh& mesh, int level) {
  const int bits = 12 - level;  // 11, 10, 9, 8
  const double steps = static_cast<double>((1u << bits) - 1);
  const Vec3 bmin = mesh.bbox_min();
  const Vec3 ext = mesh.bbox_max() - bmin;
  TexturedMesh out = mesh;
  for (Vec3& v : out.vertices)
    for (int k = 0; k < 3; ++k) {
      if (ext[k] <= 0.0) continue;
      const double t = std::round((v[k] - bmin[k]) / ext[k] * steps);
      v[k] = bmin[k] + t / steps * ext[k];
    }
  return estimate_normals(out);
}

Image texture_downsample(const Image& tex, int level) {
  const int factor = 1 << level;  // 2, 4, 8, 16
  const int w = std::max(1, tex.width / factor);
  const int h = std::max(1, tex.height / factor);
  return resize_bilinear(resize_bilinear(tex, w, h), tex.width, tex.height);
}

Image texture_quantize(const Image& tex, int level) {
  const int bits = 7 - level;  // 6, 5, 4, 3
  const double levels = static_cast<double>((1 << bits) - 1);
  Image out = tex;
  for (std::uint8_t& c : out.pixels) {
    const double q = std::round(c / 255.0 * levels);
    c = static_cast<std::uint8_t>(std::lround(q / levels * 255.0));
  }
  return out;
}

Image color_noise(const Image& tex, int level, std::uint64_t seed) {
  const double sigma = level * 5.0;
  Image out = tex;
  Rng rng(seed);
  for (std::uint8_t& c : out.pixels)
    c = static_cast<std::uint8_t>(std::clamp(std::lround(c + sigma * rng.gaussian()), 0l, 255l));
  return out;
}

}  // namespace

TexturedMesh apply_distortion(const TexturedMesh& mesh, const DistortionSpec& spec) {
  spec.validate();
  mesh.validate();
  switch (spec.kind) {
    case DistortionKind::GeometryNoise: return geometry_noise(mesh, spec.level, spec.seed);
    case DistortionKind::GeometryShift: return geometry_shift(mesh, spec.level, spec.seed);
    case DistortionKind::GeometrySimplify: return geometry_simplify(mesh, spec.level);
    case DistortionKind::GeometryQuantize: return geometry_quantize(mesh, spec.level);
    case DistortionKind::TextureDownsample: {
      TexturedMesh out = mesh;
      out.texture = texture_downsample(mesh.texture, spec.level);
      return out;
    }
    case DistortionKind::TextureQuantize: {
      TexturedMesh out = mesh;
      out.texture = texture_quantize(mesh.texture, spec.level);
      return out;
    }
    case DistortionKind::ColorNoise: {
      TexturedMesh out = mesh;
      out.texture = color_noise(mesh.texture, spec.level, spec.seed);
      return out;
    }
  }
  throw std::logic_error("unreachable distortion kind");
}

std::vector<SampleRecord> build_corpus(const std::vector<TexturedMesh>& meshes,
                                       const std::string& out_dir, std::uint64_t seed,
                                       const RenderConfig& render_cfg) {
  if (meshes.size() < 5)
    throw std::invalid_argument("build_corpus: need at least 5 source meshes (one per fold)");
  std::vector<SampleRecord> records;
  records.reserve(meshes.size() * kNumDistortionKinds * kNumDistortionLevels);
  for (const TexturedMesh& mesh : meshes) {
    const fs::path content_dir = fs::path(out_dir) / mesh.name;
    fs::create_directories(content_dir);
    for (int ki = 0; ki < kNumDistortionKinds; ++ki) {
      const auto kind = static_cast<DistortionKind>(ki);
      for (int level = 1; level <= kNumDistortionLevels; ++level) {
        const std::string ctx =
            mesh.name + "/" + to_string(kind) + "/" + std::to_string(level);
        DistortionSpec spec{kind, level, derive_seed(seed, ctx)};
        try {
          const TexturedMesh distorted = apply_distortion(mesh, spec);
          const ProjectionImage proj = render_front(distorted, render_cfg);
          const fs::path png =
              content_dir / (std::string(to_string(kind)) + "_" + std::to_string(level) + ".png");
          save_png(proj.image, png.string());

          SampleRecord rec;
          rec.content_id = mesh.name;
          rec.spec = spec;
          rec.projection_path = png.string();
          Rng mos_rng(derive_seed(seed, ctx + "/mos"));
          rec.pseudo_mos = 100.0 - 20.0 * (level - 1) - mos_rng.uniform(0.0, 5.0);
          records.push_back(std::move(rec));
        } catch (const std::exception& e) {
          throw std::runtime_error("build_corpus [" + ctx + "]: " + e.what());
        }
      }
    }
  }
  return records;
}

void save_manifest(const std::vector<SampleRecord>& records, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write manifest: " + path);
  out << "content_id,kind,level,seed,projection_path,mos\n";
  char buf[64];
  for (const SampleRecord& r : records) {
    std::snprintf(buf, sizeof buf, "%.17g", r.pseudo_mos);
    out << r.content_id << ',' << to_string(r.spec.kind) << ',' << r.spec.level << ','
        << r.spec.seed << ',' << r.projection_path << ',' << buf << "\n";
  }
}

std::vector<SampleRecord> load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open manifest: " + path);
  std::string line;
  if (!std::getline(in, line) || line.rfind("content_id,kind,level,seed", 0) != 0)
    throw std::runtime_error("manifest missing expected header: " + path);
  std::vector<SampleRecord> records;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (fields.size() != 6)
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": expected 6 fields");
    SampleRecord r;
    r.content_id = fields[0];
    r.spec.kind = distortion_kind_from_string(fields[1]);
    r.spec.level = std::stoi(fields[2]);
    r.spec.seed = std::stoull(fields[3]);
    r.projection_path = fields[4];
    r.pseudo_mos = std::stod(fields[5]);
    r.spec.validate();
    records.push_back(std::move(r));
  }
  return records;
}

}  // namespace dhhqa
