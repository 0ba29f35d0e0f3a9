#include "dhhqa/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <stdexcept>

#include "dhhqa/rng.hpp"

namespace fs = std::filesystem;

namespace dhhqa {

void TexturedMesh::validate() const {
  if (vertices.size() < 3) throw std::invalid_argument("mesh needs at least 3 vertices");
  if (faces.empty()) throw std::invalid_argument("mesh needs at least 1 face");
  for (const Face& f : faces) {
    for (int k = 0; k < 3; ++k) {
      if (f.v[k] < 0 || f.v[k] >= static_cast<int>(vertices.size()))
        throw std::invalid_argument("face vertex index out of range");
      if (f.uv[k] < 0 || f.uv[k] >= static_cast<int>(uvs.size()))
        throw std::invalid_argument("face uv index out of range");
      if (f.n[k] >= static_cast<int>(normals.size()))
        throw std::invalid_argument("face normal index out of range");
    }
  }
  for (const Vec3& n : normals) {
    if (std::abs(norm(n) - 1.0) > 1e-6) throw std::invalid_argument("non-unit normal in mesh");
  }
  if (texture.width <= 0 || texture.height <= 0) throw std::invalid_argument("mesh has no texture");
}

Vec3 TexturedMesh::bbox_min() const {
  Vec3 m = vertices.at(0);
  for (const Vec3& v : vertices)
    for (int k = 0; k < 3; ++k) m[k] = std::min(m[k], v[k]);
  return m;
}

Vec3 TexturedMesh::bbox_max() const {
  Vec3 m = vertices.at(0);
  for (const Vec3& v : vertices)
    for (int k = 0; k < 3; ++k) m[k] = std::max(m[k], v[k]);
  return m;
}

double TexturedMesh::bbox_diagonal() const { return norm(bbox_max() - bbox_min()); }

Vec3 geometric_center(const TexturedMesh& mesh) {
  if (mesh.vertices.empty()) throw std::invalid_argument("geometric_center: empty mesh");
  Vec3 c{0, 0, 0};
  for (const Vec3& v : mesh.vertices) c = c + v;
  return c * (1.0 / static_cast<double>(mesh.vertices.size()));
}

TexturedMesh estimate_normals(const TexturedMesh& mesh) {
  if (mesh.faces.empty()) throw std::invalid_argument("estimate_normals: mesh has no faces");
  TexturedMesh out = mesh;
  std::vector<Vec3> acc(mesh.vertices.size(), Vec3{0, 0, 0});
  for (const Face& f : mesh.faces) {
    const Vec3& a = mesh.vertices[f.v[0]];
    const Vec3& b = mesh.vertices[f.v[1]];
    const Vec3& c = mesh.vertices[f.v[2]];
    // cross product length is twice the face area, so this sum is
    // area-weighted without an explicit weight
    const Vec3 fn = cross(b - a, c - a);
    if (norm(fn) == 0.0) continue;  // zero-area face contributes nothing
    for (int k = 0; k < 3; ++k) acc[f.v[k]] = acc[f.v[k]] + fn;
  }
  out.normals.resize(mesh.vertices.size());
  bool warned = false;
  for (std::size_t i = 0; i < acc.size(); ++i) {
    const double len = norm(acc[i]);
    if (len == 0.0) {
      out.normals[i] = {0, 0, 1};
      if (!warned) {
        std::cerr << "estimate_normals: isolated or degenerate vertex, arbitrary normal assigned\n";
        warned = true;
      }
    } else {
      out.normals[i] = acc[i] * (1.0 / len);
    }
  }
  for (Face& f : out.faces) f.n = f.v;
  return out;
}

ColoredPointCloud mesh_to_pointcloud(const TexturedMesh& mesh, std::size_t n_samples,
                                     std::uint64_t seed) {
  if (n_samples < 1) throw std::invalid_argument("mesh_to_pointcloud: n_samples must be >= 1");
  const TexturedMesh m = mesh.normals.empty() ? estimate_normals(mesh) : mesh;

  std::vector<double> cum_area(m.faces.size());
  double total = 0.0;
  for (std::size_t i = 0; i < m.faces.size(); ++i) {
    const Face& f = m.faces[i];
    const Vec3 e1 = m.vertices[f.v[1]] - m.vertices[f.v[0]];
    const Vec3 e2 = m.vertices[f.v[2]] - m.vertices[f.v[0]];
    total += 0.5 * norm(cross(e1, e2));
    cum_area[i] = total;
  }
  if (total <= 0.0) throw std::invalid_argument("mesh_to_pointcloud: total surface area is zero");

  ColoredPointCloud pc;
  pc.points.reserve(n_samples);
  pc.colors.reserve(n_samples);
  pc.normals.reserve(n_samples);
  Rng rng(seed);
  for (std::size_t s = 0; s < n_samples; ++s) {
    const double t = rng.uniform() * total;
    const std::size_t fi =
        std::lower_bound(cum_area.begin(), cum_area.end(), t) - cum_area.begin();
    const Face& f = m.faces[std::min(fi, m.faces.size() - 1)];
    // barycentric-uniform
    double u = rng.uniform(), v = rng.uniform();
    if (u + v > 1.0) {
      u = 1.0 - u;
      v = 1.0 - v;
    }
    const double w = 1.0 - u - v;
    const Vec3 p = m.vertices[f.v[0]] * w + m.vertices[f.v[1]] * u + m.vertices[f.v[2]] * v;
    const Vec2 uv{w * m.uvs[f.uv[0]][0] + u * m.uvs[f.uv[1]][0] + v * m.uvs[f.uv[2]][0],
                  w * m.uvs[f.uv[0]][1] + u * m.uvs[f.uv[1]][1] + v * m.uvs[f.uv[2]][1]};
    const auto rgb = sample_uv(m.texture, uv[0], uv[1]);
    Vec3 n{0, 0, 1};
    if (f.n[0] >= 0) {
      n = m.normals[f.n[0]] * w + m.normals[f.n[1]] * u + m.normals[f.n[2]] * v;
      const double len = norm(n);
      n = (len > 0.0) ? n * (1.0 / len) : Vec3{0, 0, 1};
    }
    pc.points.push_back(p);
    pc.colors.push_back({static_cast<std::uint8_t>(std::lround(std::clamp(rgb[0], 0.0, 255.0))),
                         static_cast<std::uint8_t>(std::lround(std::clamp(rgb[1], 0.0, 255.0))),
                         static_cast<std::uint8_t>(std::lround(std::clamp(rgb[2], 0.0, 255.0)))});
    pc.normals.push_back(n);
  }
  return pc;
}

namespace {

[[noreturn]] void parse_fail(const std::string& path, int line_no, const std::string& what) {
  throw std::runtime_error(path + ":" + std::to_string(line_no) + ": " + what);
}

// "3", "3/1", "3//2", "3/1/2" -> (v, vt, vn), zero-based, -1 when absent
std::array<int, 3> parse_corner(const std::string& tok, const std::string& path, int line_no) {
  std::array<int, 3> idx{-1, -1, -1};
  std::size_t pos = 0;
  for (int field = 0; field < 3 && pos <= tok.size(); ++field) {
    const std::size_t slash = tok.find('/', pos);
    const std::string part = tok.substr(pos, slash == std::string::npos ? std::string::npos : slash - pos);
    if (!part.empty()) {
      try {
        idx[field] = std::stoi(part);
      } catch (const std::exception&) {
        parse_fail(path, line_no, "malformed face corner '" + tok + "'");
      }
    }
    if (slash == std::string::npos) break;
    pos = slash + 1;
  }
  return idx;
}

std::string parse_mtl_texture(const std::string& mtl_path) {
  std::ifstream in(mtl_path);
  if (!in) throw std::runtime_error("cannot open material file: " + mtl_path);
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ss(line);
    std::string key;
    ss >> key;
    if (key == "map_Kd") {
      std::string tex;
      ss >> tex;
      if (!tex.empty()) return tex;
    }
  }
  throw std::runtime_error("no map_Kd entry in material file: " + mtl_path);
}

}  // namespace

TexturedMesh load_mesh(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open mesh: " + path);
  const fs::path dir = fs::path(path).parent_path();

  TexturedMesh mesh;
  mesh.name = fs::path(path).stem().string();
  std::string mtl_file;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ss(line);
    std::string key;
    ss >> key;
    if (key == "v") {
      Vec3 v;
      if (!(ss >> v[0] >> v[1] >> v[2])) parse_fail(path, line_no, "malformed vertex");
      mesh.vertices.push_back(v);
    } else if (key == "vn") {
      Vec3 n;
      if (!(ss >> n[0] >> n[1] >> n[2])) parse_fail(path, line_no, "malformed normal");
      const double len = norm(n);
      if (len > 0.0) n = n * (1.0 / len);
      mesh.normals.push_back(n);
    } else if (key == "vt") {
      Vec2 t;
      if (!(ss >> t[0] >> t[1])) parse_fail(path, line_no, "malformed texture coordinate");
      mesh.uvs.push_back(t);
    } else if (key == "f") {
      std::vector<std::array<int, 3>> corners;
      std::string tok;
      while (ss >> tok) corners.push_back(parse_corner(tok, path, line_no));
      if (corners.size() < 3) parse_fail(path, line_no, "face with fewer than 3 corners");
      const auto resolve = [&](int raw, std::size_t n, const char* what) -> int {
        if (raw == -1) return -1;
        const int idx = raw > 0 ? raw - 1 : static_cast<int>(n) + raw;  // negative = relative
        if (idx < 0 || idx >= static_cast<int>(n))
          parse_fail(path, line_no, std::string(what) + " index " + std::to_string(raw) + " out of range");
        return idx;
      };
      // fan triangulation for polygons
      for (std::size_t k = 2; k < corners.size(); ++k) {
        Face f;
        const std::array<int, 3> picks = {0, static_cast<int>(k - 1), static_cast<int>(k)};
        for (int c = 0; c < 3; ++c) {
          const auto& corner = corners[picks[c]];
          f.v[c] = resolve(corner[0], mesh.vertices.size(), "vertex");
          f.uv[c] = resolve(corner[1], mesh.uvs.size(), "uv");
          f.n[c] = resolve(corner[2], mesh.normals.size(), "normal");
          if (f.v[c] < 0) parse_fail(path, line_no, "face corner without vertex index");
          if (f.uv[c] < 0) parse_fail(path, line_no, "face corner without uv index");
        }
        mesh.faces.push_back(f);
      }
    } else if (key == "mtllib") {
      ss >> mtl_file;
    }
  }
  if (mtl_file.empty()) throw std::runtime_error(path + ": no mtllib reference");
  const std::string tex_file = parse_mtl_texture((dir / mtl_file).string());
  mesh.texture = load_image((dir / tex_file).string());
  if (mesh.normals.empty() || std::any_of(mesh.faces.begin(), mesh.faces.end(),
                                          [](const Face& f) { return f.n[0] < 0; })) {
    mesh = estimate_normals(mesh);
  }
  mesh.validate();
  return mesh;
}

void save_mesh(const TexturedMesh& mesh, const std::string& obj_path) {
  const fs::path dir = fs::path(obj_path).parent_path();
  const std::string stem = fs::path(obj_path).stem().string();
  const std::string mtl_name = stem + ".mtl";
  const std::string tex_name = stem + ".png";

  std::ofstream obj(obj_path);
  if (!obj) throw std::runtime_error("cannot write mesh: " + obj_path);
  char buf[256];
  obj << "mtllib " << mtl_name << "\n";
  for (const Vec3& v : mesh.vertices) {
    std::snprintf(buf, sizeof buf, "v %.17g %.17g %.17g\n", v[0], v[1], v[2]);
    obj << buf;
  }
  for (const Vec2& t : mesh.uvs) {
    std::snprintf(buf, sizeof buf, "vt %.17g %.17g\n", t[0], t[1]);
    obj << buf;
  }
  for (const Vec3& n : mesh.normals) {
    std::snprintf(buf, sizeof buf, "vn %.17g %.17g %.17g\n", n[0], n[1], n[2]);
    obj << buf;
  }
  obj << "usemtl material0\n";
  for (const Face& f : mesh.faces) {
    obj << "f";
    for (int c = 0; c < 3; ++c) {
      obj << ' ' << f.v[c] + 1 << '/' << f.uv[c] + 1;
      if (f.n[c] >= 0) obj << '/' << f.n[c] + 1;
    }
    obj << "\n";
  }
  std::ofstream mtl((dir / mtl_name).string());
  mtl << "newmtl material0\nmap_Kd " << tex_name << "\n";
  save_png(mesh.texture, (dir / tex_name).string());
}

void save_pointcloud(const ColoredPointCloud& pc, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write point cloud: " + path);
  const std::uint64_t n = pc.points.size();
  out.write(reinterpret_cast<const char*>(&n), 8);
  for (std::size_t i = 0; i < n; ++i) {
    out.write(reinterpret_cast<const char*>(pc.points[i].data()), 24);
    out.write(reinterpret_cast<const char*>(pc.colors[i].data()), 3);
    out.write(reinterpret_cast<const char*>(pc.normals[i].data()), 24);
  }
}

ColoredPointCloud load_pointcloud(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open point cloud: " + path);
  std::uint64_t n = 0;
  in.read(reinterpret_cast<char*>(&n), 8);
  ColoredPointCloud pc;
  pc.points.resize(n);
  pc.colors.resize(n);
  pc.normals.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    in.read(reinterpret_cast<char*>(pc.points[i].data()), 24);
    in.read(reinterpret_cast<char*>(pc.colors[i].data()), 3);
    in.read(reinterpret_cast<char*>(pc.normals[i].data()), 24);
  }
  if (!in) throw std::runtime_error("truncated point cloud file: " + path);
  return pc;
}

}  // namespace dhhqa
