#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <map>
#include <set>

#include "dhhqa/distort.hpp"
#include "dhhqa/pcq_metrics.hpp"
#include "test_helpers.hpp"

using namespace dhhqa;
using namespace dhhqa::testing;

namespace {

double geometry_error(const TexturedMesh& ref, const TexturedMesh& dist) {
  return p2point_mse(mesh_to_pointcloud(ref, 4000, 11), mesh_to_pointcloud(dist, 4000, 12)).value;
}

double texture_mse(const Image& a, const Image& b) {
  REQUIRE(a.pixels.size() == b.pixels.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < a.pixels.size(); ++i) {
    const double d = double(a.pixels[i]) - double(b.pixels[i]);
    sum += d * d;
  }
  return sum / a.pixels.size();
}

}  // namespace

TEST_CASE("distortion kind names round-trip and reject unknowns") {
  for (int i = 0; i < kNumDistortionKinds; ++i) {
    const auto k = static_cast<DistortionKind>(i);
    CHECK(distortion_kind_from_string(to_string(k)) == k);
  }
  CHECK_THROWS_AS(distortion_kind_from_string("blur"), std::invalid_argument);
  CHECK_THROWS_AS(apply_distortion(sphere_mesh(), {DistortionKind::GeometryNoise, 0, 1}),
                  std::invalid_argument);
  CHECK_THROWS_AS(apply_distortion(sphere_mesh(), {DistortionKind::GeometryNoise, 5, 1}),
                  std::invalid_argument);
}

TEST_CASE("geometry distortion severity is monotone in level") {
  const TexturedMesh ref = sphere_mesh(14, 20);
  for (const auto kind : {DistortionKind::GeometryNoise, DistortionKind::GeometryShift,
                          DistortionKind::GeometryQuantize}) {
    CAPTURE(to_string(kind));
    double prev = 0.0;
    for (int level = 1; level <= 4; ++level) {
      const double err = geometry_error(ref, apply_distortion(ref, {kind, level, 99}));
      CHECK(err > prev);
      prev = err;
    }
  }
}

TEST_CASE("geometry_noise displacement magnitude tracks the configured sigma") {
  const TexturedMesh ref = sphere_mesh(12, 16);
  const double diag = ref.bbox_diagonal();
  for (int level : {1, 4}) {
    const TexturedMesh out =
        apply_distortion(ref, {DistortionKind::GeometryNoise, level, 7});
    const double sigma = level * 0.001 * diag;
    double sq = 0.0;
    for (std::size_t i = 0; i < ref.vertices.size(); ++i) {
      const Vec3 d = out.vertices[i] - ref.vertices[i];
      sq += dot(d, d);
    }
    // per-vertex displacement is N(0, sigma^2) in each axis: E|d|^2 = 3 sigma^2
    const double mean_sq = sq / ref.vertices.size();
    CHECK(mean_sq == doctest::Approx(3.0 * sigma * sigma).epsilon(0.2));
  }
}

TEST_CASE("geometry_shift preserves topology and stays amplitude-bounded") {
  const TexturedMesh ref = sphere_mesh(12, 16);
  const TexturedMesh out = apply_distortion(ref, {DistortionKind::GeometryShift, 4, 3});
  CHECK(out.vertices.size() == ref.vertices.size());
  CHECK(out.faces.size() == ref.faces.size());
  const double amplitude = 4 * 0.002 * ref.bbox_diagonal();
  bool moved = false;
  for (std::size_t i = 0; i < ref.vertices.size(); ++i) {
    const double d = norm(out.vertices[i] - ref.vertices[i]);
    CHECK(d <= amplitude + 1e-12);
    moved |= d > 0.0;
  }
  CHECK(moved);
}

TEST_CASE("geometry_shift is smooth: neighboring vertices move almost alike") {
  const TexturedMesh ref = sphere_mesh(24, 32);
  const TexturedMesh out = apply_distortion(ref, {DistortionKind::GeometryShift, 4, 3});
  double worst_rel = 0.0;
  for (const Face& f : ref.faces) {
    const Vec3 da = out.vertices[f.v[0]] - ref.vertices[f.v[0]];
    const Vec3 db = out.vertices[f.v[1]] - ref.vertices[f.v[1]];
    const double edge = norm(ref.vertices[f.v[1]] - ref.vertices[f.v[0]]);
    if (edge > 0.0) worst_rel = std::max(worst_rel, norm(da - db) / edge);
  }
  CHECK(worst_rel < 0.5);  // displacement field varies slowly across an edge
}

TEST_CASE("geometry_simplify hits the target face fraction") {
  const TexturedMesh ref = sphere_mesh(30, 40);  // ~2300 faces
  const auto n_ref = static_cast<double>(ref.faces.size());
  for (int level = 1; level <= 4; ++level) {
    const TexturedMesh out = apply_distortion(ref, {DistortionKind::GeometrySimplify, level, 0});
    const double fraction = static_cast<double>(out.faces.size()) / n_ref;
    CAPTURE(level);
    CHECK(fraction == doctest::Approx(std::pow(0.5, level)).epsilon(0.25));
    CHECK(out.faces.size() >= 4);
    out.validate();
  }
}

TEST_CASE("geometry_quantize snaps to the advertised grid and keeps the bbox") {
  const TexturedMesh ref = sphere_mesh(10, 14);
  for (int level = 1; level <= 4; ++level) {
    const TexturedMesh out = apply_distortion(ref, {DistortionKind::GeometryQuantize, level, 0});
    const int bits = 12 - level;
    const double steps = (1u << bits) - 1;
    const Vec3 bmin = ref.bbox_min(), ext = ref.bbox_max() - bmin;
    std::set<long> seen;
    for (const Vec3& v : out.vertices)
      for (int k = 0; k < 3; ++k) {
        const double t = (v[k] - bmin[k]) / ext[k] * steps;
        CHECK(std::abs(t - std::round(t)) < 1e-6);  // on-grid
        seen.insert(std::lround(t));
      }
    CHECK(*seen.begin() >= 0);
    CHECK(*seen.rbegin() <= std::lround(steps));
    // quantizing twice at the same level is a fixed point
    const TexturedMesh again = apply_distortion(out, {DistortionKind::GeometryQuantize, level, 0});
    CHECK(again.vertices == out.vertices);
  }
}

TEST_CASE("texture distortions touch only the texture") {
  const TexturedMesh ref = quad_mesh(checker_texture(64, 8));
  for (const auto kind : {DistortionKind::TextureDownsample, DistortionKind::TextureQuantize,
                          DistortionKind::ColorNoise}) {
    const TexturedMesh out = apply_distortion(ref, {kind, 2, 5});
    CAPTURE(to_string(kind));
    CHECK(out.vertices == ref.vertices);
    CHECK(out.uvs == ref.uvs);
    CHECK(out.texture.width == ref.texture.width);
    CHECK(out.texture.pixels != ref.texture.pixels);
  }
}

TEST_CASE("texture distortion severity is monotone in level") {
  // smooth large-scale wave plus noise: the wave degrades at coarse factors,
  // the noise at fine ones, so downsample error keeps growing with the level
  // (a plain checker would alias non-monotonically)
  Image tex(64, 64);
  Rng tex_rng(2024);
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x) {
      const double wave = 70.0 * std::sin(2.0 * M_PI * x / 64.0) * std::sin(2.0 * M_PI * y / 64.0);
      const double noise = tex_rng.uniform(-45.0, 45.0);
      const auto v = static_cast<std::uint8_t>(std::clamp(128.0 + wave + noise, 0.0, 255.0));
      tex.at(x, y)[0] = tex.at(x, y)[1] = tex.at(x, y)[2] = v;
    }
  const TexturedMesh ref = quad_mesh(tex);
  for (const auto kind : {DistortionKind::TextureDownsample, DistortionKind::TextureQuantize,
                          DistortionKind::ColorNoise}) {
    CAPTURE(to_string(kind));
    double prev = 0.0;
    for (int level = 1; level <= 4; ++level) {
      const double err = texture_mse(tex, apply_distortion(ref, {kind, level, 21}).texture);
      CHECK(err > prev);
      prev = err;
    }
  }
}

TEST_CASE("texture_quantize is idempotent and caps the distinct values") {
  const TexturedMesh ref = quad_mesh(checker_texture(32, 4));
  for (int level = 1; level <= 4; ++level) {
    const TexturedMesh once = apply_distortion(ref, {DistortionKind::TextureQuantize, level, 0});
    const TexturedMesh twice = apply_distortion(once, {DistortionKind::TextureQuantize, level, 0});
    CHECK(once.texture.pixels == twice.texture.pixels);
    std::set<std::uint8_t> values(once.texture.pixels.begin(), once.texture.pixels.end());
    CHECK(values.size() <= (1u << (7 - level)));
  }
}

TEST_CASE("color_noise stays close to the configured sigma on mid-gray") {
  const TexturedMesh ref = quad_mesh(solid_texture(128, 128, 128, 64));
  for (int level : {1, 4}) {
    const Image out = apply_distortion(ref, {DistortionKind::ColorNoise, level, 17}).texture;
    const double mse = texture_mse(ref.texture, out);
    const double sigma = level * 5.0;
    CHECK(mse == doctest::Approx(sigma * sigma).epsilon(0.15));  // far from clipping at 128
  }
}

TEST_CASE("seeded distortions are reproducible and seed-sensitive") {
  const TexturedMesh ref = sphere_mesh(10, 14);
  const TexturedMesh a = apply_distortion(ref, {DistortionKind::GeometryNoise, 2, 42});
  const TexturedMesh b = apply_distortion(ref, {DistortionKind::GeometryNoise, 2, 42});
  CHECK(a.vertices == b.vertices);
  const TexturedMesh c = apply_distortion(ref, {DistortionKind::GeometryNoise, 2, 43});
  CHECK(a.vertices != c.vertices);
}

TEST_CASE("build_corpus emits 7x4 records per content with sane MOS") {
  TempDir dir("corpus");
  std::vector<TexturedMesh> meshes;
  for (int i = 0; i < 5; ++i) {
    TexturedMesh m = sphere_mesh(10, 14);
    m.name = "head" + std::to_string(i);
    meshes.push_back(std::move(m));
  }
  RenderConfig rc;
  rc.resolution = 64;
  const auto records = build_corpus(meshes, dir.str(), 1234, rc);
  REQUIRE(records.size() == 5 * 7 * 4);

  std::map<std::string, int> per_content;
  for (const SampleRecord& r : records) {
    ++per_content[r.content_id];
    CHECK(std::filesystem::exists(r.projection_path));
    CHECK(r.pseudo_mos <= 100.0 - 20.0 * (r.spec.level - 1));
    CHECK(r.pseudo_mos > 100.0 - 20.0 * (r.spec.level - 1) - 5.0);
  }
  REQUIRE(per_content.size() == 5);
  for (const auto& [id, n] : per_content) CHECK(n == 28);

  // pseudo-MOS decreases strictly with level within each (content, kind)
  std::map<std::pair<std::string, std::string>, std::map<int, double>> series;
  for (const SampleRecord& r : records)
    series[{r.content_id, to_string(r.spec.kind)}][r.spec.level] = r.pseudo_mos;
  for (const auto& [key, by_level] : series) {
    REQUIRE(by_level.size() == 4);
    double prev = 101.0;
    for (const auto& [level, mos] : by_level) {
      CHECK(mos < prev);
      prev = mos;
    }
  }

  // manifest round-trip preserves every field
  const std::string manifest = (dir.path() / "manifest.csv").string();
  save_manifest(records, manifest);
  const auto loaded = load_manifest(manifest);
  REQUIRE(loaded.size() == records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    CHECK(loaded[i].content_id == records[i].content_id);
    CHECK(loaded[i].spec.kind == records[i].spec.kind);
    CHECK(loaded[i].spec.level == records[i].spec.level);
    CHECK(loaded[i].spec.seed == records[i].spec.seed);
    CHECK(loaded[i].projection_path == records[i].projection_path);
    CHECK(loaded[i].pseudo_mos == records[i].pseudo_mos);  // %.17g survives the trip
  }
}

TEST_CASE("build_corpus is deterministic per master seed") {
  TempDir dir("corpus_det");
  std::vector<TexturedMesh> meshes;
  for (int i = 0; i < 5; ++i) {
    TexturedMesh m = sphere_mesh(8, 10);
    m.name = "q" + std::to_string(i);
    meshes.push_back(std::move(m));
  }
  RenderConfig rc;
  rc.resolution = 64;
  const auto a = build_corpus(meshes, (dir.path() / "a").string(), 77, rc);
  const auto b = build_corpus(meshes, (dir.path() / "b").string(), 77, rc);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].spec.seed == b[i].spec.seed);
    CHECK(a[i].pseudo_mos == b[i].pseudo_mos);
    CHECK(load_image(a[i].projection_path) == load_image(b[i].projection_path));
  }
  const auto c = build_corpus(meshes, (dir.path() / "c").string(), 78, rc);
  CHECK(a[0].pseudo_mos != c[0].pseudo_mos);
}

TEST_CASE("build_corpus refuses fewer than 5 contents and names the failing item") {
  TempDir dir("corpus_bad");
  std::vector<TexturedMesh> meshes(4, quad_mesh());
  CHECK_THROWS_AS(build_corpus(meshes, dir.str(), 0), std::invalid_argument);

  // a mesh that cannot survive simplification reports its context
  std::vector<TexturedMesh> tiny;
  for (int i = 0; i < 5; ++i) {
    TexturedMesh m = quad_mesh();
    m.name = "tiny" + std::to_string(i);
    tiny.push_back(std::move(m));
  }
  RenderConfig rc;
  rc.resolution = 64;
  CHECK_THROWS_WITH_AS(build_corpus(tiny, dir.str(), 0, rc),
                       doctest::Contains("build_corpus [tiny0/geometry_simplify/"),
                       std::runtime_error);
}
