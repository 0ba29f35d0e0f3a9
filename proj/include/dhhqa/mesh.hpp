#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "dhhqa/image.hpp"

namespace dhhqa {

using Vec3 = std::array<double, 3>;
using Vec2 = std::array<double, 2>;

inline Vec3 operator+(const Vec3& a, const Vec3& b) { return {a[0] + b[0], a[1] + b[1], a[2] + b[2]}; }
inline Vec3 operator-(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
inline Vec3 operator*(const Vec3& a, double s) { return {a[0] * s, a[1] * s, a[2] * s}; }
inline double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
inline Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}
inline double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }

struct Face {
  std::array<int, 3> v;   // vertex indices
  std::array<int, 3> uv;  // uv indices
  std::array<int, 3> n;   // normal indices, -1 when absent
};

// Triangle mesh with per-corner UVs and a single diffuse texture.
struct TexturedMesh {
  std::vector<Vec3> vertices;
  std::vector<Vec3> normals;  // unit length
  std::vector<Face> faces;
  std::vector<Vec2> uvs;
  Image texture;
  std::string name;

  // aggregate bounds; throws std::invalid_argument when violated
  void validate() const;

  Vec3 bbox_min() const;
  Vec3 bbox_max() const;
  double bbox_diagonal() const;
};

struct ColoredPointCloud {
  std::vector<Vec3> points;
  std::vector<std::array<std::uint8_t, 3>> colors;
  std::vector<Vec3> normals;

  std::size_t size() const { return points.size(); }
};

// Wavefront-style bundle: <path>.obj plus the .mtl and texture it references.
TexturedMesh load_mesh(const std::string& path);
void save_mesh(const TexturedMesh& mesh, const std::string& obj_path);

// arithmetic mean of all vertex records
Vec3 geometric_center(const TexturedMesh& mesh);

// area-weighted vertex normals from face winding; returns a copy with
// normals replaced and every face's normal indices set
TexturedMesh estimate_normals(const TexturedMesh& mesh);

// area-uniform surface sampling with bilinear texture color and
// interpolated normals; deterministic per seed
ColoredPointCloud mesh_to_pointcloud(const TexturedMesh& mesh, std::size_t n_samples,
                                     std::uint64_t seed);

// binary cache: u64 count, then per point 3xf64 position, 3xu8 color, 3xf64 normal
void save_pointcloud(const ColoredPointCloud& pc, const std::string& path);
ColoredPointCloud load_pointcloud(const std::string& path);

}  // namespace dhhqa
