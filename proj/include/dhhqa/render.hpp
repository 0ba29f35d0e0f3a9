#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dhhqa/image.hpp"
#include "dhhqa/mesh.hpp"

namespace dhhqa {

enum class Lighting { Unlit, Lambertian };

struct RenderConfig {
  int resolution = 1080;
  std::array<std::uint8_t, 3> background_rgb = {0, 0, 0};
  double fit_margin = 0.05;  // fraction of the image half-extent left empty
  Lighting lighting = Lighting::Unlit;
  Vec3 light_direction = {0.0, 0.0, 1.0};

  void validate() const;
};

struct ProjectionImage {
  Image image;
  std::vector<std::uint8_t> background_mask;  // 1 = mesh covers pixel

  int width() const { return image.width; }
  int height() const { return image.height; }
  double foreground_fraction() const;
};

struct Patch {
  Image pixels;
  std::string source_id;
  int crop_x = 0, crop_y = 0;
  std::uint64_t seed = 0;
};

// Orthographic projection through the geometric center, viewer on the +z
// side so larger z is closer. Depth ties go to the lower face index.
// Bit-identical output for identical inputs.
ProjectionImage render_front(const TexturedMesh& mesh, const RenderConfig& cfg);

// k uniformly random crops; crops with foreground coverage below
// min_foreground are rejected, and after 1000 consecutive rejections the
// constraint is dropped with a warning.
std::vector<Patch> crop_patches(const ProjectionImage& image, int k, int patch_size,
                                std::uint64_t seed, double min_foreground = 0.5,
                                const std::string& source_id = "");

}  // namespace dhhqa
