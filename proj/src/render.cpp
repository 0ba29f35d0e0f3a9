#include "dhhqa/render.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>
#include <stdexcept>

#include "dhhqa/rng.hpp"

namespace dhhqa {

void RenderConfig::validate() const {
  if (resolution < 64) throw std::invalid_argument("render: resolution must be >= 64");
  if (fit_margin < 0.0 || fit_margin >= 0.5)
    throw std::invalid_argument("render: fit_margin must be in [0, 0.5)");
}

double ProjectionImage::foreground_fraction() const {
  std::size_t fg = 0;
  for (std::uint8_t m : background_mask) fg += m;
  return background_mask.empty() ? 0.0 : static_cast<double>(fg) / background_mask.size();
}

ProjectionImage render_front(const TexturedMesh& mesh, const RenderConfig& cfg) {
  cfg.validate();
  mesh.validate();
  const int res = cfg.resolution;
  const Vec3 center = geometric_center(mesh);

  // fit: largest |offset| from center over x and y decides the scale
  double half_extent = 0.0;
  for (const Vec3& v : mesh.vertices) {
    half_extent = std::max(half_extent, std::abs(v[0] - center[0]));
    half_extent = std::max(half_extent, std::abs(v[1] - center[1]));
  }
  if (half_extent == 0.0) half_extent = 1.0;
  const double px_per_unit = (1.0 - cfg.fit_margin) * (res / 2.0) / half_extent;

  // world -> continuous pixel coordinates (pixel centers at integer+0.5)
  const auto to_screen = [&](const Vec3& v) {
    return Vec2{(v[0] - center[0]) * px_per_unit + res / 2.0,
                -(v[1] - center[1]) * px_per_unit + res / 2.0};
  };

  ProjectionImage out;
  out.image = Image(res, res, cfg.background_rgb[0], cfg.background_rgb[1], cfg.background_rgb[2]);
  out.background_mask.assign(static_cast<std::size_t>(res) * res, 0);
  std::vector<double> zbuf(static_cast<std::size_t>(res) * res,
                           -std::numeric_limits<double>::infinity());

  Vec3 light = cfg.light_direction;
  {
    const double ll = norm(light);
    if (ll > 0.0) light = light * (1.0 / ll);
  }

  for (std::size_t fi = 0; fi < mesh.faces.size(); ++fi) {
    const Face& f = mesh.faces[fi];
    const Vec3& a = mesh.vertices[f.v[0]];
    const Vec3& b = mesh.vertices[f.v[1]];
    const Vec3& c = mesh.vertices[f.v[2]];
    const Vec2 sa = to_screen(a), sb = to_screen(b), sc = to_screen(c);

    const double area = (sb[0] - sa[0]) * (sc[1] - sa[1]) - (sb[1] - sa[1]) * (sc[0] - sa[0]);
    if (area == 0.0) continue;  // edge-on or degenerate

    const int x0 = std::max(0, static_cast<int>(std::floor(std::min({sa[0], sb[0], sc[0]}) - 0.5)));
    const int x1 = std::min(res - 1, static_cast<int>(std::ceil(std::max({sa[0], sb[0], sc[0]}))));
    const int y0 = std::max(0, static_cast<int>(std::floor(std::min({sa[1], sb[1], sc[1]}) - 0.5)));
    const int y1 = std::min(res - 1, static_cast<int>(std::ceil(std::max({sa[1], sb[1], sc[1]}))));

    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        const double px = x + 0.5, py = y + 0.5;
        // barycentric coordinates w.r.t. (a, b, c)
        const double w0 = ((sb[0] - px) * (sc[1] - py) - (sb[1] - py) * (sc[0] - px)) / area;
        const double w1 = ((sc[0] - px) * (sa[1] - py) - (sc[1] - py) * (sa[0] - px)) / area;
        const double w2 = 1.0 - w0 - w1;
        if (w0 < 0.0 || w1 < 0.0 || w2 < 0.0) continue;
        const double z = w0 * a[2] + w1 * b[2] + w2 * c[2];
        const std::size_t pix = static_cast<std::size_t>(y) * res + x;
        if (z <= zbuf[pix]) continue;  // strict: earlier face wins depth ties
        zbuf[pix] = z;
        out.background_mask[pix] = 1;

        const double u = w0 * mesh.uvs[f.uv[0]][0] + w1 * mesh.uvs[f.uv[1]][0] + w2 * mesh.uvs[f.uv[2]][0];
        const double v = w0 * mesh.uvs[f.uv[0]][1] + w1 * mesh.uvs[f.uv[1]][1] + w2 * mesh.uvs[f.uv[2]][1];
        auto rgb = sample_uv(mesh.texture, u, v);
        if (cfg.lighting == Lighting::Lambertian && f.n[0] >= 0) {
          Vec3 n = mesh.normals[f.n[0]] * w0 + mesh.normals[f.n[1]] * w1 + mesh.normals[f.n[2]] * w2;
          const double len = norm(n);
          const double shade = len > 0.0 ? std::max(0.0, dot(n * (1.0 / len), light)) : 0.0;
          for (double& ch : rgb) ch *= shade;
        }
        std::uint8_t* px_out = out.image.at(x, y);
        for (int ch = 0; ch < 3; ++ch)
          px_out[ch] = static_cast<std::uint8_t>(std::lround(std::clamp(rgb[ch], 0.0, 255.0)));
      }
    }
  }
  return out;
}

std::vector<Patch> crop_patches(const ProjectionImage& image, int k, int patch_size,
                                std::uint64_t seed, double min_foreground,
                                const std::string& source_id) {
  if (patch_size > image.width() || patch_size > image.height())
    throw std::invalid_argument("crop_patches: patch larger than image");
  if (min_foreground < 0.0 || min_foreground > 1.0)
    throw std::invalid_argument("crop_patches: min_foreground outside [0, 1]");

  // summed-area table of the mask for O(1) coverage queries
  const int w = image.width(), h = image.height();
  std::vector<std::uint32_t> sat(static_cast<std::size_t>(w + 1) * (h + 1), 0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      sat[(y + 1) * static_cast<std::size_t>(w + 1) + (x + 1)] =
          image.background_mask[static_cast<std::size_t>(y) * w + x] +
          sat[y * static_cast<std::size_t>(w + 1) + (x + 1)] +
          sat[(y + 1) * static_cast<std::size_t>(w + 1) + x] -
          sat[y * static_cast<std::size_t>(w + 1) + x];
  const auto coverage = [&](int x, int y) {
    const auto s = [&](int xx, int yy) { return sat[static_cast<std::size_t>(yy) * (w + 1) + xx]; };
    const std::uint32_t fg = s(x + patch_size, y + patch_size) - s(x, y + patch_size) -
                             s(x + patch_size, y) + s(x, y);
    return static_cast<double>(fg) / (static_cast<double>(patch_size) * patch_size);
  };

  std::vector<Patch> patches;
  patches.reserve(std::max(k, 0));
  Rng rng(seed);
  bool constrained = true;
  int consecutive_rejects = 0;
  while (static_cast<int>(patches.size()) < k) {
    const int x = static_cast<int>(rng.below(w - patch_size + 1));
    const int y = static_cast<int>(rng.below(h - patch_size + 1));
    if (constrained && coverage(x, y) < min_foreground) {
      if (++consecutive_rejects >= 1000) {
        std::cerr << "crop_patches: 1000 consecutive rejections, dropping coverage constraint\n";
        constrained = false;
      }
      continue;
    }
    consecutive_rejects = 0;
    Patch p;
    p.pixels = Image(patch_size, patch_size);
    for (int yy = 0; yy < patch_size; ++yy)
      std::copy_n(image.image.at(x, y + yy), 3 * static_cast<std::size_t>(patch_size),
                  p.pixels.at(0, yy));
    p.source_id = source_id;
    p.crop_x = x;
    p.crop_y = y;
    p.seed = seed;
    patches.push_back(std::move(p));
  }
  return patches;
}

}  // namespace dhhqa
