#include "dhhqa/pcq_metrics.hpp"

#include <cmath>
#include <stdexcept>

#include "dhhqa/kdtree.hpp"

namespace dhhqa {

namespace {

void check_nonempty(const ColoredPointCloud& ref, const ColoredPointCloud& dist) {
  if (ref.points.empty() || dist.points.empty())
    throw std::invalid_argument("fr metric: empty point cloud");
}

// mean over points of `src` of squared NN distance into `tgt`
double directed_p2point(const ColoredPointCloud& src, const ColoredPointCloud& tgt) {
  KdTree tree(tgt.points);
  double sum = 0.0;
  for (const Vec3& p : src.points) sum += tree.nearest(p).second;
  return sum / static_cast<double>(src.points.size());
}

// projection onto the target cloud's normal at the nearest neighbor
double directed_p2plane(const ColoredPointCloud& src, const ColoredPointCloud& tgt) {
  if (tgt.normals.size() != tgt.points.size())
    throw std::invalid_argument("p2plane: target cloud lacks normals");
  KdTree tree(tgt.points);
  double sum = 0.0;
  for (const Vec3& p : src.points) {
    const auto [idx, d2] = tree.nearest(p);
    const double proj = dot(p - tgt.points[idx], tgt.normals[idx]);
    sum += proj * proj;
  }
  return sum / static_cast<double>(src.points.size());
}

// per-channel YUV MSEs over NN pairs, combined (6Y + U + V) / 8
double directed_yuv_mse(const ColoredPointCloud& src, const ColoredPointCloud& tgt) {
  KdTree tree(tgt.points);
  double mse_y = 0.0, mse_u = 0.0, mse_v = 0.0;
  for (std::size_t i = 0; i < src.points.size(); ++i) {
    const std::size_t j = tree.nearest(src.points[i]).first;
    const auto a = rgb_to_yuv601(src.colors[i][0], src.colors[i][1], src.colors[i][2]);
    const auto b = rgb_to_yuv601(tgt.colors[j][0], tgt.colors[j][1], tgt.colors[j][2]);
    mse_y += (a[0] - b[0]) * (a[0] - b[0]);
    mse_u += (a[1] - b[1]) * (a[1] - b[1]);
    mse_v += (a[2] - b[2]) * (a[2] - b[2]);
  }
  const double n = static_cast<double>(src.points.size());
  return (6.0 * mse_y / n + mse_u / n + mse_v / n) / 8.0;
}

}  // namespace

std::array<double, 3> rgb_to_yuv601(double r, double g, double b) {
  const double y = 0.299 * r + 0.587 * g + 0.114 * b;
  const double u = -0.168736 * r - 0.331264 * g + 0.5 * b + 128.0;
  const double v = 0.5 * r - 0.418688 * g - 0.081312 * b + 128.0;
  return {y, u, v};
}

FrScore p2point_mse(const ColoredPointCloud& ref, const ColoredPointCloud& dist,
                    Direction direction) {
  check_nonempty(ref, dist);
  FrScore s{FrMetric::P2PointMSE, 0.0, direction, false};
  switch (direction) {
    case Direction::RefToDist: s.value = directed_p2point(ref, dist); break;
    case Direction::DistToRef: s.value = directed_p2point(dist, ref); break;
    case Direction::Symmetric:
      s.value = std::max(directed_p2point(ref, dist), directed_p2point(dist, ref));
      break;
  }
  return s;
}

FrScore p2plane_mse(const ColoredPointCloud& ref, const ColoredPointCloud& dist,
                    Direction direction) {
  check_nonempty(ref, dist);
  FrScore s{FrMetric::P2PlaneMSE, 0.0, direction, false};
  switch (direction) {
    case Direction::RefToDist: s.value = directed_p2plane(ref, dist); break;
    case Direction::DistToRef: s.value = directed_p2plane(dist, ref); break;
    case Direction::Symmetric:
      s.value = std::max(directed_p2plane(dist, ref), directed_p2plane(ref, dist));
      break;
  }
  return s;
}

FrScore psnr_yuv(const ColoredPointCloud& ref, const ColoredPointCloud& dist) {
  check_nonempty(ref, dist);
  if (ref.colors.size() != ref.points.size() || dist.colors.size() != dist.points.size())
    throw std::invalid_argument("psnr_yuv: missing colors");
  const auto to_psnr = [](double mse) {
    return mse == 0.0 ? std::numeric_limits<double>::infinity()
                      : 10.0 * std::log10(255.0 * 255.0 / mse);
  };
  const double a = to_psnr(directed_yuv_mse(dist, ref));
  const double b = to_psnr(directed_yuv_mse(ref, dist));
  FrScore s{FrMetric::PsnrYuv, std::min(a, b), Direction::Symmetric, false};
  s.infinite = std::isinf(s.value);
  return s;
}

const char* to_string(FrMetric m) {
  switch (m) {
    case FrMetric::P2PointMSE: return "p2point_mse";
    case FrMetric::P2PlaneMSE: return "p2plane_mse";
    case FrMetric::PsnrYuv: return "psnr_yuv";
  }
  return "?";
}

const char* to_string(Direction d) {
  switch (d) {
    case Direction::RefToDist: return "ref_to_dist";
    case Direction::DistToRef: return "dist_to_ref";
    case Direction::Symmetric: return "symmetric";
  }
  return "?";
}

}  // namespace dhhqa
