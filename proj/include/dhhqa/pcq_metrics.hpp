#pragma once

#include "dhhqa/mesh.hpp"

namespace dhhqa {

enum class FrMetric { P2PointMSE, P2PlaneMSE, PsnrYuv };
enum class Direction { RefToDist, DistToRef, Symmetric };

struct FrScore {
  FrMetric metric;
  double value = 0.0;  // MSE in squared model units, PSNR in dB
  Direction direction = Direction::Symmetric;
  bool infinite = false;  // PSNR of identical inputs
};

// Mean squared nearest-neighbor distance. Symmetric = max of the two
// directed means (MPEG convention).
FrScore p2point_mse(const ColoredPointCloud& ref, const ColoredPointCloud& dist,
                    Direction direction = Direction::Symmetric);

// Error vector projected onto the nearest reference point's normal, squared
// and averaged. Each direction projects onto the target cloud's normals.
FrScore p2plane_mse(const ColoredPointCloud& ref, const ColoredPointCloud& dist,
                    Direction direction = Direction::Symmetric);

// Color PSNR over nearest-neighbor pairs in BT.601 YUV, channel MSEs
// combined 6:1:1, peak 255. Symmetric = min of the two directed PSNRs.
FrScore psnr_yuv(const ColoredPointCloud& ref, const ColoredPointCloud& dist);

// BT.601 full-range conversion used by psnr_yuv, exposed for tests.
std::array<double, 3> rgb_to_yuv601(double r, double g, double b);

const char* to_string(FrMetric m);
const char* to_string(Direction d);

}  // namespace dhhqa
