#pragma once

#include "voxsurf/geometry.hpp"

#include <span>
#include <vector>

namespace voxsurf {

/// Uniform-grid nearest-neighbour index over a fixed point set.
class PointIndex {
 public:
  explicit PointIndex(std::span<const Vec3> points);

  /// Distance from q to the closest indexed point.
  double nearest_distance(const Vec3& q) const;

 private:
  std::int64_t cell_key(const std::array<std::int64_t, 3>& c) const;
  std::array<std::int64_t, 3> cell_of(const Vec3& p) const;

  std::vector<Vec3> points_;
  Vec3 lo_ = Vec3::Zero();
  double cell_ = 1.0;
  std::array<std::int64_t, 3> dims_{1, 1, 1};
  std::vector<std::uint32_t> start_;  // CSR offsets per cell
  std::vector<std::uint32_t> order_;
};

/// For every point of `from`, the distance to its nearest neighbour in `to`.
std::vector<double> nearest_distances(std::span<const Vec3> from, std::span<const Vec3> to);

/// Symmetric Chamfer distance: mean of the two mean nearest-neighbour
/// distances. `squared` averages squared distances instead.
double chamfer(std::span<const Vec3> a, std::span<const Vec3> b, bool squared = false);

struct FScore {
  double precision = 0.0;
  double recall = 0.0;
  double f = 0.0;
};
FScore f_score_detail(std::span<const Vec3> points, std::span<const Vec3> gt, double threshold);
double f_score(std::span<const Vec3> points, std::span<const Vec3> gt, double threshold);

/// 10 log10(1 / MSE) over every channel; +infinity when the images match.
double psnr(std::span<const float> image, std::span<const float> gt);

}  // namespace voxsurf
