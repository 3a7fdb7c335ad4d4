#pragma once

#include "voxsurf/voxgrid.hpp"

#include <span>
#include <vector>

namespace voxsurf {

/// Mean over rays of the per-ray L1 colour error (channels summed).
double color_loss(std::span<const Vec3> rendered, std::span<const Vec3> target);
/// d color_loss / d rendered.
std::vector<Vec3> color_loss_grad(std::span<const Vec3> rendered, std::span<const Vec3> target);

/// Mean of (|g| - 1)^2.
double eikonal_loss(std::span<const Vec3> gradients);
/// d eikonal_loss / d g for each point.
std::vector<Vec3> eikonal_loss_grad(std::span<const Vec3> gradients);

/// sigmoid(-scale * sdf): 1 deep inside, 0 far outside.
double occupancy(double sdf, double scale);

/// Jittered stratified points: n_per_voxel rounded up to a cube per voxel.
struct VoxelPoints {
  std::vector<Vec3> points;
  std::vector<std::uint32_t> voxels;
};
VoxelPoints regularization_points(const VoxelGrid& grid, int n_per_voxel, std::uint64_t seed);

enum class DepthInterval { Outside, Near, Inside, Beyond };

/// Which depth-loss band a sample at ray distance t falls into.
/// With inside_range > 0, samples more than inside_range past the near band
/// are Beyond and carry no loss.
DepthInterval classify_depth(double t, double t_hat, double tolerance, double inside_range = 0.0);

struct DepthLossTerms {
  double outside = 0.0;
  double near = 0.0;
  double inside = 0.0;
  std::size_t outside_count = 0;
  std::size_t near_count = 0;
  std::size_t inside_count = 0;
  double total() const { return outside + near + inside; }
};

/// Occupancy depth supervision. Each band is averaged over its own points:
///   free space (t < t_hat - tol): occ^2
///   near band:                    sdf^2
///   behind the surface:           (1 - occ)^2
/// With `swapped_targets` the free-space and behind-surface targets swap.
struct DepthLossOptions {
  double tolerance = 0.06;
  double scale = 20.0;
  double inside_range = 0.0;
  bool swapped_targets = false;
};

/// One supervised ray: its samples' ray distances and SDF values.
struct DepthRay {
  double t_hat = 0.0;  // non-finite or <= 0: no supervision
  std::span<const double> t;
  std::span<const double> sdf;
};

/// Band counts over a batch; needed to normalise before any gradient is taken.
DepthLossTerms depth_band_counts(std::span<const DepthRay> rays, const DepthLossOptions& options);

/// Accumulates the loss of one ray given batch-wide band counts and writes
/// d loss / d sdf into `grad` (same length as ray.sdf).
void depth_loss_ray(const DepthRay& ray, const DepthLossOptions& options, const DepthLossTerms& counts,
                    DepthLossTerms& loss, std::span<double> grad);

/// Whole-batch convenience.
DepthLossTerms depth_loss(std::span<const DepthRay> rays, const DepthLossOptions& options);

}  // namespace voxsurf
