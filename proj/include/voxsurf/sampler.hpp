#pragma once

#include "voxsurf/octree.hpp"
#include "voxsurf/voxgrid.hpp"

#include <Eigen/Core>

#include <random>

namespace voxsurf {

/// Pinhole camera, camera-to-world pose. Camera axes follow the usual vision
/// convention: +x right, +y down, +z forward.
struct Camera {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 1;
  int height = 1;
  Mat3 rotation = Mat3::Identity();
  Vec3 position = Vec3::Zero();

  Eigen::Matrix4d pose() const;
  void set_pose(const Eigen::Matrix4d& camera_to_world);
  bool valid(double tol = 1e-6) const;
};

/// Image-plane coordinate of the centre of pixel (x, y).
inline Eigen::Vector2d pixel_center(int x, int y) { return {x + 0.5, y + 0.5}; }

/// One ray per image-plane coordinate; ray ids are the coordinate index.
std::vector<Ray> generate_rays(const Camera& camera, std::span<const Eigen::Vector2d> coords);

/// Rays for the listed pixels (by linear index y * width + x); ray id = pixel index.
std::vector<Ray> generate_pixel_rays(const Camera& camera, std::span<const std::uint32_t> pixels);

struct RayHits {
  Ray ray;
  std::vector<VoxelHit> hits;
  double total_length() const;
};

RayHits intersect(const VoxelGrid& grid, const Ray& ray, std::size_t max_hits);

struct Sample {
  double t = 0.0;
  double t_l = 0.0;
  double t_r = 0.0;
  std::uint32_t hit = 0;    // index into RayHits::hits
  std::uint32_t voxel = 0;  // voxel id in the grid
};

struct SampleSet {
  std::vector<Sample> samples;
  std::size_t size() const { return samples.size(); }
};

/// Per-ray random stream derived from (seed, ray id, stream). Deterministic
/// and independent of batch composition.
std::mt19937_64 ray_rng(std::uint64_t seed, std::uint64_t ray_id, std::uint64_t stream);

/// Sample count for a ray: ceil(sum of in-voxel lengths / step).
std::size_t sample_count(const RayHits& hits, double step_size);

/// Normalised per-hit probabilities: length, times `boost` where flagged.
std::vector<double> voxel_probabilities(const RayHits& hits, std::span<const std::uint8_t> flags, double boost);

/// Stratified inverse-CDF sampling over the piecewise-constant density with
/// the given per-hit probabilities. Each equal-mass stratum receives one
/// jittered sample; its interval has the stratum's width in t and is centred
/// on the sample. With `jitter` false every sample sits at its stratum centre.
SampleSet sample_hits(const RayHits& hits, std::span<const double> probabilities, std::size_t count,
                      std::mt19937_64& rng, bool jitter = true);

/// Length-proportional sampling; `count` overrides the step-derived N_p.
SampleSet uniform_voxel_sampling(const RayHits& hits, double step_size, std::mt19937_64& rng,
                                 std::optional<std::size_t> count = std::nullopt, bool jitter = true);

enum class SurfaceMode { Full, First };

/// Flag hits containing either end of a + to - SDF transition between
/// consecutive samples. `sdf` is aligned with `samples.samples`.
std::vector<std::uint8_t> mark_important_voxels(const RayHits& hits, const SampleSet& samples,
                                                std::span<const double> sdf, SurfaceMode mode);

/// Resample with flagged hits boosted; N_p is kept.
SampleSet surface_aware_resample(const RayHits& hits, std::span<const std::uint8_t> flags, double boost,
                                 std::size_t count, std::mt19937_64& rng, bool jitter = true);

/// Cut every interval to its own hit interval, recentre the sample and drop
/// empty intervals. Output is sorted by t.
SampleSet clamp_intervals(const SampleSet& samples, const RayHits& hits);

}  // namespace voxsurf
