#pragma once

#include "voxsurf/sampler.hpp"
#include "voxsurf/scene.hpp"

namespace voxsurf {

/// phi_s(sdf) = s e^{-s sdf} / (1 + e^{-s sdf})^2, evaluated without overflow.
double s_density(double sdf, double s);

/// Phi_s(sdf) = sigmoid(s * sdf).
double s_cdf(double sdf, double s);

/// log(sigmoid(x)), stable for large |x|.
double log_sigmoid(double x);

/// Discrete opacity max(0, (Phi(a) - Phi(b)) / Phi(a)) from consecutive SDF
/// values, computed as a log-space ratio.
double alpha(double sdf, double sdf_next, double s);

struct AlphaGrad {
  double value = 0.0;
  double d_sdf = 0.0;
  double d_sdf_next = 0.0;
  double d_s = 0.0;
};
AlphaGrad alpha_with_grad(double sdf, double sdf_next, double s);

struct RenderOutput {
  Vec3 color = Vec3::Zero();
  double depth = 0.0;
  double weight_sum = 0.0;
  std::vector<double> weights;
};

/// Front-to-back compositing; `t` ascending, one alpha and colour per sample.
RenderOutput composite(std::span<const double> t, std::span<const double> alphas, std::span<const Vec3> colors);

/// Adjoints of composite with respect to alphas and colours, given adjoints
/// of the colour, depth and weight sum.
void composite_backward(std::span<const double> t, std::span<const double> alphas, std::span<const Vec3> colors,
                        const Vec3& g_color, double g_depth, double g_weight_sum, std::span<double> g_alphas,
                        std::span<Vec3> g_colors);

enum class SamplingPhase { Uniform, SurfaceFull, SurfaceFirst };

struct RenderConfig {
  double step_size = 0.03;
  std::size_t max_hits = 20;
  Vec3 background = Vec3::Zero();
  std::uint64_t seed = 0;
  bool jitter = true;
  SamplingPhase phase = SamplingPhase::Uniform;
  double boost = 8.0;
};

/// Per-ray sample plan for one instance: hits, clamped samples and the alpha
/// partner of each sample (next sample in the same hit, or the hit's exit).
struct RayPlan {
  RayHits hits;
  SampleSet samples;
  std::vector<std::int32_t> next;      // index of partner sample, or -1 for the hit exit
  std::vector<std::uint32_t> exit_of;  // for samples with next == -1: exit slot
  std::vector<std::uint32_t> exit_hit; // hit index per exit slot

  Vec3 sample_point(std::size_t i) const { return hits.ray.origin + samples.samples[i].t * hits.ray.dir; }
  Vec3 exit_point(std::size_t slot) const {
    return hits.ray.origin + hits.hits[exit_hit[slot]].t_exit * hits.ray.dir;
  }
};

/// Pair every sample with its alpha partner; assumes samples sorted by t.
void link_samples(RayPlan& plan);

/// Evaluates the SDF at world-space points lying in the given voxels.
using SdfProbe = std::function<void(std::span<const Vec3>, std::span<const std::uint32_t>, std::span<double>)>;

/// Sample plans for a block of rays: uniform voxel sampling, then (in the
/// surface-aware phases) one batched SDF probe and a boosted resample, then
/// interval clamping and alpha pairing. `stream` separates the random streams
/// of different instances.
std::vector<RayPlan> plan_rays(std::vector<RayHits> hits, const RenderConfig& config, std::uint64_t stream,
                               const SdfProbe& probe);

struct RayResult {
  Vec3 color = Vec3::Zero();
  double depth = 0.0;
  double weight_sum = 0.0;
  /// Sample provenance for tests: (instance, voxel) per composited sample.
  std::vector<std::pair<std::uint32_t, std::uint32_t>> sample_voxels;
  std::vector<double> sample_t;
};

/// Intersect, sample, evaluate, alpha and composite every ray in the scene.
std::vector<RayResult> render_rays(const SceneGrid& scene, std::span<const Ray> rays, const RenderConfig& config);

struct RenderedImage {
  int width = 0;
  int height = 0;
  std::vector<float> rgb;     // row-major, 3 per pixel, in [0,1]
  std::vector<float> depth;   // 0 where nothing was hit
  std::vector<float> weight;  // accumulated weight
  double seconds = 0.0;
};

RenderedImage render_image(const SceneGrid& scene, const Camera& camera, const RenderConfig& config);

}  // namespace voxsurf
