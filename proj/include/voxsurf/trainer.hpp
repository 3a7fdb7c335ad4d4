#pragma once

#include "voxsurf/field.hpp"
#include "voxsurf/losses.hpp"
#include "voxsurf/renderer.hpp"
#include "voxsurf/synth.hpp"

#include <filesystem>
#include <functional>
#include <string>

namespace voxsurf {

struct TrainConfig {
  double learning_rate = 1e-3;
  std::size_t batch_rays = 2048;
  double step_size = 0.03;
  double tau = 0.01;
  std::uint64_t iterations = 20000;
  std::uint64_t prune_period = 0;            // 0 disables periodic pruning
  std::vector<std::uint64_t> prune_at;       // extra one-off prunes
  std::vector<std::uint64_t> split_at;       // ascending
  bool split_first = false;                  // order when a prune and a split share an iteration
  std::uint64_t full_surface_at = 0;         // 0: never switch
  std::uint64_t first_surface_at = 0;
  double lambda_color = 1.0;
  double lambda_eikonal = 0.1;
  double lambda_depth = 1.0;
  bool use_depth = false;
  double depth_tolerance = 0.06;
  double depth_inside_range = 0.0;  // 0: everything behind the surface
  double occupancy_scale = 20.0;
  bool depth_loss_paper_literal = false;
  std::uint64_t seed = 0;

  double voxel_size = 0.8;
  double embedding_init = 1e-2;
  int prune_samples = 512;
  int reg_points_per_voxel = 1;
  bool eikonal_on_samples = true;
  std::size_t max_hits = 20;
  double boost = 8.0;
  Vec3 background = Vec3::Zero();
  double initial_log_s = 0.0;
  bool double_precision = false;
  std::size_t chunk_rays = 128;

  std::size_t holdout_every = 8;        // views i with i % holdout_every == 0 are held out; 0 keeps all
  std::uint64_t eval_every = 0;         // 0: evaluate only at the end
  std::uint64_t log_every = 100;
  std::uint64_t checkpoint_every = 0;   // 0: final checkpoint only

  FieldConfig field;

  /// Throws Error with the offending key on an invalid configuration.
  void validate() const;
};

/// Everything training mutates. Embedding moments are aligned with the
/// grid's vertex order.
struct TrainState {
  VoxelGrid grid;
  FieldModel model;
  std::vector<float> param_m;
  std::vector<float> param_v;
  std::vector<float> embedding_m;
  std::vector<float> embedding_v;
  std::uint64_t iteration = 0;

  static TrainState create(const Aabb& bounds, const TrainConfig& config);
  /// Zero moments sized for the current model and grid.
  void reset_moments();
};

struct RayBatch {
  std::vector<Ray> rays;
  std::vector<Vec3> colors;
  std::vector<double> depths;  // NaN where unsupervised
};

/// Pixel ids are globally unique: view * width * height + pixel.
RayBatch sample_batch(const SceneDataset& dataset, std::span<const std::size_t> views, std::size_t count,
                      std::uint64_t seed);

/// All pixels of one view, in row-major order.
RayBatch view_batch(const SceneDataset& dataset, std::size_t view);

struct StepStats {
  double loss = 0.0;
  double color = 0.0;
  double eikonal = 0.0;
  double depth = 0.0;
  DepthLossTerms depth_terms;
  std::size_t rays = 0;
  std::size_t samples = 0;
  std::size_t eikonal_points = 0;
};

/// One optimisation step. Thread-count independent: rays are processed in
/// fixed chunks whose gradients are reduced in chunk order.
StepStats train_step(TrainState& state, const RayBatch& batch, const TrainConfig& config, SamplingPhase phase);

/// Losses and gradients without touching the state (used by tests and step).
StepStats compute_gradients(const TrainState& state, const RayBatch& batch, const TrainConfig& config,
                            SamplingPhase phase, FieldGradients& grads);

/// Adam update of MLP parameters, log s and touched embeddings.
void adam_update(TrainState& state, const FieldGradients& grads, double learning_rate);

SamplingPhase phase_at(const TrainConfig& config, std::uint64_t iteration);

/// Structural updates that keep the Adam moments attached to their vertices.
void prune_state(TrainState& state, const TrainConfig& config);
void split_state(TrainState& state);

struct LogRow {
  std::uint64_t iteration = 0;
  std::string event;  // "step", "prune", "split", "phase", "eval"
  double loss = 0.0;
  double color = 0.0;
  double eikonal = 0.0;
  double depth = 0.0;
  std::size_t voxels = 0;
  int level = 0;
  std::string phase;
  double psnr = 0.0;
  double s = 0.0;
  double seconds = 0.0;
};

struct TrainOptions {
  std::filesystem::path out_dir;  // empty: no files written
  std::function<void(const LogRow&)> on_log;
  /// Continue from this state instead of a fresh one. Structural events at
  /// the state's own iteration are assumed to have happened already.
  const TrainState* resume = nullptr;
};

struct TrainResult {
  TrainState state;
  std::vector<LogRow> log;
  double holdout_psnr = 0.0;
};

std::vector<std::size_t> training_views(const SceneDataset& dataset, const TrainConfig& config);
std::vector<std::size_t> holdout_views(const SceneDataset& dataset, const TrainConfig& config);

/// Render a view with the trained field and return PSNR against its image.
double view_psnr(const TrainState& state, const SceneDataset& dataset, std::size_t view, const TrainConfig& config);

TrainResult run_training(const SceneDataset& dataset, const TrainConfig& config, const TrainOptions& options = {});

std::string phase_name(SamplingPhase phase);

}  // namespace voxsurf
