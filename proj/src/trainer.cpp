#include "voxsurf/trainer.hpp"

#include "voxsurf/checkpoint.hpp"
#include "voxsurf/error.hpp"
#include "voxsurf/metrics.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <exception>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>

namespace voxsurf {

namespace {

std::uint64_t mix(std::uint64_t a, std::uint64_t b, std::uint64_t c = 0) {
  std::uint64_t h = a * 0x9E3779B97F4A7C15ULL + 0x632BE59BD9B4E019ULL;
  h ^= b + 0x9E3779B97F4A7C15ULL + (h << 6) + (h >> 2);
  h ^= c + 0x9E3779B97F4A7C15ULL + (h << 6) + (h >> 2);
  h ^= h >> 31;
  h *= 0xBF58476D1CE4E5B9ULL;
  h ^= h >> 27;
  return h;
}

bool ascending(const std::vector<std::uint64_t>& v) { return std::is_sorted(v.begin(), v.end()); }

/// Runs body(i) for i in [0, n) in parallel and rethrows the first failure.
template <typename Fn>
void parallel_for(std::size_t n, Fn&& body) {
  std::exception_ptr error;
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < n; ++i) {
    try {
      body(i);
    } catch (...) {
#pragma omp critical(voxsurf_train_error)
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);
}

}  // namespace

void TrainConfig::validate() const {
  auto require = [](bool ok, const char* key) {
    if (!ok) throw Error(std::string("invalid training setting: ") + key);
  };
  require(learning_rate > 0.0, "learning_rate");
  require(batch_rays > 0, "batch_rays");
  require(step_size > 0.0, "step_size");
  require(tau > 0.0, "tau");
  require(ascending(split_at), "split_at");
  require(ascending(prune_at), "prune_at");
  require(first_surface_at == 0 || full_surface_at == 0 || full_surface_at <= first_surface_at, "first_surface_at");
  require(lambda_color >= 0.0 && lambda_eikonal >= 0.0 && lambda_depth >= 0.0, "lambda");
  require(depth_tolerance > 0.0, "depth_tolerance");
  require(depth_inside_range >= 0.0, "depth_inside_range");
  require(occupancy_scale > 0.0, "occupancy_scale");
  require(voxel_size > 0.0, "voxel_size");
  require(embedding_init >= 0.0, "embedding_init");
  require(prune_samples >= 8, "prune_samples");
  require(reg_points_per_voxel >= 0, "reg_points_per_voxel");
  require(max_hits > 0, "max_hits");
  require(boost >= 1.0, "boost");
  require(chunk_rays > 0, "chunk_rays");
}

TrainState TrainState::create(const Aabb& bounds, const TrainConfig& config) {
  TrainState s;
  s.grid = init_grid(bounds, config.voxel_size, config.field.embedding_dim, mix(config.seed, 1),
                     config.embedding_init);
  s.model = FieldModel(config.field, mix(config.seed, 2));
  s.model.set_log_s(static_cast<float>(config.initial_log_s));
  s.reset_moments();
  return s;
}

void TrainState::reset_moments() {
  param_m.assign(model.params().size(), 0.0f);
  param_v.assign(model.params().size(), 0.0f);
  embedding_m.assign(grid.embeddings().size(), 0.0f);
  embedding_v.assign(grid.embeddings().size(), 0.0f);
}

namespace {

void append_pixel(RayBatch& b, const SceneDataset& ds, std::size_t view, std::uint32_t pixel, std::uint64_t id_base) {
  const DatasetView& v = ds.views[view];
  const std::uint32_t px[1] = {pixel};
  Ray ray = generate_pixel_rays(v.camera, px).front();
  ray.id = id_base + pixel;
  b.rays.push_back(ray);
  b.colors.emplace_back(v.rgb.at(static_cast<int>(pixel % v.camera.width), static_cast<int>(pixel / v.camera.width), 0),
                        v.rgb.at(static_cast<int>(pixel % v.camera.width), static_cast<int>(pixel / v.camera.width), 1),
                        v.rgb.at(static_cast<int>(pixel % v.camera.width), static_cast<int>(pixel / v.camera.width), 2));
  double depth = std::numeric_limits<double>::quiet_NaN();
  if (!v.depth.data.empty()) {
    const double d = v.depth.data[pixel];
    if (std::isfinite(d) && d > 0.0 && d != ds.depth_miss_value) depth = d;
  }
  b.depths.push_back(depth);
}

std::vector<std::uint64_t> view_id_bases(const SceneDataset& ds) {
  std::vector<std::uint64_t> base(ds.views.size());
  std::uint64_t acc = 0;
  for (std::size_t i = 0; i < ds.views.size(); ++i) {
    base[i] = acc;
    acc += static_cast<std::uint64_t>(ds.views[i].camera.width) * ds.views[i].camera.height;
  }
  return base;
}

}  // namespace

RayBatch sample_batch(const SceneDataset& dataset, std::span<const std::size_t> views, std::size_t count,
                      std::uint64_t seed) {
  if (views.empty()) throw TrainingError("no training views");
  const auto bases = view_id_bases(dataset);
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick_view(0, views.size() - 1);
  RayBatch b;
  b.rays.reserve(count);
  for (std::size_t k = 0; k < count; ++k) {
    const std::size_t view = views[pick_view(rng)];
    const auto& cam = dataset.views[view].camera;
    std::uniform_int_distribution<std::uint32_t> pick_pixel(0, static_cast<std::uint32_t>(cam.width * cam.height - 1));
    append_pixel(b, dataset, view, pick_pixel(rng), bases[view]);
  }
  return b;
}

RayBatch view_batch(const SceneDataset& dataset, std::size_t view) {
  const auto bases = view_id_bases(dataset);
  const auto& cam = dataset.views.at(view).camera;
  RayBatch b;
  for (std::uint32_t p = 0; p < static_cast<std::uint32_t>(cam.width * cam.height); ++p)
    append_pixel(b, dataset, view, p, bases[view]);
  return b;
}

SamplingPhase phase_at(const TrainConfig& config, std::uint64_t iteration) {
  if (config.first_surface_at > 0 && iteration >= config.first_surface_at) return SamplingPhase::SurfaceFirst;
  if (config.full_surface_at > 0 && iteration >= config.full_surface_at) return SamplingPhase::SurfaceFull;
  return SamplingPhase::Uniform;
}

std::string phase_name(SamplingPhase phase) {
  switch (phase) {
    case SamplingPhase::Uniform: return "uniform";
    case SamplingPhase::SurfaceFull: return "surface_full";
    case SamplingPhase::SurfaceFirst: return "surface_first";
  }
  return "unknown";
}

namespace {

constexpr std::size_t kRegChunk = 2048;

struct ChunkLoss {
  double color = 0.0;
  double eikonal = 0.0;
  DepthLossTerms depth;
};

template <typename Real>
StepStats gradients_impl(const TrainState& state, const RayBatch& batch, const TrainConfig& config,
                         SamplingPhase phase, FieldGradients& grads) {
  const VoxelGrid& grid = state.grid;
  if (grid.empty()) throw TrainingError("training on an empty grid");
  if (!state.model.finite()) throw TrainingError("non-finite parameters before step " + std::to_string(state.iteration));
  const FieldKernels<Real> kernels(state.model);
  const double s = kernels.s;
  const std::size_t n = batch.rays.size();
  const std::size_t chunk = config.chunk_rays;
  const std::size_t ray_chunks = (n + chunk - 1) / chunk;

  RenderConfig rc;
  rc.step_size = config.step_size;
  rc.max_hits = config.max_hits;
  rc.background = config.background;
  rc.seed = mix(config.seed, state.iteration, 11);
  rc.jitter = true;
  rc.phase = phase;
  rc.boost = config.boost;

  // Pass 1: sample every ray so the loss normalisers are known up front.
  std::vector<std::vector<RayPlan>> plans(ray_chunks);
  parallel_for(ray_chunks, [&](std::size_t c) {
    const std::size_t begin = c * chunk;
    const std::size_t end = std::min(n, begin + chunk);
    std::vector<RayHits> hits;
    hits.reserve(end - begin);
    for (std::size_t r = begin; r < end; ++r) hits.push_back(intersect(grid, batch.rays[r], config.max_hits));
    FieldPass<Real> probe_pass(kernels, grid);
    const SdfProbe probe = [&](std::span<const Vec3> pts, std::span<const std::uint32_t> vox, std::span<double> out) {
      probe_pass.forward(pts, vox, {}, false);
      for (std::size_t i = 0; i < pts.size(); ++i) out[i] = probe_pass.sdf(i);
    };
    plans[c] = plan_rays(std::move(hits), rc, 0, probe);
  });

  const bool eik_samples = config.eikonal_on_samples && config.lambda_eikonal > 0.0;
  const bool use_depth = config.use_depth && config.lambda_depth > 0.0;
  StepStats stats;
  std::vector<std::vector<double>> sample_t(n);
  std::vector<DepthRay> depth_rays;
  for (std::size_t c = 0; c < ray_chunks; ++c) {
    for (std::size_t r = 0; r < plans[c].size(); ++r) {
      const auto& plan = plans[c][r];
      const std::size_t global = c * chunk + r;
      if (plan.samples.size() == 0) continue;
      ++stats.rays;
      stats.samples += plan.samples.size();
      auto& t = sample_t[global];
      for (const auto& smp : plan.samples.samples) t.push_back(smp.t);
      if (use_depth) depth_rays.push_back({batch.depths[global], t, {}});
    }
  }
  VoxelPoints reg;
  if (config.lambda_eikonal > 0.0 && config.reg_points_per_voxel > 0)
    reg = regularization_points(grid, config.reg_points_per_voxel, mix(config.seed, state.iteration, 13));
  stats.eikonal_points = (eik_samples ? stats.samples : 0) + reg.points.size();

  DepthLossOptions depth_opts;
  depth_opts.tolerance = config.depth_tolerance;
  depth_opts.scale = config.occupancy_scale;
  depth_opts.inside_range = config.depth_inside_range;
  depth_opts.swapped_targets = config.depth_loss_paper_literal;
  const DepthLossTerms depth_counts = use_depth ? depth_band_counts(depth_rays, depth_opts) : DepthLossTerms{};

  const double inv_rays = stats.rays > 0 ? 1.0 / static_cast<double>(stats.rays) : 0.0;
  const double inv_eik = stats.eikonal_points > 0 ? 1.0 / static_cast<double>(stats.eikonal_points) : 0.0;
  const std::size_t reg_chunks = (reg.points.size() + kRegChunk - 1) / kRegChunk;
  std::vector<FieldGradients> chunk_grads(ray_chunks + reg_chunks);
  std::vector<ChunkLoss> chunk_loss(ray_chunks + reg_chunks);

  // Pass 2: render, differentiate and backpropagate chunk by chunk.
  parallel_for(ray_chunks + reg_chunks, [&](std::size_t c) {
    FieldGradients& g = chunk_grads[c];
    g.reset(state.model, grid);
    ChunkLoss& loss = chunk_loss[c];

    if (c >= ray_chunks) {
      const std::size_t begin = (c - ray_chunks) * kRegChunk;
      const std::size_t count = std::min(kRegChunk, reg.points.size() - begin);
      FieldPass<Real> pass(kernels, grid);
      pass.forward(std::span<const Vec3>(reg.points).subspan(begin, count),
                   std::span<const std::uint32_t>(reg.voxels).subspan(begin, count), {}, true);
      std::vector<double> g_sdf(count, 0.0);
      std::vector<Vec3> g_grad(count);
      for (std::size_t i = 0; i < count; ++i) {
        const Vec3 grad = pass.gradient(i);
        const double norm = grad.norm();
        loss.eikonal += (norm - 1.0) * (norm - 1.0);
        g_grad[i] = norm > 0.0 ? Vec3(config.lambda_eikonal * 2.0 * (norm - 1.0) / norm * inv_eik * grad) : Vec3::Zero();
      }
      pass.backward(g_sdf, g_grad, {}, g);
      return;
    }

    const auto& chunk_plans = plans[c];
    std::vector<Vec3> pts, dirs, exit_pts;
    std::vector<std::uint32_t> vox, exit_vox;
    for (const auto& plan : chunk_plans) {
      for (std::size_t i = 0; i < plan.samples.size(); ++i) {
        pts.push_back(plan.sample_point(i));
        vox.push_back(plan.samples.samples[i].voxel);
        dirs.push_back(plan.hits.ray.dir);
      }
      for (std::size_t e = 0; e < plan.exit_hit.size(); ++e) {
        exit_pts.push_back(plan.exit_point(e));
        exit_vox.push_back(plan.hits.hits[plan.exit_hit[e]].voxel);
      }
    }
    if (pts.empty()) return;

    FieldPass<Real> pass(kernels, grid);
    FieldPass<Real> exits(kernels, grid);
    pass.forward(pts, vox, dirs, eik_samples);
    exits.forward(exit_pts, exit_vox, {}, false);

    std::vector<double> g_sdf(pts.size(), 0.0);
    std::vector<double> g_exit(exit_pts.size(), 0.0);
    std::vector<Vec3> g_rgb(pts.size(), Vec3::Zero());
    std::vector<Vec3> g_grad(eik_samples ? pts.size() : 0, Vec3::Zero());
    double g_s = 0.0;

    std::size_t so = 0;
    std::size_t eo = 0;
    std::vector<double> t, a, sdf, g_a, g_depth;
    std::vector<Vec3> col, g_col;
    std::vector<AlphaGrad> ag;
    for (std::size_t r = 0; r < chunk_plans.size(); ++r) {
      const auto& plan = chunk_plans[r];
      const std::size_t m = plan.samples.size();
      if (m == 0) continue;
      const std::size_t global = c * chunk + r;
      t.resize(m);
      a.resize(m);
      sdf.resize(m);
      col.resize(m);
      ag.resize(m);
      g_a.resize(m);
      g_col.resize(m);
      for (std::size_t i = 0; i < m; ++i) {
        t[i] = plan.samples.samples[i].t;
        sdf[i] = pass.sdf(so + i);
        col[i] = pass.color(so + i);
      }
      for (std::size_t i = 0; i < m; ++i) {
        const double next = plan.next[i] >= 0 ? sdf[static_cast<std::size_t>(plan.next[i])]
                                               : exits.sdf(eo + plan.exit_of[i]);
        ag[i] = alpha_with_grad(sdf[i], next, s);
        a[i] = ag[i].value;
      }
      const RenderOutput out = composite(t, a, col);
      const Vec3 rendered = out.color + (1.0 - out.weight_sum) * config.background;
      const Vec3 diff = rendered - batch.colors[global];
      loss.color += diff.cwiseAbs().sum();
      Vec3 g_c;
      for (int ch = 0; ch < 3; ++ch) g_c[ch] = diff[ch] > 0.0 ? 1.0 : (diff[ch] < 0.0 ? -1.0 : 0.0);
      g_c *= config.lambda_color * inv_rays;
      composite_backward(t, a, col, g_c, 0.0, -g_c.dot(config.background), g_a, g_col);
      for (std::size_t i = 0; i < m; ++i) {
        g_rgb[so + i] = g_col[i];
        g_sdf[so + i] += g_a[i] * ag[i].d_sdf;
        if (plan.next[i] >= 0)
          g_sdf[so + static_cast<std::size_t>(plan.next[i])] += g_a[i] * ag[i].d_sdf_next;
        else
          g_exit[eo + plan.exit_of[i]] += g_a[i] * ag[i].d_sdf_next;
        g_s += g_a[i] * ag[i].d_s;
      }
      if (use_depth) {
        g_depth.assign(m, 0.0);
        const DepthRay dr{batch.depths[global], t, sdf};
        depth_loss_ray(dr, depth_opts, depth_counts, loss.depth, g_depth);
        for (std::size_t i = 0; i < m; ++i) g_sdf[so + i] += config.lambda_depth * g_depth[i];
      }
      if (eik_samples) {
        for (std::size_t i = 0; i < m; ++i) {
          const Vec3 grad = pass.gradient(so + i);
          const double norm = grad.norm();
          loss.eikonal += (norm - 1.0) * (norm - 1.0);
          if (norm > 0.0) g_grad[so + i] = config.lambda_eikonal * 2.0 * (norm - 1.0) / norm * inv_eik * grad;
        }
      }
      so += m;
      eo += plan.exit_hit.size();
    }
    pass.backward(g_sdf, g_grad, g_rgb, g);
    if (!exit_pts.empty()) exits.backward(g_exit, {}, {}, g);
    g.params[state.model.log_s_offset()] += g_s * s;
  });

  grads.reset(state.model, grid);
  double color_sum = 0.0;
  double eik_sum = 0.0;
  for (std::size_t c = 0; c < chunk_grads.size(); ++c) {
    if (!chunk_grads[c].params.empty()) grads.add(chunk_grads[c]);
    color_sum += chunk_loss[c].color;
    eik_sum += chunk_loss[c].eikonal;
    stats.depth_terms.outside += chunk_loss[c].depth.outside;
    stats.depth_terms.near += chunk_loss[c].depth.near;
    stats.depth_terms.inside += chunk_loss[c].depth.inside;
  }
  stats.depth_terms.outside_count = depth_counts.outside_count;
  stats.depth_terms.near_count = depth_counts.near_count;
  stats.depth_terms.inside_count = depth_counts.inside_count;
  stats.color = color_sum * inv_rays;
  stats.eikonal = eik_sum * inv_eik;
  stats.depth = stats.depth_terms.total();
  stats.loss = config.lambda_color * stats.color + config.lambda_eikonal * stats.eikonal +
               (use_depth ? config.lambda_depth * stats.depth : 0.0);
  if (!std::isfinite(stats.loss)) {
    std::ostringstream msg;
    msg << "non-finite loss at iteration " << state.iteration << " (color " << stats.color << ", eikonal "
        << stats.eikonal << ", depth " << stats.depth << ", s " << s << ", voxels " << grid.voxel_count() << ")";
    throw TrainingError(msg.str());
  }
  return stats;
}

}  // namespace

StepStats compute_gradients(const TrainState& state, const RayBatch& batch, const TrainConfig& config,
                            SamplingPhase phase, FieldGradients& grads) {
  if (batch.colors.size() != batch.rays.size() || batch.depths.size() != batch.rays.size())
    throw TrainingError("ray batch fields differ in length");
  if (config.double_precision) return gradients_impl<double>(state, batch, config, phase, grads);
  return gradients_impl<float>(state, batch, config, phase, grads);
}

void adam_update(TrainState& state, const FieldGradients& grads, double learning_rate) {
  constexpr double b1 = 0.9;
  constexpr double b2 = 0.999;
  constexpr double eps = 1e-8;
  const double step = static_cast<double>(state.iteration + 1);
  const double c1 = 1.0 - std::pow(b1, step);
  const double c2 = 1.0 - std::pow(b2, step);
  auto update = [&](float& p, float& m, float& v, double g) {
    const double mm = b1 * m + (1.0 - b1) * g;
    const double vv = b2 * v + (1.0 - b2) * g * g;
    m = static_cast<float>(mm);
    v = static_cast<float>(vv);
    p = static_cast<float>(p - learning_rate * (mm / c1) / (std::sqrt(vv / c2) + eps));
  };
  auto params = state.model.params();
  for (std::size_t i = 0; i < params.size(); ++i) update(params[i], state.param_m[i], state.param_v[i], grads.params[i]);
  auto emb = state.grid.embeddings();
  const std::size_t le = static_cast<std::size_t>(state.grid.embedding_dim());
  for (std::size_t v = 0; v < grads.touched.size(); ++v) {
    if (!grads.touched[v]) continue;
    for (std::size_t j = v * le; j < (v + 1) * le; ++j)
      update(emb[j], state.embedding_m[j], state.embedding_v[j], grads.embeddings[j]);
  }
}

StepStats train_step(TrainState& state, const RayBatch& batch, const TrainConfig& config, SamplingPhase phase) {
  FieldGradients grads;
  const StepStats stats = compute_gradients(state, batch, config, phase, grads);
  adam_update(state, grads, config.learning_rate);
  ++state.iteration;
  if (!state.model.finite()) throw TrainingError("non-finite parameters after step " + std::to_string(state.iteration));
  return stats;
}

namespace {

/// Carries Adam moments from `old_grid` onto `state.grid`, matching vertices by
/// key (keys double on a split). Vertices without a match start at zero.
void remap_moments(TrainState& state, const VoxelGrid& old_grid, int key_scale, const std::vector<float>& old_m,
                   const std::vector<float>& old_v) {
  const std::size_t le = static_cast<std::size_t>(state.grid.embedding_dim());
  state.embedding_m.assign(state.grid.embeddings().size(), 0.0f);
  state.embedding_v.assign(state.grid.embeddings().size(), 0.0f);
  const auto& keys = state.grid.vertex_keys();
  for (std::size_t v = 0; v < keys.size(); ++v) {
    Lattice k = keys[v];
    if (key_scale == 2) {
      if ((k.x | k.y | k.z) & 1) continue;
      k = {k.x / 2, k.y / 2, k.z / 2};
    }
    const auto old = old_grid.find_vertex(k);
    if (!old) continue;
    std::copy_n(old_m.begin() + static_cast<std::ptrdiff_t>(*old * le), le,
                state.embedding_m.begin() + static_cast<std::ptrdiff_t>(v * le));
    std::copy_n(old_v.begin() + static_cast<std::ptrdiff_t>(*old * le), le,
                state.embedding_v.begin() + static_cast<std::ptrdiff_t>(v * le));
  }
}

}  // namespace

void prune_state(TrainState& state, const TrainConfig& config) {
  const NeuralField field(state.model, config.double_precision);
  VoxelGrid old = std::move(state.grid);
  state.grid = prune(old, field, config.tau, config.prune_samples, mix(config.seed, state.iteration, 17));
  const auto m = std::move(state.embedding_m);
  const auto v = std::move(state.embedding_v);
  remap_moments(state, old, 1, m, v);
}

void split_state(TrainState& state) {
  VoxelGrid old = std::move(state.grid);
  state.grid = split(old);
  const auto m = std::move(state.embedding_m);
  const auto v = std::move(state.embedding_v);
  remap_moments(state, old, 2, m, v);
}

std::vector<std::size_t> training_views(const SceneDataset& dataset, const TrainConfig& config) {
  std::vector<std::size_t> v;
  for (std::size_t i = 0; i < dataset.views.size(); ++i)
    if (config.holdout_every == 0 || i % config.holdout_every != 0) v.push_back(i);
  return v;
}

std::vector<std::size_t> holdout_views(const SceneDataset& dataset, const TrainConfig& config) {
  std::vector<std::size_t> v;
  if (config.holdout_every == 0) return v;
  for (std::size_t i = 0; i < dataset.views.size(); i += config.holdout_every) v.push_back(i);
  return v;
}

double view_psnr(const TrainState& state, const SceneDataset& dataset, std::size_t view, const TrainConfig& config) {
  const std::shared_ptr<const VoxelGrid> grid(&state.grid, [](const VoxelGrid*) {});
  const SceneGrid scene = single_instance(grid, std::make_shared<NeuralField>(state.model, config.double_precision));
  RenderConfig rc;
  rc.step_size = config.step_size;
  rc.max_hits = config.max_hits;
  rc.background = config.background;
  rc.seed = config.seed;
  rc.jitter = false;
  rc.phase = phase_at(config, state.iteration);
  rc.boost = config.boost;
  const RenderedImage img = render_image(scene, dataset.views.at(view).camera, rc);
  return psnr(img.rgb, dataset.views[view].rgb.data);
}

namespace {

bool contains(const std::vector<std::uint64_t>& v, std::uint64_t x) { return std::binary_search(v.begin(), v.end(), x); }

class MetricsLog {
 public:
  MetricsLog(const TrainOptions& options, std::vector<LogRow>& rows) : options_(options), rows_(rows) {
    if (options.out_dir.empty()) return;
    std::filesystem::create_directories(options.out_dir);
    csv_.open(options.out_dir / "metrics.csv");
    if (!csv_) throw IoError("cannot write metrics log in " + options.out_dir.string());
    csv_ << "iteration,event,loss,color,eikonal,depth,voxels,level,phase,psnr,s,seconds\n";
  }

  void add(const LogRow& row) {
    rows_.push_back(row);
    if (csv_.is_open()) {
      csv_ << row.iteration << ',' << row.event << ',' << row.loss << ',' << row.color << ',' << row.eikonal << ','
           << row.depth << ',' << row.voxels << ',' << row.level << ',' << row.phase << ',' << row.psnr << ','
           << row.s << ',' << row.seconds << '\n';
      csv_.flush();
    }
    if (options_.on_log) options_.on_log(row);
  }

 private:
  const TrainOptions& options_;
  std::vector<LogRow>& rows_;
  std::ofstream csv_;
};

}  // namespace

TrainResult run_training(const SceneDataset& dataset, const TrainConfig& config, const TrainOptions& options) {
  config.validate();
  const auto train_views = training_views(dataset, config);
  const auto eval_views = holdout_views(dataset, config);
  if (train_views.empty()) throw TrainingError("no training views");

  TrainResult result;
  result.state = options.resume ? *options.resume : TrainState::create(dataset.bounds, config);
  TrainState& state = result.state;
  MetricsLog log(options, result.log);
  const auto start = std::chrono::steady_clock::now();
  auto row = [&](const char* event, SamplingPhase phase) {
    LogRow r;
    r.iteration = state.iteration;
    r.event = event;
    r.voxels = state.grid.voxel_count();
    r.level = state.grid.level();
    r.phase = phase_name(phase);
    r.s = state.model.s();
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return r;
  };
  auto evaluate = [&](SamplingPhase phase) {
    const auto& views = eval_views.empty() ? train_views : eval_views;
    double sum = 0.0;
    for (auto v : views) sum += view_psnr(state, dataset, v, config);
    LogRow r = row("eval", phase);
    r.psnr = sum / static_cast<double>(views.size());
    log.add(r);
    return r.psnr;
  };

  SamplingPhase current = phase_at(config, state.iteration);
  log.add(row("phase", current));
  StepStats sum;
  std::size_t since_log = 0;
  while (state.iteration < config.iterations) {
    const SamplingPhase phase = phase_at(config, state.iteration);
    if (phase != current) {
      current = phase;
      log.add(row("phase", current));
    }
    const RayBatch batch = sample_batch(dataset, train_views, config.batch_rays, mix(config.seed, state.iteration, 3));
    const StepStats stats = train_step(state, batch, config, phase);
    sum.loss += stats.loss;
    sum.color += stats.color;
    sum.eikonal += stats.eikonal;
    sum.depth += stats.depth;
    ++since_log;

    const std::uint64_t done = state.iteration;
    if (config.log_every > 0 && done % config.log_every == 0) {
      LogRow r = row("step", current);
      const double k = 1.0 / static_cast<double>(since_log);
      r.loss = sum.loss * k;
      r.color = sum.color * k;
      r.eikonal = sum.eikonal * k;
      r.depth = sum.depth * k;
      log.add(r);
      sum = {};
      since_log = 0;
    }
    const bool prune_now = (config.prune_period > 0 && done % config.prune_period == 0) || contains(config.prune_at, done);
    const bool split_now = contains(config.split_at, done);
    auto do_prune = [&] {
      prune_state(state, config);
      log.add(row("prune", current));
    };
    auto do_split = [&] {
      split_state(state);
      log.add(row("split", current));
    };
    if (split_now && config.split_first) do_split();
    if (prune_now) do_prune();
    if (split_now && !config.split_first) do_split();
    if (config.eval_every > 0 && done % config.eval_every == 0 && done < config.iterations) evaluate(current);
    if (!options.out_dir.empty() && config.checkpoint_every > 0 && done % config.checkpoint_every == 0)
      save_checkpoint(state, options.out_dir / ("checkpoint_" + std::to_string(done) + ".vxsc"));
  }
  result.holdout_psnr = evaluate(current);
  if (!options.out_dir.empty()) save_checkpoint(state, options.out_dir / "final.vxsc");
  return result;
}

}  // namespace voxsurf
