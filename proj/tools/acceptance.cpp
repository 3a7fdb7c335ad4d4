// Acceptance checks A1-A10. Prints one line per criterion and exits non-zero
// if any criterion fails.

#include "voxsurf/checkpoint.hpp"
#include "voxsurf/config.hpp"
#include "voxsurf/error.hpp"
#include "voxsurf/losses.hpp"
#include "voxsurf/mesher.hpp"
#include "voxsurf/metrics.hpp"
#include "voxsurf/renderer.hpp"
#include "voxsurf/scene.hpp"
#include "voxsurf/synth.hpp"
#include "voxsurf/trainer.hpp"

#include <CLI11.hpp>
#include <Eigen/Geometry>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

using namespace voxsurf;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------------------
// A1 and A5 share one staged run: train up to the prune, measure the prune,
// then continue to the end of the schedule.

struct SphereRun {
  bool ok = false;
  std::string error;
  double psnr_before_prune = 0.0;
  double psnr_after_prune = 0.0;
  std::size_t voxels_before_prune = 0;
  std::size_t voxels_after_prune = 0;
  int prune_level = -1;
  double holdout_psnr = 0.0;
  double chamfer = 0.0;
  double grad_fraction = 0.0;
  double seconds = 0.0;
  std::size_t final_voxels = 0;
};

double training_psnr(const TrainState& state, const SceneDataset& ds, const TrainConfig& cfg) {
  const auto views = training_views(ds, cfg);
  double sum = 0.0;
  for (auto v : views) sum += view_psnr(state, ds, v, cfg);
  return sum / static_cast<double>(views.size());
}

SphereRun run_sphere(const std::filesystem::path& work, const std::filesystem::path& config_path, std::uint64_t seed,
                     bool verbose) {
  SphereRun out;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    const AnalyticScene scene = AnalyticScene::sphere(0.5);
    DatasetOptions dopt;
    dopt.views = 24;
    dopt.width = dopt.height = 64;
    dopt.radius = 2.0;
    const SceneDataset ds = gen_dataset(scene, dopt, work / "sphere", seed);

    TrainConfig cfg = load_train_config(config_path);
    cfg.seed = seed;
    if (cfg.prune_at.size() != 1 || cfg.prune_period != 0) throw voxsurf::Error("the sphere schedule needs exactly one prune");
    const std::uint64_t prune_it = cfg.prune_at.front();
    if (std::find(cfg.split_at.begin(), cfg.split_at.end(), prune_it) != cfg.split_at.end())
      throw voxsurf::Error("the sphere schedule must not split on the prune iteration");

    TrainOptions opt;
    if (verbose)
      opt.on_log = [](const LogRow& r) {
        if (r.event == "step")
          std::fprintf(stderr, "  it %llu loss %.5f voxels %zu s %.2f (%.0fs)\n",
                       static_cast<unsigned long long>(r.iteration), r.loss, r.voxels, r.s, r.seconds);
        else if (r.event == "eval")
          std::fprintf(stderr, "  it %llu psnr %.3f\n", static_cast<unsigned long long>(r.iteration), r.psnr);
        else
          std::fprintf(stderr, "  it %llu %s voxels %zu\n", static_cast<unsigned long long>(r.iteration),
                       r.event.c_str(), r.voxels);
      };

    TrainConfig head = cfg;
    head.iterations = prune_it;
    head.prune_at.clear();
    head.eval_every = 0;
    TrainResult first = run_training(ds, head, opt);

    out.voxels_before_prune = first.state.grid.voxel_count();
    out.prune_level = first.state.grid.level();
    out.psnr_before_prune = training_psnr(first.state, ds, cfg);
    prune_state(first.state, cfg);
    out.voxels_after_prune = first.state.grid.voxel_count();
    out.psnr_after_prune = training_psnr(first.state, ds, cfg);

    opt.resume = &first.state;
    opt.out_dir = work / "sphere_run";
    const TrainResult result = run_training(ds, cfg, opt);
    out.holdout_psnr = result.holdout_psnr;
    out.final_voxels = result.state.grid.voxel_count();

    const NeuralField field(result.state.model, true);
    const TriangleMesh mesh = extract_mesh(result.state.grid, field, 8);
    write_ply(mesh, work / "sphere_mesh.ply");
    if (mesh.empty()) throw voxsurf::Error("extracted mesh is empty");
    const auto pts = sample_surface(mesh, 20000, seed + 1);
    std::mt19937_64 rng(seed + 2);
    std::normal_distribution<double> n(0.0, 1.0);
    std::vector<Vec3> gt(20000);
    for (auto& p : gt) p = 0.5 * Vec3(n(rng), n(rng), n(rng)).normalized();
    out.chamfer = chamfer(pts, gt);

    std::size_t unit = 0;
    for (const auto& v : mesh.vertices) {
      if (!result.state.grid.locate(v)) continue;
      const double g = sdf_gradient(result.state.grid, result.state.model, v).norm();
      unit += g >= 0.9 && g <= 1.1;
    }
    out.grad_fraction = static_cast<double>(unit) / static_cast<double>(mesh.vertices.size());
    out.ok = true;
  } catch (const std::exception& e) {
    out.error = e.what();
  }
  out.seconds = seconds_since(t0);
  return out;
}

Outcome a1(const SphereRun& r) {
  if (!r.ok) return {false, "run failed: " + r.error};
  const bool pass = r.chamfer < 0.02 && r.holdout_psnr > 25.0;
  return {pass, fmt("chamfer %.4f (< 0.02), held-out psnr %.2f dB (> 25), %zu voxels, |grad| in [0.9,1.1] at "
                    "%.1f%% of vertices, %.0f s",
                    r.chamfer, r.holdout_psnr, r.final_voxels, 100.0 * r.grad_fraction, r.seconds)};
}

Outcome a5(const SphereRun& r) {
  if (!r.ok) return {false, "run failed: " + r.error};
  const double removed = 1.0 - static_cast<double>(r.voxels_after_prune) / static_cast<double>(r.voxels_before_prune);
  const double change = std::abs(r.psnr_after_prune - r.psnr_before_prune);
  const bool pass = r.prune_level == 1 && change < 0.1 && removed >= 0.5;
  return {pass, fmt("level %d, %zu -> %zu voxels (removed %.1f%%, >= 50%%), training psnr %.3f -> %.3f "
                    "(change %.3f dB, < 0.1)",
                    r.prune_level, r.voxels_before_prune, r.voxels_after_prune, 100.0 * removed,
                    r.psnr_before_prune, r.psnr_after_prune, change)};
}

// ---------------------------------------------------------------------------
// A2: field gradients against central differences.

struct Probe {
  Vec3 point;
  std::uint32_t voxel = 0;
  Vec3 dir;
  double w_sdf = 0.0;
  Vec3 w_grad;
  Vec3 w_rgb;
};

double probe_loss(const FieldModel& model, const VoxelGrid& grid, const Probe& p) {
  const FieldKernels<double> k(model);
  FieldPass<double> pass(k, grid);
  const Vec3 pts[1] = {p.point};
  const std::uint32_t vox[1] = {p.voxel};
  const Vec3 dirs[1] = {p.dir};
  pass.forward(pts, vox, dirs, true);
  return p.w_sdf * pass.sdf(0) + p.w_grad.dot(pass.gradient(0)) + p.w_rgb.dot(pass.color(0));
}

Outcome a2() {
  const auto t0 = std::chrono::steady_clock::now();
  FieldConfig cfg;
  cfg.embedding_dim = 4;
  cfg.feature_dim = 4;
  cfg.geometry_layers = 2;
  cfg.geometry_hidden = 8;
  cfg.appearance_layers = 2;
  cfg.appearance_hidden = 8;
  cfg.embedding_freqs = 2;
  cfg.direction_freqs = 2;

  // relative error with an absolute floor for gradients that are essentially zero
  constexpr double kTol = 1e-3;
  constexpr double kFloor = 1e-4;
  constexpr float kStep = 1e-5f;  // the loss is evaluated in double; larger steps straddle softplus kinks
  auto rel = [](double a, double fd) { return std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), kFloor}); };

  double worst_param = 0.0, worst_embed = 0.0, worst_space = 0.0, worst_alpha = 0.0;
  std::size_t checked = 0;
  std::mt19937_64 rng(2024);
  std::normal_distribution<double> g(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.05, 0.95);
  for (int inst = 0; inst < 100; ++inst) {
    FieldModel model(cfg, 1000 + inst);
    VoxelGrid grid = VoxelGrid::tile({Vec3::Zero(), Vec3::Constant(1.0)}, 0.5, cfg.embedding_dim, 2000 + inst, 0.5);
    Probe p;
    p.voxel = static_cast<std::uint32_t>(rng() % grid.voxel_count());
    p.point = grid.voxel_box(p.voxel).min + grid.voxel_size() * Vec3(u(rng), u(rng), u(rng));
    p.dir = Vec3(g(rng), g(rng), g(rng)).normalized();
    p.w_sdf = g(rng);
    p.w_grad = Vec3(g(rng), g(rng), g(rng));
    p.w_rgb = Vec3(g(rng), g(rng), g(rng));

    const FieldKernels<double> k(model);
    FieldPass<double> pass(k, grid);
    const Vec3 pts[1] = {p.point};
    const std::uint32_t vox[1] = {p.voxel};
    const Vec3 dirs[1] = {p.dir};
    pass.forward(pts, vox, dirs, true);
    FieldGradients grads;
    grads.reset(model, grid);
    const double ws[1] = {p.w_sdf};
    const Vec3 wg[1] = {p.w_grad};
    const Vec3 wc[1] = {p.w_rgb};
    pass.backward(ws, wg, wc, grads);

    auto fd_slot = [&](float& slot) {
      const float orig = slot;
      const float up = orig + kStep, down = orig - kStep;
      slot = up;
      const double lu = probe_loss(model, grid, p);
      slot = down;
      const double ld = probe_loss(model, grid, p);
      slot = orig;
      return (lu - ld) / (static_cast<double>(up) - static_cast<double>(down));
    };
    auto params = model.params();
    for (std::size_t i = 0; i < model.log_s_offset(); ++i) {
      worst_param = std::max(worst_param, rel(grads.params[i], fd_slot(params[i])));
      ++checked;
    }
    auto emb = grid.embeddings();
    for (auto vert : grid.corners(p.voxel))
      for (int j = 0; j < cfg.embedding_dim; ++j) {
        const std::size_t i = static_cast<std::size_t>(vert) * cfg.embedding_dim + j;
        worst_embed = std::max(worst_embed, rel(grads.embeddings[i], fd_slot(emb[i])));
        ++checked;
      }

    // input space: the SDF gradient with respect to the query point
    const double h = 1e-4 * grid.voxel_size();
    const Vec3 grad = sdf_gradient(grid, model, p.point);
    for (int a = 0; a < 3; ++a) {
      Vec3 hi = p.point, lo = p.point;
      hi[a] += h;
      lo[a] -= h;
      const double fd = (sdf_at(grid, model, hi) - sdf_at(grid, model, lo)) / (2 * h);
      worst_space = std::max(worst_space, rel(grad[a], fd));
      ++checked;
    }

    // the sharpness parameter enters through the opacity
    const double s = std::exp(g(rng));
    const double sa = 0.3 * g(rng), sb = sa - std::abs(0.1 * g(rng));
    const AlphaGrad ag = alpha_with_grad(sa, sb, s);
    const double hs = 1e-6 * s, hd = 1e-7;
    worst_alpha = std::max(worst_alpha, rel(ag.d_s, (alpha(sa, sb, s + hs) - alpha(sa, sb, s - hs)) / (2 * hs)));
    worst_alpha = std::max(worst_alpha, rel(ag.d_sdf, (alpha(sa + hd, sb, s) - alpha(sa - hd, sb, s)) / (2 * hd)));
    worst_alpha =
        std::max(worst_alpha, rel(ag.d_sdf_next, (alpha(sa, sb + hd, s) - alpha(sa, sb - hd, s)) / (2 * hd)));
    checked += 3;
  }
  const double secs = seconds_since(t0);
  const double worst = std::max({worst_param, worst_embed, worst_space, worst_alpha});
  return {worst < kTol && secs < 60.0,
          fmt("%zu gradients over 100 instances, worst relative error: params %.2e, embeddings %.2e, "
              "input %.2e, opacity %.2e (< 1e-3), %.1f s",
              checked, worst_param, worst_embed, worst_space, worst_alpha, secs)};
}

// ---------------------------------------------------------------------------
// A3: compositing invariants against a product-form reference.

Outcome a3() {
  std::mt19937_64 rng(33);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<int> len(1, 64);
  double worst = 0.0;
  std::size_t violations = 0;
  for (int seq = 0; seq < 100000; ++seq) {
    const int n = len(rng);
    const double s = std::pow(10.0, -1.0 + 5.0 * u(rng));
    std::vector<double> t(n), sdf(n + 1), al(n);
    std::vector<Vec3> col(n);
    double acc = u(rng);
    sdf[0] = 2.0 * u(rng) - 1.0;
    for (int i = 0; i < n; ++i) {
      t[i] = acc;
      acc += 0.1 * u(rng);
      sdf[i + 1] = sdf[i] + 0.2 * (u(rng) - 0.6);
      col[i] = Vec3(u(rng), u(rng), u(rng));
    }
    for (int i = 0; i < n; ++i) {
      al[i] = alpha(sdf[i], sdf[i + 1], s);
      violations += !(al[i] >= 0.0 && al[i] <= 1.0);
    }
    const RenderOutput out = composite(t, al, col);

    double trans = 1.0, prev_trans = 1.0, wsum = 0.0, depth = 0.0;
    Vec3 c = Vec3::Zero();
    for (int i = 0; i < n; ++i) {
      double ti = 1.0;
      for (int j = 0; j < i; ++j) ti *= 1.0 - al[j];
      const double w = al[i] * ti;
      worst = std::max(worst, std::abs(w - out.weights[i]));
      c += w * col[i];
      depth += w * t[i];
      wsum += w;
      // transmittance seen by the compositor
      trans = 1.0 - std::accumulate(out.weights.begin(), out.weights.begin() + i + 1, 0.0);
      violations += trans > prev_trans + 1e-15 || out.weights[i] < 0.0;
      prev_trans = trans;
    }
    worst = std::max({worst, (c - out.color).cwiseAbs().maxCoeff(), std::abs(depth - out.depth),
                      std::abs(wsum - out.weight_sum)});
    violations += !(out.weight_sum >= 0.0 && out.weight_sum <= 1.0 + 1e-15);
  }
  return {worst < 1e-9 && violations == 0,
          fmt("1e5 sequences, %zu invariant violations, max deviation from product form %.2e (< 1e-9)", violations,
              worst)};
}

// ---------------------------------------------------------------------------
// A4: split keeps the interpolated embedding.

Outcome a4() {
  const VoxelGrid dense = init_grid({Vec3::Constant(-1.0), Vec3::Constant(1.0)}, 0.4, 8, 4, 1.0);
  std::mt19937_64 rng(44);
  std::vector<std::uint32_t> keep;
  for (std::uint32_t v = 0; v < dense.voxel_count(); ++v)
    if (rng() % 3 != 0) keep.push_back(v);
  const VoxelGrid grid = dense.subset(keep);
  const VoxelGrid fine = split(grid);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> a(8), b(8);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const auto v = static_cast<std::uint32_t>(rng() % grid.voxel_count());
    const Vec3 p = grid.voxel_box(v).min + grid.voxel_size() * Vec3(u(rng), u(rng), u(rng));
    grid.gamma(p, a);
    fine.gamma(p, b);
    for (int j = 0; j < 8; ++j) worst = std::max(worst, std::abs(a[j] - b[j]));
  }
  return {worst < 1e-6 && fine.voxel_count() == 8 * grid.voxel_count(),
          fmt("%zu -> %zu voxels, max |Gamma change| over 1e3 points %.2e (< 1e-6)", grid.voxel_count(),
              fine.voxel_count(), worst)};
}

// ---------------------------------------------------------------------------
// A6: sampler frequencies under a chi-square test.

// Upper 1% points of the chi-square distribution.
double chi2_critical_99(int dof) {
  static const std::map<int, double> table{{3, 11.345}, {4, 13.277}, {5, 15.086}, {6, 16.812}, {7, 18.475}};
  return table.at(dof);
}

Outcome a6() {
  VoxelGrid grid = init_grid({Vec3::Zero(), Vec3(3.0, 1.0, 1.0)}, 0.5, 1, 1);
  Ray ray;
  ray.origin = Vec3(-1.0, 0.3, 0.45);
  ray.dir = Vec3(1.0, 0.08, 0.01).normalized();
  const RayHits hits = intersect(grid, ray, 20);
  const std::size_t k = hits.hits.size();
  if (k < 4 || k > 8) return {false, fmt("unexpected hit count %zu", k)};

  std::vector<std::uint8_t> flags(k, 0);
  flags[1] = flags[k - 2] = 1;
  std::string detail;
  bool pass = true;
  std::mt19937_64 rng(66);
  for (double boost : {1.0, 8.0}) {
    const auto probs = voxel_probabilities(hits, flags, boost);
    std::vector<double> counts(k, 0.0);
    const int draws = 100000;
    for (int d = 0; d < draws; ++d) {
      const SampleSet one = sample_hits(hits, probs, 1, rng);
      counts[one.samples.front().hit] += 1.0;
    }
    double chi2 = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      const double e = draws * probs[i];
      chi2 += (counts[i] - e) * (counts[i] - e) / e;
    }
    const double crit = chi2_critical_99(static_cast<int>(k) - 1);
    pass &= chi2 < crit;
    detail += fmt("boost %.0f: chi2 %.2f (< %.3f, %zu dof); ", boost, chi2, crit, k - 1);
  }

  const std::size_t np = sample_count(hits, 0.03);
  std::size_t bad = 0;
  for (int r = 0; r < 1000; ++r) bad += surface_aware_resample(hits, flags, 8.0, np, rng).size() != np;
  pass &= bad == 0;
  detail += fmt("N_p = %zu kept in %d/1000 resamples", np, 1000 - static_cast<int>(bad));
  return {pass, detail};
}

// ---------------------------------------------------------------------------
// A7: metrics against quadratic reference loops.

Outcome a7() {
  std::mt19937_64 rng(77);
  std::normal_distribution<double> g(0.0, 0.3);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  double worst = 0.0;
  for (int inst = 0; inst < 20; ++inst) {
    std::vector<Vec3> a(300 + 17 * inst), b(250 + 23 * inst);
    for (auto& p : a) p = Vec3(g(rng), g(rng), g(rng));
    for (auto& p : b) p = Vec3(g(rng), g(rng), g(rng)) + Vec3::Constant(0.05);
    auto nn = [](const std::vector<Vec3>& from, const std::vector<Vec3>& to) {
      std::vector<double> d(from.size());
      for (std::size_t i = 0; i < from.size(); ++i) {
        double best = 1e300;
        for (const auto& q : to) best = std::min(best, (from[i] - q).norm());
        d[i] = best;
      }
      return d;
    };
    const auto dab = nn(a, b), dba = nn(b, a);
    auto mean = [](const std::vector<double>& d, bool sq) {
      double s = 0.0;
      for (double x : d) s += sq ? x * x : x;
      return s / static_cast<double>(d.size());
    };
    worst = std::max(worst, std::abs(chamfer(a, b) - 0.5 * (mean(dab, false) + mean(dba, false))));
    worst = std::max(worst, std::abs(chamfer(a, b, true) - 0.5 * (mean(dab, true) + mean(dba, true))));
    const double th = 0.05 + 0.01 * inst;
    auto frac = [th](const std::vector<double>& d) {
      return static_cast<double>(std::count_if(d.begin(), d.end(), [th](double x) { return x < th; })) /
             static_cast<double>(d.size());
    };
    const double prec = frac(dab), rec = frac(dba);
    const double f = prec + rec > 0.0 ? 2.0 * prec * rec / (prec + rec) : 0.0;
    worst = std::max(worst, std::abs(f_score(a, b, th) - f));

    std::vector<float> x(3 * 64 * 64), y(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
      x[i] = u(rng);
      y[i] = std::clamp(x[i] + 0.1f * (u(rng) - 0.5f), 0.0f, 1.0f);
    }
    double mse = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i)
      mse += (static_cast<double>(x[i]) - y[i]) * (static_cast<double>(x[i]) - y[i]);
    mse /= static_cast<double>(x.size());
    worst = std::max(worst, std::abs(psnr(x, y) - 10.0 * std::log10(1.0 / mse)));
  }
  return {worst < 1e-9, fmt("20 random instances, max deviation %.2e (< 1e-9)", worst)};
}

// ---------------------------------------------------------------------------
// A8: depth loss on a ramp field, then on a depth-supervised toy scene.

Outcome a8(const std::filesystem::path& work, bool verbose) {
  // A camera at distance 2 from a surface at depth 1.5 sees the scene box
  // [-1, 1]^3 between t = 1 and t = 3; the ramp field is exact there.
  const double t_hat = 1.5, t0 = 1.0, t1 = 3.0, step = 0.01;
  std::vector<double> t, sdf;
  for (double x = t0 + 0.5 * step; x < t1; x += step) {
    t.push_back(x);
    sdf.push_back(t_hat - x);
  }
  DepthLossOptions dopt;
  dopt.scale = 20.0;
  dopt.tolerance = 0.05;
  const DepthRay ray{t_hat, t, sdf};
  const DepthLossTerms ramp = depth_loss(std::span<const DepthRay>(&ray, 1), dopt);
  const bool ramp_ok = ramp.outside < 1e-3 && ramp.near < 1e-3 && ramp.inside < 1e-3;

  // training part: median free-space occupancy over seeds must not rise
  DatasetOptions opt;
  opt.views = 8;
  opt.width = opt.height = 16;
  const SceneDataset ds = gen_dataset(AnalyticScene::sphere(0.5), opt, work / "depth_toy", 5);
  TrainConfig c;
  c.iterations = 500;
  c.batch_rays = 128;
  c.chunk_rays = 64;
  c.use_depth = true;
  c.lambda_color = 0.0;
  c.lambda_eikonal = 0.0;
  c.depth_tolerance = 0.05;
  c.occupancy_scale = 20.0;
  c.learning_rate = 5e-3;
  c.holdout_every = 0;
  c.log_every = 0;
  c.field.embedding_dim = 4;
  c.field.feature_dim = 4;
  c.field.geometry_hidden = 16;
  c.field.geometry_layers = 3;
  c.field.appearance_hidden = 8;
  c.field.appearance_layers = 2;
  c.field.embedding_freqs = 2;
  c.field.direction_freqs = 1;
  c.voxel_size = 0.5;

  const std::vector<std::uint64_t> marks{0, 100, 200, 300, 400, 500};
  std::vector<std::vector<double>> per_seed;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    c.seed = seed;
    TrainState s = TrainState::create(ds.bounds, c);
    const RayBatch probe = sample_batch(ds, training_views(ds, c), 512, 999);
    auto free_space = [&] {
      FieldGradients scratch;
      TrainConfig m = c;
      m.lambda_depth = 1.0;
      return compute_gradients(s, probe, m, SamplingPhase::Uniform, scratch).depth_terms.outside;
    };
    std::vector<double> track{free_space()};
    for (std::uint64_t it = 1; it <= c.iterations; ++it) {
      train_step(s, sample_batch(ds, training_views(ds, c), c.batch_rays, seed * 100000 + it), c,
                 SamplingPhase::Uniform);
      if (std::find(marks.begin(), marks.end(), it) != marks.end()) track.push_back(free_space());
    }
    if (verbose) {
      std::fprintf(stderr, "  A8 seed %llu free-space:", static_cast<unsigned long long>(seed));
      for (double v : track) std::fprintf(stderr, " %.4f", v);
      std::fprintf(stderr, "\n");
    }
    per_seed.push_back(track);
  }
  std::vector<double> median(marks.size());
  for (std::size_t k = 0; k < marks.size(); ++k) {
    std::vector<double> col;
    for (const auto& tr : per_seed) col.push_back(tr[k]);
    std::nth_element(col.begin(), col.begin() + 2, col.end());
    median[k] = col[2];
  }
  bool monotone = true;
  for (std::size_t k = 1; k < median.size(); ++k) monotone &= median[k] <= median[k - 1];
  const bool decreased = median.back() < median.front();

  std::string curve;
  for (double m : median) curve += fmt("%.4f ", m);
  return {ramp_ok && monotone && decreased,
          fmt("ramp losses free %.2e, near %.2e, behind %.2e (each < 1e-3); median free-space occupancy every 100 "
              "steps: %s(%s)",
              ramp.outside, ramp.near, ramp.inside, curve.c_str(),
              monotone && decreased ? "monotone decrease" : "not monotone")};
}

// ---------------------------------------------------------------------------
// A9: checkpoint round trip.

Outcome a9(const std::filesystem::path& work) {
  DatasetOptions opt;
  opt.views = 4;
  opt.width = opt.height = 16;
  const SceneDataset ds = gen_dataset(AnalyticScene::sphere(0.5), opt, work / "ckpt_toy", 9);
  TrainConfig c;
  c.iterations = 20;
  c.batch_rays = 64;
  c.holdout_every = 0;
  c.log_every = 0;
  c.field.embedding_dim = 4;
  c.field.feature_dim = 8;
  c.field.geometry_hidden = 16;
  c.field.appearance_hidden = 16;
  c.split_at = {10};
  const TrainResult r = run_training(ds, c);
  save_checkpoint(r.state, work / "roundtrip.vxsc");
  const TrainState back = load_checkpoint(work / "roundtrip.vxsc");

  RenderConfig rc;
  rc.seed = 3;
  auto render = [&](const TrainState& s) {
    const auto grid = std::make_shared<const VoxelGrid>(s.grid);
    return render_image(single_instance(grid, std::make_shared<NeuralField>(s.model)), ds.views[1].camera, rc);
  };
  const RenderedImage a = render(r.state), b = render(back);
  const bool same = a.rgb == b.rgb && a.depth == b.depth && a.weight == b.weight;
  return {same, fmt("%zu voxels, %s", back.grid.voxel_count(),
                    same ? "render after load is bit-identical" : "render after load differs")};
}

// ---------------------------------------------------------------------------
// A10: editing identities and collision queries.

Mat3 random_rotation(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  return Eigen::Quaterniond(n(rng), n(rng), n(rng), n(rng)).normalized().toRotationMatrix();
}

bool overlap_by_corners(const Vec3& ca, const Mat3& ra, double ha, const Vec3& cb, const Mat3& rb, double hb) {
  auto corners = [](const Vec3& c, const Mat3& r, double h) {
    std::array<Vec3, 8> out;
    for (int i = 0; i < 8; ++i) {
      Vec3 p = c;
      for (int a = 0; a < 3; ++a) p += ((i >> a) & 1 ? h : -h) * r.col(a);
      out[i] = p;
    }
    return out;
  };
  const auto pa = corners(ca, ra, ha), pb = corners(cb, rb, hb);
  std::vector<Vec3> axes;
  for (int i = 0; i < 3; ++i) {
    axes.push_back(ra.col(i));
    axes.push_back(rb.col(i));
    for (int j = 0; j < 3; ++j) axes.push_back(ra.col(i).cross(rb.col(j)));
  }
  for (const auto& axis : axes) {
    if (axis.norm() < 1e-9) continue;
    double amin = 1e300, amax = -1e300, bmin = 1e300, bmax = -1e300;
    for (const auto& p : pa) {
      amin = std::min(amin, p.dot(axis));
      amax = std::max(amax, p.dot(axis));
    }
    for (const auto& p : pb) {
      bmin = std::min(bmin, p.dot(axis));
      bmax = std::max(bmax, p.dot(axis));
    }
    if (amax <= bmin || bmax <= amin) return false;
  }
  return true;
}

std::optional<double> world_sdf(const SceneGrid& scene, const FieldModel& model, const Vec3& p) {
  for (const auto& inst : scene.instances()) {
    const Vec3 local = inst.transform.apply_inverse(p);
    if (inst.grid->locate(local)) return inst.transform.scale * sdf_at(*inst.grid, model, local);
  }
  return std::nullopt;
}

Outcome a10() {
  FieldConfig fc;
  fc.embedding_dim = 4;
  fc.feature_dim = 4;
  fc.geometry_hidden = 8;
  fc.geometry_layers = 3;
  fc.appearance_hidden = 8;
  fc.appearance_layers = 2;
  const FieldModel model(fc, 10);
  auto grid = std::make_shared<const VoxelGrid>(init_grid({Vec3::Constant(-1.0), Vec3::Constant(1.0)}, 0.5, 4, 11, 0.5));
  auto field = std::make_shared<const NeuralField>(model, true);
  const Aabb left{Vec3(-1, -1, -1), Vec3(0, 1, 1)};
  const Aabb right{Vec3(0, -1, -1), Vec3(1, 1, 1)};
  const auto sel = select_voxels(*grid, left);

  std::mt19937_64 rng(10);
  std::uniform_real_distribution<double> u(0.01, 0.99);
  auto in = [&](const Aabb& b) -> Vec3 { return b.min + (b.max - b.min).cwiseProduct(Vec3(u(rng), u(rng), u(rng))); };
  double worst = 0.0;
  std::size_t failures = 0;
  auto compare = [&](const std::optional<double>& got, double want) {
    if (!got) {
      ++failures;
      return;
    }
    worst = std::max(worst, std::abs(*got - want));
  };

  const Vec3 offset(-1.5, 0.0, 0.5);
  const SceneGrid moved = edit_voxels(grid, field, sel, Translate{offset});
  const SceneGrid copied = edit_voxels(grid, field, sel, Duplicate{Vec3(-1.0, 0.0, 0.0)});
  const SceneGrid deleted = edit_voxels(grid, field, sel, Delete{});
  for (int i = 0; i < 1000; ++i) {
    const Vec3 p = in(left), q = in(right);
    const double sp = sdf_at(*grid, model, p), sq = sdf_at(*grid, model, q);
    compare(world_sdf(moved, model, p + offset), sp);
    compare(world_sdf(moved, model, q), sq);
    failures += world_sdf(moved, model, p).has_value();  // vacated
    compare(world_sdf(copied, model, p), sp);
    compare(world_sdf(copied, model, p + Vec3(-1.0, 0.0, 0.0)), sp);
    compare(world_sdf(deleted, model, q), sq);
    failures += world_sdf(deleted, model, p).has_value();
  }

  // collisions against all-pairs box tests
  auto ga = std::make_shared<const VoxelGrid>(init_grid({Vec3::Constant(-0.5), Vec3::Constant(0.5)}, 0.25, 1, 1));
  auto gb = std::make_shared<const VoxelGrid>(init_grid({Vec3::Constant(-0.4), Vec3::Constant(0.4)}, 0.2, 1, 2));
  std::uniform_real_distribution<double> off(-0.9, 0.9);
  std::size_t mismatched = 0, colliding = 0;
  for (int k = 0; k < 1000; ++k) {
    Instance a{ga, Similarity{}, nullptr}, b{gb, Similarity{}, nullptr};
    a.transform.rotation = random_rotation(rng);
    a.transform.translation = Vec3(off(rng), off(rng), off(rng));
    a.transform.scale = 0.6 + 0.8 * u(rng);
    b.transform.rotation = random_rotation(rng);
    b.transform.translation = Vec3(off(rng), off(rng), off(rng));
    b.transform.scale = 0.6 + 0.8 * u(rng);
    std::vector<std::pair<std::uint32_t, std::uint32_t>> ref;
    for (std::uint32_t i = 0; i < ga->voxel_count(); ++i)
      for (std::uint32_t j = 0; j < gb->voxel_count(); ++j)
        if (overlap_by_corners(a.transform.apply(ga->voxel_center(i)), a.transform.rotation,
                               0.5 * ga->voxel_size() * a.transform.scale, b.transform.apply(gb->voxel_center(j)),
                               b.transform.rotation, 0.5 * gb->voxel_size() * b.transform.scale))
          ref.emplace_back(i, j);
    const CollisionResult r = collision_query(a, b);
    mismatched += r.pairs != ref || r.colliding == ref.empty();
    colliding += !ref.empty();
  }
  return {worst < 1e-6 && failures == 0 && mismatched == 0,
          fmt("edit identities: max error %.2e (< 1e-6), %zu lookup failures; collisions: %zu/1000 instance pairs "
              "disagree with all-pairs search (%zu colliding)",
              worst, failures, mismatched, colliding)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"voxsurf acceptance checks"};
  std::vector<std::string> only;
  std::string work = (std::filesystem::temp_directory_path() / "voxsurf_acceptance").string();
  std::string config = VOXSURF_CONFIG_DIR "/sphere_desk.cfg";
  std::uint64_t seed = 1;
  bool verbose = false;
  app.add_option("--only", only, "Criteria to run, e.g. A2 A3 (default: all)")->delimiter(',');
  app.add_option("--work", work, "Scratch directory");
  app.add_option("--config", config, "Training config for the sphere run");
  app.add_option("--seed", seed, "Seed for the sphere run");
  app.add_flag("-v,--verbose", verbose, "Progress on stderr");
  CLI11_PARSE(app, argc, argv);

  std::filesystem::create_directories(work);
  auto wanted = [&](const std::string& id) { return only.empty() || std::count(only.begin(), only.end(), id) > 0; };

  std::optional<SphereRun> sphere;
  auto sphere_run = [&]() -> const SphereRun& {
    if (!sphere) sphere = run_sphere(work, config, seed, verbose);
    return *sphere;
  };

  const std::vector<std::pair<std::string, std::function<Outcome()>>> checks{
      {"A1", [&] { return a1(sphere_run()); }},
      {"A2", a2},
      {"A3", a3},
      {"A4", a4},
      {"A5", [&] { return a5(sphere_run()); }},
      {"A6", a6},
      {"A7", a7},
      {"A8", [&] { return a8(work, verbose); }},
      {"A9", [&] { return a9(work); }},
      {"A10", a10},
  };
  int failed = 0;
  for (const auto& [id, fn] : checks) {
    if (!wanted(id)) continue;
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%-3s %s  %s\n", id.c_str(), o.pass ? "PASS" : "FAIL", o.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
