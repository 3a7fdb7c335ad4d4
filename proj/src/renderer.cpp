#include "voxsurf/renderer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

namespace voxsurf {

namespace {

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

double log_sigmoid(double x) { return std::min(x, 0.0) - std::log1p(std::exp(-std::abs(x))); }

double s_cdf(double sdf, double s) { return sigmoid(s * sdf); }

double s_density(double sdf, double s) {
  const double x = s * sdf;
  return s * sigmoid(x) * sigmoid(-x);
}

AlphaGrad alpha_with_grad(double sdf, double sdf_next, double s) {
  AlphaGrad g;
  const double x = s * sdf;
  const double y = s * sdf_next;
  const double log_ratio = log_sigmoid(y) - log_sigmoid(x);
  if (!(log_ratio < 0.0)) return g;  // ReLU clamp
  const double ratio = std::exp(log_ratio);
  g.value = -std::expm1(log_ratio);
  const double sx = sigmoid(-x);
  const double sy = sigmoid(-y);
  g.d_sdf = ratio * s * sx;
  g.d_sdf_next = -ratio * s * sy;
  g.d_s = ratio * (sdf * sx - sdf_next * sy);
  return g;
}

double alpha(double sdf, double sdf_next, double s) {
  const double log_ratio = log_sigmoid(s * sdf_next) - log_sigmoid(s * sdf);
  return log_ratio < 0.0 ? -std::expm1(log_ratio) : 0.0;
}

RenderOutput composite(std::span<const double> t, std::span<const double> alphas, std::span<const Vec3> colors) {
  RenderOutput out;
  out.weights.resize(alphas.size());
  double transmittance = 1.0;
  for (std::size_t i = 0; i < alphas.size(); ++i) {
    const double w = transmittance * alphas[i];
    out.weights[i] = w;
    out.color += w * colors[i];
    out.depth += w * t[i];
    out.weight_sum += w;
    transmittance *= 1.0 - alphas[i];
  }
  return out;
}

void composite_backward(std::span<const double> t, std::span<const double> alphas, std::span<const Vec3> colors,
                        const Vec3& g_color, double g_depth, double g_weight_sum, std::span<double> g_alphas,
                        std::span<Vec3> g_colors) {
  const std::size_t n = alphas.size();
  std::vector<double> trans(n);
  double tr = 1.0;
  for (std::size_t i = 0; i < n; ++i) {
    trans[i] = tr;
    tr *= 1.0 - alphas[i];
  }
  // rest = sum_{j>i} g_w[j] * alpha_j * prod_{i<m<j} (1 - alpha_m)
  double rest = 0.0;
  for (std::size_t i = n; i-- > 0;) {
    const double g_w = g_color.dot(colors[i]) + g_depth * t[i] + g_weight_sum;
    g_colors[i] = trans[i] * alphas[i] * g_color;
    g_alphas[i] = trans[i] * (g_w - rest);
    rest = g_w * alphas[i] + (1.0 - alphas[i]) * rest;
  }
}

void link_samples(RayPlan& plan) {
  const auto& s = plan.samples.samples;
  plan.next.assign(s.size(), -1);
  plan.exit_of.assign(s.size(), 0);
  plan.exit_hit.clear();
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i + 1 < s.size() && s[i + 1].hit == s[i].hit) {
      plan.next[i] = static_cast<std::int32_t>(i + 1);
    } else {
      plan.exit_of[i] = static_cast<std::uint32_t>(plan.exit_hit.size());
      plan.exit_hit.push_back(s[i].hit);
    }
  }
}

std::vector<RayPlan> plan_rays(std::vector<RayHits> hits, const RenderConfig& config, std::uint64_t stream,
                               const SdfProbe& probe) {
  std::vector<RayPlan> plans(hits.size());
  std::vector<std::size_t> counts(hits.size());
  for (std::size_t r = 0; r < hits.size(); ++r) {
    plans[r].hits = std::move(hits[r]);
    auto rng = ray_rng(config.seed, plans[r].hits.ray.id, 2 * stream);
    counts[r] = sample_count(plans[r].hits, config.step_size);
    plans[r].samples = uniform_voxel_sampling(plans[r].hits, config.step_size, rng, counts[r], config.jitter);
  }

  if (config.phase != SamplingPhase::Uniform) {
    std::vector<Vec3> points;
    std::vector<std::uint32_t> voxels;
    for (const auto& plan : plans) {
      for (std::size_t i = 0; i < plan.samples.size(); ++i) {
        points.push_back(plan.sample_point(i));
        voxels.push_back(plan.samples.samples[i].voxel);
      }
    }
    std::vector<double> sdf(points.size());
    if (!points.empty()) probe(points, voxels, sdf);
    const SurfaceMode mode = config.phase == SamplingPhase::SurfaceFirst ? SurfaceMode::First : SurfaceMode::Full;
    std::size_t offset = 0;
    for (std::size_t r = 0; r < plans.size(); ++r) {
      auto& plan = plans[r];
      const std::size_t n = plan.samples.size();
      const auto flags =
          mark_important_voxels(plan.hits, plan.samples, std::span<const double>(sdf).subspan(offset, n), mode);
      offset += n;
      if (std::find(flags.begin(), flags.end(), 1) == flags.end()) continue;
      auto rng = ray_rng(config.seed, plan.hits.ray.id, 2 * stream + 1);
      plan.samples = surface_aware_resample(plan.hits, flags, config.boost, counts[r], rng, config.jitter);
    }
  }

  for (auto& plan : plans) {
    plan.samples = clamp_intervals(plan.samples, plan.hits);
    link_samples(plan);
  }
  return plans;
}

namespace {

struct Composited {
  double t;
  double alpha;
  Vec3 color;
  std::uint32_t instance;
  std::uint32_t voxel;
};

constexpr std::size_t kRayBlock = 128;

}  // namespace

std::vector<RayResult> render_rays(const SceneGrid& scene, std::span<const Ray> rays, const RenderConfig& config) {
  std::vector<RayResult> results(rays.size());
  const std::size_t blocks = (rays.size() + kRayBlock - 1) / kRayBlock;

#pragma omp parallel for schedule(dynamic)
  for (std::size_t b = 0; b < blocks; ++b) {
    const std::size_t begin = b * kRayBlock;
    const std::size_t end = std::min(rays.size(), begin + kRayBlock);
    std::vector<std::vector<Composited>> per_ray(end - begin);

    for (std::uint32_t inst = 0; inst < scene.instances().size(); ++inst) {
      const Instance& instance = scene.instances()[inst];
      if (!instance.grid || instance.grid->empty()) continue;
      const VoxelGrid& grid = *instance.grid;
      const Similarity& tf = instance.transform;
      const double k = tf.scale;

      std::vector<RayHits> hits(end - begin);
      for (std::size_t r = begin; r < end; ++r) {
        Ray local;
        local.origin = tf.apply_inverse(rays[r].origin);
        local.dir = tf.rotate_inverse(rays[r].dir);
        local.id = rays[r].id;
        hits[r - begin] = intersect(grid, local, config.max_hits);
        hits[r - begin].ray = rays[r];
        for (auto& h : hits[r - begin].hits) {
          h.t_enter *= k;
          h.t_exit *= k;
        }
      }

      auto to_local = [&](std::span<const Vec3> world) {
        std::vector<Vec3> local(world.size());
        for (std::size_t i = 0; i < world.size(); ++i) local[i] = tf.apply_inverse(world[i]);
        return local;
      };
      const SdfProbe probe = [&](std::span<const Vec3> pts, std::span<const std::uint32_t> vox, std::span<double> out) {
        const auto local = to_local(pts);
        instance.field->sdf(grid, local, vox, out);
        for (auto& v : out) v *= k;
      };
      auto plans = plan_rays(std::move(hits), config, inst, probe);

      // Gather sample and exit points for one batched evaluation.
      std::vector<Vec3> pts;
      std::vector<std::uint32_t> vox;
      std::vector<Vec3> dirs;
      std::vector<Vec3> exit_pts;
      std::vector<std::uint32_t> exit_vox;
      for (const auto& plan : plans) {
        const Vec3 ldir = tf.rotate_inverse(plan.hits.ray.dir);
        for (std::size_t i = 0; i < plan.samples.size(); ++i) {
          pts.push_back(plan.sample_point(i));
          vox.push_back(plan.samples.samples[i].voxel);
          dirs.push_back(ldir);
        }
        for (std::size_t e = 0; e < plan.exit_hit.size(); ++e) {
          exit_pts.push_back(plan.exit_point(e));
          exit_vox.push_back(plan.hits.hits[plan.exit_hit[e]].voxel);
        }
      }
      const auto local_pts = to_local(pts);
      const auto local_exit = to_local(exit_pts);
      std::vector<double> sdf(pts.size());
      std::vector<Vec3> rgb(pts.size());
      std::vector<double> exit_sdf(exit_pts.size());
      if (!pts.empty()) instance.field->shade(grid, local_pts, vox, dirs, sdf, rgb);
      if (!exit_pts.empty()) instance.field->sdf(grid, local_exit, exit_vox, exit_sdf);
      const double s = instance.field->sharpness();

      std::size_t so = 0;
      std::size_t eo = 0;
      for (std::size_t r = 0; r < plans.size(); ++r) {
        const auto& plan = plans[r];
        for (std::size_t i = 0; i < plan.samples.size(); ++i) {
          const double here = k * sdf[so + i];
          const double next = plan.next[i] >= 0 ? k * sdf[so + static_cast<std::size_t>(plan.next[i])]
                                                : k * exit_sdf[eo + plan.exit_of[i]];
          per_ray[r].push_back({plan.samples.samples[i].t, alpha(here, next, s), rgb[so + i], inst,
                                plan.samples.samples[i].voxel});
        }
        so += plan.samples.size();
        eo += plan.exit_hit.size();
      }
    }

    for (std::size_t r = 0; r < per_ray.size(); ++r) {
      auto& list = per_ray[r];
      std::stable_sort(list.begin(), list.end(), [](const Composited& a, const Composited& b) { return a.t < b.t; });
      std::vector<double> t(list.size());
      std::vector<double> a(list.size());
      std::vector<Vec3> c(list.size());
      RayResult& res = results[begin + r];
      for (std::size_t i = 0; i < list.size(); ++i) {
        t[i] = list[i].t;
        a[i] = list[i].alpha;
        c[i] = list[i].color;
        res.sample_voxels.emplace_back(list[i].instance, list[i].voxel);
      }
      res.sample_t = t;
      const RenderOutput out = composite(t, a, c);
      res.color = out.color + (1.0 - out.weight_sum) * config.background;
      res.depth = out.depth;
      res.weight_sum = out.weight_sum;
    }
  }
  return results;
}

RenderedImage render_image(const SceneGrid& scene, const Camera& camera, const RenderConfig& config) {
  const auto start = std::chrono::steady_clock::now();
  RenderedImage img;
  img.width = camera.width;
  img.height = camera.height;
  const std::size_t count = static_cast<std::size_t>(camera.width) * camera.height;
  std::vector<std::uint32_t> pixels(count);
  std::iota(pixels.begin(), pixels.end(), 0u);
  const auto rays = generate_pixel_rays(camera, pixels);
  const auto results = render_rays(scene, rays, config);
  img.rgb.resize(count * 3);
  img.depth.resize(count);
  img.weight.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    for (int c = 0; c < 3; ++c) img.rgb[i * 3 + c] = static_cast<float>(std::clamp(results[i].color[c], 0.0, 1.0));
    img.depth[i] = static_cast<float>(results[i].depth);
    img.weight[i] = static_cast<float>(results[i].weight_sum);
  }
  img.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return img;
}

}  // namespace voxsurf
