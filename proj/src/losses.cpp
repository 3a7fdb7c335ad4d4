#include "voxsurf/losses.hpp"

#include "voxsurf/error.hpp"

#include <cmath>
#include <random>

namespace voxsurf {

double color_loss(std::span<const Vec3> rendered, std::span<const Vec3> target) {
  if (rendered.size() != target.size()) throw Error("color loss: ray count mismatch");
  if (rendered.empty()) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < rendered.size(); ++i) total += (target[i] - rendered[i]).cwiseAbs().sum();
  return total / static_cast<double>(rendered.size());
}

std::vector<Vec3> color_loss_grad(std::span<const Vec3> rendered, std::span<const Vec3> target) {
  std::vector<Vec3> g(rendered.size(), Vec3::Zero());
  if (rendered.empty()) return g;
  const double inv = 1.0 / static_cast<double>(rendered.size());
  for (std::size_t i = 0; i < rendered.size(); ++i)
    for (int c = 0; c < 3; ++c) {
      const double d = rendered[i][c] - target[i][c];
      g[i][c] = d > 0.0 ? inv : (d < 0.0 ? -inv : 0.0);
    }
  return g;
}

double eikonal_loss(std::span<const Vec3> gradients) {
  if (gradients.empty()) return 0.0;
  double total = 0.0;
  for (const auto& g : gradients) {
    const double d = g.norm() - 1.0;
    total += d * d;
  }
  return total / static_cast<double>(gradients.size());
}

std::vector<Vec3> eikonal_loss_grad(std::span<const Vec3> gradients) {
  std::vector<Vec3> out(gradients.size(), Vec3::Zero());
  if (gradients.empty()) return out;
  const double inv = 1.0 / static_cast<double>(gradients.size());
  for (std::size_t i = 0; i < gradients.size(); ++i) {
    const double n = gradients[i].norm();
    if (n > 0.0) out[i] = 2.0 * (n - 1.0) * inv / n * gradients[i];
  }
  return out;
}

double occupancy(double sdf, double scale) {
  const double x = -scale * sdf;
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

VoxelPoints regularization_points(const VoxelGrid& grid, int n_per_voxel, std::uint64_t seed) {
  if (grid.empty()) throw GridError("regularization points need a non-empty grid");
  if (n_per_voxel < 1) throw Error("need at least one point per voxel");
  int m = 1;
  while (m * m * m < n_per_voxel) ++m;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> jitter(0.0, 1.0);
  VoxelPoints out;
  out.points.reserve(grid.voxel_count() * static_cast<std::size_t>(m * m * m));
  for (std::uint32_t v = 0; v < grid.voxel_count(); ++v) {
    const Vec3 lo = grid.voxel_box(v).min;
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < m; ++j)
        for (int k = 0; k < m; ++k) {
          const Vec3 u((i + jitter(rng)) / m, (j + jitter(rng)) / m, (k + jitter(rng)) / m);
          out.points.push_back(lo + grid.voxel_size() * u);
          out.voxels.push_back(v);
        }
  }
  return out;
}

DepthInterval classify_depth(double t, double t_hat, double tolerance, double inside_range) {
  if (t < t_hat - tolerance) return DepthInterval::Outside;
  if (inside_range > 0.0 && t > t_hat + tolerance + inside_range) return DepthInterval::Beyond;
  if (t > t_hat + tolerance) return DepthInterval::Inside;
  return DepthInterval::Near;
}

namespace {

bool supervised(const DepthRay& ray) { return std::isfinite(ray.t_hat) && ray.t_hat > 0.0; }

}  // namespace

DepthLossTerms depth_band_counts(std::span<const DepthRay> rays, const DepthLossOptions& options) {
  DepthLossTerms c;
  for (const auto& ray : rays) {
    if (!supervised(ray)) continue;
    for (double t : ray.t) {
      switch (classify_depth(t, ray.t_hat, options.tolerance, options.inside_range)) {
        case DepthInterval::Outside: ++c.outside_count; break;
        case DepthInterval::Near: ++c.near_count; break;
        case DepthInterval::Inside: ++c.inside_count; break;
        case DepthInterval::Beyond: break;
      }
    }
  }
  return c;
}

void depth_loss_ray(const DepthRay& ray, const DepthLossOptions& options, const DepthLossTerms& counts,
                    DepthLossTerms& loss, std::span<double> grad) {
  std::fill(grad.begin(), grad.end(), 0.0);
  if (!supervised(ray)) return;
  const double k = options.scale;
  for (std::size_t i = 0; i < ray.t.size(); ++i) {
    const double sdf = ray.sdf[i];
    const double occ = occupancy(sdf, k);
    const double d_occ = -k * occ * (1.0 - occ);
    auto toward = [&](double target, double norm, double& term) {
      const double r = occ - target;
      term += r * r / norm;
      grad[i] = 2.0 * r * d_occ / norm;
    };
    switch (classify_depth(ray.t[i], ray.t_hat, options.tolerance, options.inside_range)) {
      case DepthInterval::Outside:
        toward(options.swapped_targets ? 1.0 : 0.0, static_cast<double>(counts.outside_count), loss.outside);
        break;
      case DepthInterval::Inside:
        toward(options.swapped_targets ? 0.0 : 1.0, static_cast<double>(counts.inside_count), loss.inside);
        break;
      case DepthInterval::Near: {
        const double norm = static_cast<double>(counts.near_count);
        loss.near += sdf * sdf / norm;
        grad[i] = 2.0 * sdf / norm;
        break;
      }
      case DepthInterval::Beyond: break;
    }
  }
}

DepthLossTerms depth_loss(std::span<const DepthRay> rays, const DepthLossOptions& options) {
  const DepthLossTerms counts = depth_band_counts(rays, options);
  DepthLossTerms loss = counts;
  loss.outside = loss.near = loss.inside = 0.0;
  std::vector<double> scratch;
  for (const auto& ray : rays) {
    scratch.assign(ray.sdf.size(), 0.0);
    depth_loss_ray(ray, options, counts, loss, scratch);
  }
  return loss;
}

}  // namespace voxsurf
