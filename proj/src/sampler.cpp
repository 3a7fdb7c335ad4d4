#include "voxsurf/sampler.hpp"

#include "voxsurf/error.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace voxsurf {

Eigen::Matrix4d Camera::pose() const {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.topLeftCorner<3, 3>() = rotation;
  m.topRightCorner<3, 1>() = position;
  return m;
}

void Camera::set_pose(const Eigen::Matrix4d& camera_to_world) {
  rotation = camera_to_world.topLeftCorner<3, 3>();
  position = camera_to_world.topRightCorner<3, 1>();
}

bool Camera::valid(double tol) const {
  if (!(fx > 0.0) || !(fy > 0.0) || width <= 0 || height <= 0) return false;
  if (!(rotation.transpose() * rotation).isIdentity(tol)) return false;
  return std::abs(rotation.determinant() - 1.0) < tol;
}

std::vector<Ray> generate_rays(const Camera& camera, std::span<const Eigen::Vector2d> coords) {
  std::vector<Ray> rays(coords.size());
  for (std::size_t i = 0; i < coords.size(); ++i) {
    const Vec3 local((coords[i].x() - camera.cx) / camera.fx, (coords[i].y() - camera.cy) / camera.fy, 1.0);
    rays[i].origin = camera.position;
    rays[i].dir = (camera.rotation * local).normalized();
    rays[i].id = i;
  }
  return rays;
}

std::vector<Ray> generate_pixel_rays(const Camera& camera, std::span<const std::uint32_t> pixels) {
  std::vector<Eigen::Vector2d> coords(pixels.size());
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    if (pixels[i] >= static_cast<std::uint32_t>(camera.width * camera.height))
      throw Error("pixel outside image bounds");
    coords[i] = pixel_center(static_cast<int>(pixels[i] % camera.width), static_cast<int>(pixels[i] / camera.width));
  }
  auto rays = generate_rays(camera, coords);
  for (std::size_t i = 0; i < rays.size(); ++i) rays[i].id = pixels[i];
  return rays;
}

double RayHits::total_length() const {
  double total = 0.0;
  for (const auto& h : hits) total += h.length();
  return total;
}

RayHits intersect(const VoxelGrid& grid, const Ray& ray, std::size_t max_hits) {
  return {ray, grid.intersect(ray, max_hits)};
}

std::mt19937_64 ray_rng(std::uint64_t seed, std::uint64_t ray_id, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(ray_id), static_cast<std::uint32_t>(ray_id >> 32),
                    static_cast<std::uint32_t>(stream)};
  return std::mt19937_64(seq);
}

std::size_t sample_count(const RayHits& hits, double step_size) {
  const double total = hits.total_length();
  if (total <= 0.0) return 0;
  return static_cast<std::size_t>(std::ceil(total / step_size - 1e-9));
}

std::vector<double> voxel_probabilities(const RayHits& hits, std::span<const std::uint8_t> flags, double boost) {
  if (boost < 1.0) throw Error("boost must be >= 1");
  std::vector<double> p(hits.hits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] = hits.hits[i].length() * ((!flags.empty() && flags[i]) ? boost : 1.0);
    total += p[i];
  }
  if (total > 0.0)
    for (auto& v : p) v /= total;
  return p;
}

SampleSet sample_hits(const RayHits& hits, std::span<const double> probabilities, std::size_t count,
                      std::mt19937_64& rng, bool jitter) {
  SampleSet out;
  if (hits.hits.empty() || count == 0) return out;
  out.samples.reserve(count);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  const double n = static_cast<double>(count);

  std::size_t v = 0;
  double cdf_lo = 0.0;
  // Skip zero-probability hits at the front.
  while (v + 1 < hits.hits.size() && probabilities[v] <= 0.0) ++v;
  for (std::size_t k = 0; k < count; ++k) {
    const double xi = jitter ? uniform(rng) : 0.5;
    const double u = (static_cast<double>(k) + xi) / n;
    while (v + 1 < hits.hits.size() && (u >= cdf_lo + probabilities[v] || probabilities[v] <= 0.0)) {
      cdf_lo += probabilities[v];
      ++v;
    }
    const VoxelHit& h = hits.hits[v];
    const double p = probabilities[v];
    const double frac = std::clamp((u - cdf_lo) / p, 0.0, 1.0);
    const double t = h.t_enter + frac * h.length();
    const double width = h.length() / (n * p);
    out.samples.push_back({t, t - 0.5 * width, t + 0.5 * width, static_cast<std::uint32_t>(v), h.voxel});
  }
  return out;
}

SampleSet uniform_voxel_sampling(const RayHits& hits, double step_size, std::mt19937_64& rng,
                                 std::optional<std::size_t> count, bool jitter) {
  if (!(step_size > 0.0)) throw Error("step size must be positive");
  const auto probs = voxel_probabilities(hits, {}, 1.0);
  return sample_hits(hits, probs, count.value_or(sample_count(hits, step_size)), rng, jitter);
}

std::vector<std::uint8_t> mark_important_voxels(const RayHits& hits, const SampleSet& samples,
                                                std::span<const double> sdf, SurfaceMode mode) {
  std::vector<std::uint8_t> flags(hits.hits.size(), 0);
  for (std::size_t i = 0; i + 1 < samples.samples.size(); ++i) {
    if (sdf[i] > 0.0 && sdf[i + 1] <= 0.0) {
      flags[samples.samples[i].hit] = 1;
      flags[samples.samples[i + 1].hit] = 1;
      if (mode == SurfaceMode::First) break;
    }
  }
  return flags;
}

SampleSet surface_aware_resample(const RayHits& hits, std::span<const std::uint8_t> flags, double boost,
                                 std::size_t count, std::mt19937_64& rng, bool jitter) {
  const auto probs = voxel_probabilities(hits, flags, boost);
  return sample_hits(hits, probs, count, rng, jitter);
}

SampleSet clamp_intervals(const SampleSet& samples, const RayHits& hits) {
  SampleSet out;
  out.samples.reserve(samples.samples.size());
  for (const auto& s : samples.samples) {
    const VoxelHit& h = hits.hits[s.hit];
    Sample c = s;
    c.t_l = std::max(s.t_l, h.t_enter);
    c.t_r = std::min(s.t_r, h.t_exit);
    if (!(c.t_r > c.t_l)) continue;
    c.t = 0.5 * (c.t_l + c.t_r);
    out.samples.push_back(c);
  }
  // Recentering can swap two close samples near a boundary.
  std::stable_sort(out.samples.begin(), out.samples.end(), [](const Sample& a, const Sample& b) { return a.t < b.t; });
  out.samples.erase(std::unique(out.samples.begin(), out.samples.end(),
                                [](const Sample& a, const Sample& b) { return a.t == b.t; }),
                    out.samples.end());
  return out;
}

}  // namespace voxsurf
