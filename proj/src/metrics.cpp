#include "voxsurf/metrics.hpp"

#include "voxsurf/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace voxsurf {

PointIndex::PointIndex(std::span<const Vec3> points) : points_(points.begin(), points.end()) {
  if (points_.empty()) throw Error("point index needs at least one point");
  Vec3 hi = points_.front();
  lo_ = hi;
  for (const auto& p : points_) {
    lo_ = lo_.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  const Vec3 ext = (hi - lo_).cwiseMax(1e-12);
  // About two points per cell on average.
  const double volume = ext.prod();
  cell_ = std::cbrt(2.0 * volume / static_cast<double>(points_.size()));
  cell_ = std::max(cell_, ext.maxCoeff() / 1024.0);
  for (int a = 0; a < 3; ++a) dims_[a] = static_cast<std::int64_t>(std::floor(ext[a] / cell_)) + 1;

  std::vector<std::uint32_t> counts(static_cast<std::size_t>(dims_[0] * dims_[1] * dims_[2]) + 1, 0);
  std::vector<std::int64_t> keys(points_.size());
  for (std::size_t i = 0; i < points_.size(); ++i) {
    keys[i] = cell_key(cell_of(points_[i]));
    ++counts[static_cast<std::size_t>(keys[i]) + 1];
  }
  for (std::size_t c = 1; c < counts.size(); ++c) counts[c] += counts[c - 1];
  start_ = counts;
  order_.resize(points_.size());
  for (std::size_t i = 0; i < points_.size(); ++i) order_[counts[static_cast<std::size_t>(keys[i])]++] = static_cast<std::uint32_t>(i);
}

std::array<std::int64_t, 3> PointIndex::cell_of(const Vec3& p) const {
  std::array<std::int64_t, 3> c;
  for (int a = 0; a < 3; ++a)
    c[a] = std::clamp<std::int64_t>(static_cast<std::int64_t>(std::floor((p[a] - lo_[a]) / cell_)), 0, dims_[a] - 1);
  return c;
}

std::int64_t PointIndex::cell_key(const std::array<std::int64_t, 3>& c) const {
  return (c[2] * dims_[1] + c[1]) * dims_[0] + c[0];
}

double PointIndex::nearest_distance(const Vec3& q) const {
  // Exact search over growing shells of cells around the query's (clamped)
  // cell. Every point outside shell r is at least r * cell from that cell,
  // so at least r * cell - offset from q.
  const auto center = cell_of(q);
  Vec3 outside = Vec3::Zero();
  for (int a = 0; a < 3; ++a) {
    const double lo = lo_[a] + center[a] * cell_;
    outside[a] = std::max({lo - q[a], q[a] - (lo + cell_), 0.0});
  }
  const double offset = outside.norm();
  double best = std::numeric_limits<double>::infinity();
  const std::int64_t max_r = std::max({dims_[0], dims_[1], dims_[2]});
  for (std::int64_t r = 0; r <= max_r; ++r) {
    for (std::int64_t z = center[2] - r; z <= center[2] + r; ++z) {
      if (z < 0 || z >= dims_[2]) continue;
      for (std::int64_t y = center[1] - r; y <= center[1] + r; ++y) {
        if (y < 0 || y >= dims_[1]) continue;
        for (std::int64_t x = center[0] - r; x <= center[0] + r; ++x) {
          if (x < 0 || x >= dims_[0]) continue;
          const bool shell = std::abs(x - center[0]) == r || std::abs(y - center[1]) == r || std::abs(z - center[2]) == r;
          if (!shell) continue;
          const auto key = static_cast<std::size_t>(cell_key({x, y, z}));
          for (std::uint32_t k = start_[key]; k < start_[key + 1]; ++k)
            best = std::min(best, (points_[order_[k]] - q).norm());
        }
      }
    }
    if (best <= static_cast<double>(r) * cell_ - offset) break;
  }
  return best;
}

std::vector<double> nearest_distances(std::span<const Vec3> from, std::span<const Vec3> to) {
  const PointIndex index(to);
  std::vector<double> d(from.size());
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < from.size(); ++i) d[i] = index.nearest_distance(from[i]);
  return d;
}

namespace {

double mean(const std::vector<double>& v, bool squared) {
  double s = 0.0;
  for (double x : v) s += squared ? x * x : x;
  return s / static_cast<double>(v.size());
}

}  // namespace

double chamfer(std::span<const Vec3> a, std::span<const Vec3> b, bool squared) {
  if (a.empty() || b.empty()) throw Error("chamfer needs non-empty point sets");
  return 0.5 * (mean(nearest_distances(a, b), squared) + mean(nearest_distances(b, a), squared));
}

FScore f_score_detail(std::span<const Vec3> points, std::span<const Vec3> gt, double threshold) {
  if (points.empty() || gt.empty()) throw Error("f-score needs non-empty point sets");
  auto fraction = [threshold](const std::vector<double>& d) {
    return static_cast<double>(std::count_if(d.begin(), d.end(), [threshold](double x) { return x <= threshold; })) /
           static_cast<double>(d.size());
  };
  FScore s;
  s.precision = fraction(nearest_distances(points, gt));
  s.recall = fraction(nearest_distances(gt, points));
  s.f = s.precision + s.recall > 0.0 ? 2.0 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
  return s;
}

double f_score(std::span<const Vec3> points, std::span<const Vec3> gt, double threshold) {
  return f_score_detail(points, gt, threshold).f;
}

double psnr(std::span<const float> image, std::span<const float> gt) {
  if (image.size() != gt.size() || image.empty()) throw Error("psnr: image shape mismatch");
  double sum = 0.0;
  for (std::size_t i = 0; i < image.size(); ++i) {
    const double d = static_cast<double>(image[i]) - static_cast<double>(gt[i]);
    sum += d * d;
  }
  const double mse = sum / static_cast<double>(image.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return -10.0 * std::log10(mse);
}

}  // namespace voxsurf
