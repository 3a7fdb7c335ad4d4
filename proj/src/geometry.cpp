#include "voxsurf/geometry.hpp"

#include <algorithm>
#include <cmath>

namespace voxsurf {

std::optional<SlabHit> intersect_box(const Vec3& origin, const Vec3& inv_dir, const Aabb& box) {
  double t0 = 0.0;
  double t1 = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    if (std::isinf(inv_dir[a])) {
      // Parallel to the slab: inside iff origin lies within [min, max).
      if (origin[a] < box.min[a] || origin[a] >= box.max[a]) return std::nullopt;
      continue;
    }
    double near = (box.min[a] - origin[a]) * inv_dir[a];
    double far = (box.max[a] - origin[a]) * inv_dir[a];
    if (near > far) std::swap(near, far);
    t0 = std::max(t0, near);
    t1 = std::min(t1, far);
    if (t0 >= t1) return std::nullopt;
  }
  return SlabHit{t0, t1};
}

bool Similarity::valid(double tol) const {
  if (!(scale > 0.0) || !std::isfinite(scale)) return false;
  if (!(rotation.transpose() * rotation).isIdentity(tol)) return false;
  return std::abs(rotation.determinant() - 1.0) < tol && translation.allFinite();
}

}  // namespace voxsurf
