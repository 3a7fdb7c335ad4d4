#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <array>
#include <cstdint>
#include <functional>
#include <optional>

namespace voxsurf {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// Integer lattice coordinate. Used both for voxels (min corner) and for
/// vertices at the grid's current level.
struct Lattice {
  std::int32_t x = 0;
  std::int32_t y = 0;
  std::int32_t z = 0;

  std::int32_t operator[](int axis) const { return axis == 0 ? x : (axis == 1 ? y : z); }
  std::int32_t& operator[](int axis) { return axis == 0 ? x : (axis == 1 ? y : z); }

  friend bool operator==(const Lattice&, const Lattice&) = default;
  friend auto operator<=>(const Lattice&, const Lattice&) = default;

  friend Lattice operator+(const Lattice& a, const Lattice& b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
  Lattice doubled() const { return {2 * x, 2 * y, 2 * z}; }
};

struct LatticeHash {
  std::size_t operator()(const Lattice& l) const noexcept {
    std::uint64_t h = static_cast<std::uint32_t>(l.x);
    h = h * 0x9E3779B97F4A7C15ULL ^ static_cast<std::uint32_t>(l.y);
    h = h * 0x9E3779B97F4A7C15ULL ^ static_cast<std::uint32_t>(l.z);
    return static_cast<std::size_t>(h ^ (h >> 29));
  }
};

struct Aabb {
  Vec3 min = Vec3::Zero();
  Vec3 max = Vec3::Zero();

  Vec3 extent() const { return max - min; }
  Vec3 center() const { return 0.5 * (min + max); }
  bool contains(const Vec3& p) const {
    return (p.array() >= min.array()).all() && (p.array() <= max.array()).all();
  }
  bool degenerate() const { return !((max.array() > min.array()).all()); }
};

struct Ray {
  Vec3 origin = Vec3::Zero();
  Vec3 dir = Vec3::UnitZ();
  /// Stable identity (e.g. pixel index); seeds per-ray randomness so results
  /// do not depend on batch composition.
  std::uint64_t id = 0;
};

struct SlabHit {
  double t_enter = 0.0;
  double t_exit = 0.0;
};

/// Ray/box slab test clipped to t >= 0. Returns nothing for misses and for
/// tangential hits with zero length.
std::optional<SlabHit> intersect_box(const Vec3& origin, const Vec3& inv_dir, const Aabb& box);

inline Vec3 safe_inverse(const Vec3& d) {
  Vec3 inv;
  for (int a = 0; a < 3; ++a) inv[a] = d[a] != 0.0 ? 1.0 / d[a] : std::numeric_limits<double>::infinity();
  return inv;
}

/// Similarity transform p_world = scale * R * p_local + t.
struct Similarity {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();
  double scale = 1.0;

  Vec3 apply(const Vec3& p) const { return scale * (rotation * p) + translation; }
  Vec3 apply_inverse(const Vec3& p) const { return rotation.transpose() * (p - translation) / scale; }
  Vec3 rotate(const Vec3& d) const { return rotation * d; }
  Vec3 rotate_inverse(const Vec3& d) const { return rotation.transpose() * d; }
  bool is_identity() const {
    return rotation.isIdentity(0.0) && translation.isZero(0.0) && scale == 1.0;
  }
  /// Orthonormal rotation with det +1 and positive scale.
  bool valid(double tol = 1e-9) const;
};

}  // namespace voxsurf
