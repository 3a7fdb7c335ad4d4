#pragma once

#include "voxsurf/geometry.hpp"

#include <span>
#include <vector>

namespace voxsurf {

struct VoxelHit {
  std::uint32_t voxel = 0;
  double t_enter = 0.0;
  double t_exit = 0.0;
  double length() const { return t_exit - t_enter; }
};

/// Sparse octree over integer voxel lattice coordinates. Interior nodes are
/// power-of-two lattice cubes; leaves are unit cells and map 1:1 to voxels.
class Octree {
 public:
  struct Node {
    Lattice base;
    std::int32_t size = 1;
    std::array<std::int32_t, 8> children{-1, -1, -1, -1, -1, -1, -1, -1};
    std::int32_t voxel = -1;  // leaf payload
  };

  Octree() = default;
  explicit Octree(std::span<const Lattice> voxels);

  bool empty() const { return nodes_.empty(); }
  std::size_t node_count() const { return nodes_.size(); }
  int depth() const { return depth_; }
  const std::vector<Node>& nodes() const { return nodes_; }

  /// Voxel indices stored at the leaves, in traversal order.
  std::vector<std::uint32_t> leaves() const;

  /// Front-to-back leaf hits of a world-space ray against the lattice embedded
  /// at `grid_origin` with cell edge `cell_size`. `dir` must be unit length.
  std::vector<VoxelHit> intersect(const Vec3& origin, const Vec3& dir, const Vec3& grid_origin,
                                  double cell_size, std::size_t max_hits) const;

  /// Voxels whose lattice cell overlaps the lattice-space box [lo, hi] (inclusive).
  void query_box(const Vec3& lo, const Vec3& hi, std::vector<std::uint32_t>& out) const;

 private:
  std::int32_t build(std::vector<std::uint32_t>& ids, std::span<const Lattice> voxels, Lattice base,
                     std::int32_t size);

  std::vector<Node> nodes_;
  int depth_ = 0;
};

}  // namespace voxsurf
