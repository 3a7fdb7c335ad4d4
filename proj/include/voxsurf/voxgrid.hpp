#pragma once

#include "voxsurf/geometry.hpp"
#include "voxsurf/octree.hpp"

#include <span>
#include <unordered_map>
#include <vector>

namespace voxsurf {

class VoxelGrid;

/// Anything that can report a signed distance at grid-local points whose
/// containing voxel is already known. Implemented by the neural field and by
/// analytic test fields.
class SdfField {
 public:
  virtual ~SdfField() = default;
  virtual void sdf(const VoxelGrid& grid, std::span<const Vec3> points, std::span<const std::uint32_t> voxels,
                   std::span<double> out) const = 0;
};

/// Corner `c` of a voxel has offset (c & 1, (c >> 1) & 1, (c >> 2) & 1).
constexpr Lattice corner_offset(int c) { return {c & 1, (c >> 1) & 1, (c >> 2) & 1}; }

/// Trilinear weights of the 8 corners at local coordinates u in [0,1]^3.
std::array<double, 8> trilinear_weights(const Vec3& u);

/// d(weight_c)/d(u_axis) for each corner, laid out [axis][corner].
std::array<std::array<double, 8>, 3> trilinear_weight_derivatives(const Vec3& u);

/// Sparse uniform-size voxel set with shared corner embeddings.
///
/// Voxels are identified by the integer lattice coordinate of their min
/// corner. A vertex is keyed by its lattice coordinate at the current level,
/// so adjacent voxels resolve the same embedding without float comparisons.
/// Voxel and vertex indices are dense and stable until the next structural
/// change (prune, split, subset).
class VoxelGrid {
 public:
  VoxelGrid() = default;

  /// Tile `bounds` with cubes of edge `voxel_size`. The bounds are grown
  /// symmetrically up to the next multiple of the voxel size. Embeddings are
  /// drawn uniformly from [-init_range, init_range].
  static VoxelGrid tile(const Aabb& bounds, double voxel_size, int embedding_dim, std::uint64_t seed,
                        double init_range = 1e-2);

  /// Build from explicit voxel coordinates with zero embeddings.
  static VoxelGrid from_voxels(const Vec3& origin, double voxel_size, int level, int embedding_dim,
                               std::vector<Lattice> voxels);

  int level() const { return level_; }
  double voxel_size() const { return voxel_size_; }
  const Vec3& origin() const { return origin_; }
  int embedding_dim() const { return embedding_dim_; }
  std::uint64_t uid() const { return uid_; }

  std::size_t voxel_count() const { return voxels_.size(); }
  std::size_t vertex_count() const { return vertex_keys_.size(); }
  bool empty() const { return voxels_.empty(); }

  const std::vector<Lattice>& voxels() const { return voxels_; }
  const Lattice& voxel(std::uint32_t v) const { return voxels_[v]; }
  const std::vector<Lattice>& vertex_keys() const { return vertex_keys_; }
  const std::array<std::uint32_t, 8>& corners(std::uint32_t v) const { return corners_[v]; }

  std::optional<std::uint32_t> find_voxel(const Lattice& key) const;
  std::optional<std::uint32_t> find_vertex(const Lattice& key) const;

  Aabb voxel_box(std::uint32_t v) const;
  Vec3 voxel_center(std::uint32_t v) const;
  Vec3 vertex_position(std::uint32_t vertex) const;
  Aabb bounds() const;

  /// Voxel containing p under the half-open convention [min, max).
  std::optional<std::uint32_t> locate(const Vec3& p) const;

  /// Coordinates of p relative to voxel v, in [0,1]^3 when p is inside.
  Vec3 local_coords(std::uint32_t v, const Vec3& p) const;

  std::span<const float> embedding(std::uint32_t vertex) const {
    return {embeddings_.data() + static_cast<std::size_t>(vertex) * embedding_dim_,
            static_cast<std::size_t>(embedding_dim_)};
  }
  std::span<float> embedding(std::uint32_t vertex) {
    return {embeddings_.data() + static_cast<std::size_t>(vertex) * embedding_dim_,
            static_cast<std::size_t>(embedding_dim_)};
  }
  std::span<const float> embeddings() const { return embeddings_; }
  std::span<float> embeddings() { return embeddings_; }

  /// Trilinear retrieval inside a known voxel; `out` has embedding_dim entries.
  void interpolate(std::uint32_t v, const Vec3& p, std::span<double> out) const;

  /// Retrieval for an arbitrary point. Returns the containing voxel, or
  /// nothing when p lies outside every voxel (a miss).
  std::optional<std::uint32_t> gamma(const Vec3& p, std::span<double> out) const;

  const Octree& octree() const { return octree_; }
  std::vector<VoxelHit> intersect(const Ray& ray, std::size_t max_hits) const {
    return octree_.intersect(ray.origin, ray.dir, origin_, voxel_size_, max_hits);
  }

  /// Copy containing only the listed voxels and the vertices they reference.
  /// Embedding values are carried over unchanged.
  VoxelGrid subset(std::span<const std::uint32_t> keep) const;

 private:
  void rebuild_index();

  int level_ = 0;
  double voxel_size_ = 1.0;
  Vec3 origin_ = Vec3::Zero();
  int embedding_dim_ = 0;
  std::uint64_t uid_ = 0;

  std::vector<Lattice> voxels_;
  std::unordered_map<Lattice, std::uint32_t, LatticeHash> voxel_index_;
  std::vector<std::array<std::uint32_t, 8>> corners_;
  std::vector<Lattice> vertex_keys_;
  std::unordered_map<Lattice, std::uint32_t, LatticeHash> vertex_index_;
  std::vector<float> embeddings_;
  Octree octree_;

  friend VoxelGrid split(const VoxelGrid& grid);
  friend class GridBuilder;
};

/// `init_grid`: tile bounds; throws GridError("degenerate grid") when the voxel
/// size exceeds the bounds extent or the bounds are degenerate.
VoxelGrid init_grid(const Aabb& bounds, double voxel_size, int embedding_dim, std::uint64_t seed,
                    double init_range = 1e-2);

/// Number of points per axis used by the stratified pruning pattern.
int prune_samples_per_axis(int samples_per_voxel);

/// Keep voxels where some stratified-jittered sample has |sdf| < tau. Throws
/// GridError("empty grid after prune") if nothing survives.
VoxelGrid prune(const VoxelGrid& grid, const SdfField& field, double tau, int samples_per_voxel,
                std::uint64_t seed);

/// Replace every voxel by its 8 children. New vertex embeddings are the
/// trilinear retrieval on the parent grid; existing vertices keep their
/// embeddings (keys are doubled).
VoxelGrid split(const VoxelGrid& grid);

/// Sharing invariants: octree leaves equal the voxel set and every corner
/// resolves. Returns false on the first violation.
bool check_consistency(const VoxelGrid& grid);

}  // namespace voxsurf
