#pragma once

#include "voxsurf/field.hpp"
#include "voxsurf/voxgrid.hpp"

#include <memory>
#include <variant>

namespace voxsurf {

/// A grid placed in the world by a similarity transform, decoded by a field.
/// Geometry queries map world points back through the inverse transform and
/// scale distances by the transform's scale.
struct Instance {
  std::shared_ptr<const VoxelGrid> grid;
  Similarity transform;
  std::shared_ptr<const RadianceField> field;
};

class SceneGrid {
 public:
  SceneGrid() = default;
  explicit SceneGrid(std::vector<Instance> instances);

  const std::vector<Instance>& instances() const { return instances_; }
  std::size_t size() const { return instances_.size(); }
  bool empty() const;

 private:
  std::vector<Instance> instances_;
};

/// Scene with a single untransformed instance.
SceneGrid single_instance(std::shared_ptr<const VoxelGrid> grid, std::shared_ptr<const RadianceField> field);

/// Multi-object composition; throws GridError when a transform is not a valid
/// rigid/similarity motion.
SceneGrid compose(std::vector<Instance> instances);

struct VoxelSelection {
  std::vector<Lattice> voxels;
  std::uint64_t grid_uid = 0;
};

/// Voxels whose centres lie inside the closed box.
VoxelSelection select_voxels(const VoxelGrid& grid, const Aabb& region);
/// Explicit id list; ids missing from the grid are dropped.
VoxelSelection select_voxels(const VoxelGrid& grid, std::span<const Lattice> ids);

struct Translate {
  Vec3 offset;
};
struct Scale {
  double factor = 1.0;
  Vec3 pivot = Vec3::Zero();
};
struct Duplicate {
  Vec3 offset;
};
struct Delete {};
using EditOp = std::variant<Translate, Scale, Duplicate, Delete>;

/// Re-instance the selected voxels with the requested transform. Embeddings
/// are never rewritten. Translate/duplicate offsets must be lattice aligned;
/// landing on occupied voxels throws GridError("overlapping instance") unless
/// `allow_overlap` is set.
SceneGrid edit_voxels(std::shared_ptr<const VoxelGrid> grid, std::shared_ptr<const RadianceField> field,
                      const VoxelSelection& selection, const EditOp& op, bool allow_overlap = false);

struct CollisionResult {
  bool colliding = false;
  std::vector<std::pair<std::uint32_t, std::uint32_t>> pairs;  // (voxel in a, voxel in b), sorted
};

/// Oriented-box separating-axis test. Boxes that only touch do not collide.
bool boxes_overlap(const Vec3& center_a, const Mat3& axes_a, const Vec3& half_a, const Vec3& center_b,
                   const Mat3& axes_b, const Vec3& half_b);

/// All pairs of leaf voxels whose world boxes overlap.
CollisionResult collision_query(const Instance& a, const Instance& b);

}  // namespace voxsurf
