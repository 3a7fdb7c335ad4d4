#include "voxsurf/scene.hpp"

#include "voxsurf/error.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace voxsurf {

SceneGrid::SceneGrid(std::vector<Instance> instances) : instances_(std::move(instances)) {}

bool SceneGrid::empty() const {
  return std::all_of(instances_.begin(), instances_.end(),
                     [](const Instance& i) { return !i.grid || i.grid->empty(); });
}

SceneGrid single_instance(std::shared_ptr<const VoxelGrid> grid, std::shared_ptr<const RadianceField> field) {
  return SceneGrid({Instance{std::move(grid), Similarity{}, std::move(field)}});
}

SceneGrid compose(std::vector<Instance> instances) {
  for (const auto& inst : instances) {
    if (!inst.grid || !inst.field) throw GridError("instance without grid or field");
    if (!inst.transform.valid()) throw GridError("invalid instance transform");
  }
  return SceneGrid(std::move(instances));
}

VoxelSelection select_voxels(const VoxelGrid& grid, const Aabb& region) {
  VoxelSelection sel;
  sel.grid_uid = grid.uid();
  if (region.degenerate()) return sel;
  for (std::uint32_t v = 0; v < grid.voxel_count(); ++v)
    if (region.contains(grid.voxel_center(v))) sel.voxels.push_back(grid.voxel(v));
  return sel;
}

VoxelSelection select_voxels(const VoxelGrid& grid, std::span<const Lattice> ids) {
  VoxelSelection sel;
  sel.grid_uid = grid.uid();
  for (const auto& id : ids)
    if (grid.find_voxel(id)) sel.voxels.push_back(id);
  return sel;
}

namespace {

Lattice lattice_offset(const VoxelGrid& grid, const Vec3& offset) {
  const Vec3 q = offset / grid.voxel_size();
  Lattice l;
  for (int a = 0; a < 3; ++a) {
    const double r = std::round(q[a]);
    if (std::abs(q[a] - r) > 1e-9 * std::max(1.0, std::abs(q[a]))) throw GridError("offset not lattice aligned");
    l[a] = static_cast<std::int32_t>(r);
  }
  return l;
}

std::vector<std::uint32_t> selection_ids(const VoxelGrid& grid, const VoxelSelection& sel) {
  if (sel.grid_uid != grid.uid()) throw GridError("selection does not belong to this grid");
  std::vector<std::uint32_t> ids;
  ids.reserve(sel.voxels.size());
  for (const auto& l : sel.voxels) {
    const auto v = grid.find_voxel(l);
    if (!v) throw GridError("selected voxel missing from grid");
    ids.push_back(*v);
  }
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  return ids;
}

std::vector<std::uint32_t> complement(std::size_t count, const std::vector<std::uint32_t>& ids) {
  std::vector<std::uint32_t> rest;
  std::size_t j = 0;
  for (std::uint32_t v = 0; v < count; ++v) {
    if (j < ids.size() && ids[j] == v) {
      ++j;
      continue;
    }
    rest.push_back(v);
  }
  return rest;
}

}  // namespace

SceneGrid edit_voxels(std::shared_ptr<const VoxelGrid> grid, std::shared_ptr<const RadianceField> field,
                      const VoxelSelection& selection, const EditOp& op, bool allow_overlap) {
  if (!grid || !field) throw GridError("edit needs a grid and a field");
  const auto ids = selection_ids(*grid, selection);
  const auto rest = complement(grid->voxel_count(), ids);
  auto moved = std::make_shared<const VoxelGrid>(grid->subset(ids));
  auto remaining = std::make_shared<const VoxelGrid>(grid->subset(rest));

  std::vector<Instance> out;
  auto check_overlap = [&](const VoxelGrid& stay, const Lattice& off) {
    if (allow_overlap) return;
    for (auto v : ids)
      if (stay.find_voxel(grid->voxel(v) + off)) throw GridError("overlapping instance");
  };

  std::visit(
      [&](const auto& edit) {
        using T = std::decay_t<decltype(edit)>;
        if constexpr (std::is_same_v<T, Translate>) {
          const Lattice off = lattice_offset(*grid, edit.offset);
          check_overlap(*remaining, off);
          if (!remaining->empty()) out.push_back({remaining, Similarity{}, field});
          Similarity tr;
          tr.translation = edit.offset;
          if (!moved->empty()) out.push_back({moved, tr, field});
        } else if constexpr (std::is_same_v<T, Duplicate>) {
          const Lattice off = lattice_offset(*grid, edit.offset);
          check_overlap(*grid, off);
          out.push_back({grid, Similarity{}, field});
          Similarity tr;
          tr.translation = edit.offset;
          if (!moved->empty()) out.push_back({moved, tr, field});
        } else if constexpr (std::is_same_v<T, Scale>) {
          if (!(edit.factor > 0.0)) throw GridError("scale factor must be positive");
          if (!remaining->empty()) out.push_back({remaining, Similarity{}, field});
          Similarity tr;
          tr.scale = edit.factor;
          tr.translation = edit.pivot * (1.0 - edit.factor);
          if (!moved->empty()) out.push_back({moved, tr, field});
        } else {
          if (!remaining->empty()) out.push_back({remaining, Similarity{}, field});
        }
      },
      op);
  return SceneGrid(std::move(out));
}

bool boxes_overlap(const Vec3& center_a, const Mat3& axes_a, const Vec3& half_a, const Vec3& center_b,
                   const Mat3& axes_b, const Vec3& half_b) {
  const Vec3 d = center_b - center_a;
  const double scale = std::max(half_a.maxCoeff(), half_b.maxCoeff());
  const double eps = 1e-9 * scale;
  auto separated = [&](const Vec3& axis) {
    const double len = axis.norm();
    if (len < 1e-12) return false;
    const Vec3 n = axis / len;
    double ra = 0.0;
    double rb = 0.0;
    for (int i = 0; i < 3; ++i) {
      ra += half_a[i] * std::abs(axes_a.col(i).dot(n));
      rb += half_b[i] * std::abs(axes_b.col(i).dot(n));
    }
    return std::abs(d.dot(n)) >= ra + rb - eps;
  };
  for (int i = 0; i < 3; ++i) {
    if (separated(axes_a.col(i))) return false;
    if (separated(axes_b.col(i))) return false;
  }
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      if (separated(axes_a.col(i).cross(axes_b.col(j)))) return false;
  return true;
}

CollisionResult collision_query(const Instance& a, const Instance& b) {
  CollisionResult result;
  if (!a.grid || !b.grid || a.grid->empty() || b.grid->empty()) return result;
  const VoxelGrid& ga = *a.grid;
  const VoxelGrid& gb = *b.grid;
  const double half_a = 0.5 * ga.voxel_size() * a.transform.scale;
  const double half_b = 0.5 * gb.voxel_size() * b.transform.scale;
  const Mat3& axes_a = a.transform.rotation;
  const Mat3& axes_b = b.transform.rotation;

  std::vector<std::uint32_t> candidates;
  for (std::uint32_t va = 0; va < ga.voxel_count(); ++va) {
    const Vec3 ca = a.transform.apply(ga.voxel_center(va));
    // World box of voxel a mapped into b's lattice coordinates.
    const Vec3 local = b.transform.apply_inverse(ca);
    Vec3 extent = Vec3::Zero();
    const Mat3 rel = b.transform.rotation.transpose() * axes_a;
    for (int i = 0; i < 3; ++i) extent += rel.col(i).cwiseAbs() * half_a;
    extent /= b.transform.scale;
    const Vec3 lo = (local - extent - gb.origin()) / gb.voxel_size();
    const Vec3 hi = (local + extent - gb.origin()) / gb.voxel_size();
    candidates.clear();
    gb.octree().query_box(lo, hi, candidates);
    for (auto vb : candidates) {
      const Vec3 cb = b.transform.apply(gb.voxel_center(vb));
      if (boxes_overlap(ca, axes_a, Vec3::Constant(half_a), cb, axes_b, Vec3::Constant(half_b)))
        result.pairs.emplace_back(va, vb);
    }
  }
  std::sort(result.pairs.begin(), result.pairs.end());
  result.colliding = !result.pairs.empty();
  return result;
}

}  // namespace voxsurf
