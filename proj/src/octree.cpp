#include "voxsurf/octree.hpp"

#include <algorithm>
#include <bit>

namespace voxsurf {

Octree::Octree(std::span<const Lattice> voxels) {
  if (voxels.empty()) return;
  Lattice lo = voxels.front();
  Lattice hi = voxels.front();
  for (const auto& v : voxels) {
    for (int a = 0; a < 3; ++a) {
      lo[a] = std::min(lo[a], v[a]);
      hi[a] = std::max(hi[a], v[a]);
    }
  }
  std::int32_t span = 1;
  for (int a = 0; a < 3; ++a) span = std::max(span, hi[a] - lo[a] + 1);
  const auto size = static_cast<std::int32_t>(std::bit_ceil(static_cast<std::uint32_t>(span)));
  depth_ = std::countr_zero(static_cast<std::uint32_t>(size));

  std::vector<std::uint32_t> ids(voxels.size());
  for (std::uint32_t i = 0; i < ids.size(); ++i) ids[i] = i;
  nodes_.reserve(voxels.size() * 2);
  build(ids, voxels, lo, size);
}

std::int32_t Octree::build(std::vector<std::uint32_t>& ids, std::span<const Lattice> voxels, Lattice base,
                           std::int32_t size) {
  const auto index = static_cast<std::int32_t>(nodes_.size());
  nodes_.push_back(Node{base, size, {-1, -1, -1, -1, -1, -1, -1, -1}, -1});
  if (size == 1) {
    nodes_[index].voxel = static_cast<std::int32_t>(ids.front());
    return index;
  }
  const std::int32_t half = size / 2;
  std::array<std::vector<std::uint32_t>, 8> buckets;
  for (auto id : ids) {
    const Lattice& v = voxels[id];
    int octant = 0;
    for (int a = 0; a < 3; ++a)
      if (v[a] >= base[a] + half) octant |= 1 << a;
    buckets[octant].push_back(id);
  }
  ids.clear();
  ids.shrink_to_fit();
  for (int o = 0; o < 8; ++o) {
    if (buckets[o].empty()) continue;
    Lattice child_base{base.x + ((o & 1) ? half : 0), base.y + ((o & 2) ? half : 0),
                       base.z + ((o & 4) ? half : 0)};
    const std::int32_t child = build(buckets[o], voxels, child_base, half);
    nodes_[index].children[o] = child;
  }
  return index;
}

std::vector<std::uint32_t> Octree::leaves() const {
  std::vector<std::uint32_t> out;
  for (const auto& n : nodes_)
    if (n.voxel >= 0) out.push_back(static_cast<std::uint32_t>(n.voxel));
  return out;
}

std::vector<VoxelHit> Octree::intersect(const Vec3& origin, const Vec3& dir, const Vec3& grid_origin,
                                        double cell_size, std::size_t max_hits) const {
  std::vector<VoxelHit> hits;
  if (nodes_.empty() || max_hits == 0) return hits;
  // Work in lattice units; t scales by cell_size.
  const Vec3 o = (origin - grid_origin) / cell_size;
  const Vec3 inv = safe_inverse(dir);

  auto node_box = [](const Node& n) {
    Aabb b;
    b.min = Vec3(n.base.x, n.base.y, n.base.z);
    b.max = b.min + Vec3::Constant(n.size);
    return b;
  };

  struct Entry {
    std::int32_t node;
    double t;
  };
  std::vector<Entry> stack;
  if (!intersect_box(o, inv, node_box(nodes_[0]))) return hits;
  stack.push_back({0, 0.0});
  std::array<Entry, 8> kids{};
  while (!stack.empty()) {
    const Entry top = stack.back();
    stack.pop_back();
    const Node& n = nodes_[top.node];
    if (n.voxel >= 0) {
      const auto hit = intersect_box(o, inv, node_box(n));
      if (!hit) continue;
      hits.push_back({static_cast<std::uint32_t>(n.voxel), hit->t_enter * cell_size, hit->t_exit * cell_size});
      if (hits.size() >= max_hits) break;
      continue;
    }
    int count = 0;
    for (auto c : n.children) {
      if (c < 0) continue;
      if (const auto hit = intersect_box(o, inv, node_box(nodes_[c]))) kids[count++] = {c, hit->t_enter};
    }
    // Push farthest first so the nearest child is processed next.
    std::sort(kids.begin(), kids.begin() + count, [](const Entry& a, const Entry& b) { return a.t > b.t; });
    for (int i = 0; i < count; ++i) stack.push_back(kids[i]);
  }
  return hits;
}

void Octree::query_box(const Vec3& lo, const Vec3& hi, std::vector<std::uint32_t>& out) const {
  if (nodes_.empty()) return;
  std::vector<std::int32_t> stack{0};
  while (!stack.empty()) {
    const Node& n = nodes_[stack.back()];
    stack.pop_back();
    bool overlap = true;
    for (int a = 0; a < 3; ++a) {
      if (hi[a] < n.base[a] || lo[a] > n.base[a] + n.size) overlap = false;
    }
    if (!overlap) continue;
    if (n.voxel >= 0) {
      out.push_back(static_cast<std::uint32_t>(n.voxel));
      continue;
    }
    for (auto c : n.children)
      if (c >= 0) stack.push_back(c);
  }
}

}  // namespace voxsurf
