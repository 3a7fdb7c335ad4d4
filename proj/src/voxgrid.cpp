#include "voxsurf/voxgrid.hpp"

#include "voxsurf/error.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <random>
#include <set>

namespace voxsurf {

namespace {

std::uint64_t next_uid() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1);
}

}  // namespace

std::array<double, 8> trilinear_weights(const Vec3& u) {
  std::array<double, 8> w{};
  for (int c = 0; c < 8; ++c) {
    const double wx = (c & 1) ? u.x() : 1.0 - u.x();
    const double wy = (c & 2) ? u.y() : 1.0 - u.y();
    const double wz = (c & 4) ? u.z() : 1.0 - u.z();
    w[c] = wx * wy * wz;
  }
  return w;
}

std::array<std::array<double, 8>, 3> trilinear_weight_derivatives(const Vec3& u) {
  std::array<std::array<double, 8>, 3> d{};
  for (int c = 0; c < 8; ++c) {
    const double wx = (c & 1) ? u.x() : 1.0 - u.x();
    const double wy = (c & 2) ? u.y() : 1.0 - u.y();
    const double wz = (c & 4) ? u.z() : 1.0 - u.z();
    const double sx = (c & 1) ? 1.0 : -1.0;
    const double sy = (c & 2) ? 1.0 : -1.0;
    const double sz = (c & 4) ? 1.0 : -1.0;
    d[0][c] = sx * wy * wz;
    d[1][c] = wx * sy * wz;
    d[2][c] = wx * wy * sz;
  }
  return d;
}

// Assembles corner tables and vertex keys for a voxel list.
class GridBuilder {
 public:
  static void index(VoxelGrid& g) { g.rebuild_index(); }
};

void VoxelGrid::rebuild_index() {
  std::sort(voxels_.begin(), voxels_.end());
  voxels_.erase(std::unique(voxels_.begin(), voxels_.end()), voxels_.end());
  voxel_index_.clear();
  voxel_index_.reserve(voxels_.size());
  for (std::uint32_t i = 0; i < voxels_.size(); ++i) voxel_index_.emplace(voxels_[i], i);

  // Vertices are ordered by lattice key so indices are reproducible.
  std::set<Lattice> keys;
  for (const auto& v : voxels_)
    for (int c = 0; c < 8; ++c) keys.insert(v + corner_offset(c));

  std::vector<Lattice> new_keys(keys.begin(), keys.end());
  std::vector<float> new_embeddings(new_keys.size() * static_cast<std::size_t>(embedding_dim_), 0.0f);
  // Carry over embeddings of vertices that already existed under the same key.
  for (std::uint32_t i = 0; i < new_keys.size(); ++i) {
    auto it = vertex_index_.find(new_keys[i]);
    if (it == vertex_index_.end()) continue;
    std::copy_n(embeddings_.begin() + static_cast<std::ptrdiff_t>(it->second) * embedding_dim_, embedding_dim_,
                new_embeddings.begin() + static_cast<std::ptrdiff_t>(i) * embedding_dim_);
  }
  vertex_keys_ = std::move(new_keys);
  embeddings_ = std::move(new_embeddings);
  vertex_index_.clear();
  vertex_index_.reserve(vertex_keys_.size());
  for (std::uint32_t i = 0; i < vertex_keys_.size(); ++i) vertex_index_.emplace(vertex_keys_[i], i);

  corners_.resize(voxels_.size());
  for (std::uint32_t v = 0; v < voxels_.size(); ++v)
    for (int c = 0; c < 8; ++c) corners_[v][c] = vertex_index_.at(voxels_[v] + corner_offset(c));

  octree_ = Octree(voxels_);
  uid_ = next_uid();
}

VoxelGrid VoxelGrid::tile(const Aabb& bounds, double voxel_size, int embedding_dim, std::uint64_t seed,
                          double init_range) {
  VoxelGrid g;
  g.voxel_size_ = voxel_size;
  g.embedding_dim_ = embedding_dim;
  std::array<int, 3> counts{};
  const Vec3 extent = bounds.extent();
  Vec3 origin;
  for (int a = 0; a < 3; ++a) {
    counts[a] = std::max(1, static_cast<int>(std::ceil(extent[a] / voxel_size - 1e-9)));
    const double grown = counts[a] * voxel_size;
    origin[a] = bounds.min[a] - 0.5 * (grown - extent[a]);
  }
  g.origin_ = origin;
  g.voxels_.reserve(static_cast<std::size_t>(counts[0]) * counts[1] * counts[2]);
  for (int i = 0; i < counts[0]; ++i)
    for (int j = 0; j < counts[1]; ++j)
      for (int k = 0; k < counts[2]; ++k) g.voxels_.push_back({i, j, k});
  g.rebuild_index();

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> dist(static_cast<float>(-init_range), static_cast<float>(init_range));
  for (auto& e : g.embeddings_) e = dist(rng);
  return g;
}

VoxelGrid VoxelGrid::from_voxels(const Vec3& origin, double voxel_size, int level, int embedding_dim,
                                 std::vector<Lattice> voxels) {
  VoxelGrid g;
  g.origin_ = origin;
  g.voxel_size_ = voxel_size;
  g.level_ = level;
  g.embedding_dim_ = embedding_dim;
  g.voxels_ = std::move(voxels);
  g.rebuild_index();
  return g;
}

std::optional<std::uint32_t> VoxelGrid::find_voxel(const Lattice& key) const {
  auto it = voxel_index_.find(key);
  if (it == voxel_index_.end()) return std::nullopt;
  return it->second;
}

std::optional<std::uint32_t> VoxelGrid::find_vertex(const Lattice& key) const {
  auto it = vertex_index_.find(key);
  if (it == vertex_index_.end()) return std::nullopt;
  return it->second;
}

Aabb VoxelGrid::voxel_box(std::uint32_t v) const {
  const Lattice& l = voxels_[v];
  Aabb b;
  b.min = origin_ + voxel_size_ * Vec3(l.x, l.y, l.z);
  b.max = b.min + Vec3::Constant(voxel_size_);
  return b;
}

Vec3 VoxelGrid::voxel_center(std::uint32_t v) const { return voxel_box(v).center(); }

Vec3 VoxelGrid::vertex_position(std::uint32_t vertex) const {
  const Lattice& l = vertex_keys_[vertex];
  return origin_ + voxel_size_ * Vec3(l.x, l.y, l.z);
}

Aabb VoxelGrid::bounds() const {
  Aabb b;
  if (voxels_.empty()) return b;
  Lattice lo = voxels_.front();
  Lattice hi = voxels_.front();
  for (const auto& v : voxels_) {
    for (int a = 0; a < 3; ++a) {
      lo[a] = std::min(lo[a], v[a]);
      hi[a] = std::max(hi[a], v[a]);
    }
  }
  b.min = origin_ + voxel_size_ * Vec3(lo.x, lo.y, lo.z);
  b.max = origin_ + voxel_size_ * Vec3(hi.x + 1, hi.y + 1, hi.z + 1);
  return b;
}

std::optional<std::uint32_t> VoxelGrid::locate(const Vec3& p) const {
  const Vec3 q = (p - origin_) / voxel_size_;
  Lattice key{static_cast<std::int32_t>(std::floor(q.x())), static_cast<std::int32_t>(std::floor(q.y())),
              static_cast<std::int32_t>(std::floor(q.z()))};
  return find_voxel(key);
}

Vec3 VoxelGrid::local_coords(std::uint32_t v, const Vec3& p) const {
  const Lattice& l = voxels_[v];
  return (p - origin_) / voxel_size_ - Vec3(l.x, l.y, l.z);
}

void VoxelGrid::interpolate(std::uint32_t v, const Vec3& p, std::span<double> out) const {
  const auto w = trilinear_weights(local_coords(v, p));
  std::fill(out.begin(), out.end(), 0.0);
  const auto& corner = corners_[v];
  for (int c = 0; c < 8; ++c) {
    const float* e = embeddings_.data() + static_cast<std::size_t>(corner[c]) * embedding_dim_;
    for (int i = 0; i < embedding_dim_; ++i) out[i] += w[c] * static_cast<double>(e[i]);
  }
}

std::optional<std::uint32_t> VoxelGrid::gamma(const Vec3& p, std::span<double> out) const {
  const auto v = locate(p);
  if (!v) return std::nullopt;
  interpolate(*v, p, out);
  return v;
}

VoxelGrid VoxelGrid::subset(std::span<const std::uint32_t> keep) const {
  VoxelGrid g;
  g.origin_ = origin_;
  g.voxel_size_ = voxel_size_;
  g.level_ = level_;
  g.embedding_dim_ = embedding_dim_;
  g.vertex_index_ = vertex_index_;
  g.embeddings_ = embeddings_;
  g.voxels_.reserve(keep.size());
  for (auto v : keep) g.voxels_.push_back(voxels_.at(v));
  g.rebuild_index();
  return g;
}

VoxelGrid init_grid(const Aabb& bounds, double voxel_size, int embedding_dim, std::uint64_t seed, double init_range) {
  if (!(voxel_size > 0.0) || bounds.degenerate()) throw GridError("degenerate grid");
  if (voxel_size > bounds.extent().maxCoeff()) throw GridError("degenerate grid");
  if (embedding_dim <= 0) throw GridError("embedding dimension must be positive");
  return VoxelGrid::tile(bounds, voxel_size, embedding_dim, seed, init_range);
}

int prune_samples_per_axis(int samples_per_voxel) {
  int n = static_cast<int>(std::ceil(std::cbrt(static_cast<double>(samples_per_voxel)) - 1e-9));
  return std::max(n, 2);
}

VoxelGrid prune(const VoxelGrid& grid, const SdfField& field, double tau, int samples_per_voxel,
                std::uint64_t seed) {
  if (!(tau > 0.0)) throw GridError("prune threshold must be positive");
  if (samples_per_voxel < 8) throw GridError("prune needs at least 8 samples per voxel");
  const int n = prune_samples_per_axis(samples_per_voxel);
  const std::size_t per_voxel = static_cast<std::size_t>(n) * n * n;

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> jitter(0.0, 1.0);

  std::vector<std::uint32_t> keep;
  std::vector<Vec3> points(per_voxel);
  std::vector<std::uint32_t> ids(per_voxel);
  std::vector<double> sdf(per_voxel);
  for (std::uint32_t v = 0; v < grid.voxel_count(); ++v) {
    const Aabb box = grid.voxel_box(v);
    std::size_t s = 0;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        for (int k = 0; k < n; ++k, ++s) {
          const Vec3 u((i + jitter(rng)) / n, (j + jitter(rng)) / n, (k + jitter(rng)) / n);
          points[s] = box.min + grid.voxel_size() * u;
          ids[s] = v;
        }
    field.sdf(grid, points, ids, sdf);
    const bool near_surface = std::any_of(sdf.begin(), sdf.end(), [tau](double d) { return std::abs(d) < tau; });
    if (near_surface) keep.push_back(v);
  }
  if (keep.empty()) throw GridError("empty grid after prune");
  return grid.subset(keep);
}

VoxelGrid split(const VoxelGrid& grid) {
  if (grid.empty()) throw GridError("cannot split an empty grid");
  VoxelGrid g;
  g.origin_ = grid.origin_;
  g.voxel_size_ = grid.voxel_size_ * 0.5;
  g.level_ = grid.level_ + 1;
  g.embedding_dim_ = grid.embedding_dim_;
  g.voxels_.reserve(grid.voxel_count() * 8);
  for (const auto& v : grid.voxels_)
    for (int c = 0; c < 8; ++c) g.voxels_.push_back(v.doubled() + corner_offset(c));
  // Old vertices survive under doubled keys; rebuild_index copies them.
  for (std::uint32_t i = 0; i < grid.vertex_keys_.size(); ++i) g.vertex_index_.emplace(grid.vertex_keys_[i].doubled(), i);
  g.embeddings_ = grid.embeddings_;
  g.rebuild_index();

  // Fill new vertices from the parent field. Each child voxel lies inside a
  // parent voxel, so retrieval uses the parent's corners.
  std::vector<double> e(static_cast<std::size_t>(g.embedding_dim_));
  for (std::uint32_t vert = 0; vert < g.vertex_keys_.size(); ++vert) {
    const Lattice& key = g.vertex_keys_[vert];
    if ((key.x % 2 == 0) && (key.y % 2 == 0) && (key.z % 2 == 0) &&
        grid.find_vertex({key.x / 2, key.y / 2, key.z / 2}))
      continue;
    // Parent voxel: any parent containing this vertex; pick via the floor of
    // the half-resolution coordinate, falling back to neighbours when the
    // vertex sits on the max face of the occupied region.
    std::optional<std::uint32_t> parent;
    Lattice pv{};
    for (int c = 0; c < 8 && !parent; ++c) {
      Lattice off = corner_offset(c);
      for (int a = 0; a < 3; ++a) {
        const std::int32_t k = key[a];
        // floor division toward -inf
        const std::int32_t base = (k >= 0 ? k / 2 : -((-k + 1) / 2));
        pv[a] = base - ((k % 2 == 0) ? off[a] : 0);
      }
      parent = grid.find_voxel(pv);
    }
    if (!parent) throw GridError("split: orphan vertex");
    const Vec3 p = g.vertex_position(vert);
    grid.interpolate(*parent, p, e);
    auto dst = g.embedding(vert);
    for (int i = 0; i < g.embedding_dim_; ++i) dst[i] = static_cast<float>(e[i]);
  }
  return g;
}

bool check_consistency(const VoxelGrid& grid) {
  auto leaves = grid.octree().leaves();
  if (leaves.size() != grid.voxel_count()) return false;
  std::sort(leaves.begin(), leaves.end());
  for (std::uint32_t i = 0; i < leaves.size(); ++i)
    if (leaves[i] != i) return false;
  for (std::uint32_t v = 0; v < grid.voxel_count(); ++v) {
    for (int c = 0; c < 8; ++c) {
      const auto id = grid.find_vertex(grid.voxel(v) + corner_offset(c));
      if (!id || *id != grid.corners(v)[c]) return false;
    }
  }
  return true;
}

}  // namespace voxsurf
