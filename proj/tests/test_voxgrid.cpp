#include "doctest.h"

#include "voxsurf/error.hpp"
#include "voxsurf/field.hpp"
#include "voxsurf/voxgrid.hpp"

#include <algorithm>
#include <random>
#include <set>

using namespace voxsurf;

namespace {

class SphereSdf final : public SdfField {
 public:
  explicit SphereSdf(double r) : r_(r) {}
  void sdf(const VoxelGrid&, std::span<const Vec3> points, std::span<const std::uint32_t>,
           std::span<double> out) const override {
    for (std::size_t i = 0; i < points.size(); ++i) out[i] = points[i].norm() - r_;
  }

 private:
  double r_;
};

class ConstantSdf final : public SdfField {
 public:
  void sdf(const VoxelGrid&, std::span<const Vec3>, std::span<const std::uint32_t>,
           std::span<double> out) const override {
    std::fill(out.begin(), out.end(), 1.0);
  }
};

void randomize(VoxelGrid& grid, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  for (auto& e : grid.embeddings()) e = u(rng);
}

Vec3 random_point_in(const VoxelGrid& grid, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const auto v = static_cast<std::uint32_t>(rng() % grid.voxel_count());
  return grid.voxel_box(v).min + grid.voxel_size() * Vec3(u(rng), u(rng), u(rng));
}

std::set<Lattice> corner_keys(const VoxelGrid& grid, std::uint32_t v) {
  std::set<Lattice> keys;
  for (auto c : grid.corners(v)) keys.insert(grid.vertex_keys()[c]);
  return keys;
}

}  // namespace

TEST_CASE("init_grid lattice counts") {
  const Aabb unit{Vec3::Zero(), Vec3::Ones()};
  auto g = init_grid(unit, 0.8, 4, 1);
  CHECK(g.voxel_count() == 8);
  CHECK(g.vertex_count() == 27);
  g = init_grid(unit, 0.5, 4, 1);
  CHECK(g.voxel_count() == 8);
  CHECK(g.vertex_count() == 27);
  g = init_grid({Vec3::Constant(-1.0), Vec3::Constant(1.0)}, 0.8, 16, 1);
  CHECK(g.voxel_count() == 27);
  CHECK(g.vertex_count() == 64);
  CHECK(g.voxel_size() == 0.8);
  // grown symmetrically: 2.4 wide, centred on the bounds
  CHECK(g.bounds().min.x() == doctest::Approx(-1.2));
  CHECK(g.bounds().max.x() == doctest::Approx(1.2));
  for (float e : g.embeddings()) {
    CHECK(e >= -1e-2f);
    CHECK(e <= 1e-2f);
  }
  CHECK(check_consistency(g));
}

TEST_CASE("init_grid rejects degenerate input") {
  CHECK_THROWS_WITH_AS(init_grid({Vec3::Zero(), Vec3::Ones()}, 1.5, 4, 1), "degenerate grid", GridError);
  CHECK_THROWS_AS(init_grid({Vec3::Zero(), Vec3(1.0, 0.0, 1.0)}, 0.1, 4, 1), GridError);
  CHECK_THROWS_AS(init_grid({Vec3::Zero(), Vec3::Ones()}, 0.0, 4, 1), GridError);
}

TEST_CASE("init_grid is deterministic under seed") {
  const Aabb box{Vec3::Zero(), Vec3::Ones()};
  const auto a = init_grid(box, 0.5, 3, 9);
  const auto b = init_grid(box, 0.5, 3, 9);
  const auto c = init_grid(box, 0.5, 3, 10);
  CHECK(std::equal(a.embeddings().begin(), a.embeddings().end(), b.embeddings().begin()));
  CHECK_FALSE(std::equal(a.embeddings().begin(), a.embeddings().end(), c.embeddings().begin()));
}

TEST_CASE("adjacent voxels share vertex keys") {
  const auto g = VoxelGrid::from_voxels(Vec3::Zero(), 1.0, 0, 2, {{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {1, 1, 1}});
  const auto a = corner_keys(g, *g.find_voxel({0, 0, 0}));
  auto shared = [&](Lattice other) {
    const auto b = corner_keys(g, *g.find_voxel(other));
    std::vector<Lattice> both;
    std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(both));
    return both.size();
  };
  CHECK(shared({1, 0, 0}) == 4);
  CHECK(shared({1, 1, 0}) == 2);
  CHECK(shared({1, 1, 1}) == 1);
  // one record per distinct key
  std::set<Lattice> keys(g.vertex_keys().begin(), g.vertex_keys().end());
  CHECK(keys.size() == g.vertex_count());
}

TEST_CASE("gamma is trilinear in the voxel") {
  auto g = VoxelGrid::from_voxels(Vec3(0.5, -1.0, 2.0), 0.25, 0, 3, {{0, 0, 0}});
  randomize(g, 4);
  std::vector<double> out(3);

  // corner hits the vertex exactly
  for (int c = 0; c < 8; ++c) {
    const auto vert = g.corners(0)[c];
    const Vec3 p = g.vertex_position(vert);
    REQUIRE(g.gamma(p, out).has_value() == (c == 0));  // only the min corner is inside [min, max)
    g.interpolate(0, p, out);
    for (int j = 0; j < 3; ++j) CHECK(out[j] == doctest::Approx(g.embedding(vert)[j]).epsilon(1e-12));
  }

  // centre is the corner mean
  REQUIRE(g.gamma(g.voxel_center(0), out));
  for (int j = 0; j < 3; ++j) {
    double mean = 0.0;
    for (auto vert : g.corners(0)) mean += g.embedding(vert)[j];
    CHECK(out[j] == doctest::Approx(mean / 8.0));
  }

  // constant corners give a constant field
  for (auto& e : g.embeddings()) e = 0.375f;
  std::mt19937_64 rng(1);
  for (int i = 0; i < 20; ++i) {
    REQUIRE(g.gamma(random_point_in(g, rng), out));
    for (double v : out) CHECK(v == doctest::Approx(0.375));
  }
  CHECK_FALSE(g.gamma(Vec3(10.0, 0.0, 0.0), out).has_value());
}

TEST_CASE("gamma is continuous across shared faces") {
  auto g = VoxelGrid::from_voxels(Vec3::Zero(), 0.5, 0, 4, {{0, 0, 0}, {1, 0, 0}});
  randomize(g, 12);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 0.5);
  std::vector<double> left(4), right(4);
  double worst = 0.0;
  for (int i = 0; i < 200; ++i) {
    const Vec3 p(0.5, u(rng), u(rng));
    g.interpolate(0, p, left);
    g.interpolate(1, p, right);
    for (int j = 0; j < 4; ++j) worst = std::max(worst, std::abs(left[j] - right[j]));
  }
  CHECK(worst < 1e-6);
}

TEST_CASE("split of a single voxel") {
  auto g = VoxelGrid::from_voxels(Vec3::Zero(), 1.0, 0, 2, {{0, 0, 0}});
  randomize(g, 3);
  const auto s = split(g);
  CHECK(s.level() == 1);
  CHECK(s.voxel_size() == 0.5);
  CHECK(s.voxel_count() == 8);
  CHECK(s.vertex_count() == 27);
  CHECK(check_consistency(s));

  auto parent = [&](Lattice key) { return g.embedding(*g.find_vertex(key)); };
  auto child = [&](Lattice key) { return s.embedding(*s.find_vertex(key)); };
  for (int j = 0; j < 2; ++j) {
    // corners carried over unchanged
    CHECK(child({2, 2, 0})[j] == parent({1, 1, 0})[j]);
    // edge midpoint, face centre and body centre are averages
    CHECK(child({1, 0, 0})[j] == doctest::Approx(0.5 * (parent({0, 0, 0})[j] + parent({1, 0, 0})[j])));
    double face = 0.0;
    for (Lattice k : {Lattice{0, 0, 0}, Lattice{1, 0, 0}, Lattice{0, 1, 0}, Lattice{1, 1, 0}}) face += parent(k)[j];
    CHECK(child({1, 1, 0})[j] == doctest::Approx(face / 4.0));
    double body = 0.0;
    for (std::uint32_t v = 0; v < g.vertex_count(); ++v) body += g.embedding(v)[j];
    CHECK(child({1, 1, 1})[j] == doctest::Approx(body / 8.0));
  }
}

TEST_CASE("split preserves gamma") {
  auto g = init_grid({Vec3::Constant(-1.0), Vec3::Constant(1.0)}, 0.8, 5, 21);
  randomize(g, 22);
  const auto s = split(g);
  CHECK(s.voxel_count() == 8 * g.voxel_count());
  std::mt19937_64 rng(23);
  std::vector<double> before(5), after(5);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const Vec3 p = random_point_in(g, rng);
    REQUIRE(g.gamma(p, before));
    REQUIRE(s.gamma(p, after));
    for (int j = 0; j < 5; ++j) worst = std::max(worst, std::abs(before[j] - after[j]));
  }
  CHECK(worst < 1e-6);
  const auto s2 = split(s);
  CHECK(s2.level() == 2);
  CHECK(check_consistency(s2));
}

TEST_CASE("prune keeps the surface band") {
  const auto g = init_grid({Vec3::Constant(-1.0), Vec3::Constant(1.0)}, 0.25, 2, 1);
  const SphereSdf sphere(0.5);
  const double tau = 0.01;
  const int samples = 512;
  const auto p = prune(g, sphere, tau, samples, 7);
  CHECK(check_consistency(p));
  CHECK(p.voxel_count() < g.voxel_count());

  // dense 16^3 oracle per voxel
  const double spacing = g.voxel_size() / prune_samples_per_axis(samples);
  const int dense = 16;
  for (std::uint32_t v = 0; v < g.voxel_count(); ++v) {
    const Aabb box = g.voxel_box(v);
    double best = std::numeric_limits<double>::infinity();
    for (int i = 0; i < dense; ++i)
      for (int j = 0; j < dense; ++j)
        for (int k = 0; k < dense; ++k) {
          const Vec3 q = box.min + g.voxel_size() * Vec3((i + 0.5) / dense, (j + 0.5) / dense, (k + 0.5) / dense);
          best = std::min(best, std::abs(q.norm() - 0.5));
        }
    const bool kept = p.find_voxel(g.voxel(v)).has_value();
    // exact minimum over the closed voxel, for a sphere centred at the origin
    const Vec3 nearest = Vec3::Zero().cwiseMax(box.min).cwiseMin(box.max);
    Vec3 farthest;
    for (int a = 0; a < 3; ++a) farthest[a] = std::abs(box.min[a]) > std::abs(box.max[a]) ? box.min[a] : box.max[a];
    const bool crosses = nearest.norm() <= 0.5 && farthest.norm() >= 0.5;
    const double exact = crosses ? 0.0 : std::min(std::abs(nearest.norm() - 0.5), std::abs(farthest.norm() - 0.5));
    if (kept) {
      CHECK(exact < tau);
    } else {
      CHECK(exact >= tau - spacing * std::sqrt(3.0));
    }
    if (best < tau - spacing * std::sqrt(3.0)) CHECK(kept);
  }
  // every voxel the surface actually passes through is kept
  std::size_t crossing = 0;
  for (std::uint32_t v = 0; v < g.voxel_count(); ++v) {
    const Aabb box = g.voxel_box(v);
    const Vec3 nearest = Vec3::Zero().cwiseMax(box.min).cwiseMin(box.max);
    Vec3 farthest;
    for (int a = 0; a < 3; ++a) farthest[a] = std::abs(box.min[a]) > std::abs(box.max[a]) ? box.min[a] : box.max[a];
    if (nearest.norm() > 0.5 - 0.05 || farthest.norm() < 0.5 + 0.05) continue;  // keep only clear crossings
    ++crossing;
    CHECK(p.find_voxel(g.voxel(v)).has_value());
  }
  CHECK(crossing > 0);
}

TEST_CASE("prune of a field without a zero crossing fails") {
  const auto g = init_grid({Vec3::Zero(), Vec3::Ones()}, 0.5, 2, 1);
  CHECK_THROWS_WITH_AS(prune(g, ConstantSdf{}, 0.01, 64, 1), "empty grid after prune", GridError);
}

TEST_CASE("prune drops unreferenced vertices and keeps embeddings") {
  auto g = init_grid({Vec3::Constant(-1.0), Vec3::Constant(1.0)}, 0.5, 3, 2);
  const SphereSdf sphere(0.3);
  const auto p = prune(g, sphere, 0.01, 64, 3);
  std::set<std::uint32_t> used;
  for (std::uint32_t v = 0; v < p.voxel_count(); ++v)
    for (auto c : p.corners(v)) used.insert(c);
  CHECK(used.size() == p.vertex_count());
  for (std::uint32_t v = 0; v < p.vertex_count(); ++v) {
    const auto old = g.find_vertex(p.vertex_keys()[v]);
    REQUIRE(old);
    for (int j = 0; j < 3; ++j) CHECK(p.embedding(v)[j] == g.embedding(*old)[j]);
  }
}

TEST_CASE("prune samples per axis") {
  CHECK(prune_samples_per_axis(8) == 2);
  CHECK(prune_samples_per_axis(9) == 3);
  CHECK(prune_samples_per_axis(512) == 8);
  CHECK(prune_samples_per_axis(1) == 2);
}

TEST_CASE("octree leaves match the voxel set through prune and split") {
  auto g = init_grid({Vec3::Constant(-1.0), Vec3::Constant(1.0)}, 0.5, 2, 5);
  const SphereSdf sphere(0.6);
  for (int round = 0; round < 2; ++round) {
    g = prune(g, sphere, 0.05, 64, 11 + round);
    auto leaves = g.octree().leaves();
    std::sort(leaves.begin(), leaves.end());
    REQUIRE(leaves.size() == g.voxel_count());
    for (std::uint32_t v = 0; v < g.voxel_count(); ++v) CHECK(leaves[v] == v);
    CHECK(check_consistency(g));
    const std::size_t before = g.voxel_count();
    g = split(g);
    CHECK(g.voxel_count() == 8 * before);
    CHECK(check_consistency(g));
  }
}

TEST_CASE("subset carries embeddings") {
  auto g = init_grid({Vec3::Zero(), Vec3::Ones()}, 0.5, 2, 8);
  const std::uint32_t keep[] = {0, 7};
  const auto s = g.subset(keep);
  CHECK(s.voxel_count() == 2);
  CHECK(check_consistency(s));
  for (std::uint32_t v = 0; v < s.vertex_count(); ++v) {
    const auto old = g.find_vertex(s.vertex_keys()[v]);
    REQUIRE(old);
    CHECK(s.embedding(v)[0] == g.embedding(*old)[0]);
  }
}
