#include "doctest.h"

#include "voxsurf/error.hpp"
#include "voxsurf/losses.hpp"

#include <random>

using namespace voxsurf;

TEST_CASE("colour loss") {
  const std::vector<Vec3> black(1, Vec3::Zero());
  const std::vector<Vec3> white(1, Vec3::Ones());
  CHECK(color_loss(black, white) == 3.0);
  CHECK(color_loss(white, white) == 0.0);
  const std::vector<Vec3> a{Vec3(0.5, 0.5, 0.5), Vec3(0.0, 0.2, 0.0)};
  const std::vector<Vec3> b{Vec3(0.0, 0.5, 1.0), Vec3(0.0, 0.0, 0.0)};
  CHECK(color_loss(a, b) == doctest::Approx(0.6));
  const auto g = color_loss_grad(a, b);
  CHECK(g[0] == Vec3(0.5, 0.0, -0.5));
  CHECK(g[1] == Vec3(0.0, 0.5, 0.0));
  CHECK_THROWS_AS(color_loss(black, b), Error);
}

TEST_CASE("eikonal loss") {
  const std::vector<Vec3> unit{Vec3::UnitX(), Vec3(0.6, 0.8, 0.0)};
  CHECK(eikonal_loss(unit) == doctest::Approx(0.0).epsilon(1e-15));
  const std::vector<Vec3> zero(3, Vec3::Zero());
  CHECK(eikonal_loss(zero) == 1.0);
  const std::vector<Vec3> twice{Vec3(0, 2, 0)};
  CHECK(eikonal_loss(twice) == 1.0);

  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<Vec3> g(5);
  for (auto& v : g) v = Vec3(n(rng), n(rng), n(rng));
  const auto grad = eikonal_loss_grad(g);
  const double h = 1e-6;
  for (std::size_t i = 0; i < g.size(); ++i)
    for (int c = 0; c < 3; ++c) {
      auto p = g, m = g;
      p[i][c] += h;
      m[i][c] -= h;
      CHECK(grad[i][c] == doctest::Approx((eikonal_loss(p) - eikonal_loss(m)) / (2 * h)).epsilon(1e-6));
    }
}

TEST_CASE("occupancy") {
  CHECK(occupancy(0.0, 20.0) == 0.5);
  CHECK(occupancy(-1.0, 20.0) == doctest::Approx(1.0));
  CHECK(occupancy(1.0, 20.0) == doctest::Approx(0.0));
  CHECK(occupancy(0.05, 20.0) == doctest::Approx(1.0 / (1.0 + std::exp(1.0))).epsilon(1e-14));
  CHECK(occupancy(-1e4, 20.0) == 1.0);
  CHECK(occupancy(1e4, 20.0) == 0.0);
}

TEST_CASE("regularization points are stratified inside voxels") {
  const auto g = init_grid({Vec3::Zero(), Vec3::Ones()}, 0.5, 1, 1);
  const auto pts = regularization_points(g, 5, 11);
  CHECK(pts.points.size() == 8 * 8);
  for (std::size_t i = 0; i < pts.points.size(); ++i) CHECK(g.voxel_box(pts.voxels[i]).contains(pts.points[i]));
  // one point per sub-cell
  for (std::uint32_t v = 0; v < 8; ++v) {
    std::vector<int> cells(8, 0);
    for (std::size_t i = 0; i < pts.points.size(); ++i) {
      if (pts.voxels[i] != v) continue;
      const Vec3 u = g.local_coords(v, pts.points[i]);
      ++cells[(u.x() >= 0.5) + 2 * (u.y() >= 0.5) + 4 * (u.z() >= 0.5)];
    }
    for (int c : cells) CHECK(c == 1);
  }
  CHECK(regularization_points(g, 1, 3).points.size() == 8);
  const auto again = regularization_points(g, 5, 11);
  CHECK(again.points == pts.points);
  CHECK_THROWS_AS(regularization_points(g, 0, 1), Error);
}

TEST_CASE("depth bands") {
  CHECK(classify_depth(1.0, 1.5, 0.06) == DepthInterval::Outside);
  CHECK(classify_depth(1.45, 1.5, 0.06) == DepthInterval::Near);
  CHECK(classify_depth(1.56, 1.5, 0.06) == DepthInterval::Near);
  CHECK(classify_depth(1.57, 1.5, 0.06) == DepthInterval::Inside);
  CHECK(classify_depth(9.0, 1.5, 0.06) == DepthInterval::Inside);
  CHECK(classify_depth(1.7, 1.5, 0.06, 0.2) == DepthInterval::Inside);
  CHECK(classify_depth(1.8, 1.5, 0.06, 0.2) == DepthInterval::Beyond);
}

TEST_CASE("depth loss terms") {
  DepthLossOptions opt;
  SUBCASE("free-space point at the zero level") {
    const std::vector<double> t{1.0}, sdf{0.0};
    const DepthRay r{1.5, t, sdf};
    const auto l = depth_loss(std::span<const DepthRay>(&r, 1), opt);
    CHECK(l.outside == doctest::Approx(0.25));
    CHECK(l.total() == doctest::Approx(0.25));
  }
  SUBCASE("correct geometry costs nothing") {
    const std::vector<double> t{1.0, 1.5, 2.0}, sdf{0.5, 0.0, -0.5};
    const DepthRay r{1.5, t, sdf};
    const auto l = depth_loss(std::span<const DepthRay>(&r, 1), opt);
    CHECK(l.total() < 1e-8);
    CHECK(l.outside_count == 1);
    CHECK(l.near_count == 1);
    CHECK(l.inside_count == 1);
  }
  SUBCASE("swapped band targets penalise correct geometry") {
    opt.swapped_targets = true;
    const std::vector<double> t{1.0, 2.0}, sdf{0.5, -0.5};
    const DepthRay r{1.5, t, sdf};
    const auto l = depth_loss(std::span<const DepthRay>(&r, 1), opt);
    CHECK(l.total() == doctest::Approx(2.0).epsilon(1e-3));
  }
  SUBCASE("each band is averaged over its own points") {
    const std::vector<double> t1{1.0, 1.1, 1.5}, s1{0.0, 0.0, 0.2};
    const std::vector<double> t2{0.5}, s2{0.0};
    const DepthRay rays[2] = {{1.5, t1, s1}, {1.5, t2, s2}};
    const auto l = depth_loss(rays, opt);
    CHECK(l.outside_count == 3);
    CHECK(l.outside == doctest::Approx(0.25));
    CHECK(l.near == doctest::Approx(0.04));
  }
  SUBCASE("a bounded inside band drops far samples") {
    opt.inside_range = 0.3;
    const std::vector<double> t{1.7, 2.5}, sdf{0.5, 0.5};
    const DepthRay r{1.5, t, sdf};
    const auto l = depth_loss(std::span<const DepthRay>(&r, 1), opt);
    CHECK(l.inside_count == 1);
    CHECK(l.inside == doctest::Approx(0.99991).epsilon(1e-4));
  }
  SUBCASE("rays without depth are ignored") {
    const std::vector<double> t{1.0}, sdf{0.0};
    const DepthRay rays[2] = {{0.0, t, sdf}, {std::nan(""), t, sdf}};
    const auto l = depth_loss(rays, opt);
    CHECK(l.total() == 0.0);
    CHECK(l.outside_count + l.near_count + l.inside_count == 0);
  }
  SUBCASE("gradient matches finite differences") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(-0.3, 0.3);
    const std::vector<double> t{0.8, 1.2, 1.46, 1.5, 1.53, 1.8, 2.2};
    std::vector<double> sdf(t.size());
    for (auto& v : sdf) v = u(rng);
    for (bool literal : {false, true}) {
      opt.swapped_targets = literal;
      const DepthRay r{1.5, t, sdf};
      const auto counts = depth_band_counts(std::span<const DepthRay>(&r, 1), opt);
      DepthLossTerms acc;
      std::vector<double> grad(t.size());
      depth_loss_ray(r, opt, counts, acc, grad);
      for (std::size_t i = 0; i < t.size(); ++i) {
        auto p = sdf, m = sdf;
        const double h = 1e-6;
        p[i] += h;
        m[i] -= h;
        const DepthRay rp{1.5, t, p}, rm{1.5, t, m};
        const double fd = (depth_loss(std::span<const DepthRay>(&rp, 1), opt).total() -
                           depth_loss(std::span<const DepthRay>(&rm, 1), opt).total()) /
                          (2 * h);
        CHECK(grad[i] == doctest::Approx(fd).epsilon(1e-6));
      }
    }
  }
}
