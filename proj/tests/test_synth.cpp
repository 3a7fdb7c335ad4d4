#include "doctest.h"
#include "test_support.hpp"

#include "voxsurf/error.hpp"
#include "voxsurf/synth.hpp"

#include <fstream>
#include <iterator>

using namespace voxsurf;

namespace {

std::vector<char> slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

// Closed-form first hit of a ray with a sphere, or a negative value on a miss.
double ray_sphere(const Vec3& o, const Vec3& d, const Vec3& c, double r) {
  const Vec3 oc = o - c;
  const double b = oc.dot(d);
  const double disc = b * b - (oc.squaredNorm() - r * r);
  if (disc < 0.0) return -1.0;
  return -b - std::sqrt(disc);
}

}  // namespace

TEST_CASE("primitive distances") {
  const auto s = AnalyticScene::sphere(0.5);
  CHECK(s.sdf(Vec3(1, 0, 0)) == doctest::Approx(0.5));
  CHECK(s.sdf(Vec3::Zero()) == doctest::Approx(-0.5));

  AnalyticScene u;
  const int a = u.add({Primitive::Kind::Sphere, Vec3(-0.3, 0, 0), Vec3(0.4, 0, 0)});
  const int b = u.add({Primitive::Kind::Sphere, Vec3(0.4, 0, 0), Vec3(0.2, 0, 0)});
  u.set_root(u.combine(AnalyticScene::Op::Union, a, b));
  const Primitive pa = u.primitives()[0], pb = u.primitives()[1];
  for (const Vec3& p : {Vec3(0, 0, 0), Vec3(1, 1, 0), Vec3(0.4, 0.1, 0), Vec3(-0.3, 0, 0.5)})
    CHECK(u.sdf(p) == doctest::Approx(std::min(pa.sdf(p), pb.sdf(p))));

  Primitive box{Primitive::Kind::Box, Vec3::Zero(), Vec3(0.5, 0.25, 0.1)};
  CHECK(box.sdf(Vec3(1, 0, 0)) == doctest::Approx(0.5));
  CHECK(box.sdf(Vec3(1, 0.25 + 1, 0)) == doctest::Approx(std::sqrt(0.5 * 0.5 + 1.0)));
  CHECK(box.sdf(Vec3::Zero()) == doctest::Approx(-0.1));
  Primitive torus{Primitive::Kind::Torus, Vec3::Zero(), Vec3(0.5, 0.1, 0)};
  CHECK(torus.sdf(Vec3(0.5, 0, 0)) == doctest::Approx(-0.1));
  CHECK(torus.sdf(Vec3(0, 0, 0)) == doctest::Approx(0.4));
  CHECK(torus.sdf(Vec3(0, 0.5, 0.3)) == doctest::Approx(0.2));

  AnalyticScene d;
  const int big = d.add({Primitive::Kind::Sphere, Vec3::Zero(), Vec3(0.5, 0, 0)});
  const int small = d.add({Primitive::Kind::Sphere, Vec3(0.5, 0, 0), Vec3(0.3, 0, 0)});
  d.set_root(d.combine(AnalyticScene::Op::Subtraction, big, small));
  CHECK(d.sdf(Vec3(0.45, 0, 0)) > 0.0);
  CHECK(d.sdf(Vec3(-0.3, 0, 0)) < 0.0);
}

TEST_CASE("scene descriptions") {
  const auto s = parse_scene(R"({"op": "intersection",
    "a": {"primitive": {"type": "box", "half_extents": [0.4, 0.4, 0.4]}},
    "b": {"primitive": {"type": "sphere", "radius": 0.5, "albedo": [1, 0, 0]}},
    "glossy": true})");
  CHECK(s.glossy);
  CHECK(s.sdf(Vec3::Zero()) == doctest::Approx(-0.4));
  CHECK(s.sdf(Vec3(0.45, 0, 0)) == doctest::Approx(0.05));
  CHECK_THROWS_AS(parse_scene("{\"primitive\": {\"type\": \"cone\"}}"), Error);
  CHECK_THROWS_AS(parse_scene("not json"), Error);
  for (const char* name : {"sphere", "torus", "csg"}) CHECK(std::isfinite(builtin_scene(name).sdf(Vec3::Zero())));
  CHECK_THROWS_AS(builtin_scene("teapot"), Error);
}

TEST_CASE("camera spiral") {
  const auto k = Intrinsics::from_fov(64, 48, 40.0);
  CHECK(k.cx == 32.0);
  CHECK(k.cy == 24.0);
  CHECK(k.fy == doctest::Approx(24.0 / std::tan(20.0 * 3.14159265358979 / 180.0)));

  const auto one = make_cameras(1, 2.0, Vec3::Zero(), k);
  CHECK((one[0].position - Vec3(0, 0, 2)).norm() < 1e-12);

  const Vec3 target(0.1, -0.2, 0.3);
  const auto cams = make_cameras(24, 2.5, target, k, 0.7);
  CHECK(cams.size() == 24);
  for (const auto& c : cams) {
    CHECK(c.valid());
    CHECK((c.rotation.transpose() * c.rotation - Mat3::Identity()).norm() < 1e-12);
    CHECK(c.rotation.determinant() == doctest::Approx(1.0));
    CHECK((c.position - target).norm() == doctest::Approx(2.5));
    CHECK(c.position.z() >= target.z() - 1e-12);
    const std::vector<Eigen::Vector2d> pp{{c.cx, c.cy}};
    const Ray r = generate_rays(c, pp).front();
    const Vec3 off = (target - r.origin) - (target - r.origin).dot(r.dir) * r.dir;
    CHECK(off.norm() < 1e-6);
    // image rows run downward: +y in the image points away from +z when possible
    CHECK(c.rotation.col(1).z() <= 1e-12);
  }
  CHECK_THROWS_AS(make_cameras(0, 1.0, target, k), Error);
}

TEST_CASE("ground-truth rendering") {
  const auto scene = AnalyticScene::sphere(0.5);
  auto cams = make_cameras(5, 2.0, Vec3::Zero(), Intrinsics::from_fov(31, 31, 40.0), 0.3);
  for (const auto& cam : cams) {
    const auto gt = gt_render(scene, cam);
    CHECK(gt.depth.at(15, 15, 0) == doctest::Approx(1.5).epsilon(1e-4 / 1.5));
    CHECK(gt.depth.at(0, 0, 0) == 0.0f);
    CHECK(gt.rgb.at(0, 0, 0) == 0.0f);
    double worst_closed = 0.0, worst_sdf = 0.0;
    for (int y = 0; y < 31; ++y)
      for (int x = 0; x < 31; ++x) {
        const std::vector<Eigen::Vector2d> px{pixel_center(x, y)};
        const Ray r = generate_rays(cam, px).front();
        const double t = ray_sphere(r.origin, r.dir, Vec3::Zero(), 0.5);
        const float d = gt.depth.at(x, y, 0);
        if (t < 0.0) {
          CHECK(d == 0.0f);
          continue;
        }
        if (d == 0.0f) continue;  // grazing rays may run out of steps
        worst_closed = std::max(worst_closed, std::abs(d - t));
        worst_sdf = std::max(worst_sdf, std::abs(scene.sdf(r.origin + static_cast<double>(d) * r.dir)));
        for (int c = 0; c < 3; ++c) {
          CHECK(gt.rgb.at(x, y, c) >= 0.0f);
          CHECK(gt.rgb.at(x, y, c) <= 1.0f);
        }
      }
    CHECK(worst_closed < 1e-4);
    CHECK(worst_sdf < 1e-4);
  }
}

TEST_CASE("datasets") {
  const auto dir = testing::temp_dir("dataset");
  DatasetOptions opt;
  opt.views = 24;
  const auto scene = AnalyticScene::sphere(0.5);
  const auto ds = gen_dataset(scene, opt, dir / "a", 7);
  CHECK(ds.views.size() == 24);
  CHECK(ds.bounds.min.isApprox(Vec3::Constant(-1.0)));
  CHECK(ds.bounds.max.isApprox(Vec3::Constant(1.0)));
  CHECK(std::filesystem::exists(dir / "a" / "manifest.json"));
  CHECK(std::filesystem::exists(dir / "a" / "images" / "023.png"));
  CHECK(std::filesystem::exists(dir / "a" / "depth" / "023.pfm"));

  const auto back = load_dataset(dir / "a");
  REQUIRE(back.views.size() == 24);
  for (std::size_t i = 0; i < 24; ++i) {
    CHECK((back.views[i].camera.pose() - ds.views[i].camera.pose()).cwiseAbs().maxCoeff() < 1e-7);
    CHECK(back.views[i].camera.fx == ds.views[i].camera.fx);
    CHECK(back.views[i].rgb.data == ds.views[i].rgb.data);
    CHECK(back.views[i].depth.data == ds.views[i].depth.data);
    CHECK(back.views[i].rgb.width == 64);
  }
  CHECK(back.depth_miss_value == 0.0);

  gen_dataset(scene, opt, dir / "b", 7);
  CHECK(slurp(dir / "a" / "manifest.json") == slurp(dir / "b" / "manifest.json"));
  CHECK(slurp(dir / "a" / "images" / "005.png") == slurp(dir / "b" / "images" / "005.png"));
  CHECK(slurp(dir / "a" / "depth" / "005.pfm") == slurp(dir / "b" / "depth" / "005.pfm"));
  gen_dataset(scene, opt, dir / "c", 8);
  CHECK(slurp(dir / "a" / "manifest.json") != slurp(dir / "c" / "manifest.json"));

  CHECK_THROWS_AS(load_dataset(dir / "missing"), IoError);
  opt.views = 0;
  CHECK_THROWS_AS(gen_dataset(scene, opt, dir / "d", 1), Error);
}
