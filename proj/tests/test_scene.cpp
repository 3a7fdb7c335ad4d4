#include "doctest.h"

#include "voxsurf/error.hpp"
#include "voxsurf/renderer.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <numeric>
#include <optional>
#include <random>
#include <set>

using namespace voxsurf;

namespace {

FieldConfig small_config() {
  FieldConfig c;
  c.embedding_dim = 4;
  c.feature_dim = 4;
  c.geometry_hidden = 8;
  c.geometry_layers = 3;
  c.appearance_hidden = 8;
  c.appearance_layers = 2;
  c.embedding_freqs = 2;
  c.direction_freqs = 1;
  return c;
}

struct Fixture {
  std::shared_ptr<const VoxelGrid> grid;
  FieldModel model;
  std::shared_ptr<const RadianceField> field;

  Fixture() : model(small_config(), 3) {
    grid = std::make_shared<const VoxelGrid>(
        init_grid({Vec3::Constant(-1.0), Vec3::Constant(1.0)}, 0.5, small_config().embedding_dim, 5, 0.5));
    field = std::make_shared<const NeuralField>(model, true);
  }
};

// First instance containing p decides the value, as in the renderer's lookup.
std::optional<double> world_sdf(const SceneGrid& scene, const FieldModel& model, const Vec3& p) {
  for (const auto& inst : scene.instances()) {
    const Vec3 local = inst.transform.apply_inverse(p);
    if (inst.grid->locate(local)) return inst.transform.scale * sdf_at(*inst.grid, model, local);
  }
  return std::nullopt;
}

Vec3 random_in(const Aabb& box, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.02, 0.98);
  return box.min + (box.max - box.min).cwiseProduct(Vec3(u(rng), u(rng), u(rng)));
}

Mat3 random_rotation(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  return Eigen::Quaterniond(n(rng), n(rng), n(rng), n(rng)).normalized().toRotationMatrix();
}

std::array<Vec3, 8> box_corners(const Vec3& c, const Mat3& axes, const Vec3& half) {
  std::array<Vec3, 8> out;
  for (int i = 0; i < 8; ++i) {
    Vec3 p = c;
    for (int a = 0; a < 3; ++a) p += ((i >> a) & 1 ? 1.0 : -1.0) * half[a] * axes.col(a);
    out[i] = p;
  }
  return out;
}

// Separation by projecting all corners onto the 15 candidate axes.
bool overlap_by_corners(const Vec3& ca, const Mat3& ra, const Vec3& ha, const Vec3& cb, const Mat3& rb,
                        const Vec3& hb) {
  const auto pa = box_corners(ca, ra, ha);
  const auto pb = box_corners(cb, rb, hb);
  std::vector<Vec3> axes;
  for (int i = 0; i < 3; ++i) {
    axes.push_back(ra.col(i));
    axes.push_back(rb.col(i));
    for (int j = 0; j < 3; ++j) axes.push_back(ra.col(i).cross(rb.col(j)));
  }
  for (const auto& axis : axes) {
    if (axis.norm() < 1e-9) continue;
    double amin = 1e300, amax = -1e300, bmin = 1e300, bmax = -1e300;
    for (const auto& p : pa) {
      amin = std::min(amin, p.dot(axis));
      amax = std::max(amax, p.dot(axis));
    }
    for (const auto& p : pb) {
      bmin = std::min(bmin, p.dot(axis));
      bmax = std::max(bmax, p.dot(axis));
    }
    if (amax <= bmin || bmax <= amin) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("voxel selection") {
  const Fixture f;
  const auto left = select_voxels(*f.grid, Aabb{Vec3(-1, -1, -1), Vec3(0, 1, 1)});
  CHECK(left.voxels.size() == 32);
  CHECK(left.grid_uid == f.grid->uid());
  const std::vector<Lattice> ids{f.grid->voxel(0), f.grid->voxel(3), Lattice{100, 100, 100}};
  CHECK(select_voxels(*f.grid, ids).voxels.size() == 2);
  CHECK(select_voxels(*f.grid, Aabb{Vec3(5, 5, 5), Vec3(6, 6, 6)}).voxels.empty());
}

TEST_CASE("translate moves the field with the voxels") {
  const Fixture f;
  const auto sel = select_voxels(*f.grid, Aabb{Vec3(-1, -1, -1), Vec3(0, 1, 1)});
  const Vec3 offset(-1.5, 0.0, 0.5);
  const auto scene = edit_voxels(f.grid, f.field, sel, Translate{offset});
  REQUIRE(scene.size() == 2);

  std::mt19937_64 rng(4);
  for (int i = 0; i < 200; ++i) {
    const Vec3 old = random_in(Aabb{Vec3(-1, -1, -1), Vec3(0, 1, 1)}, rng);
    const auto moved = world_sdf(scene, f.model, old + offset);
    REQUIRE(moved.has_value());
    CHECK(*moved == doctest::Approx(sdf_at(*f.grid, f.model, old)).epsilon(1e-12));
    // untouched half still answers with the original field
    const Vec3 stay = random_in(Aabb{Vec3(0, -1, -1), Vec3(1, 1, 1)}, rng);
    CHECK(*world_sdf(scene, f.model, stay) == sdf_at(*f.grid, f.model, stay));
  }
  // vacated region is empty
  CHECK_FALSE(world_sdf(scene, f.model, Vec3(-0.5, 0.0, -0.9)).has_value());
  // embeddings are carried over, not rewritten
  const VoxelGrid& moved = *scene.instances()[1].grid;
  for (std::uint32_t v = 0; v < moved.vertex_count(); ++v) {
    const auto src = f.grid->find_vertex(moved.vertex_keys()[v]);
    REQUIRE(src.has_value());
    const auto a = moved.embedding(v);
    const auto b = f.grid->embedding(*src);
    CHECK(std::equal(a.begin(), a.end(), b.begin()));
  }
}

TEST_CASE("translate rejects overlap and unaligned offsets") {
  const Fixture f;
  const auto sel = select_voxels(*f.grid, Aabb{Vec3(-1, -1, -1), Vec3(0, 1, 1)});
  CHECK_THROWS_WITH_AS(edit_voxels(f.grid, f.field, sel, Translate{Vec3(0.5, 0, 0)}), "overlapping instance",
                       GridError);
  CHECK_NOTHROW(edit_voxels(f.grid, f.field, sel, Translate{Vec3(0.5, 0, 0)}, true));
  CHECK_THROWS_AS(edit_voxels(f.grid, f.field, sel, Translate{Vec3(0.3, 0, 0)}), GridError);
  CHECK_THROWS_WITH_AS(edit_voxels(f.grid, f.field, sel, Duplicate{Vec3(1.0, 0, 0)}), "overlapping instance",
                       GridError);
  const auto dup = edit_voxels(f.grid, f.field, sel, Duplicate{Vec3(-1.0, 0, 0)});
  CHECK(dup.size() == 2);
  CHECK(dup.instances()[0].grid->voxel_count() == 64);
  CHECK(dup.instances()[1].grid->voxel_count() == 32);
}

TEST_CASE("scale about a pivot scales distances") {
  const Fixture f;
  const auto all = select_voxels(*f.grid, Aabb{Vec3::Constant(-1.0), Vec3::Constant(1.0)});
  const Vec3 pivot(0.2, -0.1, 0.3);
  const auto scene = edit_voxels(f.grid, f.field, all, Scale{2.0, pivot});
  REQUIRE(scene.size() == 1);
  std::mt19937_64 rng(9);
  for (int i = 0; i < 200; ++i) {
    const Vec3 p = random_in(Aabb{Vec3::Constant(-1.6), Vec3::Constant(1.6)}, rng);
    const Vec3 back = pivot + (p - pivot) / 2.0;
    const auto v = world_sdf(scene, f.model, p);
    REQUIRE(v.has_value());
    CHECK(*v == doctest::Approx(2.0 * sdf_at(*f.grid, f.model, back)).epsilon(1e-12));
  }
  CHECK_THROWS_AS(edit_voxels(f.grid, f.field, all, Scale{0.0, pivot}), GridError);
}

TEST_CASE("deleted voxels are never sampled") {
  const Fixture f;
  const Aabb region{Vec3(-1, -1, -1), Vec3(1, 0, 1)};
  const auto sel = select_voxels(*f.grid, region);
  const std::set<Lattice> deleted(sel.voxels.begin(), sel.voxels.end());
  const auto scene = edit_voxels(f.grid, f.field, sel, Delete{});
  REQUIRE(scene.size() == 1);
  CHECK(scene.instances()[0].grid->voxel_count() == 32);

  Camera cam;
  cam.width = cam.height = 8;
  cam.fx = cam.fy = 6.0;
  cam.cx = cam.cy = 4.0;
  cam.position = Vec3(0, 0, -3);
  std::vector<std::uint32_t> pixels(64);
  std::iota(pixels.begin(), pixels.end(), 0u);
  RenderConfig rc;
  rc.phase = SamplingPhase::SurfaceFull;
  const auto out = render_rays(scene, generate_pixel_rays(cam, pixels), rc);
  std::size_t samples = 0;
  for (const auto& r : out) {
    for (const auto& [inst, voxel] : r.sample_voxels) {
      CHECK(deleted.count(scene.instances()[inst].grid->voxel(voxel)) == 0);
      ++samples;
    }
  }
  CHECK(samples > 0);
  CHECK(edit_voxels(f.grid, f.field, select_voxels(*f.grid, Aabb{Vec3::Constant(-1.0), Vec3::Constant(1.0)}),
                    Delete{})
            .empty());
}

TEST_CASE("composed instances render in depth order") {
  auto grid = std::make_shared<const VoxelGrid>(init_grid({Vec3::Constant(-0.5), Vec3::Constant(0.5)}, 0.25, 1, 1));
  auto sphere = [](const Vec3& c) { return [c](const Vec3& p) { return (p - c).norm() - 0.3; }; };
  auto red = std::make_shared<const AnalyticField>(sphere(Vec3::Zero()), [](const Vec3&, const Vec3&) { return Vec3(1, 0, 0); },
                                                   100.0);
  auto blue = std::make_shared<const AnalyticField>(sphere(Vec3::Zero()), [](const Vec3&, const Vec3&) { return Vec3(0, 0, 1); },
                                                    100.0);
  Similarity near_tf, far_tf;
  near_tf.translation = Vec3(0, 0, -1.0);
  far_tf.translation = Vec3(0, 0, 1.0);
  far_tf.rotation = Eigen::AngleAxisd(0.4, Vec3::UnitY()).toRotationMatrix();
  Ray ray;
  ray.origin = Vec3(0, 0, -3);
  ray.dir = Vec3::UnitZ();
  const Ray rays[1] = {ray};
  RenderConfig rc;
  rc.jitter = false;

  // listing order must not matter
  for (bool swap : {false, true}) {
    std::vector<Instance> inst{{grid, near_tf, red}, {grid, far_tf, blue}};
    if (swap) std::swap(inst[0], inst[1]);
    const auto out = render_rays(compose(inst), rays, rc);
    CHECK(out[0].color.x() > 0.95);
    CHECK(out[0].color.z() < 0.05);
    CHECK(std::is_sorted(out[0].sample_t.begin(), out[0].sample_t.end()));
    CHECK(std::abs(out[0].depth / out[0].weight_sum - 1.7) < rc.step_size);
  }

  Similarity bad;
  bad.rotation = Mat3::Identity() * 1.1;
  CHECK_THROWS_AS(compose({{grid, bad, red}}), GridError);
  Similarity mirrored;
  mirrored.rotation(0, 0) = -1.0;
  CHECK_THROWS_AS(compose({{grid, mirrored, red}}), GridError);
  Similarity negative;
  negative.scale = -1.0;
  CHECK_THROWS_AS(compose({{grid, negative, red}}), GridError);
}

TEST_CASE("collision queries") {
  const Fixture f;
  const Instance a{f.grid, Similarity{}, f.field};

  SUBCASE("an instance only collides with itself voxel by voxel") {
    const auto r = collision_query(a, a);
    CHECK(r.colliding);
    CHECK(r.pairs.size() == f.grid->voxel_count());
    for (const auto& [i, j] : r.pairs) CHECK(i == j);
  }
  SUBCASE("far apart") {
    Instance b = a;
    b.transform.translation = Vec3(10, 0, 0);
    CHECK_FALSE(collision_query(a, b).colliding);
  }
  SUBCASE("touching faces do not collide") {
    Instance b = a;
    b.transform.translation = Vec3(2, 0, 0);
    CHECK_FALSE(collision_query(a, b).colliding);
  }
  SUBCASE("single voxel half a voxel over") {
    auto one = std::make_shared<const VoxelGrid>(init_grid({Vec3::Zero(), Vec3::Constant(0.5)}, 0.5, 1, 1));
    const Instance p{one, Similarity{}, f.field};
    Instance q = p;
    q.transform.translation = Vec3(0.25, 0, 0);
    const auto r = collision_query(p, q);
    CHECK(r.pairs.size() == 1);
  }
}

TEST_CASE("oriented box test against corner projections") {
  std::mt19937_64 rng(77);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::uniform_real_distribution<double> h(0.1, 0.6);
  int hits = 0;
  for (int k = 0; k < 1000; ++k) {
    const Vec3 ca(u(rng), u(rng), u(rng)), cb(u(rng), u(rng), u(rng));
    const Mat3 ra = random_rotation(rng), rb = random_rotation(rng);
    const Vec3 ha(h(rng), h(rng), h(rng)), hb(h(rng), h(rng), h(rng));
    const bool ref = overlap_by_corners(ca, ra, ha, cb, rb, hb);
    CHECK(boxes_overlap(ca, ra, ha, cb, rb, hb) == ref);
    hits += ref;
  }
  CHECK(hits > 100);
  CHECK(hits < 900);
}

TEST_CASE("collision query matches all-pairs search") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-0.6, 0.6);
  auto ga = std::make_shared<const VoxelGrid>(init_grid({Vec3::Constant(-0.5), Vec3::Constant(0.5)}, 0.25, 1, 1));
  auto gb = std::make_shared<const VoxelGrid>(init_grid({Vec3::Constant(-0.4), Vec3::Constant(0.4)}, 0.2, 1, 2));
  for (int k = 0; k < 20; ++k) {
    Instance a{ga, Similarity{}, nullptr}, b{gb, Similarity{}, nullptr};
    a.transform.rotation = random_rotation(rng);
    a.transform.translation = Vec3(u(rng), u(rng), u(rng));
    b.transform.rotation = random_rotation(rng);
    b.transform.translation = Vec3(u(rng), u(rng), u(rng));
    b.transform.scale = 0.7 + 0.6 * (u(rng) + 0.6);
    std::vector<std::pair<std::uint32_t, std::uint32_t>> ref;
    for (std::uint32_t i = 0; i < ga->voxel_count(); ++i)
      for (std::uint32_t j = 0; j < gb->voxel_count(); ++j)
        if (overlap_by_corners(a.transform.apply(ga->voxel_center(i)), a.transform.rotation,
                               Vec3::Constant(0.5 * ga->voxel_size()), b.transform.apply(gb->voxel_center(j)),
                               b.transform.rotation, Vec3::Constant(0.5 * gb->voxel_size() * b.transform.scale)))
          ref.emplace_back(i, j);
    const auto r = collision_query(a, b);
    CHECK(r.pairs == ref);
    CHECK(r.colliding == !ref.empty());
  }
}
