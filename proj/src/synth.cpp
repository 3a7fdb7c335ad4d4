#include "voxsurf/synth.hpp"

#include "voxsurf/error.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

namespace voxsurf {

double Primitive::sdf(const Vec3& p) const {
  const Vec3 q = p - center;
  switch (kind) {
    case Kind::Sphere:
      return q.norm() - size.x();
    case Kind::Box: {
      const Vec3 d = q.cwiseAbs() - size;
      return d.cwiseMax(0.0).norm() + std::min(d.maxCoeff(), 0.0);
    }
    case Kind::Torus: {
      const double ring = std::hypot(q.x(), q.y()) - size.x();
      return std::hypot(ring, q.z()) - size.y();
    }
  }
  return 0.0;
}

Aabb Primitive::bounds() const {
  Vec3 half;
  switch (kind) {
    case Kind::Sphere: half = Vec3::Constant(size.x()); break;
    case Kind::Box: half = size; break;
    case Kind::Torus: half = Vec3(size.x() + size.y(), size.x() + size.y(), size.y()); break;
  }
  return {center - half, center + half};
}

int AnalyticScene::add(const Primitive& primitive) {
  primitives_.push_back(primitive);
  nodes_.push_back({Op::Leaf, static_cast<int>(primitives_.size()) - 1, -1});
  root_ = static_cast<int>(nodes_.size()) - 1;
  return root_;
}

int AnalyticScene::combine(Op op, int a, int b) {
  if (op == Op::Leaf || a < 0 || b < 0 || a >= static_cast<int>(nodes_.size()) ||
      b >= static_cast<int>(nodes_.size()))
    throw Error("invalid CSG combination");
  nodes_.push_back({op, a, b});
  root_ = static_cast<int>(nodes_.size()) - 1;
  return root_;
}

AnalyticScene AnalyticScene::sphere(double radius, const Vec3& center, const Vec3& albedo) {
  AnalyticScene s;
  Primitive p;
  p.center = center;
  p.size = Vec3(radius, 0.0, 0.0);
  p.albedo = albedo;
  s.add(p);
  return s;
}

std::pair<double, int> AnalyticScene::eval(int node, const Vec3& p) const {
  const Node& n = nodes_[node];
  if (n.op == Op::Leaf) return {primitives_[n.a].sdf(p), n.a};
  const auto a = eval(n.a, p);
  auto b = eval(n.b, p);
  switch (n.op) {
    case Op::Union: return a.first <= b.first ? a : b;
    case Op::Intersection: return a.first >= b.first ? a : b;
    case Op::Subtraction:
      b.first = -b.first;
      return a.first >= b.first ? a : b;
    case Op::Leaf: break;
  }
  return a;
}

double AnalyticScene::sdf(const Vec3& p) const {
  if (root_ < 0) return std::numeric_limits<double>::infinity();
  return eval(root_, p).first;
}

Vec3 AnalyticScene::albedo(const Vec3& p) const {
  if (root_ < 0) return Vec3::Zero();
  return primitives_[eval(root_, p).second].albedo;
}

Vec3 AnalyticScene::normal(const Vec3& p) const {
  const double h = 1e-6;
  Vec3 g;
  for (int a = 0; a < 3; ++a) {
    Vec3 hi = p, lo = p;
    hi[a] += h;
    lo[a] -= h;
    g[a] = sdf(hi) - sdf(lo);
  }
  const double n = g.norm();
  return n > 0.0 ? Vec3(g / n) : Vec3::UnitZ();
}

Vec3 AnalyticScene::shade(const Vec3& p, const Vec3& view_dir) const {
  const Vec3 n = normal(p);
  const double diffuse = std::max(0.0, n.dot(light_dir));
  Vec3 c = albedo(p) * (ambient + (1.0 - ambient) * diffuse);
  if (glossy) {
    const Vec3 r = 2.0 * n.dot(light_dir) * n - light_dir;
    c += Vec3::Constant(0.4 * std::pow(std::max(0.0, r.dot(-view_dir)), 32.0));
  }
  return c.cwiseMin(1.0).cwiseMax(0.0);
}

Aabb AnalyticScene::bounds() const {
  if (primitives_.empty()) return {};
  Aabb b = primitives_.front().bounds();
  for (const auto& p : primitives_) {
    const Aabb q = p.bounds();
    b.min = b.min.cwiseMin(q.min);
    b.max = b.max.cwiseMax(q.max);
  }
  return b;
}

namespace {

using nlohmann::json;

Vec3 vec3_of(const json& j) {
  if (!j.is_array() || j.size() != 3) throw Error("expected a 3-vector in scene description");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

int parse_node(AnalyticScene& scene, const json& j) {
  if (j.contains("op")) {
    const std::string op = j.at("op").get<std::string>();
    AnalyticScene::Op o;
    if (op == "union") o = AnalyticScene::Op::Union;
    else if (op == "intersection") o = AnalyticScene::Op::Intersection;
    else if (op == "subtraction") o = AnalyticScene::Op::Subtraction;
    else throw Error("unknown CSG op: " + op);
    const int a = parse_node(scene, j.at("a"));
    const int b = parse_node(scene, j.at("b"));
    return scene.combine(o, a, b);
  }
  const json& p = j.at("primitive");
  Primitive prim;
  const std::string type = p.at("type").get<std::string>();
  prim.center = p.contains("center") ? vec3_of(p["center"]) : Vec3::Zero();
  if (p.contains("albedo")) prim.albedo = vec3_of(p["albedo"]);
  if (type == "sphere") {
    prim.kind = Primitive::Kind::Sphere;
    prim.size = Vec3(p.at("radius").get<double>(), 0.0, 0.0);
  } else if (type == "box") {
    prim.kind = Primitive::Kind::Box;
    prim.size = vec3_of(p.at("half_extents"));
  } else if (type == "torus") {
    prim.kind = Primitive::Kind::Torus;
    prim.size = Vec3(p.at("major").get<double>(), p.at("minor").get<double>(), 0.0);
  } else {
    throw Error("unknown primitive: " + type);
  }
  return scene.add(prim);
}

}  // namespace

AnalyticScene parse_scene(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw Error(std::string("bad scene description: ") + e.what());
  }
  AnalyticScene scene;
  try {
    scene.set_root(parse_node(scene, j.contains("root") ? j["root"] : j));
    if (j.contains("light")) scene.light_dir = vec3_of(j["light"]).normalized();
    if (j.contains("ambient")) scene.ambient = j["ambient"].get<double>();
    if (j.contains("glossy")) scene.glossy = j["glossy"].get<bool>();
    if (j.contains("background")) scene.background = vec3_of(j["background"]);
  } catch (const json::exception& e) {
    throw Error(std::string("bad scene description: ") + e.what());
  }
  return scene;
}

AnalyticScene builtin_scene(const std::string& name) {
  if (name == "sphere") return AnalyticScene::sphere(0.5);
  if (name == "torus") {
    AnalyticScene s;
    Primitive t;
    t.kind = Primitive::Kind::Torus;
    t.size = Vec3(0.4, 0.15, 0.0);
    t.albedo = Vec3(0.3, 0.6, 0.8);
    s.add(t);
    return s;
  }
  if (name == "csg") {
    AnalyticScene s;
    Primitive box;
    box.kind = Primitive::Kind::Box;
    box.size = Vec3::Constant(0.4);
    box.albedo = Vec3(0.7, 0.7, 0.3);
    Primitive ball;
    ball.size = Vec3(0.5, 0.0, 0.0);
    ball.albedo = Vec3(0.3, 0.5, 0.8);
    const int a = s.add(box);
    const int b = s.add(ball);
    s.combine(AnalyticScene::Op::Intersection, a, b);
    return s;
  }
  throw Error("unknown builtin scene: " + name);
}

Intrinsics Intrinsics::from_fov(int width, int height, double fov_y_degrees) {
  Intrinsics k;
  k.width = width;
  k.height = height;
  k.fy = 0.5 * height / std::tan(0.5 * fov_y_degrees * std::numbers::pi / 180.0);
  k.fx = k.fy;
  k.cx = 0.5 * width;
  k.cy = 0.5 * height;
  return k;
}

namespace {

Mat3 look_at(const Vec3& eye, const Vec3& target) {
  const Vec3 f = (target - eye).normalized();
  Vec3 up = Vec3::UnitZ();
  if (std::abs(f.dot(up)) > 1.0 - 1e-9) up = Vec3::UnitY();
  const Vec3 x = f.cross(up).normalized();
  const Vec3 y = f.cross(x);
  Mat3 r;
  r.col(0) = x;
  r.col(1) = y;
  r.col(2) = f;
  return r;
}

}  // namespace

std::vector<Camera> make_cameras(int n, double radius, const Vec3& target, const Intrinsics& k,
                                 double azimuth_offset) {
  if (n < 1 || !(radius > 0.0)) throw Error("need at least one camera and a positive radius");
  const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
  std::vector<Camera> cams(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const double z = 1.0 - static_cast<double>(i) / n;
    const double rho = std::sqrt(std::max(0.0, 1.0 - z * z));
    const double phi = azimuth_offset + golden * i;
    Camera& c = cams[i];
    c.fx = k.fx;
    c.fy = k.fy;
    c.cx = k.cx;
    c.cy = k.cy;
    c.width = k.width;
    c.height = k.height;
    c.position = target + radius * Vec3(rho * std::cos(phi), rho * std::sin(phi), z);
    c.rotation = look_at(c.position, target);
  }
  return cams;
}

GtImage gt_render(const AnalyticScene& scene, const Camera& camera) {
  if (!camera.valid()) throw Error("invalid camera");
  GtImage out;
  const int w = camera.width;
  const int h = camera.height;
  out.rgb = {w, h, 3, std::vector<float>(static_cast<std::size_t>(w) * h * 3)};
  out.depth = {w, h, 1, std::vector<float>(static_cast<std::size_t>(w) * h)};
  const Aabb b = scene.bounds();
  const double t_max = (camera.position - b.center()).norm() + b.extent().norm() + 1.0;

#pragma omp parallel for schedule(static)
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const Eigen::Vector2d px = pixel_center(x, y);
      const Vec3 local((px.x() - camera.cx) / camera.fx, (px.y() - camera.cy) / camera.fy, 1.0);
      const Vec3 dir = (camera.rotation * local).normalized();
      double t = 0.0;
      bool hit = false;
      for (int step = 0; step < 256 && t < t_max; ++step) {
        const double d = scene.sdf(camera.position + t * dir);
        if (std::abs(d) < 1e-5) {
          hit = true;
          break;
        }
        t += d;
      }
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      const Vec3 c = hit ? scene.shade(camera.position + t * dir, dir) : scene.background;
      for (int ch = 0; ch < 3; ++ch) out.rgb.data[i * 3 + ch] = static_cast<float>(c[ch]);
      out.depth.data[i] = hit ? static_cast<float>(t) : 0.0f;
    }
  }
  return out;
}

Aabb dataset_bounds(const AnalyticScene& scene) {
  const Aabb b = scene.bounds();
  const double half = b.extent().maxCoeff();
  return {b.center() - Vec3::Constant(half), b.center() + Vec3::Constant(half)};
}

namespace {

std::string view_name(const char* dir, int i, const char* ext) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s/%03d.%s", dir, i, ext);
  return buf;
}

json vec_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

}  // namespace

SceneDataset gen_dataset(const AnalyticScene& scene, const DatasetOptions& options,
                         const std::filesystem::path& out_dir, std::uint64_t seed) {
  if (options.views < 1 || options.width < 1 || options.height < 1) throw Error("invalid dataset options");
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir / "images", ec);
  fs::create_directories(out_dir / "depth", ec);
  if (ec) throw IoError("cannot create " + out_dir.string());

  std::mt19937_64 rng(seed);
  const double offset = std::uniform_real_distribution<double>(0.0, 2.0 * std::numbers::pi)(rng);
  const Aabb bounds = dataset_bounds(scene);
  const auto cams = make_cameras(options.views, options.radius, bounds.center(),
                                 Intrinsics::from_fov(options.width, options.height, options.fov_y_degrees), offset);

  SceneDataset ds;
  ds.root = out_dir;
  ds.bounds = bounds;
  json manifest;
  manifest["format"] = "voxsurf-dataset";
  manifest["version"] = 1;
  manifest["scene_bounds"] = {{"min", vec_json(bounds.min)}, {"max", vec_json(bounds.max)}};
  manifest["depth"] = {{"kind", "ray_distance"}, {"miss_value", 0.0}, {"valid", "depth > 0"}};
  manifest["views"] = json::array();
  for (int i = 0; i < options.views; ++i) {
    DatasetView v;
    v.camera = cams[i];
    auto gt = gt_render(scene, v.camera);
    v.image_path = view_name("images", i, "png");
    v.depth_path = view_name("depth", i, "pfm");
    write_png(out_dir / v.image_path, gt.rgb);
    write_pfm(out_dir / v.depth_path, gt.depth);
    // Keep the quantised colours so the in-memory dataset equals a reload.
    for (auto& c : gt.rgb.data) c = static_cast<float>(std::lround(std::clamp(c, 0.0f, 1.0f) * 255.0f)) / 255.0f;
    v.rgb = std::move(gt.rgb);
    v.depth = std::move(gt.depth);

    json pose = json::array();
    const Eigen::Matrix4d m = v.camera.pose();
    for (int r = 0; r < 4; ++r)
      for (int c = 0; c < 4; ++c) pose.push_back(m(r, c));
    manifest["views"].push_back({{"intrinsics",
                                  {{"fx", v.camera.fx},
                                   {"fy", v.camera.fy},
                                   {"cx", v.camera.cx},
                                   {"cy", v.camera.cy},
                                   {"width", v.camera.width},
                                   {"height", v.camera.height}}},
                                 {"pose", pose},
                                 {"image", v.image_path},
                                 {"depth", v.depth_path}});
    ds.views.push_back(std::move(v));
  }
  std::ofstream out(out_dir / "manifest.json");
  out << manifest.dump(2) << "\n";
  if (!out) throw IoError("failed writing manifest");
  return ds;
}

SceneDataset load_dataset(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw IoError("cannot open " + (dir / "manifest.json").string());
  json m;
  try {
    m = json::parse(in);
  } catch (const json::exception& e) {
    throw IoError(std::string("bad manifest: ") + e.what());
  }
  SceneDataset ds;
  ds.root = dir;
  try {
    ds.bounds.min = vec3_of(m.at("scene_bounds").at("min"));
    ds.bounds.max = vec3_of(m.at("scene_bounds").at("max"));
    if (m.contains("depth")) ds.depth_miss_value = m["depth"].value("miss_value", 0.0);
    for (const auto& jv : m.at("views")) {
      DatasetView v;
      const auto& k = jv.at("intrinsics");
      v.camera.fx = k.at("fx").get<double>();
      v.camera.fy = k.at("fy").get<double>();
      v.camera.cx = k.at("cx").get<double>();
      v.camera.cy = k.at("cy").get<double>();
      v.camera.width = k.at("width").get<int>();
      v.camera.height = k.at("height").get<int>();
      const auto& pose = jv.at("pose");
      if (pose.size() != 16) throw IoError("pose must have 16 entries");
      Eigen::Matrix4d p;
      for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c) p(r, c) = pose[r * 4 + c].get<double>();
      v.camera.set_pose(p);
      v.image_path = jv.at("image").get<std::string>();
      v.rgb = read_png(dir / v.image_path);
      if (jv.contains("depth")) {
        v.depth_path = jv["depth"].get<std::string>();
        v.depth = read_pfm(dir / v.depth_path);
        if (v.depth.width != v.camera.width || v.depth.height != v.camera.height || v.depth.channels != 1)
          throw IoError("depth map size does not match intrinsics: " + v.depth_path);
      }
      if (v.rgb.width != v.camera.width || v.rgb.height != v.camera.height)
        throw IoError("image size does not match intrinsics: " + v.image_path);
      ds.views.push_back(std::move(v));
    }
  } catch (const json::exception& e) {
    throw IoError(std::string("bad manifest: ") + e.what());
  }
  return ds;
}

}  // namespace voxsurf
