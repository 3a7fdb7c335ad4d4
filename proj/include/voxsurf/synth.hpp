#pragma once

#include "voxsurf/image_io.hpp"
#include "voxsurf/sampler.hpp"

#include <filesystem>
#include <string>

namespace voxsurf {

struct Primitive {
  enum class Kind { Sphere, Box, Torus };
  Kind kind = Kind::Sphere;
  Vec3 center = Vec3::Zero();
  /// Sphere: (r, -, -). Box: half extents. Torus: (R, r, -) around the z axis.
  Vec3 size = Vec3(0.5, 0.0, 0.0);
  Vec3 albedo = Vec3::Constant(0.8);

  double sdf(const Vec3& p) const;
  Aabb bounds() const;
};

/// Constructive solid geometry over primitives, with simple shading.
class AnalyticScene {
 public:
  enum class Op { Leaf, Union, Intersection, Subtraction };

  /// Returns the node index of a new leaf.
  int add(const Primitive& primitive);
  /// Returns the node index of `op(a, b)`; subtraction is a minus b.
  int combine(Op op, int a, int b);
  void set_root(int node) { root_ = node; }

  static AnalyticScene sphere(double radius, const Vec3& center = Vec3::Zero(),
                              const Vec3& albedo = Vec3(0.8, 0.5, 0.3));

  double sdf(const Vec3& p) const;
  /// Albedo of the primitive that decides the CSG value at p.
  Vec3 albedo(const Vec3& p) const;
  /// Unit outward normal by central differences of the SDF.
  Vec3 normal(const Vec3& p) const;
  /// Lambertian (plus a specular lobe when glossy) radiance seen along `view_dir`.
  Vec3 shade(const Vec3& p, const Vec3& view_dir) const;
  /// Union of primitive bounds; conservative for CSG.
  Aabb bounds() const;

  Vec3 light_dir = Vec3(0.4, -0.3, 1.0).normalized();
  double ambient = 0.3;
  bool glossy = false;
  Vec3 background = Vec3::Zero();

  const std::vector<Primitive>& primitives() const { return primitives_; }

 private:
  struct Node {
    Op op = Op::Leaf;
    int a = -1;  // primitive index for leaves
    int b = -1;
  };
  std::pair<double, int> eval(int node, const Vec3& p) const;

  std::vector<Primitive> primitives_;
  std::vector<Node> nodes_;
  int root_ = -1;
};

/// Scene description from JSON: either {"primitive": ...} leaves or
/// {"op": "union"|"intersection"|"subtraction", "a": ..., "b": ...}.
AnalyticScene parse_scene(const std::string& json_text);
AnalyticScene builtin_scene(const std::string& name);

struct Intrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 1;
  int height = 1;

  static Intrinsics from_fov(int width, int height, double fov_y_degrees);
};

/// n cameras on a spiral over the upper hemisphere of the given radius
/// around `target`, all looking at it. The first sits on the +z axis.
std::vector<Camera> make_cameras(int n, double radius, const Vec3& target, const Intrinsics& intrinsics,
                                 double azimuth_offset = 0.0);

struct GtImage {
  Image rgb;    // 3 channels
  Image depth;  // 1 channel, ray distance; 0 where nothing was hit
};

/// Sphere-traced ground truth at pixel centres.
GtImage gt_render(const AnalyticScene& scene, const Camera& camera);

struct DatasetView {
  Camera camera;
  std::string image_path;  // relative to the dataset root
  std::string depth_path;
  Image rgb;
  Image depth;
};

struct SceneDataset {
  std::filesystem::path root;
  Aabb bounds;
  double depth_miss_value = 0.0;
  std::vector<DatasetView> views;
};

struct DatasetOptions {
  int views = 24;
  int width = 64;
  int height = 64;
  double radius = 2.0;
  double fov_y_degrees = 40.0;
};

/// Render every view and write manifest.json, images/NNN.png, depth/NNN.pfm.
SceneDataset gen_dataset(const AnalyticScene& scene, const DatasetOptions& options,
                         const std::filesystem::path& out_dir, std::uint64_t seed);

SceneDataset load_dataset(const std::filesystem::path& dir);

/// Scene bounds recorded for a dataset: the scene's bounding cube doubled.
Aabb dataset_bounds(const AnalyticScene& scene);

}  // namespace voxsurf
