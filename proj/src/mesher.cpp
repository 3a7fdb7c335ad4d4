#include "voxsurf/mesher.hpp"

#include "mc_tables.hpp"
#include "voxsurf/error.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>
#include <unordered_map>

namespace voxsurf {

namespace {

constexpr int kEdgeCorners[12][2] = {{0, 1}, {1, 2}, {2, 3}, {3, 0}, {4, 5}, {5, 6},
                                     {6, 7}, {7, 4}, {0, 4}, {1, 5}, {2, 6}, {3, 7}};

Lattice cell_corner(int i) { return {(i & 1) ^ ((i >> 1) & 1), (i >> 1) & 1, (i >> 2) & 1}; }

struct EdgeKey {
  Lattice lo;
  int axis;
  friend bool operator==(const EdgeKey&, const EdgeKey&) = default;
};

struct EdgeKeyHash {
  std::size_t operator()(const EdgeKey& e) const noexcept { return LatticeHash{}(e.lo) * 3 + e.axis; }
};

}  // namespace

TriangleMesh extract_mesh(const VoxelGrid& grid, const SdfField& field, int cells_per_voxel) {
  if (cells_per_voxel < 1) throw Error("cells_per_voxel must be at least 1");
  TriangleMesh mesh;
  if (grid.empty()) return mesh;
  const int c = cells_per_voxel;
  const double cell = grid.voxel_size() / c;
  auto position = [&](const Lattice& k) { return Vec3(grid.origin() + cell * Vec3(k.x, k.y, k.z)); };

  // Unique corner samples, owned by the first voxel (in grid order) that
  // touches them.
  std::unordered_map<Lattice, std::uint32_t, LatticeHash> sample_index;
  std::vector<Vec3> points;
  std::vector<std::uint32_t> owners;
  for (std::uint32_t v = 0; v < grid.voxel_count(); ++v) {
    const Lattice base{grid.voxel(v).x * c, grid.voxel(v).y * c, grid.voxel(v).z * c};
    for (int k = 0; k <= c; ++k)
      for (int j = 0; j <= c; ++j)
        for (int i = 0; i <= c; ++i) {
          const Lattice key = base + Lattice{i, j, k};
          if (sample_index.emplace(key, static_cast<std::uint32_t>(points.size())).second) {
            points.push_back(position(key));
            owners.push_back(v);
          }
        }
  }
  std::vector<double> values(points.size());
  constexpr std::size_t kBatch = 8192;
  const std::size_t batches = (points.size() + kBatch - 1) / kBatch;
#pragma omp parallel for schedule(dynamic)
  for (std::size_t b = 0; b < batches; ++b) {
    const std::size_t begin = b * kBatch;
    const std::size_t count = std::min(kBatch, points.size() - begin);
    field.sdf(grid, std::span<const Vec3>(points).subspan(begin, count),
              std::span<const std::uint32_t>(owners).subspan(begin, count),
              std::span<double>(values).subspan(begin, count));
  }

  std::unordered_map<EdgeKey, std::uint32_t, EdgeKeyHash> edge_vertex;
  auto vertex_on_edge = [&](const Lattice& a, const Lattice& b) {
    const bool a_first = a < b;
    const Lattice& lo = a_first ? a : b;
    const Lattice& hi = a_first ? b : a;
    int axis = 0;
    while (lo[axis] == hi[axis]) ++axis;
    const EdgeKey key{lo, axis};
    auto it = edge_vertex.find(key);
    if (it != edge_vertex.end()) return it->second;
    const double f0 = values[sample_index.at(lo)];
    const double f1 = values[sample_index.at(hi)];
    const double t = f0 / (f0 - f1);
    const Vec3 p0 = position(lo);
    const Vec3 p1 = position(hi);
    const auto id = static_cast<std::uint32_t>(mesh.vertices.size());
    mesh.vertices.push_back(p0 + t * (p1 - p0));
    edge_vertex.emplace(key, id);
    return id;
  };

  for (std::uint32_t v = 0; v < grid.voxel_count(); ++v) {
    const Lattice base{grid.voxel(v).x * c, grid.voxel(v).y * c, grid.voxel(v).z * c};
    for (int k = 0; k < c; ++k)
      for (int j = 0; j < c; ++j)
        for (int i = 0; i < c; ++i) {
          const Lattice origin = base + Lattice{i, j, k};
          std::array<Lattice, 8> corner;
          int index = 0;
          for (int q = 0; q < 8; ++q) {
            corner[q] = origin + cell_corner(q);
            if (values[sample_index.at(corner[q])] < 0.0) index |= 1 << q;
          }
          const auto& row = detail::kTriangleTable[index];
          for (int t = 0; row[t] >= 0; t += 3) {
            std::array<std::uint32_t, 3> tri;
            for (int e = 0; e < 3; ++e) {
              const auto& ends = kEdgeCorners[row[t + e]];
              tri[e] = vertex_on_edge(corner[ends[0]], corner[ends[1]]);
            }
            // The table winds triangles clockwise seen from outside; flip to
            // counter-clockwise so face normals point along +SDF.
            std::swap(tri[1], tri[2]);
            if (tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2]) continue;
            mesh.triangles.push_back(tri);
          }
        }
  }
  return mesh;
}

namespace {

/// Voxel used to evaluate the field at p: the containing voxel, one whose
/// closed box holds p, or failing that the closest by box distance.
std::pair<std::uint32_t, bool> voxel_for(const VoxelGrid& grid, const Vec3& p) {
  if (const auto v = grid.locate(p)) return {*v, false};
  const Vec3 q = (p - grid.origin()) / grid.voxel_size();
  const double tol = 1e-9;
  for (int d = 0; d < 8; ++d) {
    Lattice l;
    for (int a = 0; a < 3; ++a) l[a] = static_cast<std::int32_t>(std::floor(q[a] - (((d >> a) & 1) ? tol : 0.0)));
    if (const auto v = grid.find_voxel(l)) {
      const Aabb b = grid.voxel_box(*v);
      if (((p.array() >= b.min.array() - tol).all()) && ((p.array() <= b.max.array() + tol).all())) return {*v, false};
    }
  }
  std::uint32_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::uint32_t v = 0; v < grid.voxel_count(); ++v) {
    const Aabb b = grid.voxel_box(v);
    const double d = (p.cwiseMax(b.min).cwiseMin(b.max) - p).norm();
    if (d < best_d) {
      best_d = d;
      best = v;
    }
  }
  return {best, true};
}

}  // namespace

AttributeReport mesh_normals_and_colors(TriangleMesh& mesh, const VoxelGrid& grid, const FieldModel& model,
                                        const std::optional<Vec3>& view_dir) {
  AttributeReport report;
  mesh.normals.assign(mesh.vertices.size(), Vec3::UnitZ());
  mesh.colors.assign(mesh.vertices.size(), Vec3::Zero());
  if (mesh.vertices.empty()) return report;
  if (grid.empty()) throw GridError("mesh attributes need a non-empty grid");
  if (!model.finite()) throw FieldError("non-finite field parameters");

  const std::size_t n = mesh.vertices.size();
  std::vector<Vec3> points(n);
  std::vector<std::uint32_t> voxels(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto [v, clamped] = voxel_for(grid, mesh.vertices[i]);
    voxels[i] = v;
    points[i] = mesh.vertices[i];
    if (clamped) {
      ++report.clamped;
      const Aabb b = grid.voxel_box(v);
      points[i] = points[i].cwiseMax(b.min).cwiseMin(b.max);
    }
  }

  const FieldKernels<double> kernels(model);
  constexpr std::size_t kBatch = 4096;
  const std::size_t batches = (n + kBatch - 1) / kBatch;
#pragma omp parallel for schedule(dynamic)
  for (std::size_t b = 0; b < batches; ++b) {
    const std::size_t begin = b * kBatch;
    const std::size_t count = std::min(kBatch, n - begin);
    const auto pts = std::span<const Vec3>(points).subspan(begin, count);
    const auto vox = std::span<const std::uint32_t>(voxels).subspan(begin, count);
    FieldPass<double> pass(kernels, grid);
    pass.forward(pts, vox, {}, true);
    std::vector<Vec3> dirs(count);
    for (std::size_t i = 0; i < count; ++i) {
      const Vec3 g = pass.gradient(i);
      const double len = g.norm();
      mesh.normals[begin + i] = len > 0.0 ? Vec3(g / len) : Vec3::UnitZ();
      dirs[i] = view_dir ? view_dir->normalized() : Vec3(-mesh.normals[begin + i]);
    }
    pass.forward(pts, vox, dirs, false);
    for (std::size_t i = 0; i < count; ++i) mesh.colors[begin + i] = pass.color(i);
  }
  return report;
}

std::vector<Vec3> sample_surface(const TriangleMesh& mesh, std::size_t count, std::uint64_t seed) {
  if (mesh.triangles.empty()) throw Error("cannot sample an empty mesh");
  std::vector<double> cdf(mesh.triangles.size());
  double total = 0.0;
  for (std::size_t t = 0; t < mesh.triangles.size(); ++t) {
    const auto& tri = mesh.triangles[t];
    const Vec3& a = mesh.vertices[tri[0]];
    total += 0.5 * (mesh.vertices[tri[1]] - a).cross(mesh.vertices[tri[2]] - a).norm();
    cdf[t] = total;
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<Vec3> out(count);
  for (auto& p : out) {
    const double pick = u(rng) * total;
    const std::size_t t = std::min<std::size_t>(
        static_cast<std::size_t>(std::upper_bound(cdf.begin(), cdf.end(), pick) - cdf.begin()), cdf.size() - 1);
    double r1 = u(rng);
    double r2 = u(rng);
    if (r1 + r2 > 1.0) {
      r1 = 1.0 - r1;
      r2 = 1.0 - r2;
    }
    const auto& tri = mesh.triangles[t];
    const Vec3& a = mesh.vertices[tri[0]];
    p = a + r1 * (mesh.vertices[tri[1]] - a) + r2 * (mesh.vertices[tri[2]] - a);
  }
  return out;
}

void write_ply(const TriangleMesh& mesh, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string());
  const bool normals = mesh.normals.size() == mesh.vertices.size() && !mesh.vertices.empty();
  const bool colors = mesh.colors.size() == mesh.vertices.size() && !mesh.vertices.empty();
  out << "ply\nformat ascii 1.0\nelement vertex " << mesh.vertices.size() << "\n"
      << "property float x\nproperty float y\nproperty float z\n";
  if (normals) out << "property float nx\nproperty float ny\nproperty float nz\n";
  if (colors) out << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
  out << "element face " << mesh.triangles.size() << "\nproperty list uchar int vertex_indices\nend_header\n";
  out.precision(9);
  for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
    const Vec3& v = mesh.vertices[i];
    out << v.x() << ' ' << v.y() << ' ' << v.z();
    if (normals) out << ' ' << mesh.normals[i].x() << ' ' << mesh.normals[i].y() << ' ' << mesh.normals[i].z();
    if (colors)
      for (int c = 0; c < 3; ++c) out << ' ' << std::lround(std::clamp(mesh.colors[i][c], 0.0, 1.0) * 255.0);
    out << '\n';
  }
  for (const auto& t : mesh.triangles) out << "3 " << t[0] << ' ' << t[1] << ' ' << t[2] << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

void write_obj(const TriangleMesh& mesh, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string());
  out.precision(9);
  for (const auto& v : mesh.vertices) out << "v " << v.x() << ' ' << v.y() << ' ' << v.z() << '\n';
  for (const auto& t : mesh.triangles) out << "f " << t[0] + 1 << ' ' << t[1] + 1 << ' ' << t[2] + 1 << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

namespace {

TriangleMesh read_ply(std::istream& in, const std::string& name) {
  std::string line;
  std::getline(in, line);
  if (line.rfind("ply", 0) != 0) throw IoError("not a PLY file: " + name);
  std::size_t n_vertices = 0;
  std::size_t n_faces = 0;
  std::vector<std::string> vertex_props;
  std::string element;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string word;
    ls >> word;
    if (word == "format") {
      std::string fmt;
      ls >> fmt;
      if (fmt != "ascii") throw IoError("only ASCII PLY is supported: " + name);
    } else if (word == "element") {
      std::size_t count = 0;
      ls >> element >> count;
      if (element == "vertex") n_vertices = count;
      if (element == "face") n_faces = count;
    } else if (word == "property" && element == "vertex") {
      std::string type, prop;
      ls >> type >> prop;
      vertex_props.push_back(prop);
    } else if (word == "end_header") {
      break;
    }
  }
  auto find = [&](const char* p) {
    const auto it = std::find(vertex_props.begin(), vertex_props.end(), p);
    return it == vertex_props.end() ? -1 : static_cast<int>(it - vertex_props.begin());
  };
  const int ix = find("x"), iy = find("y"), iz = find("z");
  if (ix < 0 || iy < 0 || iz < 0) throw IoError("PLY without vertex positions: " + name);
  TriangleMesh mesh;
  std::vector<double> vals(vertex_props.size());
  for (std::size_t i = 0; i < n_vertices; ++i) {
    for (auto& v : vals)
      if (!(in >> v)) throw IoError("truncated PLY: " + name);
    mesh.vertices.emplace_back(vals[ix], vals[iy], vals[iz]);
  }
  for (std::size_t f = 0; f < n_faces; ++f) {
    std::size_t k = 0;
    if (!(in >> k)) throw IoError("truncated PLY: " + name);
    std::vector<std::uint32_t> idx(k);
    for (auto& x : idx)
      if (!(in >> x) || x >= n_vertices) throw IoError("bad PLY face: " + name);
    for (std::size_t j = 1; j + 1 < k; ++j) mesh.triangles.push_back({idx[0], idx[j], idx[j + 1]});
  }
  return mesh;
}

TriangleMesh read_obj(std::istream& in, const std::string& name) {
  TriangleMesh mesh;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "v") {
      Vec3 v;
      if (!(ls >> v.x() >> v.y() >> v.z())) throw IoError("bad OBJ vertex: " + name);
      mesh.vertices.push_back(v);
    } else if (tag == "f") {
      std::vector<std::uint32_t> idx;
      std::string tok;
      while (ls >> tok) {
        const long i = std::stol(tok.substr(0, tok.find('/')));
        const long resolved = i < 0 ? static_cast<long>(mesh.vertices.size()) + i : i - 1;
        if (resolved < 0 || resolved >= static_cast<long>(mesh.vertices.size())) throw IoError("bad OBJ face: " + name);
        idx.push_back(static_cast<std::uint32_t>(resolved));
      }
      for (std::size_t j = 1; j + 1 < idx.size(); ++j) mesh.triangles.push_back({idx[0], idx[j], idx[j + 1]});
    }
  }
  return mesh;
}

}  // namespace

TriangleMesh read_mesh(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  const std::string ext = path.extension().string();
  if (ext == ".obj" || ext == ".OBJ") return read_obj(in, path.string());
  return read_ply(in, path.string());
}

}  // namespace voxsurf
