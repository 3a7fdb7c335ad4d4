#pragma once

#include "voxsurf/field.hpp"

#include <filesystem>
#include <optional>

namespace voxsurf {

struct TriangleMesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<std::uint32_t, 3>> triangles;
  std::vector<Vec3> normals;  // empty or one per vertex
  std::vector<Vec3> colors;   // empty or one per vertex, in [0,1]

  bool empty() const { return triangles.empty(); }
};

/// Marching cubes over every voxel split into cells_per_voxel^3 cells. Corner
/// samples and edge vertices are keyed on the global cell lattice, so
/// neighbouring voxels share them and the surface welds across voxel faces.
TriangleMesh extract_mesh(const VoxelGrid& grid, const SdfField& field, int cells_per_voxel = 8);

struct AttributeReport {
  std::size_t clamped = 0;  // vertices outside every voxel, shaded from the nearest one
};

/// Normals from the exact SDF gradient, colours from the appearance network
/// seen along `view_dir` (default: looking against the normal).
AttributeReport mesh_normals_and_colors(TriangleMesh& mesh, const VoxelGrid& grid, const FieldModel& model,
                                        const std::optional<Vec3>& view_dir = std::nullopt);

/// Area-weighted uniform surface samples.
std::vector<Vec3> sample_surface(const TriangleMesh& mesh, std::size_t count, std::uint64_t seed);

void write_ply(const TriangleMesh& mesh, const std::filesystem::path& path);
void write_obj(const TriangleMesh& mesh, const std::filesystem::path& path);
/// ASCII PLY or OBJ, chosen by extension.
TriangleMesh read_mesh(const std::filesystem::path& path);

}  // namespace voxsurf
