#pragma once

#include "voxsurf/trainer.hpp"

#include <filesystem>

namespace voxsurf {

/// Binary formats (little-endian):
///   VXSG  grid: level, counts, embedding dim, origin, voxel size, voxel
///         lattice coordinates, then per vertex its key and embedding.
///   VXSF  field: network shape, MLP parameters, log s.
///   VXSC  checkpoint: iteration, VXSG, VXSF, Adam moments.
std::vector<std::uint8_t> encode_grid(const VoxelGrid& grid);
VoxelGrid decode_grid(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_field(const FieldModel& model);
FieldModel decode_field(std::span<const std::uint8_t> bytes);

void save_grid(const VoxelGrid& grid, const std::filesystem::path& path);
VoxelGrid load_grid(const std::filesystem::path& path);
void save_field(const FieldModel& model, const std::filesystem::path& path);
FieldModel load_field(const std::filesystem::path& path);

void save_checkpoint(const TrainState& state, const std::filesystem::path& path);
TrainState load_checkpoint(const std::filesystem::path& path);

}  // namespace voxsurf

namespace voxsurf {

/// One instance of a saved multi-object scene.
struct SceneEntry {
  std::shared_ptr<const VoxelGrid> grid;
  Similarity transform;
  std::shared_ptr<const FieldModel> model;
};

/// scene.json plus one .vxsg/.vxsf pair per instance, next to it.
void save_scene(std::span<const SceneEntry> entries, const std::filesystem::path& path);
std::vector<SceneEntry> load_scene(const std::filesystem::path& path);

/// Renderable scene with one neural field per distinct model.
SceneGrid build_scene(std::span<const SceneEntry> entries);

}  // namespace voxsurf
