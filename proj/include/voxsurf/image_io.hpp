#pragma once

#include <filesystem>
#include <vector>

namespace voxsurf {

struct Image {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<float> data;  // row-major, top row first

  float at(int x, int y, int c) const { return data[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
};

/// 8-bit PNG, gray or RGB. Values are clamped to [0,1] and rounded.
void write_png(const std::filesystem::path& path, const Image& image);
/// Any PNG, converted to 8-bit RGB in [0,1].
Image read_png(const std::filesystem::path& path);

/// Little-endian PFM (1 or 3 channels), rows stored bottom to top on disk.
void write_pfm(const std::filesystem::path& path, const Image& image);
Image read_pfm(const std::filesystem::path& path);

}  // namespace voxsurf
