#pragma once

#include "caldm/config.hpp"

#include <filesystem>
#include <string>

namespace caldm::test {

// Smallest geometry that keeps every ratio non-trivial; unit tests use it to
// stay fast. Widths are cut down to match.
inline ShapeConfig tiny_shape() { return {{16, 16, 16}, {4, 4, 4}, 4, 3}; }

inline ArchConfig tiny_arch() {
  ArchConfig a;
  a.decoder_base = 16;
  a.decoder_min = 8;
  a.encoder3d_base = 8;
  a.sr_channels = 8;
  a.unet_base = 16;
  a.time_embed = 16;
  return a;
}

// Fresh, empty scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("caldm_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace caldm::test
