#pragma once

#include "caldm/volume.hpp"

#include <filesystem>

namespace caldm {

// On-disk layouts.
//  kRaw:      little-endian payload (D outermost) plus a plain-text sidecar
//             `<stem>.hdr` with lines `shape=D,H,W`, `dtype=f32`, `range=lo,hi`.
//  kSliceDir: directory of grayscale `slice_0000.png`, ... ordered along D.
enum class VolumeLayout { kRaw, kSliceDir };

std::filesystem::path header_path(const std::filesystem::path& payload);

Volume load_volume(const std::filesystem::path& path, VolumeLayout layout = VolumeLayout::kRaw);
void save_volume(const Volume& v, const std::filesystem::path& path,
                 VolumeLayout layout = VolumeLayout::kRaw);

// Labels use the raw layout with `dtype=u8` and an extra `classes=N` line.
LabelVolume load_labels(const std::filesystem::path& path);
void save_labels(const LabelVolume& labels, const std::filesystem::path& path);

// Raw layout writer for callers that stream slices (see RawFileSink).
void write_raw_header(const std::filesystem::path& payload, Shape3 shape, ValueRange range);

}  // namespace caldm
