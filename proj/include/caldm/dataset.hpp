#pragma once

#include "caldm/phantom.hpp"

#include <filesystem>
#include <vector>

namespace caldm {

// Paired volumes and labels, immutable once built.
struct Dataset {
  std::vector<Volume> volumes;
  std::vector<LabelVolume> labels;  // empty entries when a volume has no labels
  std::vector<PhantomSpec> specs;   // provenance for generated phantoms

  size_t size() const { return volumes.size(); }
  // (N, D, H, W) float stack of all volumes.
  torch::Tensor stacked_volumes() const;
  // (N, D, H, W) int64 stack of all labels; throws if any volume lacks labels.
  torch::Tensor stacked_labels() const;
  int64_t class_count() const;
};

// `count` phantoms sharing `base` except for seeds first_seed, first_seed+1, ...
Dataset make_phantom_dataset(const PhantomSpec& base, int64_t count, uint64_t first_seed);

// Writes volume_XXXX.raw / label_XXXX.raw pairs and manifest.csv (one row per
// sample with its PhantomSpec).
void write_dataset(const Dataset& data, const std::filesystem::path& dir);

// Reads a directory written by write_dataset. Directories without a manifest
// are scanned for raw volumes (no labels).
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace caldm
