#pragma once

#include <torch/torch.h>

#include <array>
#include <cstdint>
#include <string>

namespace caldm {

// Spatial extent of a volume: depth (inter-slice axis), height, width.
struct Shape3 {
  int64_t depth = 0;
  int64_t height = 0;
  int64_t width = 0;

  int64_t voxels() const { return depth * height * width; }
  std::vector<int64_t> sizes() const { return {depth, height, width}; }
  bool operator==(const Shape3&) const = default;
  std::string str() const;
  static Shape3 of(const torch::Tensor& t);
};

struct ValueRange {
  double lo = -1.0;
  double hi = 1.0;
  double width() const { return hi - lo; }
  bool operator==(const ValueRange&) const = default;
};

inline constexpr ValueRange kCanonicalRange{-1.0, 1.0};

// Dense scalar volume, float32, shape (D,H,W). Construction validates that
// every voxel is finite and inside the value range.
class Volume {
 public:
  Volume() = default;
  explicit Volume(torch::Tensor voxels, ValueRange range = kCanonicalRange);

  static Volume zeros(Shape3 shape);
  static Volume constant(Shape3 shape, float value);

  const torch::Tensor& voxels() const { return voxels_; }
  Shape3 shape() const { return Shape3::of(voxels_); }
  const ValueRange& range() const { return range_; }
  bool empty() const { return !voxels_.defined(); }

  // Image slice i along depth, shape (H,W).
  torch::Tensor slice(int64_t index) const { return voxels_[index]; }

 private:
  torch::Tensor voxels_;
  ValueRange range_;
};

// Integer class map aligned with a Volume.
class LabelVolume {
 public:
  LabelVolume() = default;
  LabelVolume(torch::Tensor labels, int64_t class_count);

  const torch::Tensor& labels() const { return labels_; }
  int64_t class_count() const { return class_count_; }
  Shape3 shape() const { return Shape3::of(labels_); }
  bool empty() const { return !labels_.defined(); }

  // (class_count, D, H, W) float one-hot encoding.
  torch::Tensor one_hot() const;

 private:
  torch::Tensor labels_;  // int64 (D,H,W)
  int64_t class_count_ = 0;
};

// Throws ValidationError unless every element of t is finite.
// (B, spatial...) int64 class indices -> (B, classes, spatial...) float one-hot.
torch::Tensor one_hot_channels(const torch::Tensor& labels, int64_t classes);

void require_finite(const torch::Tensor& t, const std::string& what);

// Trilinear resampling to target_shape; output is clamped to the input range.
Volume resample_volume(const Volume& v, Shape3 target_shape);

// Affine map of in_range onto [-1,1]; values outside in_range are clamped.
Volume normalize(const torch::Tensor& raw, ValueRange in_range);

}  // namespace caldm
