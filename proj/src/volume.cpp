#include "caldm/volume.hpp"

#include "caldm/errors.hpp"

#include <sstream>

namespace caldm {

namespace F = torch::nn::functional;

std::string Shape3::str() const {
  std::ostringstream os;
  os << "(" << depth << "," << height << "," << width << ")";
  return os.str();
}

Shape3 Shape3::of(const torch::Tensor& t) {
  CALDM_CHECK(t.defined() && t.dim() == 3, ValidationError, "expected a 3D tensor");
  return {t.size(0), t.size(1), t.size(2)};
}

void require_finite(const torch::Tensor& t, const std::string& what) {
  if (!torch::isfinite(t).all().item<bool>()) {
    throw ValidationError(what + " contains non-finite values");
  }
}

Volume::Volume(torch::Tensor voxels, ValueRange range) : range_(range) {
  CALDM_CHECK(voxels.defined() && voxels.dim() == 3, ValidationError,
              "volume must be a (D,H,W) tensor");
  CALDM_CHECK(voxels.size(0) >= 1 && voxels.size(1) >= 1 && voxels.size(2) >= 1,
              ValidationError, "volume dimensions must be >= 1");
  CALDM_CHECK(range.width() > 0, ValidationError, "volume value range is degenerate");
  voxels_ = voxels.to(torch::kFloat32).contiguous();
  require_finite(voxels_, "volume");
  const float lo = static_cast<float>(range.lo);
  const float hi = static_cast<float>(range.hi);
  if (voxels_.min().item<float>() < lo || voxels_.max().item<float>() > hi) {
    throw ValidationError("volume values fall outside the declared range");
  }
}

Volume Volume::zeros(Shape3 shape) { return Volume(torch::zeros(shape.sizes())); }

Volume Volume::constant(Shape3 shape, float value) {
  return Volume(torch::full(shape.sizes(), value));
}

LabelVolume::LabelVolume(torch::Tensor labels, int64_t class_count)
    : class_count_(class_count) {
  CALDM_CHECK(labels.defined() && labels.dim() == 3, ValidationError,
              "label volume must be a (D,H,W) tensor");
  CALDM_CHECK(class_count >= 1, ValidationError, "class_count must be positive");
  labels_ = labels.to(torch::kInt64).contiguous();
  if (labels_.numel() > 0) {
    const auto lo = labels_.min().item<int64_t>();
    const auto hi = labels_.max().item<int64_t>();
    if (lo < 0 || hi >= class_count) {
      throw ValidationError("label index outside [0, " + std::to_string(class_count) + ")");
    }
  }
}

torch::Tensor LabelVolume::one_hot() const { return one_hot_channels(labels_.unsqueeze(0), class_count_).squeeze(0); }

torch::Tensor one_hot_channels(const torch::Tensor& labels, int64_t classes) {
  auto sizes = labels.sizes().vec();
  sizes.insert(sizes.begin() + 1, classes);
  return torch::zeros(sizes, torch::kFloat32).scatter_(1, labels.unsqueeze(1), 1.0);
}

Volume resample_volume(const Volume& v, Shape3 target_shape) {
  CALDM_CHECK(target_shape.depth >= 1 && target_shape.height >= 1 && target_shape.width >= 1,
              ValidationError, "resample target dimensions must be >= 1");
  if (target_shape == v.shape()) return Volume(v.voxels().clone(), v.range());
  torch::NoGradGuard no_grad;
  auto out = F::interpolate(v.voxels().unsqueeze(0).unsqueeze(0),
                            F::InterpolateFuncOptions()
                                .size(target_shape.sizes())
                                .mode(torch::kTrilinear)
                                .align_corners(false))
                 .squeeze(0)
                 .squeeze(0);
  return Volume(out.clamp(v.range().lo, v.range().hi), v.range());
}

Volume normalize(const torch::Tensor& raw, ValueRange in_range) {
  CALDM_CHECK(in_range.width() > 0, ValidationError, "normalization range has non-positive width");
  require_finite(raw, "raw volume");
  auto x = raw.to(torch::kFloat64);
  x = ((x - in_range.lo) / in_range.width() * 2.0 - 1.0).clamp(-1.0, 1.0);
  return Volume(x.to(torch::kFloat32));
}

}  // namespace caldm
