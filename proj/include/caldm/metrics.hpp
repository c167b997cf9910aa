#pragma once

#include "caldm/volume.hpp"

#include <torch/torch.h>

#include <memory>
#include <vector>

namespace caldm {

// Anisotropic total variation: absolute differences between neighbouring
// voxels summed over all three axes, divided by the voxel count.
double total_variation(const Volume& v);

// 10 log10(range^2 / MSE); +infinity for identical inputs.
double psnr(const Volume& a, const Volume& b, double range = 2.0);

// Direction in which a volume is cut into 2D images.
enum class SliceAxis {
  kIntra,   // along D: native (H,W) slices
  kInter,   // along W: (D,H) cross-sections spanning the slice stack
  kEnFace,  // along H: (D,W) planes
};

// (n, a, b) stack of every 2D image of `v` along `axis`.
torch::Tensor extract_slices(const Volume& v, SliceAxis axis);

// Fixed map from image batches (N,a,b) to feature vectors (N,F), float64.
class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;
  virtual torch::Tensor features(const torch::Tensor& images) = 0;
  virtual int64_t dim() const = 0;
};

// Stand-in for an Inception network: three strided random convolutions with
// ReLU, weights drawn from a pinned seed, global-average-pooled at every
// layer and concatenated. Values are only comparable with each other.
class RandomConvFeatures final : public FeatureExtractor {
 public:
  explicit RandomConvFeatures(uint64_t seed = 20240601);
  torch::Tensor features(const torch::Tensor& images) override;
  int64_t dim() const override;

 private:
  std::vector<torch::Tensor> weights_;
};

struct GaussianStats {
  torch::Tensor mean;  // (F) float64
  torch::Tensor cov;   // (F,F) float64
  int64_t count = 0;
};

GaussianStats gaussian_stats(const torch::Tensor& features);

struct FidResult {
  double value = 0;
  double jitter = 0;         // epsilon added to both covariance diagonals
  bool clipped = false;      // negative eigenvalues were clipped to zero
  int64_t real_count = 0;
  int64_t syn_count = 0;
};

// ||mu_r - mu_s||^2 + tr(S_r + S_s - 2 (S_r S_s)^(1/2)).
FidResult frechet_distance(const GaussianStats& real, const GaussianStats& syn, double jitter = 1e-10);

// FID between the 2D images of two volume sets cut along `axis`.
FidResult slice_fid(const std::vector<Volume>& real, const std::vector<Volume>& syn, SliceAxis axis,
                    FeatureExtractor& fx);

}  // namespace caldm
