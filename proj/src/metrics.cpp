#include "caldm/metrics.hpp"

#include "caldm/errors.hpp"
#include "caldm/rng.hpp"

#include <cmath>
#include <limits>

namespace caldm {

double total_variation(const Volume& v) {
  auto x = v.voxels().to(torch::kFloat64);
  double sum = 0;
  for (int64_t dim = 0; dim < 3; ++dim) {
    if (x.size(dim) < 2) continue;
    auto n = x.size(dim);
    sum += (x.narrow(dim, 1, n - 1) - x.narrow(dim, 0, n - 1)).abs().sum().item<double>();
  }
  return sum / static_cast<double>(x.numel());
}

double psnr(const Volume& a, const Volume& b, double range) {
  CALDM_CHECK(a.shape() == b.shape(), ValidationError,
              "psnr: shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  CALDM_CHECK(range > 0, ValidationError, "psnr: range must be positive");
  double mse = (a.voxels().to(torch::kFloat64) - b.voxels().to(torch::kFloat64)).pow(2).mean().item<double>();
  if (mse == 0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(range * range / mse);
}

torch::Tensor extract_slices(const Volume& v, SliceAxis axis) {
  const auto& x = v.voxels();
  switch (axis) {
    case SliceAxis::kIntra: return x.contiguous();
    case SliceAxis::kInter: return x.permute({2, 0, 1}).contiguous();
    case SliceAxis::kEnFace: return x.permute({1, 0, 2}).contiguous();
  }
  throw ValidationError("extract_slices: unknown axis");
}

namespace {

constexpr int64_t kWidths[] = {16, 32, 32};

torch::Tensor he_normal(std::vector<int64_t> sizes, torch::Generator& gen) {
  int64_t fan_in = sizes[1] * sizes[2] * sizes[3];
  return torch::randn(sizes, gen, torch::kFloat32) * std::sqrt(2.0 / static_cast<double>(fan_in));
}

}  // namespace

RandomConvFeatures::RandomConvFeatures(uint64_t seed) {
  auto gen = make_generator(seed);
  int64_t in = 1;
  for (int64_t w : kWidths) {
    weights_.push_back(he_normal({w, in, 3, 3}, gen));
    in = w;
  }
}

int64_t RandomConvFeatures::dim() const {
  int64_t d = 0;
  for (int64_t w : kWidths) d += w;
  return d;
}

torch::Tensor RandomConvFeatures::features(const torch::Tensor& images) {
  CALDM_CHECK(images.dim() == 3, ValidationError, "features: expected (N,a,b) images");
  torch::NoGradGuard no_grad;
  auto h = images.to(torch::kFloat32).unsqueeze(1);
  std::vector<torch::Tensor> pooled;
  for (const auto& w : weights_) {
    h = torch::relu(torch::conv2d(h, w, {}, 2, 1));
    pooled.push_back(h.mean({2, 3}));
  }
  return torch::cat(pooled, 1).to(torch::kFloat64);
}

GaussianStats gaussian_stats(const torch::Tensor& features) {
  CALDM_CHECK(features.dim() == 2 && features.size(0) >= 2, ValidationError,
              "gaussian_stats: need at least two feature rows");
  auto f = features.to(torch::kFloat64);
  GaussianStats s;
  s.count = f.size(0);
  s.mean = f.mean(0);
  auto centered = f - s.mean;
  s.cov = centered.t().mm(centered) / static_cast<double>(s.count - 1);
  return s;
}

namespace {

// Symmetric PSD square root via eigendecomposition; negative eigenvalues
// (round-off on singular covariances) are clipped.
torch::Tensor sqrtm_psd(const torch::Tensor& m, bool& clipped) {
  auto sym = (m + m.t()) * 0.5;
  auto [evals, evecs] = torch::linalg_eigh(sym);
  if (evals.min().item<double>() < 0) clipped = true;
  auto root = evals.clamp_min(0).sqrt();
  return evecs.mm(torch::diag(root)).mm(evecs.t());
}

}  // namespace

FidResult frechet_distance(const GaussianStats& real, const GaussianStats& syn, double jitter) {
  CALDM_CHECK(real.mean.sizes() == syn.mean.sizes(), ValidationError, "frechet_distance: feature dims differ");
  FidResult r;
  r.jitter = jitter;
  r.real_count = real.count;
  r.syn_count = syn.count;
  auto eye = torch::eye(real.cov.size(0), torch::kFloat64) * jitter;
  auto cr = real.cov + eye;
  auto cs = syn.cov + eye;
  // tr((S_r S_s)^(1/2)) = tr((R S_s R)^(1/2)) with R = S_r^(1/2); since
  // R S_s R = (R Q)(R Q)^T for Q = S_s^(1/2), that trace is the nuclear norm of
  // R Q. Singular values stay accurate near zero where eigenvalue square
  // roots amplify round-off.
  auto rr = sqrtm_psd(cr, r.clipped);
  auto qs = sqrtm_psd(cs, r.clipped);
  double cross = torch::linalg_svdvals(rr.mm(qs)).sum().item<double>();
  double mean_term = (real.mean - syn.mean).pow(2).sum().item<double>();
  r.value = mean_term + cr.trace().item<double>() + cs.trace().item<double>() - 2.0 * cross;
  return r;
}

FidResult slice_fid(const std::vector<Volume>& real, const std::vector<Volume>& syn, SliceAxis axis,
                    FeatureExtractor& fx) {
  CALDM_CHECK(!real.empty() && !syn.empty(), ValidationError, "slice_fid: empty volume set");
  auto collect = [&](const std::vector<Volume>& set) {
    std::vector<torch::Tensor> feats;
    for (const auto& v : set) feats.push_back(fx.features(extract_slices(v, axis)));
    return torch::cat(feats, 0);
  };
  auto fr = collect(real);
  auto fs = collect(syn);
  CALDM_CHECK(fr.size(0) >= 2 && fs.size(0) >= 2, ValidationError, "slice_fid: need at least two slices per set");
  return frechet_distance(gaussian_stats(fr), gaussian_stats(fs));
}

}  // namespace caldm
