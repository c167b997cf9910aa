#pragma once

// Noise-prediction networks: a small U-Net over latents (N = 3 for the global
// latent volume, N = 2 for latent slices) with sinusoidal timestep embedding,
// plus an optional learned label encoder whose output is concatenated to the
// noisy input along channels.

#include "caldm/layers.hpp"
#include "caldm/schedule.hpp"

#include <torch/torch.h>

#include <array>

namespace caldm {

struct DenoiserSpec {
  int64_t latent_channels = 4;
  int64_t guide_channels = 0;   // latent-resolution conditioning (slice refiner)
  int64_t label_classes = 0;    // 0: no label conditioning
  int64_t cond_channels = 4;    // label-encoder output channels
  std::vector<int64_t> label_factors;  // image/latent ratio per spatial axis
  int64_t base_channels = 32;
  int64_t time_embed = 64;

  int64_t input_channels() const {
    return latent_channels + guide_channels + (label_classes > 0 ? cond_channels : 0);
  }
  std::string str() const;
};

torch::Tensor timestep_embedding(const torch::Tensor& t, int64_t dim);

template <int N>
struct UNetImpl : torch::nn::Module {
  UNetImpl(int64_t in_ch, int64_t out_ch, int64_t base, int64_t time_embed);
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& t);

  int64_t base;
  torch::nn::Sequential time_mlp{nullptr};
  Conv<N> conv_in{nullptr}, down{nullptr}, up{nullptr};
  ResBlock<N> enc0{nullptr}, enc1{nullptr}, mid{nullptr}, dec1{nullptr}, dec0{nullptr};
  OutHead<N> head{nullptr};
};
template <int N>
using UNet = torch::nn::ModuleHolder<UNetImpl<N>>;

// One-hot labels at image resolution -> (B, cond_channels, latent spatial).
// The first prime factor of the per-axis ratio is an average pool; every
// further factor is a non-overlapping strided convolution.
template <int N>
struct LabelEncoderImpl : torch::nn::Module {
  LabelEncoderImpl(int64_t classes, int64_t out_channels, const std::vector<int64_t>& factors);
  torch::Tensor forward(const torch::Tensor& one_hot);

  std::vector<int64_t> pool;
  std::vector<Conv<N>> stages;
  Conv<N> out{nullptr};
};
template <int N>
using LabelEncoder = torch::nn::ModuleHolder<LabelEncoderImpl<N>>;

template <int N>
struct DenoiserImpl : torch::nn::Module {
  explicit DenoiserImpl(DenoiserSpec spec);

  // Conditioning channels for the given guide latent and/or one-hot labels
  // (either may be undefined when the spec does not use it).
  torch::Tensor condition(const torch::Tensor& guide, const torch::Tensor& labels_one_hot);
  // eps estimate for x_t at float timesteps t, with precomputed conditioning.
  torch::Tensor forward(const torch::Tensor& x_t, const torch::Tensor& t, const torch::Tensor& cond = {});
  // Closure over fixed conditioning, for the samplers.
  EpsModel eps_model(torch::Tensor cond = {});

  // Copies weights from an unconditional denoiser; the first convolution's
  // extra label-channel weights start at zero so fine-tuning begins from the
  // unconditional model's behaviour.
  void init_from(DenoiserImpl& base_model);

  DenoiserSpec spec;
  UNet<N> unet{nullptr};
  LabelEncoder<N> label_encoder{nullptr};
};
template <int N>
using Denoiser = torch::nn::ModuleHolder<DenoiserImpl<N>>;

using Denoiser3d = Denoiser<3>;
using Denoiser2d = Denoiser<2>;

extern template struct UNetImpl<2>;
extern template struct UNetImpl<3>;
extern template struct LabelEncoderImpl<2>;
extern template struct LabelEncoderImpl<3>;
extern template struct DenoiserImpl<2>;
extern template struct DenoiserImpl<3>;

}  // namespace caldm
