#pragma once

// Non-holistic autoencoder. The full-resolution volume is never processed
// at once: a 3D encoder sees only a thumbnail, the latent is upsampled along
// depth only, and image slices are decoded one at a time from a window of k
// neighbouring latent slices.

#include "caldm/config.hpp"
#include "caldm/layers.hpp"
#include "caldm/sink.hpp"
#include "caldm/volume.hpp"

#include <torch/torch.h>

#include <vector>

namespace caldm {

// Diagonal Gaussian over latents.
struct Posterior {
  torch::Tensor mean;
  torch::Tensor logvar;

  // mean + exp(logvar / 2) * eps
  torch::Tensor sample() const;
  // KL(q || N(0, I)) summed over latent elements, averaged over the batch.
  torch::Tensor kl() const;
};

// 2D encoder (B,1,H,W) -> Posterior over (B,c,H',W'). One instance is the
// throwaway encoder used while pretraining the decoder, another the
// high-resolution slice encoder trained against the frozen decoder.
struct SliceEncoderImpl : torch::nn::Module {
  SliceEncoderImpl(const ShapeConfig& shape, const ArchConfig& arch);
  Posterior forward(const torch::Tensor& x);

  torch::nn::Conv2d conv_in{nullptr};
  std::vector<ResBlock<2>> blocks;
  std::vector<torch::nn::Conv2d> downs;
  std::vector<int64_t> factors;  // applied from full resolution downwards
  OutHead<2> head{nullptr};
};
TORCH_MODULE(SliceEncoder);

// Learnable 3D convolution over a window of slice features, gated by a
// scalar mixing factor alpha: out = h + alpha * f(h). Initialized at alpha = 0
// so the wrapped 2D path is reproduced exactly.
struct Adaptor3dImpl : torch::nn::Module {
  explicit Adaptor3dImpl(int64_t channels);
  // h: (B*k, C, h, w) with the k slices of each window contiguous.
  torch::Tensor forward(const torch::Tensor& h, int64_t window);

  torch::nn::GroupNorm norm{nullptr};
  torch::nn::Conv3d conv{nullptr};
  torch::Tensor alpha;
};
TORCH_MODULE(Adaptor3d);

struct AdaptorStackImpl : torch::nn::Module {
  explicit AdaptorStackImpl(const std::vector<int64_t>& level_channels);
  std::vector<Adaptor3d> levels;
  void set_alpha(float value);
};
TORCH_MODULE(AdaptorStack);

// 2D decoder: residual blocks and nearest-upsample convolutions from
// (c,H',W') up to (1,H,W), tanh-bounded. Adaptors, when given, run after each
// residual block and mix features across the window.
struct SliceDecoderImpl : torch::nn::Module {
  SliceDecoderImpl(const ShapeConfig& shape, const ArchConfig& arch);

  // z: (B,c,H',W') -> (B,1,H,W)
  torch::Tensor forward(const torch::Tensor& z);
  // windows: (B,k,c,H',W') -> decoded center slices (B,1,H,W)
  torch::Tensor forward_window(const torch::Tensor& windows, AdaptorStack& adaptors);

  std::vector<int64_t> channels;
  std::vector<int64_t> factors;
  torch::nn::Conv2d conv_in{nullptr};
  std::vector<ResBlock<2>> blocks;
  std::vector<torch::nn::Conv2d> ups;
  OutHead<2> head{nullptr};

 private:
  torch::Tensor level_in(const torch::Tensor& z);
  torch::Tensor level_block(size_t level, const torch::Tensor& h);
  torch::Tensor finish(const torch::Tensor& h);
};
TORCH_MODULE(SliceDecoder);

// Fully 3D encoder on the thumbnail (B,1,2D',2H',2W') -> (B,c,D',H',W').
struct ThumbnailEncoderImpl : torch::nn::Module {
  ThumbnailEncoderImpl(const ShapeConfig& shape, const ArchConfig& arch);
  Posterior forward(const torch::Tensor& thumb);

  torch::nn::Conv3d conv_in{nullptr}, down{nullptr};
  ResBlock<3> block0{nullptr}, block1{nullptr};
  OutHead<3> head{nullptr};
};
TORCH_MODULE(ThumbnailEncoder);

// Uniaxial super-resolution: 3D residual blocks and depth-only upsample
// blocks, (B,c,D',H',W') -> (B,c,D,H',W').
struct UniaxialSRImpl : torch::nn::Module {
  UniaxialSRImpl(const ShapeConfig& shape, const ArchConfig& arch);
  torch::Tensor forward(const torch::Tensor& z);

  torch::nn::Conv3d conv_in{nullptr};
  ResBlock<3> block_in{nullptr};
  std::vector<int64_t> factors;
  std::vector<torch::nn::Conv3d> ups;
  std::vector<ResBlock<3>> blocks;
  OutHead<3> head{nullptr};
};
TORCH_MODULE(UniaxialSR);

// Window of k latent slices centered on `center` with replicate padding at
// the volume boundaries. z_sr: (c,D,H',W') -> (k,c,H',W').
torch::Tensor latent_window(const torch::Tensor& z_sr, int64_t center, int64_t window);

struct NhaeImpl : torch::nn::Module {
  NhaeImpl(ShapeConfig shape, ArchConfig arch);

  // Volume-level operations (unbatched, inference).
  Posterior encode_thumbnail(const Volume& thumbnail);
  torch::Tensor uniaxial_superres(const torch::Tensor& z);        // (c,D',H',W') -> (c,D,H',W')
  torch::Tensor decode_slice_2d(const torch::Tensor& slice);      // (c,H',W') -> (H,W)
  torch::Tensor decode_multislice(const torch::Tensor& window);   // (k,c,H',W') -> (H,W)
  void decode_volume(const torch::Tensor& z_sr, SliceSink& sink); // streams D slices
  torch::Tensor encode_slice_hr(const torch::Tensor& image);      // (H,W) -> (c,H',W') posterior mean

  // Makes every 2D decoder parameter (non-)trainable.
  void set_decoder_frozen(bool frozen);
  std::vector<torch::Tensor> decoder_parameters() { return decoder->parameters(); }

  ShapeConfig shape;
  ArchConfig arch;
  SliceEncoder train_encoder{nullptr};
  SliceDecoder decoder{nullptr};
  AdaptorStack adaptors{nullptr};
  ThumbnailEncoder thumb_encoder{nullptr};
  UniaxialSR sr{nullptr};
  SliceEncoder hr_encoder{nullptr};
};
TORCH_MODULE(Nhae);

}  // namespace caldm
