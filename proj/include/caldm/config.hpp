#pragma once

#include "caldm/volume.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace caldm {

// Image/latent geometry shared by every component.
struct ShapeConfig {
  Shape3 image{64, 64, 64};   // (D,H,W)
  Shape3 latent{8, 8, 8};     // (D',H',W')
  int64_t channels = 4;       // c
  int64_t window = 5;         // k, odd

  static ShapeConfig desk() { return {}; }
  static ShapeConfig paper() { return {{512, 512, 512}, {64, 64, 64}, 4, 5}; }

  void validate() const;

  // Thumbnail fed to the 3D encoder: twice the latent size along each axis.
  Shape3 thumbnail() const { return {2 * latent.depth, 2 * latent.height, 2 * latent.width}; }
  int64_t depth_factor() const { return image.depth / latent.depth; }
  int64_t spatial_factor() const { return image.height / latent.height; }
  std::vector<int64_t> latent_sizes() const { return {channels, latent.depth, latent.height, latent.width}; }
  std::vector<int64_t> upsampled_sizes() const { return {channels, image.depth, latent.height, latent.width}; }
  std::vector<int64_t> latent_slice_sizes() const { return {channels, latent.height, latent.width}; }
  std::string str() const;
};

// Layer widths. None of these are fixed by the method; they are sized so the
// desk profile trains on a small CPU budget.
struct ArchConfig {
  int64_t decoder_base = 64;     // channels at latent resolution
  int64_t decoder_min = 16;      // floor as resolution doubles
  int64_t encoder3d_base = 16;   // thumbnail encoder, doubled at latent res
  int64_t sr_channels = 16;
  int64_t unet_base = 32;
  int64_t time_embed = 64;
  int64_t cond_channels = 4;     // label-encoder output channels

  std::vector<int64_t> decoder_channels(const ShapeConfig& shape) const;
  std::string str() const;
};

struct ScheduleConfig {
  int64_t steps = 1000;  // T
  double beta_start = 1e-4;
  double beta_end = 0.02;
  int64_t ddim_steps = 200;

  void validate() const;
  std::string str() const;
};

struct TrainConfig {
  double lr = 1e-3;
  int64_t batch_size = 8;         // slice stages
  int64_t batch_size_volume = 4;  // thumbnail stage: each sample decodes a k-slice window
  double kl_weight = 1e-6;
  int64_t steps_nhae2d = 1500;
  int64_t steps_nhae3d = 1200;
  int64_t steps_nhaehr = 300;
  int64_t steps_diff3d = 3000;
  int64_t steps_diffslice = 3000;
  int64_t steps_cond = 1500;
  uint64_t seed = 0;

  void validate() const;
};

// Prime factorization in ascending order; used to build ratio-n up/down
// sampling stacks out of small integer steps.
std::vector<int64_t> prime_factors(int64_t n);

// 64-bit FNV-1a of a string, hex encoded. Stable across platforms.
std::string fingerprint(const std::string& canonical);

// Fingerprint of everything that determines parameter shapes.
std::string model_fingerprint(const ShapeConfig& shape, const ArchConfig& arch);

}  // namespace caldm
