#pragma once

// Staged training: the three autoencoder stages (2D autoencoder, thumbnail
// encoder + uniaxial SR + adaptors against the frozen decoder, slice encoder
// against the frozen decoder) and the denoisers over the resulting latents.

#include "caldm/config.hpp"
#include "caldm/dataset.hpp"
#include "caldm/denoiser.hpp"
#include "caldm/nhae.hpp"
#include "caldm/schedule.hpp"

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace caldm {

struct TrainLog {
  std::string stage;
  std::vector<double> loss;
  double seconds = 0;

  double head_mean(size_t n) const;  // mean of the first n losses
  double tail_mean(size_t n) const;  // mean of the last n losses
  void write_csv(const std::filesystem::path& path) const;
};

enum class NhaeStage { kSlice2d, kVolume3d, kSliceHr };

const char* stage_name(NhaeStage stage);

struct NhaeHooks {
  // Volume stage: called once per step with the slice index drawn per sample.
  std::function<void(int64_t step, const std::vector<int64_t>& slices)> on_slices;
};

// Optimizes one autoencoder stage for `steps` steps. Loss per step is
// L1 reconstruction + kl_weight * KL. The volume and high-resolution stages
// freeze the 2D decoder; the high-resolution encoder starts from the weights
// of the stage-1 slice encoder.
TrainLog train_nhae(Nhae& model, NhaeStage stage, const Dataset& data, const TrainConfig& cfg, int64_t steps,
                    const NhaeHooks& hooks = {});

// Thumbnails of every volume, (N,1,2D',2H',2W').
torch::Tensor make_thumbnails(const Dataset& data, const ShapeConfig& shape);

// Flip augmentation along depth and width (both symmetries of the phantoms).
Dataset flip_augment(const Dataset& data);

struct GlobalLatents {
  torch::Tensor z;       // (N,c,D',H',W') posterior means
  torch::Tensor labels;  // (N,D,H,W) int64, undefined without labels
};
GlobalLatents encode_global_latents(Nhae& model, const Dataset& data);

struct SliceLatents {
  torch::Tensor guide;   // z_sr slices, (M,c,H',W')
  torch::Tensor target;  // high-resolution encoder slices, (M,c,H',W')
  torch::Tensor labels;  // (M,H,W) int64, undefined without labels
};
SliceLatents encode_slice_latents(Nhae& model, const Dataset& data);

// Reciprocal standard deviation, so scaled latents have unit variance.
double latent_scale(const torch::Tensor& z);

// Training corpora for both denoisers: latents of the flip-augmented
// dataset, multiplied by their scale factors. A scale of 0 is estimated from
// the corpus; fine-tuning passes the scales of the models it starts from.
struct DenoiserCorpus {
  GlobalLatents global;
  SliceLatents slices;
  double scale3d = 0;
  double scale_slice = 0;
};
DenoiserCorpus build_denoiser_corpus(Nhae& model, const Dataset& data, double scale3d = 0, double scale_slice = 0);

struct DenoiserTraining {
  double lr = 5e-4;
  double ema_decay = 0.995;
  int64_t batch_size = 16;
  int64_t steps = 1000;
  uint64_t seed = 0;
  std::string stage = "diffusion";
};

// Latents passed here are already multiplied by their scale factor.
TrainLog train_global_denoiser(Denoiser3d& model, const GlobalLatents& data, const NoiseSchedule& schedule,
                               const DenoiserTraining& opts);
TrainLog train_slice_denoiser(Denoiser2d& model, const SliceLatents& data, const NoiseSchedule& schedule,
                              const DenoiserTraining& opts);

}  // namespace caldm
