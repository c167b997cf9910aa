#pragma once

// End-to-end cascade: global latent diffusion, uniaxial super-resolution,
// per-slice refinement and streamed slice-wise decoding.

#include "caldm/checkpoint.hpp"
#include "caldm/config.hpp"
#include "caldm/denoiser.hpp"
#include "caldm/nhae.hpp"
#include "caldm/schedule.hpp"
#include "caldm/sink.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <string>

namespace caldm {

// Checkpoint kinds written by the trainer.
inline constexpr const char* kNhaeKind = "nhae";
inline constexpr const char* kDiff3dKind = "diff3d";
inline constexpr const char* kDiffSliceKind = "diffslice";
inline constexpr const char* kDiff3dCondKind = "diff3d-cond";
inline constexpr const char* kDiffSliceCondKind = "diffslice-cond";

// Denoiser layouts for the two cascade stages; label_classes = 0 gives the
// unconditional variant.
DenoiserSpec global_denoiser_spec(const ShapeConfig& shape, const ArchConfig& arch, int64_t label_classes = 0);
DenoiserSpec slice_denoiser_spec(const ShapeConfig& shape, const ArchConfig& arch, int64_t label_classes = 0);

// Fingerprint a denoiser checkpoint must carry: the autoencoder geometry it
// was trained against plus its own layout.
std::string denoiser_fingerprint(const ShapeConfig& shape, const ArchConfig& arch, const DenoiserSpec& spec);

// Plain-text key=value description of a trained cascade. Relative paths are
// resolved against the manifest's directory.
struct BundleManifest {
  std::filesystem::path nhae, diff3d, diffslice;
  std::filesystem::path diff3d_cond, diffslice_cond;  // empty when absent
  ShapeConfig shape;
  ArchConfig arch;
  ScheduleConfig schedule;

  static BundleManifest read(const std::filesystem::path& path);
  void write(const std::filesystem::path& path) const;
};

struct CascadeBundle {
  ShapeConfig shape;
  ArchConfig arch;
  ScheduleConfig schedule;
  Nhae nhae{nullptr};
  Denoiser3d diff3d{nullptr};
  Denoiser2d diffslice{nullptr};
  Denoiser3d diff3d_cond{nullptr};      // optional
  Denoiser2d diffslice_cond{nullptr};   // optional
  double scale3d = 1.0;     // multiplies global latents into diffusion space
  double scale_slice = 1.0; // same for latent slices (guide and target)

  static CascadeBundle load(const std::filesystem::path& manifest);

  // Throws ValidationError unless every component agrees on the geometry.
  void validate() const;
  bool conditional() const { return !diff3d_cond.is_empty() && !diffslice_cond.is_empty(); }
  int64_t label_classes() const;
  NoiseSchedule noise_schedule() const;
  void eval();
};

struct SynthesisTrace {
  torch::Tensor z_syn;      // (c,D',H',W')
  torch::Tensor z_sr;       // (c,D,H',W') before refinement
  torch::Tensor z_decoded;  // (c,D,H',W') fed to the decoder
};

// Noise seeds: the global latent uses derive_seed(seed, 0); slice i of the
// refiner uses derive_seed(derive_seed(seed, 1), i).
uint64_t global_noise_seed(uint64_t seed);
uint64_t slice_noise_seed(uint64_t seed, int64_t slice);

torch::Tensor synthesize_global_latent(CascadeBundle& bundle, uint64_t seed, const LabelVolume* label = nullptr);

// Refines every slice of z_sr (c,D,H',W') independently; returns (D,c,H',W').
torch::Tensor refine_latent_slices(CascadeBundle& bundle, const torch::Tensor& z_sr, uint64_t seed,
                                   const LabelVolume* label = nullptr);

SynthesisTrace synthesize_volume(CascadeBundle& bundle, uint64_t seed, const LabelVolume* label, bool refine,
                                 SliceSink& sink);

// Thumbnail -> posterior mean -> uniaxial SR -> slice-wise decode.
void reconstruct_volume(CascadeBundle& bundle, const Volume& v, SliceSink& sink);
void reconstruct_volume(Nhae& nhae, const Volume& v, SliceSink& sink);

// Shapes of every intermediate of one synthesis with untrained weights; no
// checkpoint is needed, so any geometry (including 512^3) can be checked.
struct ShapeTrace {
  std::map<std::string, std::vector<int64_t>> shapes;
};
ShapeTrace dry_run_shapes(const ShapeConfig& shape, const ArchConfig& arch);

}  // namespace caldm
