#pragma once

// Peak-memory profiling of volume decoding and full synthesis, comparing
// slice-wise decoding against a conventional holistic 3D decoder.
//
// Two numbers are reported. The analytic one sums the live tensors of each
// layer under a simple liveness model (layer input, temporaries, output and
// any tensors held for skip connections); it is portable and is what the
// trend checks use. The measured one is the high-water mark of the CPU
// allocator while the task runs, which also sees library scratch buffers.

#include "caldm/config.hpp"
#include "caldm/layers.hpp"
#include "caldm/volume.hpp"

#include <torch/torch.h>

#include <array>
#include <string>
#include <vector>

namespace caldm {

// Wraps the CPU allocator for its lifetime and records the high-water mark
// of live bytes allocated through it. Only one may be active at a time;
// profiled work must not run concurrently with anything else.
class ScopedAllocationTracker {
 public:
  ScopedAllocationTracker();
  ~ScopedAllocationTracker();
  ScopedAllocationTracker(const ScopedAllocationTracker&) = delete;
  ScopedAllocationTracker& operator=(const ScopedAllocationTracker&) = delete;

  // Bytes currently live / at most live since construction, counting only
  // allocations made while the tracker was active.
  int64_t live_bytes() const;
  int64_t peak_bytes() const;
};

// Conventional decoder baseline: the same level widths as the slice decoder,
// but 3D convolutions over the whole latent volume with upsampling along
// every axis. (B,c,D',H',W') -> (B,1,D,H,W).
struct HolisticDecoder3dImpl : torch::nn::Module {
  HolisticDecoder3dImpl(const ShapeConfig& shape, const ArchConfig& arch);
  torch::Tensor forward(const torch::Tensor& z);

  std::vector<int64_t> channels;
  std::vector<std::array<int64_t, 3>> factors;  // per level, (depth, height, width)
  torch::nn::Conv3d conv_in{nullptr};
  std::vector<ResBlock<3>> blocks;
  std::vector<torch::nn::Conv3d> ups;
  OutHead<3> head{nullptr};
};
TORCH_MODULE(HolisticDecoder3d);

enum class ProfileTask { kDecode, kFullSynthesis };
enum class DecodeStrategy { kHolistic3d, kSliceWise };

const char* task_name(ProfileTask task);
const char* strategy_name(DecodeStrategy strategy);

struct StageMemory {
  std::string stage;
  int64_t parameters = 0;
  int64_t latents = 0;
  int64_t activations = 0;
  int64_t total() const { return parameters + latents + activations; }
};

struct MemoryReport {
  ProfileTask task = ProfileTask::kDecode;
  DecodeStrategy strategy = DecodeStrategy::kSliceWise;
  Shape3 resolution;
  std::vector<StageMemory> stages;
  int64_t peak_bytes = 0;        // analytic, max stage total
  int64_t activation_peak = 0;   // analytic, max stage activations
  int64_t measured_peak = -1;    // allocator high-water mark; -1 if not measured
  double seconds = 0;
  bool failed = false;
  std::string error;

  static std::string csv_header();
  std::string csv_row() const;
};

struct ProfileOptions {
  ShapeConfig base = ShapeConfig::desk();  // supplies the compression ratios, c and k
  ArchConfig arch;
  ScheduleConfig schedule;
  int64_t sampling_steps = 2;  // DDIM steps in measured synthesis runs; peak is per step
  bool measure = true;         // run the task under the allocation tracker
};

// Geometry for a resolution on the ladder, keeping the ratios of `base`.
ShapeConfig profile_shape(const ShapeConfig& base, Shape3 resolution);

// Analytic breakdown only (no compute).
MemoryReport analyze_peak_memory(ProfileTask task, DecodeStrategy strategy, Shape3 resolution,
                                 const ProfileOptions& opts);

// Analytic breakdown plus, if opts.measure, a measured run with freshly
// initialized models (weights do not affect memory). Allocation failures are
// recorded in the report instead of thrown.
MemoryReport profile_peak_memory(ProfileTask task, DecodeStrategy strategy, Shape3 resolution,
                                 const ProfileOptions& opts);

}  // namespace caldm
