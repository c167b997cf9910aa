#include "caldm/memory.hpp"

#include "caldm/denoiser.hpp"
#include "caldm/errors.hpp"
#include "caldm/nhae.hpp"
#include "caldm/pipeline.hpp"

#include <c10/core/CPUAllocator.h>
#include <c10/core/impl/alloc_cpu.h>

#include <atomic>
#include <chrono>
#include <mutex>
#include <sstream>

namespace caldm {

// --- Allocation tracking ----------------------------------------------------

namespace {

std::atomic<int64_t> g_live{0};
std::atomic<int64_t> g_peak{0};
std::mutex g_tracker_mutex;
c10::Allocator* g_previous = nullptr;
bool g_active = false;

// Every block carries its size in a header so the deleter can be a plain
// function pointer (keeps raw_allocate working for callers that need it).
constexpr size_t kHeader = 64;

void note_alloc(int64_t n) {
  const auto now = g_live.fetch_add(n) + n;
  auto peak = g_peak.load();
  while (now > peak && !g_peak.compare_exchange_weak(peak, now)) {
  }
}

void tracked_free(void* data) {
  if (data == nullptr) return;
  char* raw = static_cast<char*>(data) - kHeader;
  g_live.fetch_sub(static_cast<int64_t>(*reinterpret_cast<size_t*>(raw)));
  c10::free_cpu(raw);
}

class TrackingAllocator final : public c10::Allocator {
 public:
  c10::DataPtr allocate(size_t n) override {
    void* raw = c10::alloc_cpu(n + kHeader);
    *static_cast<size_t*>(raw) = n;
    note_alloc(static_cast<int64_t>(n));
    void* data = static_cast<char*>(raw) + kHeader;
    return {data, data, &tracked_free, c10::Device(c10::DeviceType::CPU)};
  }
  c10::DeleterFnPtr raw_deleter() const override { return &tracked_free; }
  void copy_data(void* dest, const void* src, std::size_t count) const override {
    default_copy_data(dest, src, count);
  }
};

TrackingAllocator g_tracking;

constexpr uint8_t kAllocatorPriority = 255;

}  // namespace

ScopedAllocationTracker::ScopedAllocationTracker() {
  std::lock_guard lock(g_tracker_mutex);
  CALDM_CHECK(!g_active, ValidationError, "another allocation tracker is already active");
  g_previous = c10::GetCPUAllocator();
  g_live = 0;
  g_peak = 0;
  c10::SetCPUAllocator(&g_tracking, kAllocatorPriority);
  g_active = true;
}

ScopedAllocationTracker::~ScopedAllocationTracker() {
  std::lock_guard lock(g_tracker_mutex);
  c10::SetCPUAllocator(g_previous, kAllocatorPriority);
  g_active = false;
}

int64_t ScopedAllocationTracker::live_bytes() const { return g_live.load(); }
int64_t ScopedAllocationTracker::peak_bytes() const { return g_peak.load(); }

// --- Holistic baseline ------------------------------------------------------

namespace {

// Spreads the prime factors of `ratio` over `levels` upsampling steps; any
// surplus is folded into the last step, missing steps get factor 1.
std::vector<int64_t> spread_factors(int64_t ratio, size_t levels) {
  auto primes = prime_factors(ratio);
  std::vector<int64_t> out(levels, 1);
  if (levels == 0) return out;
  for (size_t i = 0; i < primes.size(); ++i) out[std::min(i, levels - 1)] *= primes[i];
  return out;
}

torch::Tensor upsample3(torch::Tensor x, const std::array<int64_t, 3>& f) {
  for (int a = 0; a < 3; ++a) {
    if (f[a] > 1) x = repeat_along(x, 2 + a, f[a]);
  }
  return x;
}

}  // namespace

HolisticDecoder3dImpl::HolisticDecoder3dImpl(const ShapeConfig& shape, const ArchConfig& arch)
    : channels(arch.decoder_channels(shape)) {
  const auto steps = channels.size() - 1;
  const auto fd = spread_factors(shape.depth_factor(), steps);
  const auto fh = spread_factors(shape.spatial_factor(), steps);
  const auto fw = spread_factors(shape.image.width / shape.latent.width, steps);
  for (size_t i = 0; i < steps; ++i) factors.push_back({fd[i], fh[i], fw[i]});
  conv_in = register_module("conv_in", make_conv<3>(shape.channels, channels[0]));
  for (size_t l = 0; l < channels.size(); ++l) {
    blocks.push_back(register_module("block" + std::to_string(l), ResBlock<3>(channels[l], channels[l])));
    if (l + 1 < channels.size()) {
      ups.push_back(register_module("up" + std::to_string(l), make_conv<3>(channels[l], channels[l + 1])));
    }
  }
  head = register_module("head", OutHead<3>(channels.back(), 1));
}

torch::Tensor HolisticDecoder3dImpl::forward(const torch::Tensor& z) {
  auto h = blocks[0](conv_in(z));
  for (size_t l = 1; l < blocks.size(); ++l) h = blocks[l](ups[l - 1](upsample3(h, factors[l - 1])));
  return torch::tanh(head(h));
}

// --- Analytic accounting ----------------------------------------------------
//
// Element counts of live float32 tensors. A convolution holds its input and
// output; norm -> SiLU -> conv holds input, activation and output; a residual
// block additionally keeps its input (and first conv output) alive until the
// final addition.

namespace {

constexpr int64_t kFloatBytes = 4;

int64_t res_block(int64_t in, int64_t out, int64_t n) { return n * std::max(2 * in + out, in + 3 * out); }
int64_t conv(int64_t in, int64_t out, int64_t n_in, int64_t n_out) { return in * n_in + out * n_out; }
int64_t up_stage(int64_t in, int64_t out, int64_t n_in, int64_t n_out) { return in * n_in + in * n_out + out * n_out; }
int64_t head_ws(int64_t c, int64_t n) { return n * (2 * c + 2); }

struct LevelGeometry {
  std::vector<int64_t> channels;
  std::vector<int64_t> elems;  // spatial elements per level
};

LevelGeometry slice_levels(const ShapeConfig& shape, const ArchConfig& arch) {
  LevelGeometry g;
  g.channels = arch.decoder_channels(shape);
  const auto fh = prime_factors(shape.spatial_factor());
  const auto fw = spread_factors(shape.image.width / shape.latent.width, fh.size());
  int64_t h = shape.latent.height, w = shape.latent.width;
  for (size_t l = 0; l < g.channels.size(); ++l) {
    g.elems.push_back(h * w);
    if (l < fh.size()) {
      h *= fh[l];
      w *= fw[l];
    }
  }
  return g;
}

// Slice-wise decode of one output slice from a window of k latent slices.
// Inference pushes each slice of a window through the 2D layers on its own,
// collects the outputs and concatenates them before the adaptor mixes the
// window.
int64_t slicewise_decode_activations(const ShapeConfig& shape, const ArchConfig& arch) {
  const auto g = slice_levels(shape, arch);
  const auto k = shape.window, c = shape.channels;
  int64_t peak = 0;
  for (size_t l = 0; l < g.channels.size(); ++l) {
    const auto ch = g.channels[l], n = g.elems[l];
    const auto in_ch = l == 0 ? c : g.channels[l - 1];
    const auto in_n = l == 0 ? n : g.elems[l - 1];
    const auto window_in = k * in_ch * in_n;
    const auto held = window_in + (k - 1) * ch * n + in_ch * in_n;
    const auto first = l == 0 ? conv(c, ch, n, n) : up_stage(in_ch, ch, in_n, n);
    peak = std::max(peak, held + std::max(first, res_block(ch, ch, n)));
    peak = std::max(peak, window_in + 2 * k * ch * n);  // concatenation
    peak = std::max(peak, 4 * k * ch * n);               // adaptor
  }
  const auto last = g.channels.back();
  const auto n_last = g.elems.back();
  peak = std::max(peak, k * last * n_last + head_ws(last, n_last));
  return peak * kFloatBytes;
}

int64_t holistic_decode_activations(const ShapeConfig& shape, const ArchConfig& arch) {
  HolisticDecoder3dImpl probe(shape, arch);
  const auto& ch = probe.channels;
  int64_t n = shape.latent.voxels();
  int64_t peak = std::max(conv(shape.channels, ch[0], n, n), res_block(ch[0], ch[0], n));
  for (size_t l = 1; l < ch.size(); ++l) {
    const auto& f = probe.factors[l - 1];
    const auto n_out = n * f[0] * f[1] * f[2];
    peak = std::max({peak, up_stage(ch[l - 1], ch[l], n, n_out), res_block(ch[l], ch[l], n_out)});
    n = n_out;
  }
  peak = std::max(peak, head_ws(ch.back(), n));
  return peak * kFloatBytes;
}

// Two-level U-Net of the denoisers on `batch` inputs with n spatial elements.
int64_t unet_activations(int64_t batch, int64_t in_ch, int64_t base, int64_t n, int dims) {
  const int64_t n1 = n >> dims;
  const int64_t b = base, w = 2 * base;
  int64_t peak = std::max(conv(in_ch, b, n, n), res_block(b, b, n));
  const int64_t skip0 = b * n;
  peak = std::max(peak, skip0 + conv(b, b, n, n1));
  peak = std::max(peak, skip0 + res_block(b, w, n1));
  const int64_t skip1 = w * n1;
  peak = std::max(peak, skip0 + res_block(w, w, n1));
  peak = std::max(peak, skip0 + skip1 + w * n1 + res_block(2 * w, w, n1));
  peak = std::max(peak, skip0 + skip1 + up_stage(w, b, n1, n));
  peak = std::max(peak, skip0 + skip1 + b * n + res_block(2 * b, b, n));
  peak = std::max(peak, head_ws(b, n));
  return batch * peak * kFloatBytes;
}

int64_t sr_activations(const ShapeConfig& shape, const ArchConfig& arch) {
  const auto s = arch.sr_channels;
  int64_t n = shape.latent.voxels();
  int64_t peak = std::max(conv(shape.channels, s, n, n), res_block(s, s, n));
  for (auto f : prime_factors(shape.depth_factor())) {
    peak = std::max({peak, up_stage(s, s, n, n * f), res_block(s, s, n * f)});
    n *= f;
  }
  peak = std::max(peak, 2 * s * n + shape.channels * n);
  return peak * kFloatBytes;
}

int64_t parameter_bytes(torch::nn::Module& m) {
  int64_t total = 0;
  for (const auto& p : m.parameters()) total += p.numel() * kFloatBytes;
  for (const auto& b : m.buffers()) total += b.numel() * kFloatBytes;
  return total;
}

int64_t slicewise_decoder_parameters(const ShapeConfig& shape, const ArchConfig& arch) {
  SliceDecoderImpl dec(shape, arch);
  AdaptorStackImpl adaptors(dec.channels);
  return parameter_bytes(dec) + parameter_bytes(adaptors);
}

// Latent slices refined together; mirrors the pipeline's fixed chunk.
constexpr int64_t kRefineChunk = 16;

}  // namespace

const char* task_name(ProfileTask task) { return task == ProfileTask::kDecode ? "decode" : "full-synthesis"; }

const char* strategy_name(DecodeStrategy strategy) {
  return strategy == DecodeStrategy::kHolistic3d ? "holistic-3d-decode" : "slice-wise-decode";
}

std::string MemoryReport::csv_header() {
  return "task,strategy,depth,height,width,peak_bytes,activation_peak_bytes,measured_peak_bytes,seconds,status,error";
}

std::string MemoryReport::csv_row() const {
  std::ostringstream os;
  std::string err = error;
  for (auto& ch : err) {
    if (ch == ',' || ch == '\n') ch = ' ';
  }
  os << task_name(task) << "," << strategy_name(strategy) << "," << resolution.depth << "," << resolution.height << ","
     << resolution.width << "," << peak_bytes << "," << activation_peak << "," << measured_peak << "," << seconds << ","
     << (failed ? "failed" : "ok") << "," << err;
  return os.str();
}

ShapeConfig profile_shape(const ShapeConfig& base, Shape3 resolution) {
  base.validate();
  ShapeConfig s = base;
  s.image = resolution;
  const auto fd = base.depth_factor(), fh = base.spatial_factor(), fw = base.image.width / base.latent.width;
  CALDM_CHECK(resolution.depth % fd == 0 && resolution.height % fh == 0 && resolution.width % fw == 0,
              ValidationError, "resolution " + resolution.str() + " is not divisible by the latent ratios");
  s.latent = {resolution.depth / fd, resolution.height / fh, resolution.width / fw};
  s.validate();
  return s;
}

MemoryReport analyze_peak_memory(ProfileTask task, DecodeStrategy strategy, Shape3 resolution,
                                 const ProfileOptions& opts) {
  const auto shape = profile_shape(opts.base, resolution);
  const auto& arch = opts.arch;
  MemoryReport r;
  r.task = task;
  r.strategy = strategy;
  r.resolution = resolution;

  const int64_t c = shape.channels;
  const int64_t latent_bytes = c * shape.latent.voxels() * kFloatBytes;
  const int64_t slice_latent = c * shape.latent.height * shape.latent.width * kFloatBytes;
  const int64_t z_sr_bytes = slice_latent * shape.image.depth;
  const int64_t window_bytes = slice_latent * shape.window;

  int64_t params = 0;
  int64_t diff_params = 0;
  if (task == ProfileTask::kFullSynthesis) {
    Denoiser3d g(global_denoiser_spec(shape, arch));
    diff_params = parameter_bytes(*g);
    if (strategy == DecodeStrategy::kSliceWise) {
      Denoiser2d s(slice_denoiser_spec(shape, arch));
      UniaxialSRImpl sr(shape, arch);
      diff_params += parameter_bytes(*s) + parameter_bytes(sr);
    }
  }
  if (strategy == DecodeStrategy::kSliceWise) {
    params = slicewise_decoder_parameters(shape, arch) + diff_params;
  } else {
    HolisticDecoder3dImpl dec(shape, arch);
    params = parameter_bytes(dec) + diff_params;
  }

  if (task == ProfileTask::kFullSynthesis) {
    const auto g_spec = global_denoiser_spec(shape, arch);
    r.stages.push_back({"global-diffusion", params, 4 * latent_bytes,
                        unet_activations(1, g_spec.input_channels(), g_spec.base_channels, shape.latent.voxels(), 3)});
    if (strategy == DecodeStrategy::kSliceWise) {
      r.stages.push_back({"super-resolution", params, latent_bytes + z_sr_bytes, sr_activations(shape, arch)});
      const auto s_spec = slice_denoiser_spec(shape, arch);
      const auto chunk = std::min(kRefineChunk, shape.image.depth);
      r.stages.push_back({"slice-refinement", params, 3 * z_sr_bytes + 4 * chunk * slice_latent,
                          unet_activations(chunk, s_spec.input_channels(), s_spec.base_channels,
                                           shape.latent.height * shape.latent.width, 2)});
    }
  }
  if (strategy == DecodeStrategy::kSliceWise) {
    r.stages.push_back({"decode", params, z_sr_bytes + window_bytes, slicewise_decode_activations(shape, arch)});
  } else {
    r.stages.push_back({"decode", params, latent_bytes, holistic_decode_activations(shape, arch)});
  }
  for (const auto& s : r.stages) {
    r.peak_bytes = std::max(r.peak_bytes, s.total());
    r.activation_peak = std::max(r.activation_peak, s.activations);
  }
  return r;
}

namespace {

void run_measured(ProfileTask task, DecodeStrategy strategy, const ShapeConfig& shape, const ProfileOptions& opts,
                  MemoryReport& r) {
  torch::NoGradGuard no_grad;
  torch::manual_seed(0);
  const auto& arch = opts.arch;
  CascadeBundle bundle;
  bundle.shape = shape;
  bundle.arch = arch;
  bundle.schedule = opts.schedule;
  bundle.schedule.ddim_steps = std::min(opts.sampling_steps, opts.schedule.steps);
  bundle.nhae = Nhae(shape, arch);
  bundle.diff3d = Denoiser3d(global_denoiser_spec(shape, arch));
  bundle.diffslice = Denoiser2d(slice_denoiser_spec(shape, arch));
  bundle.eval();
  HolisticDecoder3d holistic{nullptr};
  if (strategy == DecodeStrategy::kHolistic3d) {
    holistic = HolisticDecoder3d(shape, arch);
    holistic->eval();
  }
  // Parameters are counted analytically (they are the same tensors either
  // way); the tracker sees latents, activations and library scratch space.
  const int64_t params = r.stages.front().parameters;
  auto z_latent = torch::randn(shape.latent_sizes());
  auto z_sr = torch::randn(shape.upsampled_sizes());

  ScopedAllocationTracker tracker;
  NullSink sink;
  if (task == ProfileTask::kDecode) {
    if (strategy == DecodeStrategy::kSliceWise) {
      bundle.nhae->decode_volume(z_sr, sink);
    } else {
      auto v = holistic(z_latent.unsqueeze(0));
    }
  } else if (strategy == DecodeStrategy::kSliceWise) {
    synthesize_volume(bundle, 0, nullptr, true, sink);
  } else {
    auto z = synthesize_global_latent(bundle, 0);
    auto v = holistic(z.unsqueeze(0));
  }
  r.measured_peak = params + tracker.peak_bytes();
}

}  // namespace

MemoryReport profile_peak_memory(ProfileTask task, DecodeStrategy strategy, Shape3 resolution,
                                 const ProfileOptions& opts) {
  auto r = analyze_peak_memory(task, strategy, resolution, opts);
  if (!opts.measure) return r;
  const auto start = std::chrono::steady_clock::now();
  try {
    run_measured(task, strategy, profile_shape(opts.base, resolution), opts, r);
  } catch (const std::bad_alloc& e) {
    r.failed = true;
    r.error = std::string("out of memory: ") + e.what();
  } catch (const c10::Error& e) {
    r.failed = true;
    r.error = e.what_without_backtrace();
  } catch (const Error& e) {
    r.failed = true;
    r.error = e.what();
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

}  // namespace caldm
