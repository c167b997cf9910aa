// End-to-end acceptance run. Every criterion prints one PASS/FAIL line; the
// process exits non-zero if any criterion fails. Criteria 5, 6 and 9 train
// the full desk-scale cascade on synthetic phantoms, so a complete run takes
// the better part of an hour on a single CPU core.

#include "caldm/checkpoint.hpp"
#include "caldm/dataset.hpp"
#include "caldm/memory.hpp"
#include "caldm/metrics.hpp"
#include "caldm/pipeline.hpp"
#include "caldm/rng.hpp"
#include "caldm/training.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <set>
#include <sstream>

using namespace caldm;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  int id = 0;
  std::string name;
  bool pass = false;
  std::string detail;
  double seconds = 0;
};

std::string fmt(double v, int precision = 4) {
  std::ostringstream os;
  os << std::setprecision(precision) << v;
  return os.str();
}

std::string line(const Outcome& o) {
  std::ostringstream os;
  os << (o.pass ? "[PASS]" : "[FAIL]") << " criterion " << o.id << " (" << o.name << "): " << o.detail << " ["
     << std::fixed << std::setprecision(1) << o.seconds << " s]";
  return os.str();
}

// Reference PSNR written out longhand, independent of the library metric.
double psnr_oracle(const Volume& a, const Volume& b) {
  auto x = a.voxels().contiguous();
  auto y = b.voxels().contiguous();
  const float* px = x.data_ptr<float>();
  const float* py = y.data_ptr<float>();
  long double se = 0;
  for (int64_t i = 0; i < x.numel(); ++i) {
    const long double d = static_cast<long double>(px[i]) - static_cast<long double>(py[i]);
    se += d * d;
  }
  const long double mse = se / static_cast<long double>(x.numel());
  return static_cast<double>(10.0L * std::log10(4.0L / mse));
}

Volume decode_to_volume(Nhae& nhae, const torch::Tensor& z_sr) {
  VolumeSink sink;
  nhae->decode_volume(z_sr, sink);
  return sink.volume();
}

// --- trained state shared by criteria 5, 6 and 9 -----------------------------

struct Trained {
  ShapeConfig shape = ShapeConfig::desk();
  ArchConfig arch;
  ScheduleConfig schedule;
  TrainConfig train;
  Dataset data;
  Nhae nhae{nullptr};
  double nhae_seconds = 0;
  bool nhae_from_cache = false;
  CascadeBundle bundle;
  bool have_bundle = false;
};

constexpr int64_t kTrainVolumes = 20;
constexpr uint64_t kTrainSeed = 0;
constexpr uint64_t kHeldOutSeed = 1000;
constexpr uint64_t kLabelSeed = 3000;

// Optional checkpoint cache so a failing late criterion can be iterated on
// without retraining. Never used by the ctest registration.
struct Cache {
  fs::path dir;
  bool enabled() const { return !dir.empty(); }
  fs::path path(const std::string& name) const { return dir / (name + ".ckpt"); }
};

void train_nhae_stages(Trained& t, const Cache& cache) {
  t.nhae = Nhae(t.shape, t.arch);
  const auto fp = model_fingerprint(t.shape, t.arch);
  if (cache.enabled() && fs::exists(cache.path("nhae"))) {
    const auto meta = load_checkpoint(cache.path("nhae"), *t.nhae, kNhaeKind, fp);
    t.nhae_seconds = meta.number("train_seconds");
    t.nhae_from_cache = true;
    t.nhae->eval();
    return;
  }
  const auto t0 = Clock::now();
  for (auto [stage, steps] : {std::pair{NhaeStage::kSlice2d, t.train.steps_nhae2d},
                              std::pair{NhaeStage::kVolume3d, t.train.steps_nhae3d},
                              std::pair{NhaeStage::kSliceHr, t.train.steps_nhaehr}}) {
    const auto log = train_nhae(t.nhae, stage, t.data, t.train, steps);
    std::cout << "  " << log.stage << ": " << steps << " steps, " << fmt(log.seconds, 4) << " s, loss "
              << fmt(log.head_mean(50)) << " -> " << fmt(log.tail_mean(50)) << std::endl;
  }
  t.nhae_seconds = seconds_since(t0);
  if (cache.enabled()) {
    save_checkpoint(cache.path("nhae"), *t.nhae, {kNhaeKind, "nhae-hr", fp, {{"train_seconds", fmt(t.nhae_seconds, 10)}}});
  }
}

template <int N>
bool load_cached(const Cache& cache, const std::string& name, Denoiser<N>& model, const ShapeConfig& shape,
                 const ArchConfig& arch) {
  if (!cache.enabled() || !fs::exists(cache.path(name))) return false;
  load_checkpoint(cache.path(name), *model, name, denoiser_fingerprint(shape, arch, model->spec));
  return true;
}

template <int N>
void store_cached(const Cache& cache, const std::string& name, Denoiser<N>& model, const ShapeConfig& shape,
                  const ArchConfig& arch) {
  if (cache.enabled()) {
    save_checkpoint(cache.path(name), *model, {name, name, denoiser_fingerprint(shape, arch, model->spec), {}});
  }
}

void train_denoisers(Trained& t, const Cache& cache) {
  const auto schedule = make_schedule(t.schedule.steps, t.schedule.beta_start, t.schedule.beta_end);
  const auto corpus = build_denoiser_corpus(t.nhae, t.data);
  t.bundle.shape = t.shape;
  t.bundle.arch = t.arch;
  t.bundle.schedule = t.schedule;
  t.bundle.nhae = t.nhae;
  t.bundle.scale3d = corpus.scale3d;
  t.bundle.scale_slice = corpus.scale_slice;
  t.bundle.diff3d = Denoiser3d(global_denoiser_spec(t.shape, t.arch));
  t.bundle.diffslice = Denoiser2d(slice_denoiser_spec(t.shape, t.arch));
  DenoiserTraining opts;
  opts.seed = kTrainSeed;
  if (!load_cached(cache, "diff3d", t.bundle.diff3d, t.shape, t.arch)) {
    opts.steps = t.train.steps_diff3d;
    opts.stage = "diff3d";
    const auto log = train_global_denoiser(t.bundle.diff3d, corpus.global, schedule, opts);
    std::cout << "  diff3d: " << opts.steps << " steps, " << fmt(log.seconds) << " s, loss " << fmt(log.head_mean(100))
              << " -> " << fmt(log.tail_mean(100)) << std::endl;
    store_cached(cache, "diff3d", t.bundle.diff3d, t.shape, t.arch);
  }
  if (!load_cached(cache, "diffslice", t.bundle.diffslice, t.shape, t.arch)) {
    opts.steps = t.train.steps_diffslice;
    opts.stage = "diffslice";
    const auto log = train_slice_denoiser(t.bundle.diffslice, corpus.slices, schedule, opts);
    std::cout << "  diffslice: " << opts.steps << " steps, " << fmt(log.seconds) << " s, loss "
              << fmt(log.head_mean(100)) << " -> " << fmt(log.tail_mean(100)) << std::endl;
    store_cached(cache, "diffslice", t.bundle.diffslice, t.shape, t.arch);
  }
  t.bundle.eval();
  t.have_bundle = true;
}

// --- criteria ---------------------------------------------------------------

Outcome criterion1() {
  Outcome o{1, "shape/ratio fidelity"};
  torch::manual_seed(1);
  const auto desk = ShapeConfig::desk();
  const ArchConfig arch;
  CascadeBundle b;
  b.shape = desk;
  b.arch = arch;
  b.nhae = Nhae(desk, arch);
  b.nhae->adaptors->set_alpha(0.5f);
  b.diff3d = Denoiser3d(global_denoiser_spec(desk, arch));
  b.diffslice = Denoiser2d(slice_denoiser_spec(desk, arch));
  b.eval();
  VolumeSink sink;
  synthesize_volume(b, 7, nullptr, true, sink);
  const auto v = sink.volume();
  const bool desk_ok = v.shape() == Shape3{64, 64, 64} && v.voxels().min().item<float>() >= -1.0f &&
                       v.voxels().max().item<float>() <= 1.0f;

  const auto trace = dry_run_shapes(ShapeConfig::paper(), ArchConfig{});
  const std::map<std::string, std::vector<int64_t>> expected = {
      {"thumbnail", {128, 128, 128}},         {"global_latent", {4, 64, 64, 64}},
      {"upsampled_latent", {4, 512, 64, 64}}, {"refined_slice", {4, 64, 64}},
      {"latent_window", {5, 4, 64, 64}},     {"image_slice", {512, 512}},
      {"image_slice_2d", {512, 512}},         {"hr_slice_latent", {4, 64, 64}},
      {"thumbnail_latent", {4, 64, 64, 64}},  {"volume", {512, 512, 512}},
  };
  std::string mismatches;
  for (const auto& [name, shape] : expected) {
    const auto it = trace.shapes.find(name);
    if (it == trace.shapes.end() || it->second != shape) mismatches += " " + name;
  }
  o.pass = desk_ok && mismatches.empty();
  o.detail = "desk volume " + v.shape().str() + " range [" + fmt(v.voxels().min().item<float>()) + ", " +
             fmt(v.voxels().max().item<float>()) + "]; paper profile z " +
             c10::str(c10::IntArrayRef(trace.shapes.at("global_latent"))) + ", z_sr " +
             c10::str(c10::IntArrayRef(trace.shapes.at("upsampled_latent"))) + ", slice " +
             c10::str(c10::IntArrayRef(trace.shapes.at("image_slice"))) +
             (mismatches.empty() ? "" : "; mismatched:" + mismatches);
  return o;
}

Outcome criterion2() {
  Outcome o{2, "adaptor identity at alpha=0"};
  torch::manual_seed(2);
  const auto shape = ShapeConfig::desk();
  Nhae nhae(shape, ArchConfig{});
  nhae->eval();
  torch::NoGradGuard no_grad;
  auto gen = make_generator(22);
  const auto sizes = std::vector<int64_t>{shape.window, shape.channels, shape.latent.height, shape.latent.width};

  nhae->adaptors->set_alpha(0.0f);
  int exact = 0;
  const int windows = 100;
  for (int i = 0; i < windows; ++i) {
    auto w = torch::randn(sizes, gen);
    exact += torch::equal(nhae->decode_multislice(w), nhae->decode_slice_2d(w[shape.window / 2])) ? 1 : 0;
  }
  // Control: the adaptors do change the output once alpha is non-zero.
  nhae->adaptors->set_alpha(0.5f);
  auto w = torch::randn(sizes, gen);
  const double control = (nhae->decode_multislice(w) - nhae->decode_slice_2d(w[shape.window / 2])).abs().max().item<double>();
  o.pass = exact == windows && control > 0;
  o.detail = std::to_string(exact) + "/" + std::to_string(windows) + " windows bit-exact; alpha=0.5 control max diff " +
             fmt(control);
  return o;
}

Outcome criterion3() {
  Outcome o{3, "decoder locality"};
  torch::manual_seed(3);
  const auto shape = ShapeConfig::desk();
  Nhae nhae(shape, ArchConfig{});
  nhae->adaptors->set_alpha(0.5f);
  nhae->eval();
  auto gen = make_generator(33);
  auto z = torch::randn(shape.upsampled_sizes(), gen);
  const auto base = decode_to_volume(nhae, z);
  const int64_t half = shape.window / 2;
  bool ok = true;
  std::string detail;
  for (int64_t j : {int64_t{0}, int64_t{31}, shape.image.depth - 1}) {
    auto zp = z.clone();
    zp.select(1, j).add_(torch::randn({shape.channels, shape.latent.height, shape.latent.width}, gen));
    const auto pert = decode_to_volume(nhae, zp);
    const auto diff = (pert.voxels() - base.voxels()).abs().amax({1, 2});  // per slice
    double outside = 0, inside = 0;
    for (int64_t i = 0; i < shape.image.depth; ++i) {
      const double d = diff[i].item<double>();
      if (std::abs(i - j) <= half) {
        inside = std::max(inside, d);
      } else {
        outside = std::max(outside, d);
      }
    }
    ok = ok && outside == 0.0 && inside > 0.0;
    detail += "slice " + std::to_string(j) + ": outside " + fmt(outside) + ", inside " + fmt(inside) + "; ";
  }
  o.pass = ok;
  o.detail = detail + "window k=" + std::to_string(shape.window);
  return o;
}

Outcome criterion4() {
  Outcome o{4, "diffusion algebra"};
  const auto schedule = make_schedule(1000, 1e-4, 0.02);
  // Monte-Carlo moments of q(x_t | x_0) for a unit-scale x_0. The mean error
  // is measured against the RMS scale of x_t (sqrt(E[x_t^2]) = 1 here), the
  // variance error relative to the closed-form variance.
  const int64_t samples = 100000;
  const double x0_value = 1.0;
  auto gen = make_generator(44);
  double worst_mean = 0, worst_var = 0;
  for (int64_t t : {1, 10, 250, 500, 1000}) {
    auto x0 = torch::full({samples}, x0_value, torch::kFloat64);
    auto eps = torch::randn({samples}, gen, torch::kFloat64);
    auto xt = q_sample(x0, t, eps, schedule);
    const double ab = schedule.alpha_bar(t);
    const double mean = std::sqrt(ab) * x0_value, var = 1.0 - ab;
    const double rms = std::sqrt(mean * mean + var);
    worst_mean = std::max(worst_mean, std::abs(xt.mean().item<double>() - mean) / rms);
    worst_var = std::max(worst_var, std::abs(xt.var(/*unbiased=*/true).item<double>() - var) / var);
  }
  long double prod = 1;
  for (int t = 1; t <= 1000; ++t) prod *= 1.0L - (1e-4L + (0.02L - 1e-4L) * (t - 1) / 999.0L);
  const double ab_err = std::abs(static_cast<double>(prod) - schedule.alpha_bar(1000));

  torch::manual_seed(4);
  Denoiser3d model(global_denoiser_spec(ShapeConfig::desk(), ArchConfig{}));
  {
    torch::NoGradGuard g;
    model->unet->head->conv->weight.normal_(0, 0.05);  // zero-initialized head would make eps = 0
  }
  model->eval();
  torch::NoGradGuard no_grad;
  const std::vector<int64_t> sizes{1, 4, 8, 8, 8};
  auto a = ddim_sample(model->eps_model(), sizes, schedule, 200, 99);
  auto b = ddim_sample(model->eps_model(), sizes, schedule, 200, 99);
  const bool ddim_equal = torch::equal(a, b);
  o.pass = worst_mean <= 0.01 && worst_var <= 0.01 && ab_err <= 1e-10 && ddim_equal;
  o.detail = "worst MC mean err " + fmt(worst_mean) + " (rel. RMS), worst var err " + fmt(worst_var) +
             " (rel.), alpha_bar[1000] err " + fmt(ab_err) + ", DDIM eta=0 rerun " +
             (ddim_equal ? "bit-identical" : "DIFFERS");
  return o;
}

Outcome criterion5(Trained& t, const Cache& cache) {
  Outcome o{5, "NHAE training efficacy"};
  train_nhae_stages(t, cache);
  std::vector<double> values;
  double max_disagreement = 0;
  for (uint64_t s = 0; s < 3; ++s) {
    PhantomSpec spec;
    spec.seed = kHeldOutSeed + s;
    const auto truth = generate_phantom(spec).volume;
    VolumeSink sink;
    reconstruct_volume(t.nhae, truth, sink);
    const auto recon = sink.volume();
    const double lib = psnr(truth, recon);
    const double oracle = psnr_oracle(truth, recon);
    max_disagreement = std::max(max_disagreement, std::abs(lib - oracle));
    values.push_back(oracle);
  }
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  const double worst = *std::min_element(values.begin(), values.end());
  const double budget = 30 * 60;
  o.pass = mean >= 20.0 && t.nhae_seconds <= budget && max_disagreement < 1e-6;
  o.detail = "held-out PSNR mean " + fmt(mean) + " dB (min " + fmt(worst) + ", " + std::to_string(values.size()) +
             " phantoms), library/oracle gap " + fmt(max_disagreement) + ", training " + fmt(t.nhae_seconds) +
             " s of " + fmt(budget) + " s" + (t.nhae_from_cache ? " (recorded by the cached run)" : "");
  return o;
}

Outcome criterion6(Trained& t, const Cache& cache) {
  Outcome o{6, "cascade efficacy (refined vs unrefined proxy Intra-FID)"};
  train_denoisers(t, cache);
  RandomConvFeatures fx;
  const int64_t per_seed = 4;
  std::vector<double> refined, unrefined;
  for (uint64_t seed : {0ull, 1ull, 2ull}) {
    std::vector<Volume> with, without;
    for (int64_t i = 0; i < per_seed; ++i) {
      const auto s = derive_seed(seed, static_cast<uint64_t>(i));
      VolumeSink a, b;
      const auto trace = synthesize_volume(t.bundle, s, nullptr, true, a);
      // Same global latent, decoded without refinement.
      t.bundle.nhae->decode_volume(trace.z_sr, b);
      with.push_back(a.volume());
      without.push_back(b.volume());
    }
    refined.push_back(slice_fid(t.data.volumes, with, SliceAxis::kIntra, fx).value);
    unrefined.push_back(slice_fid(t.data.volumes, without, SliceAxis::kIntra, fx).value);
  }
  const auto mean = [](const std::vector<double>& v) {
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  };
  o.pass = mean(refined) < mean(unrefined);
  std::string per;
  for (size_t i = 0; i < refined.size(); ++i) per += " " + fmt(refined[i]) + "/" + fmt(unrefined[i]);
  o.detail = "mean refined " + fmt(mean(refined)) + " vs unrefined " + fmt(mean(unrefined)) +
             " (per seed refined/unrefined:" + per + ")";
  return o;
}

Outcome criterion7() {
  Outcome o{7, "memory trend"};
  ProfileOptions opts;
  const std::vector<int64_t> ladder{32, 64, 128};
  std::vector<MemoryReport> slice, holistic;
  for (auto d : ladder) {
    slice.push_back(profile_peak_memory(ProfileTask::kDecode, DecodeStrategy::kSliceWise, {d, 64, 64}, opts));
    holistic.push_back(profile_peak_memory(ProfileTask::kDecode, DecodeStrategy::kHolistic3d, {d, 64, 64}, opts));
  }
  const auto ratio = [](const std::vector<MemoryReport>& r) {
    int64_t lo = r.front().activation_peak, hi = lo;
    for (const auto& x : r) {
      lo = std::min(lo, x.activation_peak);
      hi = std::max(hi, x.activation_peak);
    }
    return static_cast<double>(hi) / static_cast<double>(lo);
  };
  const double slice_ratio = ratio(slice);
  const double holistic_growth =
      static_cast<double>(holistic.back().activation_peak) / static_cast<double>(holistic.front().activation_peak);
  // Measured high-water marks must order every pair of runs the same way as
  // the analytic totals whenever those differ by more than 25%.
  std::vector<MemoryReport> all(slice);
  all.insert(all.end(), holistic.begin(), holistic.end());
  int compared = 0, agreed = 0;
  bool failed_run = false;
  for (const auto& r : all) failed_run = failed_run || r.failed || r.measured_peak < 0;
  for (size_t i = 0; i < all.size(); ++i) {
    for (size_t j = 0; j < all.size(); ++j) {
      if (i == j || all[i].peak_bytes <= all[j].peak_bytes * 1.25) continue;
      ++compared;
      agreed += all[i].measured_peak > all[j].measured_peak ? 1 : 0;
    }
  }
  o.pass = slice_ratio <= 1.25 && holistic_growth >= 3.0 && !failed_run && compared > 0 && agreed == compared;
  std::ostringstream d;
  d << "slice-wise activation max/min " << fmt(slice_ratio) << " (MB:";
  for (const auto& r : slice) d << " " << fmt(r.activation_peak / 1e6);
  d << "), holistic growth D=32->128 " << fmt(holistic_growth) << " (MB:";
  for (const auto& r : holistic) d << " " << fmt(r.activation_peak / 1e6);
  d << "), measured ordering agrees on " << agreed << "/" << compared << " pairs";
  o.detail = d.str();
  return o;
}

Outcome criterion8() {
  Outcome o{8, "metric identities"};
  const double tv_const = total_variation(Volume::constant({16, 16, 16}, 0.37f));
  auto gen = make_generator(88);
  const Volume v(torch::rand({16, 16, 16}, gen) * 1.6 - 0.8);
  // Scale factors are powers of two so the scaled volume is exact in float32
  // and the check isolates the metric, not the storage rounding.
  double homog = 0;
  for (double a : {0.5, -0.25, 0.125}) {
    const Volume av(v.voxels() * a);
    homog = std::max(homog, std::abs(total_variation(av) - std::abs(a) * total_variation(v)));
  }
  std::vector<Volume> set;
  for (uint64_t s = 0; s < 3; ++s) {
    PhantomSpec spec;
    spec.seed = 500 + s;
    set.push_back(generate_phantom(spec).volume);
  }
  RandomConvFeatures fx;
  const double fid_same = std::abs(slice_fid(set, set, SliceAxis::kIntra, fx).value);
  // One-dimensional features: N(0,1) against N(1,1) samples.
  auto fr = torch::randn({100000, 1}, gen, torch::kFloat64);
  auto fs_ = torch::randn({100000, 1}, gen, torch::kFloat64) + 1.0;
  const auto sr = gaussian_stats(fr), ss = gaussian_stats(fs_);
  const double mu_r = fr.mean().item<double>(), mu_s = fs_.mean().item<double>();
  const double sd_r = fr.std().item<double>(), sd_s = fs_.std().item<double>();
  const double closed = (mu_r - mu_s) * (mu_r - mu_s) + (sd_r - sd_s) * (sd_r - sd_s);
  const double fid1d = frechet_distance(sr, ss).value;
  const double gauss_err = std::abs(fid1d - closed);
  o.pass = tv_const == 0.0 && homog <= 1e-9 && fid_same <= 1e-6 && gauss_err <= 1e-9;
  o.detail = "TV(const) " + fmt(tv_const) + ", homogeneity err " + fmt(homog) + ", |FID(X,X)| " + fmt(fid_same) +
             ", 1-D FID " + fmt(fid1d, 10) + " vs closed form " + fmt(closed, 10) + " (err " + fmt(gauss_err) + ")";
  return o;
}

Outcome criterion9(Trained& t, const Cache& cache) {
  Outcome o{9, "conditional synthesis sanity"};
  const auto t0 = Clock::now();
  const auto classes = t.data.class_count();
  const auto schedule = make_schedule(t.schedule.steps, t.schedule.beta_start, t.schedule.beta_end);
  t.bundle.diff3d_cond = Denoiser3d(global_denoiser_spec(t.shape, t.arch, classes));
  t.bundle.diffslice_cond = Denoiser2d(slice_denoiser_spec(t.shape, t.arch, classes));
  const bool cached = load_cached(cache, "diff3d-cond", t.bundle.diff3d_cond, t.shape, t.arch) &&
                      load_cached(cache, "diffslice-cond", t.bundle.diffslice_cond, t.shape, t.arch);
  if (!cached) {
    const auto corpus = build_denoiser_corpus(t.nhae, t.data, t.bundle.scale3d, t.bundle.scale_slice);
    DenoiserTraining opts;
    opts.seed = kTrainSeed;
    opts.steps = t.train.steps_cond;
    opts.stage = "diff3d-cond";
    t.bundle.diff3d_cond->init_from(*t.bundle.diff3d);
    auto log = train_global_denoiser(t.bundle.diff3d_cond, corpus.global, schedule, opts);
    std::cout << "  diff3d-cond: " << opts.steps << " steps, " << fmt(log.seconds) << " s" << std::endl;
    opts.stage = "diffslice-cond";
    t.bundle.diffslice_cond->init_from(*t.bundle.diffslice);
    log = train_slice_denoiser(t.bundle.diffslice_cond, corpus.slices, schedule, opts);
    std::cout << "  diffslice-cond: " << opts.steps << " steps, " << fmt(log.seconds) << " s" << std::endl;
    store_cached(cache, "diff3d-cond", t.bundle.diff3d_cond, t.shape, t.arch);
    store_cached(cache, "diffslice-cond", t.bundle.diffslice_cond, t.shape, t.arch);
  }
  t.bundle.eval();
  const int samples = 10;
  double margin_sum = 0;
  std::string per;
  for (int i = 0; i < samples; ++i) {
    PhantomSpec spec;
    spec.seed = kLabelSeed + static_cast<uint64_t>(i);
    const auto label = generate_phantom(spec).labels;
    VolumeSink sink;
    synthesize_volume(t.bundle, derive_seed(77, static_cast<uint64_t>(i)), &label, true, sink);
    const auto v = sink.volume().voxels();
    const auto mask = label.labels() == spec.vessel_class();
    const double inside = v.masked_select(mask).mean().item<double>();
    const double outside = v.masked_select(mask.logical_not()).mean().item<double>();
    margin_sum += inside - outside;
    per += " " + fmt(inside - outside, 3);
  }
  const double margin = margin_sum / samples;
  const double secs = seconds_since(t0);
  o.pass = margin >= 0.1 && (cached || secs <= 30 * 60);
  o.detail = "mean vessel-minus-background intensity " + fmt(margin) + " over " + std::to_string(samples) +
             " samples (per sample:" + per + "), fine-tuning + sampling " + fmt(secs) + " s" +
             (cached ? " (cached fine-tune)" : "");
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  std::string only;
  std::string cache_dir;
  int threads = 1;
  app.add_option("--only", only, "comma-separated criteria to run (default: all)");
  app.add_option("--cache", cache_dir, "reuse/store trained checkpoints in this directory");
  app.add_option("--threads", threads, "intra-op threads");
  CLI11_PARSE(app, argc, argv);
  torch::set_num_threads(threads);

  std::set<int> selected;
  std::stringstream ss(only);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) selected.insert(std::stoi(item));
  }
  const auto wanted = [&](int id) { return selected.empty() || selected.count(id) > 0; };
  Cache cache{cache_dir};
  if (cache.enabled()) fs::create_directories(cache.dir);

  Trained trained;
  {
    PhantomSpec base;
    trained.data = make_phantom_dataset(base, kTrainVolumes, kTrainSeed);
  }
  std::vector<Outcome> results;
  const auto run = [&](int id, auto&& fn) {
    if (!wanted(id)) return;
    std::cout << "criterion " << id << " ..." << std::endl;
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o.id = id;
      o.name = "error";
      o.pass = false;
      o.detail = e.what();
    }
    o.seconds = seconds_since(t0);
    std::cout << line(o) << std::endl;
    results.push_back(o);
  };
  run(1, criterion1);
  run(2, criterion2);
  run(3, criterion3);
  run(4, criterion4);
  run(7, criterion7);
  run(8, criterion8);
  const bool need_training = wanted(5) || wanted(6) || wanted(9);
  if (need_training) {
    run(5, [&] { return criterion5(trained, cache); });
    if (trained.nhae.is_empty()) train_nhae_stages(trained, cache);
    if (wanted(6) || wanted(9)) {
      run(6, [&] { return criterion6(trained, cache); });
      if (!trained.have_bundle) train_denoisers(trained, cache);
      run(9, [&] { return criterion9(trained, cache); });
    }
  }

  std::sort(results.begin(), results.end(), [](const Outcome& a, const Outcome& b) { return a.id < b.id; });
  std::cout << "\n==== acceptance summary ====" << std::endl;
  int failed = 0;
  for (const auto& o : results) {
    std::cout << line(o) << std::endl;
    failed += o.pass ? 0 : 1;
  }
  std::cout << results.size() - failed << "/" << results.size() << " criteria passed" << std::endl;
  return failed == 0 ? 0 : 1;
}
