#include "caldm/pipeline.hpp"

#include "caldm/errors.hpp"
#include "caldm/rng.hpp"

#include <fstream>
#include <sstream>

namespace caldm {

namespace fs = std::filesystem;

namespace {

// Latent slices pushed through the refiner at once. Fixed, so results do not
// depend on D and memory stays bounded.
constexpr int64_t kRefineChunk = 16;

std::string shape_str(const Shape3& s) {
  return std::to_string(s.depth) + "," + std::to_string(s.height) + "," + std::to_string(s.width);
}

Shape3 parse_shape(const std::string& text) {
  Shape3 s;
  char c1 = 0, c2 = 0;
  std::istringstream in(text);
  if (!(in >> s.depth >> c1 >> s.height >> c2 >> s.width) || c1 != ',' || c2 != ',') {
    throw ValidationError("manifest: malformed shape '" + text + "'");
  }
  return s;
}

template <class Fn>
auto in_stage(const std::string& stage, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const StageError&) {
    throw;
  } catch (const Error& e) {
    throw StageError(stage, e);
  } catch (const c10::Error& e) {
    throw StageError(stage, ComputeError(e.what_without_backtrace()));
  }
}

template <int N>
Denoiser<N> load_denoiser(const fs::path& path, const std::string& kind, const ShapeConfig& shape,
                          const ArchConfig& arch, double* scale) {
  const auto meta = read_checkpoint_meta(path);
  const auto classes = static_cast<int64_t>(meta.number("classes"));
  const auto spec = N == 3 ? global_denoiser_spec(shape, arch, classes) : slice_denoiser_spec(shape, arch, classes);
  Denoiser<N> model(spec);
  load_checkpoint(path, *model, kind, denoiser_fingerprint(shape, arch, spec));
  if (scale != nullptr) *scale = meta.number("scale");
  return model;
}

}  // namespace

DenoiserSpec global_denoiser_spec(const ShapeConfig& shape, const ArchConfig& arch, int64_t label_classes) {
  DenoiserSpec s;
  s.latent_channels = shape.channels;
  s.label_classes = label_classes;
  s.cond_channels = arch.cond_channels;
  s.label_factors = {shape.depth_factor(), shape.spatial_factor(), shape.image.width / shape.latent.width};
  s.base_channels = arch.unet_base;
  s.time_embed = arch.time_embed;
  return s;
}

DenoiserSpec slice_denoiser_spec(const ShapeConfig& shape, const ArchConfig& arch, int64_t label_classes) {
  DenoiserSpec s;
  s.latent_channels = shape.channels;
  s.guide_channels = shape.channels;
  s.label_classes = label_classes;
  s.cond_channels = arch.cond_channels;
  s.label_factors = {shape.spatial_factor(), shape.image.width / shape.latent.width};
  s.base_channels = arch.unet_base;
  s.time_embed = arch.time_embed;
  return s;
}

std::string denoiser_fingerprint(const ShapeConfig& shape, const ArchConfig& arch, const DenoiserSpec& spec) {
  return fingerprint(model_fingerprint(shape, arch) + "|" + spec.str());
}

// --- Manifest ---------------------------------------------------------------

BundleManifest BundleManifest::read(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DependencyError("cannot open bundle manifest " + path.string());
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ValidationError("manifest: malformed line '" + line + "'");
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  const auto base = path.parent_path();
  const auto need = [&](const std::string& key) -> const std::string& {
    const auto it = kv.find(key);
    if (it == kv.end()) throw ValidationError("manifest " + path.string() + " lacks '" + key + "'");
    return it->second;
  };
  const auto resolve = [&](const std::string& p) { return p.empty() ? fs::path{} : (base / p).lexically_normal(); };
  const auto num = [&](const std::string& key) {
    try {
      return std::stod(need(key));
    } catch (const std::logic_error&) {
      throw ValidationError("manifest: '" + key + "' is not numeric");
    }
  };
  BundleManifest m;
  m.nhae = resolve(need("nhae"));
  m.diff3d = resolve(need("diff3d"));
  m.diffslice = resolve(need("diffslice"));
  if (kv.count("diff3d_cond")) m.diff3d_cond = resolve(kv["diff3d_cond"]);
  if (kv.count("diffslice_cond")) m.diffslice_cond = resolve(kv["diffslice_cond"]);
  m.shape.image = parse_shape(need("image"));
  m.shape.latent = parse_shape(need("latent"));
  m.shape.channels = static_cast<int64_t>(num("channels"));
  m.shape.window = static_cast<int64_t>(num("window"));
  m.arch.decoder_base = static_cast<int64_t>(num("decoder_base"));
  m.arch.decoder_min = static_cast<int64_t>(num("decoder_min"));
  m.arch.encoder3d_base = static_cast<int64_t>(num("encoder3d_base"));
  m.arch.sr_channels = static_cast<int64_t>(num("sr_channels"));
  m.arch.unet_base = static_cast<int64_t>(num("unet_base"));
  m.arch.time_embed = static_cast<int64_t>(num("time_embed"));
  m.arch.cond_channels = static_cast<int64_t>(num("cond_channels"));
  m.schedule.steps = static_cast<int64_t>(num("T"));
  m.schedule.beta_start = num("beta_start");
  m.schedule.beta_end = num("beta_end");
  m.schedule.ddim_steps = static_cast<int64_t>(num("ddim_steps"));
  m.shape.validate();
  m.schedule.validate();
  return m;
}

void BundleManifest::write(const fs::path& path) const {
  const auto base = path.parent_path();
  const auto rel = [&](const fs::path& p) { return p.empty() ? std::string{} : fs::relative(p, base).string(); };
  if (!base.empty()) fs::create_directories(base);
  std::ofstream out(path);
  if (!out) throw IoError("cannot write manifest " + path.string());
  out << "nhae=" << rel(nhae) << "\n"
      << "diff3d=" << rel(diff3d) << "\n"
      << "diffslice=" << rel(diffslice) << "\n";
  if (!diff3d_cond.empty()) out << "diff3d_cond=" << rel(diff3d_cond) << "\n";
  if (!diffslice_cond.empty()) out << "diffslice_cond=" << rel(diffslice_cond) << "\n";
  out << "image=" << shape_str(shape.image) << "\n"
      << "latent=" << shape_str(shape.latent) << "\n"
      << "channels=" << shape.channels << "\n"
      << "window=" << shape.window << "\n"
      << "decoder_base=" << arch.decoder_base << "\n"
      << "decoder_min=" << arch.decoder_min << "\n"
      << "encoder3d_base=" << arch.encoder3d_base << "\n"
      << "sr_channels=" << arch.sr_channels << "\n"
      << "unet_base=" << arch.unet_base << "\n"
      << "time_embed=" << arch.time_embed << "\n"
      << "cond_channels=" << arch.cond_channels << "\n";
  out.precision(17);
  out << "T=" << schedule.steps << "\n"
      << "beta_start=" << schedule.beta_start << "\n"
      << "beta_end=" << schedule.beta_end << "\n"
      << "ddim_steps=" << schedule.ddim_steps << "\n";
  if (!out) throw IoError("cannot write manifest " + path.string());
}

// --- Bundle -----------------------------------------------------------------

CascadeBundle CascadeBundle::load(const fs::path& manifest_path) {
  const auto m = BundleManifest::read(manifest_path);
  CascadeBundle b;
  b.shape = m.shape;
  b.arch = m.arch;
  b.schedule = m.schedule;
  b.nhae = Nhae(m.shape, m.arch);
  load_checkpoint(m.nhae, *b.nhae, kNhaeKind, model_fingerprint(m.shape, m.arch));
  b.diff3d = load_denoiser<3>(m.diff3d, kDiff3dKind, m.shape, m.arch, &b.scale3d);
  b.diffslice = load_denoiser<2>(m.diffslice, kDiffSliceKind, m.shape, m.arch, &b.scale_slice);
  if (!m.diff3d_cond.empty()) b.diff3d_cond = load_denoiser<3>(m.diff3d_cond, kDiff3dCondKind, m.shape, m.arch, nullptr);
  if (!m.diffslice_cond.empty()) {
    b.diffslice_cond = load_denoiser<2>(m.diffslice_cond, kDiffSliceCondKind, m.shape, m.arch, nullptr);
  }
  b.validate();
  b.eval();
  return b;
}

void CascadeBundle::validate() const {
  shape.validate();
  schedule.validate();
  CALDM_CHECK(!nhae.is_empty() && !diff3d.is_empty() && !diffslice.is_empty(), ValidationError,
              "bundle is missing a component");
  CALDM_CHECK(nhae->shape.image == shape.image && nhae->shape.latent == shape.latent &&
                  nhae->shape.channels == shape.channels && nhae->shape.window == shape.window,
              ValidationError, "autoencoder geometry " + nhae->shape.str() + " differs from bundle " + shape.str());
  const auto check = [&](const DenoiserSpec& got, const DenoiserSpec& want, const char* what) {
    CALDM_CHECK(got.str() == want.str(), ValidationError,
                std::string(what) + " layout " + got.str() + " does not match the bundle geometry " + want.str());
  };
  check(diff3d->spec, global_denoiser_spec(shape, arch), "global denoiser");
  check(diffslice->spec, slice_denoiser_spec(shape, arch), "slice denoiser");
  CALDM_CHECK(diff3d_cond.is_empty() == diffslice_cond.is_empty(), ValidationError,
              "conditional synthesis needs both conditional denoisers");
  if (conditional()) {
    const auto classes = diff3d_cond->spec.label_classes;
    check(diff3d_cond->spec, global_denoiser_spec(shape, arch, classes), "conditional global denoiser");
    check(diffslice_cond->spec, slice_denoiser_spec(shape, arch, classes), "conditional slice denoiser");
  }
  CALDM_CHECK(scale3d > 0 && scale_slice > 0, ValidationError, "latent scale factors must be positive");
}

int64_t CascadeBundle::label_classes() const { return conditional() ? diff3d_cond->spec.label_classes : 0; }

NoiseSchedule CascadeBundle::noise_schedule() const {
  return make_schedule(schedule.steps, schedule.beta_start, schedule.beta_end);
}

void CascadeBundle::eval() {
  nhae->eval();
  diff3d->eval();
  diffslice->eval();
  if (!diff3d_cond.is_empty()) diff3d_cond->eval();
  if (!diffslice_cond.is_empty()) diffslice_cond->eval();
}

// --- Synthesis --------------------------------------------------------------

uint64_t global_noise_seed(uint64_t seed) { return derive_seed(seed, 0); }

uint64_t slice_noise_seed(uint64_t seed, int64_t slice) {
  return derive_seed(derive_seed(seed, 1), static_cast<uint64_t>(slice));
}

namespace {

void check_label(const CascadeBundle& bundle, const LabelVolume* label) {
  if (label == nullptr) return;
  CALDM_CHECK(bundle.conditional(), ValidationError, "label-guided synthesis needs conditional denoisers");
  CALDM_CHECK(label->shape() == bundle.shape.image, ValidationError,
              "label shape " + label->shape().str() + " differs from image shape " + bundle.shape.image.str());
  CALDM_CHECK(label->class_count() == bundle.label_classes(), ValidationError,
              "label has " + std::to_string(label->class_count()) + " classes, denoisers expect " +
                  std::to_string(bundle.label_classes()));
}

}  // namespace

torch::Tensor synthesize_global_latent(CascadeBundle& bundle, uint64_t seed, const LabelVolume* label) {
  bundle.validate();
  check_label(bundle, label);
  torch::NoGradGuard no_grad;
  auto& model = label != nullptr ? bundle.diff3d_cond : bundle.diff3d;
  torch::Tensor cond;
  if (label != nullptr) cond = model->condition({}, label->one_hot().unsqueeze(0));
  auto sizes = bundle.shape.latent_sizes();
  sizes.insert(sizes.begin(), 1);
  auto z = ddim_sample(model->eps_model(cond), sizes, bundle.noise_schedule(), bundle.schedule.ddim_steps,
                       global_noise_seed(seed));
  return (z / bundle.scale3d).squeeze(0);
}

torch::Tensor refine_latent_slices(CascadeBundle& bundle, const torch::Tensor& z_sr, uint64_t seed,
                                   const LabelVolume* label) {
  const auto expected = bundle.shape.upsampled_sizes();
  CALDM_CHECK(z_sr.defined() && z_sr.sizes().vec() == expected, ValidationError,
              "refine_latent_slices: expected z_sr of shape " + c10::str(c10::IntArrayRef(expected)));
  check_label(bundle, label);
  torch::NoGradGuard no_grad;
  auto& model = label != nullptr ? bundle.diffslice_cond : bundle.diffslice;
  const auto schedule = bundle.noise_schedule();
  const auto depth = z_sr.size(1);
  const auto slice_sizes = bundle.shape.latent_slice_sizes();
  auto guides = z_sr.permute({1, 0, 2, 3}) * bundle.scale_slice;  // (D,c,H',W')
  std::vector<torch::Tensor> out;
  for (int64_t start = 0; start < depth; start += kRefineChunk) {
    const auto n = std::min(kRefineChunk, depth - start);
    std::vector<torch::Tensor> noise;
    for (int64_t i = start; i < start + n; ++i) {
      auto gen = make_generator(slice_noise_seed(seed, i));
      noise.push_back(torch::randn(slice_sizes, gen, torch::kFloat32));
    }
    torch::Tensor one_hot;
    if (label != nullptr) {
      auto lab = label->labels().narrow(0, start, n);
      one_hot = one_hot_channels(lab, label->class_count());
    }
    auto cond = model->condition(guides.narrow(0, start, n), one_hot);
    out.push_back(ddim_sample_from(model->eps_model(cond), torch::stack(noise), schedule, bundle.schedule.ddim_steps));
  }
  return torch::cat(out) / bundle.scale_slice;
}

SynthesisTrace synthesize_volume(CascadeBundle& bundle, uint64_t seed, const LabelVolume* label, bool refine,
                                 SliceSink& sink) {
  in_stage("bundle", [&] {
    bundle.validate();
    check_label(bundle, label);
  });
  torch::NoGradGuard no_grad;
  SynthesisTrace trace;
  trace.z_syn = in_stage("global-diffusion", [&] { return synthesize_global_latent(bundle, seed, label); });
  trace.z_sr = in_stage("super-resolution", [&] { return bundle.nhae->uniaxial_superres(trace.z_syn); });
  trace.z_decoded = trace.z_sr;
  if (refine) {
    trace.z_decoded = in_stage("slice-refinement", [&] {
      return refine_latent_slices(bundle, trace.z_sr, seed, label).permute({1, 0, 2, 3}).contiguous();
    });
  }
  in_stage("decode", [&] { bundle.nhae->decode_volume(trace.z_decoded, sink); });
  return trace;
}

void reconstruct_volume(Nhae& nhae, const Volume& v, SliceSink& sink) {
  CALDM_CHECK(v.shape() == nhae->shape.image, ValidationError,
              "reconstruct_volume: volume shape " + v.shape().str() + " differs from " + nhae->shape.image.str());
  torch::NoGradGuard no_grad;
  const bool was_training = nhae->is_training();
  nhae->eval();
  try {
    auto thumb = resample_volume(v, nhae->shape.thumbnail());
    auto z = nhae->encode_thumbnail(thumb).mean;
    nhae->decode_volume(nhae->uniaxial_superres(z), sink);
  } catch (...) {
    nhae->train(was_training);
    throw;
  }
  nhae->train(was_training);
}

void reconstruct_volume(CascadeBundle& bundle, const Volume& v, SliceSink& sink) {
  reconstruct_volume(bundle.nhae, v, sink);
}

// --- Dry run ----------------------------------------------------------------

ShapeTrace dry_run_shapes(const ShapeConfig& shape, const ArchConfig& arch) {
  shape.validate();
  torch::NoGradGuard no_grad;
  // Untrained weights on CPU: the C++ runtime has no meta kernels for the
  // convolution and normalization ops, so one pass per component is run for
  // real, at batch size one and a single slice where the pipeline loops.
  const auto opts = torch::TensorOptions().dtype(torch::kFloat32);
  Nhae nhae(shape, arch);
  Denoiser3d diff3d(global_denoiser_spec(shape, arch));
  Denoiser2d diffslice(slice_denoiser_spec(shape, arch));
  nhae->eval();
  diff3d->eval();
  diffslice->eval();

  ShapeTrace trace;
  const auto record = [&](const std::string& name, const torch::Tensor& t) { trace.shapes[name] = t.sizes().vec(); };
  auto sizes = shape.latent_sizes();
  sizes.insert(sizes.begin(), 1);
  auto noise = torch::zeros(sizes, opts);
  auto t = torch::full({1}, 1.0f, opts);
  auto z_syn = (noise - diff3d->forward(noise, t)).squeeze(0);
  record("global_latent", z_syn);

  const auto th = shape.thumbnail();
  auto thumb = torch::zeros({1, 1, th.depth, th.height, th.width}, opts);
  record("thumbnail", thumb.squeeze(0).squeeze(0));
  record("thumbnail_latent", nhae->thumb_encoder(thumb).mean.squeeze(0));

  auto z_sr = nhae->uniaxial_superres(z_syn);
  record("upsampled_latent", z_sr);
  auto guide = z_sr.select(1, 0).unsqueeze(0);
  auto cond = diffslice->condition(guide, {});
  record("refined_slice", diffslice->forward(torch::zeros_like(guide), t, cond).squeeze(0));
  auto window = latent_window(z_sr, 0, shape.window);
  record("latent_window", window);
  record("image_slice", nhae->decode_multislice(window));
  record("image_slice_2d", nhae->decode_slice_2d(z_sr.select(1, 0)));
  record("hr_slice_latent", nhae->encode_slice_hr(torch::zeros({shape.image.height, shape.image.width}, opts)));
  // decode_volume streams one image slice per latent slice.
  trace.shapes["volume"] = {z_sr.size(1), trace.shapes["image_slice"][0], trace.shapes["image_slice"][1]};
  return trace;
}

}  // namespace caldm
