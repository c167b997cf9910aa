#include "caldm/training.hpp"

#include "caldm/errors.hpp"
#include "caldm/rng.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>

namespace caldm {

namespace {

using Clock = std::chrono::steady_clock;

void check_loss(const torch::Tensor& loss, const std::string& stage, int64_t step) {
  const double v = loss.item<double>();
  if (!std::isfinite(v)) {
    throw ComputeError("stage " + stage + ": loss became non-finite at step " + std::to_string(step));
  }
}


std::vector<torch::Tensor> trainable(torch::nn::Module& m) {
  std::vector<torch::Tensor> out;
  for (auto& p : m.parameters()) {
    if (p.requires_grad()) out.push_back(p);
  }
  return out;
}

// Exponential moving average of parameters, copied back at the end.
class Ema {
 public:
  Ema(torch::nn::Module& m, double decay) : params_(m.parameters()), decay_(decay) {
    torch::NoGradGuard g;
    for (auto& p : params_) shadow_.push_back(p.detach().clone());
  }
  void update() {
    torch::NoGradGuard g;
    for (size_t i = 0; i < params_.size(); ++i) shadow_[i].mul_(decay_).add_(params_[i].detach(), 1.0 - decay_);
  }
  void apply() {
    torch::NoGradGuard g;
    for (size_t i = 0; i < params_.size(); ++i) params_[i].copy_(shadow_[i]);
  }

 private:
  std::vector<torch::Tensor> params_, shadow_;
  double decay_;
};

}  // namespace

double TrainLog::head_mean(size_t n) const {
  n = std::min(n, loss.size());
  if (n == 0) return NAN;
  return std::accumulate(loss.begin(), loss.begin() + static_cast<long>(n), 0.0) / static_cast<double>(n);
}

double TrainLog::tail_mean(size_t n) const {
  n = std::min(n, loss.size());
  if (n == 0) return NAN;
  return std::accumulate(loss.end() - static_cast<long>(n), loss.end(), 0.0) / static_cast<double>(n);
}

void TrainLog::write_csv(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write loss curve " + path.string());
  out << "step,loss\n";
  out.precision(9);
  for (size_t i = 0; i < loss.size(); ++i) out << i << "," << loss[i] << "\n";
}

const char* stage_name(NhaeStage stage) {
  switch (stage) {
    case NhaeStage::kSlice2d: return "nhae-2d";
    case NhaeStage::kVolume3d: return "nhae-3d";
    case NhaeStage::kSliceHr: return "nhae-hr";
  }
  return "?";
}

torch::Tensor make_thumbnails(const Dataset& data, const ShapeConfig& shape) {
  std::vector<torch::Tensor> thumbs;
  for (const auto& v : data.volumes) {
    CALDM_CHECK(v.shape() == shape.image, ValidationError,
                "dataset volume " + v.shape().str() + " does not match configured image " + shape.image.str());
    thumbs.push_back(resample_volume(v, shape.thumbnail()).voxels().unsqueeze(0));
  }
  return torch::stack(thumbs);
}

Dataset flip_augment(const Dataset& data) {
  Dataset out;
  const std::vector<std::vector<int64_t>> flips{{}, {2}, {0}, {0, 2}};
  for (const auto& dims : flips) {
    for (size_t i = 0; i < data.size(); ++i) {
      const auto flip = [&](const torch::Tensor& t) { return dims.empty() ? t : t.flip(dims); };
      out.volumes.emplace_back(flip(data.volumes[i].voxels()));
      if (i < data.labels.size() && !data.labels[i].empty()) {
        out.labels.emplace_back(flip(data.labels[i].labels()), data.labels[i].class_count());
      }
    }
  }
  return out;
}

TrainLog train_nhae(Nhae& model, NhaeStage stage, const Dataset& data, const TrainConfig& cfg, int64_t steps,
                    const NhaeHooks& hooks) {
  cfg.validate();
  CALDM_CHECK(data.size() >= 1, ValidationError, "training needs at least one volume");
  const auto& shape = model->shape;
  const auto t0 = Clock::now();
  TrainLog log{stage_name(stage), {}, 0};
  torch::manual_seed(cfg.seed);
  auto gen = make_generator(cfg.seed ^ 0x5eedull);
  const auto volumes = data.stacked_volumes();  // (N,D,H,W)
  const auto n = static_cast<int64_t>(data.size());
  const auto depth = shape.image.depth;
  const auto batch = stage == NhaeStage::kVolume3d ? cfg.batch_size_volume : cfg.batch_size;

  model->train();
  std::vector<torch::Tensor> params;
  torch::Tensor thumbs;
  switch (stage) {
    case NhaeStage::kSlice2d:
      model->set_decoder_frozen(false);
      params = trainable(*model->train_encoder);
      for (auto& p : model->decoder->parameters()) params.push_back(p);
      break;
    case NhaeStage::kVolume3d:
      model->set_decoder_frozen(true);
      for (auto* m : std::initializer_list<torch::nn::Module*>{model->thumb_encoder.get(), model->sr.get(),
                                                               model->adaptors.get()}) {
        for (auto& p : trainable(*m)) params.push_back(p);
      }
      thumbs = make_thumbnails(data, shape);
      break;
    case NhaeStage::kSliceHr: {
      model->set_decoder_frozen(true);
      torch::NoGradGuard g;
      auto src = model->train_encoder->named_parameters();
      for (auto& item : model->hr_encoder->named_parameters()) item.value().copy_(src[item.key()]);
      params = trainable(*model->hr_encoder);
      break;
    }
  }
  torch::optim::Adam opt(params, torch::optim::AdamOptions(cfg.lr));

  for (int64_t step = 0; step < steps; ++step) {
    auto vol_idx = torch::randint(0, n, {batch}, gen, torch::kInt64);
    auto slice_idx = torch::randint(0, depth, {batch}, gen, torch::kInt64);
    // Target image slices (B,1,H,W).
    auto target = volumes.index_select(0, vol_idx);
    target = torch::stack([&] {
      std::vector<torch::Tensor> s;
      for (int64_t b = 0; b < batch; ++b) s.push_back(target[b][slice_idx[b].item<int64_t>()]);
      return s;
    }()).unsqueeze(1);

    torch::Tensor recon, kl;
    if (stage == NhaeStage::kVolume3d) {
      auto post = model->thumb_encoder(thumbs.index_select(0, vol_idx));
      auto z_sr = model->sr(post.sample());  // (B,c,D,H',W')
      std::vector<torch::Tensor> windows;
      std::vector<int64_t> chosen;
      for (int64_t b = 0; b < batch; ++b) {
        const auto i = slice_idx[b].item<int64_t>();
        chosen.push_back(i);
        windows.push_back(latent_window(z_sr[b], i, shape.window));
      }
      if (hooks.on_slices) hooks.on_slices(step, chosen);
      recon = model->decoder->forward_window(torch::stack(windows), model->adaptors);
      kl = post.kl();
    } else {
      auto& encoder = stage == NhaeStage::kSlice2d ? model->train_encoder : model->hr_encoder;
      auto post = encoder(target);
      recon = model->decoder(post.sample());
      kl = post.kl();
    }
    auto loss = torch::l1_loss(recon, target) + cfg.kl_weight * kl;
    check_loss(loss, log.stage, step);
    opt.zero_grad();
    loss.backward();
    opt.step();
    log.loss.push_back(loss.item<double>());
  }
  model->eval();
  model->set_decoder_frozen(false);
  log.seconds = std::chrono::duration<double>(Clock::now() - t0).count();
  return log;
}

GlobalLatents encode_global_latents(Nhae& model, const Dataset& data) {
  torch::NoGradGuard g;
  model->eval();
  const auto thumbs = make_thumbnails(data, model->shape);
  std::vector<torch::Tensor> zs;
  for (int64_t i = 0; i < thumbs.size(0); ++i) zs.push_back(model->thumb_encoder(thumbs.narrow(0, i, 1)).mean);
  GlobalLatents out{torch::cat(zs), {}};
  if (!data.labels.empty()) out.labels = data.stacked_labels();
  return out;
}

SliceLatents encode_slice_latents(Nhae& model, const Dataset& data) {
  torch::NoGradGuard g;
  model->eval();
  const auto global = encode_global_latents(model, data);
  std::vector<torch::Tensor> guides, targets;
  for (size_t i = 0; i < data.size(); ++i) {
    auto z_sr = model->sr(global.z.narrow(0, static_cast<int64_t>(i), 1)).squeeze(0);  // (c,D,H',W')
    guides.push_back(z_sr.permute({1, 0, 2, 3}));
    targets.push_back(model->hr_encoder(data.volumes[i].voxels().unsqueeze(1)).mean);
  }
  SliceLatents out{torch::cat(guides).contiguous(), torch::cat(targets).contiguous(), {}};
  if (global.labels.defined()) out.labels = global.labels.flatten(0, 1).contiguous();
  return out;
}

double latent_scale(const torch::Tensor& z) {
  const double sd = z.std().item<double>();
  CALDM_CHECK(std::isfinite(sd) && sd > 0, ComputeError, "latent corpus has zero or non-finite spread");
  return 1.0 / sd;
}

DenoiserCorpus build_denoiser_corpus(Nhae& model, const Dataset& data, double scale3d, double scale_slice) {
  const auto augmented = flip_augment(data);
  DenoiserCorpus c;
  c.global = encode_global_latents(model, augmented);
  c.slices = encode_slice_latents(model, augmented);
  c.scale3d = scale3d > 0 ? scale3d : latent_scale(c.global.z);
  c.scale_slice = scale_slice > 0 ? scale_slice : latent_scale(c.slices.target);
  c.global.z = c.global.z * c.scale3d;
  c.slices.target = c.slices.target * c.scale_slice;
  c.slices.guide = c.slices.guide * c.scale_slice;
  return c;
}

namespace {

template <int N, class BatchFn>
TrainLog train_denoiser(Denoiser<N>& model, const NoiseSchedule& schedule, const DenoiserTraining& opts,
                        BatchFn&& next_batch) {
  const auto t0 = Clock::now();
  TrainLog log{opts.stage, {}, 0};
  torch::manual_seed(opts.seed);
  auto gen = make_generator(opts.seed ^ 0xd1ffull);
  model->train();
  torch::optim::Adam opt(model->parameters(), torch::optim::AdamOptions(opts.lr));
  Ema ema(*model, opts.ema_decay);
  for (int64_t step = 0; step < opts.steps; ++step) {
    auto [x0, guide, labels] = next_batch(gen);
    auto cond = model->condition(guide, labels);
    torch::Tensor loss;
    try {
      loss = diffusion_loss(model->eps_model(cond), x0, schedule, gen);
    } catch (const ComputeError& e) {
      throw ComputeError("stage " + opts.stage + " step " + std::to_string(step) + ": " + e.what());
    }
    opt.zero_grad();
    loss.backward();
    opt.step();
    ema.update();
    log.loss.push_back(loss.item<double>());
  }
  ema.apply();
  model->eval();
  log.seconds = std::chrono::duration<double>(Clock::now() - t0).count();
  return log;
}

}  // namespace

TrainLog train_global_denoiser(Denoiser3d& model, const GlobalLatents& data, const NoiseSchedule& schedule,
                               const DenoiserTraining& opts) {
  const auto n = data.z.size(0);
  const auto classes = model->spec.label_classes;
  CALDM_CHECK(classes == 0 || data.labels.defined(), ValidationError, "conditional training needs labels");
  return train_denoiser<3>(model, schedule, opts, [&](torch::Generator& gen) {
    auto idx = torch::randint(0, n, {opts.batch_size}, gen, torch::kInt64);
    torch::Tensor labels;
    if (classes > 0) labels = one_hot_channels(data.labels.index_select(0, idx), classes);
    return std::tuple{data.z.index_select(0, idx), torch::Tensor{}, labels};
  });
}

TrainLog train_slice_denoiser(Denoiser2d& model, const SliceLatents& data, const NoiseSchedule& schedule,
                              const DenoiserTraining& opts) {
  const auto n = data.target.size(0);
  const auto classes = model->spec.label_classes;
  CALDM_CHECK(classes == 0 || data.labels.defined(), ValidationError, "conditional training needs labels");
  return train_denoiser<2>(model, schedule, opts, [&](torch::Generator& gen) {
    auto idx = torch::randint(0, n, {opts.batch_size}, gen, torch::kInt64);
    torch::Tensor labels;
    if (classes > 0) labels = one_hot_channels(data.labels.index_select(0, idx), classes);
    return std::tuple{data.target.index_select(0, idx), data.guide.index_select(0, idx), labels};
  });
}

}  // namespace caldm
