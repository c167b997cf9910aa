#include "caldm/cli.hpp"

#include "caldm/checkpoint.hpp"
#include "caldm/dataset.hpp"
#include "caldm/errors.hpp"
#include "caldm/memory.hpp"
#include "caldm/metrics.hpp"
#include "caldm/pipeline.hpp"
#include "caldm/rng.hpp"
#include "caldm/volume_io.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <set>
#include <sstream>

namespace caldm {

namespace fs = std::filesystem;

namespace {

const std::vector<std::string> kCommands = {"gen-phantoms", "train", "sample", "eval", "profile"};
const std::vector<std::string> kStages = {"nhae-2d", "nhae-3d", "nhae-hr", "diff3d", "diffslice",
                                          "conditional-finetune"};

}  // namespace

void RunConfig::validate() const {
  shape.validate();
  schedule.validate();
  train.validate();
  CALDM_CHECK(shape.image.depth % shape.latent.depth == 0 && shape.image.height % shape.latent.height == 0 &&
                  shape.image.width % shape.latent.width == 0,
              ValidationError, "image size must be a multiple of the latent size along every axis");
  CALDM_CHECK(shape.window % 2 == 1, ValidationError, "window k must be odd");
  CALDM_CHECK(schedule.ddim_steps <= schedule.steps, ValidationError, "ddim_steps must not exceed T");
  CALDM_CHECK(count >= 1, ValidationError, "count must be >= 1");
  CALDM_CHECK(diffusion.lr > 0 && diffusion.batch_size >= 1 && diffusion.ema_decay >= 0 && diffusion.ema_decay < 1,
              ValidationError, "invalid diffusion training settings");
  CALDM_CHECK(threads >= 0, ValidationError, "threads must be >= 0");
  if (command == "train") {
    CALDM_CHECK(std::find(kStages.begin(), kStages.end(), stage) != kStages.end(), ValidationError,
                "unknown --stage '" + stage + "'");
  }
  if (command == "profile") {
    CALDM_CHECK(task == "decode" || task == "full-synthesis" || task == "all", ValidationError,
                "--task must be decode, full-synthesis or all");
    ladder_depths();
  }
  if (command == "gen-phantoms") {
    PhantomSpec p = phantom;
    p.size = shape.image;
    p.validate();
  }
}

std::vector<int64_t> RunConfig::ladder_depths() const {
  std::vector<int64_t> out;
  std::stringstream ss(ladder);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      size_t used = 0;
      const auto v = std::stoll(item, &used);
      CALDM_CHECK(used == item.size() && v > 0, ValidationError, "bad ladder entry '" + item + "'");
      out.push_back(v);
    } catch (const std::logic_error&) {
      throw ValidationError("bad ladder entry '" + item + "'");
    }
  }
  CALDM_CHECK(!out.empty(), ValidationError, "empty --ladder");
  return out;
}

fs::path stage_checkpoint(const fs::path& dir, const std::string& stage) { return dir / (stage + ".ckpt"); }

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

// --- training ---------------------------------------------------------------

void write_stage_outputs(const RunConfig& cfg, const std::string& stage, const TrainLog& log,
                         const std::string& model_fp, std::ostream& out) {
  log.write_csv(cfg.checkpoints / (stage + ".loss.csv"));
  std::ofstream fp(cfg.checkpoints / (stage + ".fingerprint"));
  fp << "fingerprint=" << model_fp << "\n"
     << "shape=" << cfg.shape.str() << "\n"
     << "arch=" << cfg.arch.str() << "\n"
     << "schedule=" << cfg.schedule.str() << "\n"
     << "seed=" << cfg.seed << "\n";
  const size_t n = std::min<size_t>(50, log.loss.size());
  out << "stage " << stage << ": " << log.loss.size() << " steps in " << std::fixed << std::setprecision(1)
      << log.seconds << " s";
  if (n > 0) out << ", loss " << std::setprecision(4) << log.head_mean(n) << " -> " << log.tail_mean(n);
  out << "\n";
}

// Loads the autoencoder written by `stage`, insisting that it exists, matches
// the current configuration and really comes from that stage.
Nhae require_nhae(const RunConfig& cfg, const std::string& stage) {
  const auto path = stage_checkpoint(cfg.checkpoints, stage);
  if (!fs::exists(path)) {
    throw DependencyError("missing prerequisite checkpoint " + path.string() + " (run --stage " + stage + " first)");
  }
  Nhae model(cfg.shape, cfg.arch);
  const auto meta = load_checkpoint(path, *model, kNhaeKind, model_fingerprint(cfg.shape, cfg.arch));
  if (meta.stage != stage) {
    throw DependencyError("checkpoint " + path.string() + " was written by stage '" + meta.stage + "', expected '" +
                          stage + "'");
  }
  return model;
}

template <int N>
Denoiser<N> require_denoiser(const RunConfig& cfg, const std::string& stage, const std::string& kind,
                             const DenoiserSpec& spec, double& scale) {
  const auto path = stage_checkpoint(cfg.checkpoints, stage);
  if (!fs::exists(path)) {
    throw DependencyError("missing prerequisite checkpoint " + path.string() + " (run --stage " + stage + " first)");
  }
  Denoiser<N> model(spec);
  const auto meta = load_checkpoint(path, *model, kind, denoiser_fingerprint(cfg.shape, cfg.arch, spec));
  scale = meta.number("scale");
  return model;
}

CheckpointMeta denoiser_meta(const RunConfig& cfg, const std::string& kind, const std::string& stage,
                             const DenoiserSpec& spec, double scale) {
  CheckpointMeta meta{kind, stage, denoiser_fingerprint(cfg.shape, cfg.arch, spec), {}};
  std::ostringstream s;
  s << std::setprecision(17) << scale;
  meta.extra["scale"] = s.str();
  meta.extra["classes"] = std::to_string(spec.label_classes);
  meta.extra["nhae_fingerprint"] = model_fingerprint(cfg.shape, cfg.arch);
  return meta;
}

Dataset load_training_data(const RunConfig& cfg) {
  if (!fs::exists(cfg.dataset)) throw DependencyError("dataset directory " + cfg.dataset.string() + " not found");
  auto data = load_dataset(cfg.dataset);
  CALDM_CHECK(data.size() > 0, ValidationError, "dataset " + cfg.dataset.string() + " is empty");
  for (const auto& v : data.volumes) {
    CALDM_CHECK(v.shape() == cfg.shape.image, ValidationError,
                "dataset volume shape " + v.shape().str() + " differs from configured " + cfg.shape.image.str());
  }
  return data;
}

DenoiserTraining diffusion_opts(const RunConfig& cfg, const std::string& stage, int64_t steps) {
  auto opts = cfg.diffusion;
  opts.steps = steps;
  opts.seed = cfg.seed;
  opts.stage = stage;
  return opts;
}

void refresh_manifest(const RunConfig& cfg, std::ostream& out) {
  const auto ck = [&](const char* s) { return stage_checkpoint(cfg.checkpoints, s); };
  if (!fs::exists(ck("nhae-hr")) || !fs::exists(ck("diff3d")) || !fs::exists(ck("diffslice"))) return;
  BundleManifest m;
  m.nhae = ck("nhae-hr");
  m.diff3d = ck("diff3d");
  m.diffslice = ck("diffslice");
  if (fs::exists(ck("diff3d-cond")) && fs::exists(ck("diffslice-cond"))) {
    m.diff3d_cond = ck("diff3d-cond");
    m.diffslice_cond = ck("diffslice-cond");
  }
  m.shape = cfg.shape;
  m.arch = cfg.arch;
  m.schedule = cfg.schedule;
  const auto path = cfg.checkpoints / kBundleManifestName;
  m.write(path);
  out << "bundle manifest " << path.string() << "\n";
}

void cmd_train(const RunConfig& cfg, std::ostream& out) {
  const auto& stage = cfg.stage;
  const auto nhae_fp = model_fingerprint(cfg.shape, cfg.arch);
  auto train = cfg.train;
  train.seed = cfg.seed;
  const auto schedule = make_schedule(cfg.schedule.steps, cfg.schedule.beta_start, cfg.schedule.beta_end);

  // Prerequisites are checked before the dataset is touched.
  Nhae nhae{nullptr};
  if (stage == "nhae-3d") nhae = require_nhae(cfg, "nhae-2d");
  if (stage == "nhae-hr") nhae = require_nhae(cfg, "nhae-3d");
  if (stage == "diff3d" || stage == "diffslice" || stage == "conditional-finetune") nhae = require_nhae(cfg, "nhae-hr");
  Denoiser3d base3d{nullptr};
  Denoiser2d base2d{nullptr};
  double scale3d = 1, scale_slice = 1;
  if (stage == "conditional-finetune") {
    base3d = require_denoiser<3>(cfg, "diff3d", kDiff3dKind, global_denoiser_spec(cfg.shape, cfg.arch), scale3d);
    base2d = require_denoiser<2>(cfg, "diffslice", kDiffSliceKind, slice_denoiser_spec(cfg.shape, cfg.arch),
                                 scale_slice);
  }

  fs::create_directories(cfg.checkpoints);
  const auto data = load_training_data(cfg);

  if (stage == "nhae-2d" || stage == "nhae-3d" || stage == "nhae-hr") {
    NhaeStage which = NhaeStage::kSlice2d;
    int64_t steps = train.steps_nhae2d;
    if (stage == "nhae-2d") {
      nhae = Nhae(cfg.shape, cfg.arch);
    } else if (stage == "nhae-3d") {
      which = NhaeStage::kVolume3d;
      steps = train.steps_nhae3d;
    } else {
      which = NhaeStage::kSliceHr;
      steps = train.steps_nhaehr;
    }
    const auto log = train_nhae(nhae, which, data, train, steps);
    save_checkpoint(stage_checkpoint(cfg.checkpoints, stage), *nhae, {kNhaeKind, stage, nhae_fp, {}});
    write_stage_outputs(cfg, stage, log, nhae_fp, out);
  } else if (stage == "diff3d") {
    const auto corpus = build_denoiser_corpus(nhae, data);
    const auto spec = global_denoiser_spec(cfg.shape, cfg.arch);
    Denoiser3d model(spec);
    const auto log =
        train_global_denoiser(model, corpus.global, schedule, diffusion_opts(cfg, stage, train.steps_diff3d));
    save_checkpoint(stage_checkpoint(cfg.checkpoints, stage), *model,
                    denoiser_meta(cfg, kDiff3dKind, stage, spec, corpus.scale3d));
    write_stage_outputs(cfg, stage, log, denoiser_fingerprint(cfg.shape, cfg.arch, spec), out);
  } else if (stage == "diffslice") {
    const auto corpus = build_denoiser_corpus(nhae, data);
    const auto spec = slice_denoiser_spec(cfg.shape, cfg.arch);
    Denoiser2d model(spec);
    const auto log =
        train_slice_denoiser(model, corpus.slices, schedule, diffusion_opts(cfg, stage, train.steps_diffslice));
    save_checkpoint(stage_checkpoint(cfg.checkpoints, stage), *model,
                    denoiser_meta(cfg, kDiffSliceKind, stage, spec, corpus.scale_slice));
    write_stage_outputs(cfg, stage, log, denoiser_fingerprint(cfg.shape, cfg.arch, spec), out);
  } else {
    CALDM_CHECK(!data.labels.empty() && std::none_of(data.labels.begin(), data.labels.end(),
                                                     [](const LabelVolume& l) { return l.empty(); }),
                ValidationError, "conditional fine-tuning needs a label volume for every training volume");
    const auto classes = data.class_count();
    const auto corpus = build_denoiser_corpus(nhae, data, scale3d, scale_slice);

    const auto spec3 = global_denoiser_spec(cfg.shape, cfg.arch, classes);
    Denoiser3d cond3(spec3);
    cond3->init_from(*base3d);
    const auto log3 =
        train_global_denoiser(cond3, corpus.global, schedule, diffusion_opts(cfg, "diff3d-cond", train.steps_cond));
    save_checkpoint(stage_checkpoint(cfg.checkpoints, "diff3d-cond"), *cond3,
                    denoiser_meta(cfg, kDiff3dCondKind, stage, spec3, scale3d));
    write_stage_outputs(cfg, "diff3d-cond", log3, denoiser_fingerprint(cfg.shape, cfg.arch, spec3), out);

    const auto spec2 = slice_denoiser_spec(cfg.shape, cfg.arch, classes);
    Denoiser2d cond2(spec2);
    cond2->init_from(*base2d);
    const auto log2 = train_slice_denoiser(cond2, corpus.slices, schedule,
                                           diffusion_opts(cfg, "diffslice-cond", train.steps_cond));
    save_checkpoint(stage_checkpoint(cfg.checkpoints, "diffslice-cond"), *cond2,
                    denoiser_meta(cfg, kDiffSliceCondKind, stage, spec2, scale_slice));
    write_stage_outputs(cfg, "diffslice-cond", log2, denoiser_fingerprint(cfg.shape, cfg.arch, spec2), out);
  }
  refresh_manifest(cfg, out);
}

// --- other commands ---------------------------------------------------------

void cmd_gen_phantoms(const RunConfig& cfg, std::ostream& out) {
  const auto dir = cfg.out.empty() ? cfg.dataset : cfg.out;
  PhantomSpec base = cfg.phantom;
  base.size = cfg.shape.image;
  const auto data = make_phantom_dataset(base, cfg.count, cfg.seed);
  write_dataset(data, dir);
  out << "wrote " << data.size() << " phantoms (" << base.size.str() << ") to " << dir.string() << "\n";
}

fs::path require_manifest(const RunConfig& cfg) {
  const auto path = cfg.manifest.empty() ? cfg.checkpoints / kBundleManifestName : cfg.manifest;
  if (!fs::exists(path)) throw DependencyError("bundle manifest " + path.string() + " not found");
  return path;
}

void cmd_sample(const RunConfig& cfg, std::ostream& out) {
  CALDM_CHECK(!cfg.out.empty(), ValidationError, "sample needs --out");
  auto bundle = CascadeBundle::load(require_manifest(cfg));
  LabelVolume label;
  if (!cfg.label.empty()) label = load_labels(cfg.label);
  fs::create_directories(cfg.out);
  std::ofstream summary(cfg.out / "summary.csv");
  summary << "index,seed,refine,label,seconds,peak_bytes,file\n";
  for (int64_t i = 0; i < cfg.count; ++i) {
    const uint64_t seed = derive_seed(cfg.seed, static_cast<uint64_t>(i));
    std::ostringstream name;
    name << "sample_" << std::setw(4) << std::setfill('0') << i << ".raw";
    RawFileSink sink(cfg.out / name.str());
    const auto t0 = Clock::now();
    int64_t peak = 0;
    {
      ScopedAllocationTracker tracker;
      synthesize_volume(bundle, seed, label.empty() ? nullptr : &label, !cfg.no_refine, sink);
      peak = tracker.peak_bytes();
    }
    const double secs = seconds_since(t0);
    summary << i << "," << seed << "," << (cfg.no_refine ? 0 : 1) << "," << (label.empty() ? 0 : 1) << "," << secs
            << "," << peak << "," << name.str() << "\n";
    out << name.str() << " seed " << seed << " " << std::fixed << std::setprecision(2) << secs << " s, peak "
        << peak << " bytes\n";
  }
}

std::vector<std::pair<fs::path, Volume>> load_volume_dir(const fs::path& dir, std::ostream& err) {
  if (!fs::is_directory(dir)) throw ValidationError("volume directory " + dir.string() + " not found");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto name = e.path().filename().string();
    if (e.path().extension() == ".raw" && name.rfind("label_", 0) != 0) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<std::pair<fs::path, Volume>> out;
  for (const auto& f : files) {
    try {
      out.emplace_back(f, load_volume(f));
    } catch (const Error& e) {
      err << "warning: skipping " << f.string() << ": " << e.what() << "\n";
    }
  }
  return out;
}

void cmd_eval(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  CALDM_CHECK(!cfg.real.empty() && !cfg.syn.empty(), ValidationError, "eval needs --real and --syn directories");
  auto real = load_volume_dir(cfg.real, err);
  auto syn = load_volume_dir(cfg.syn, err);
  CALDM_CHECK(!real.empty(), ValidationError, "no volumes in " + cfg.real.string());
  CALDM_CHECK(!syn.empty(), ValidationError, "no volumes in " + cfg.syn.string());
  const auto shape = real.front().second.shape();
  const auto keep = [&](std::vector<std::pair<fs::path, Volume>>& set) {
    std::vector<Volume> kept;
    for (auto& [path, v] : set) {
      if (v.shape() == shape) {
        kept.push_back(v);
      } else {
        err << "warning: skipping " << path.string() << ": shape " << v.shape().str() << " differs from "
            << shape.str() << "\n";
      }
    }
    return kept;
  };
  const auto real_v = keep(real);
  const auto syn_v = keep(syn);
  CALDM_CHECK(!syn_v.empty(), ValidationError, "no synthetic volume matches the real shape " + shape.str());

  RandomConvFeatures fx;
  const auto intra = slice_fid(real_v, syn_v, SliceAxis::kIntra, fx);
  const auto inter = slice_fid(real_v, syn_v, SliceAxis::kInter, fx);
  const auto tv_stats = [](const std::vector<Volume>& set) {
    double sum = 0, sq = 0;
    for (const auto& v : set) {
      const double t = total_variation(v);
      sum += t;
      sq += t * t;
    }
    const double n = static_cast<double>(set.size());
    const double mean = sum / n;
    return std::pair{mean, std::sqrt(std::max(0.0, sq / n - mean * mean))};
  };
  const auto [tv_syn, tv_syn_sd] = tv_stats(syn_v);
  const auto [tv_real, tv_real_sd] = tv_stats(real_v);

  const auto dir = cfg.out.empty() ? cfg.syn : cfg.out;
  fs::create_directories(dir);
  std::ofstream csv(dir / "eval.csv");
  csv << std::setprecision(10) << "metric,value,std,real_count,syn_count\n"
      << "intra_fid," << intra.value << ",," << intra.real_count << "," << intra.syn_count << "\n"
      << "inter_fid," << inter.value << ",," << inter.real_count << "," << inter.syn_count << "\n"
      << "tv_syn," << tv_syn << "," << tv_syn_sd << ",," << syn_v.size() << "\n"
      << "tv_real," << tv_real << "," << tv_real_sd << "," << real_v.size() << ",\n";
  std::ostringstream report;
  report << std::fixed << std::setprecision(4) << "volumes: real " << real_v.size() << ", synthetic " << syn_v.size()
         << "\n"
         << "intra_fid: " << intra.value << " (proxy features" << (intra.clipped ? ", clipped eigenvalues" : "")
         << ")\n"
         << "inter_fid: " << inter.value << " (proxy features" << (inter.clipped ? ", clipped eigenvalues" : "")
         << ")\n"
         << "covariance_jitter: " << std::scientific << std::setprecision(1) << intra.jitter << std::fixed
         << std::setprecision(4) << "\n"
         << "tv_syn: " << tv_syn << " +- " << tv_syn_sd << "\n"
         << "tv_real: " << tv_real << " +- " << tv_real_sd << "\n";
  std::ofstream(dir / "eval.txt") << report.str();
  out << report.str();
}

void cmd_profile(const RunConfig& cfg, std::ostream& out) {
  const auto manifest = BundleManifest::read(require_manifest(cfg));
  ProfileOptions opts;
  opts.base = manifest.shape;
  opts.arch = manifest.arch;
  opts.schedule = manifest.schedule;
  std::vector<ProfileTask> tasks;
  if (cfg.task != "full-synthesis") tasks.push_back(ProfileTask::kDecode);
  if (cfg.task != "decode") tasks.push_back(ProfileTask::kFullSynthesis);
  const auto dir = cfg.out.empty() ? fs::path(".") : cfg.out;
  fs::create_directories(dir);
  const auto path = dir / "profile.csv";
  std::ofstream csv(path);
  csv << MemoryReport::csv_header() << "\n";
  out << MemoryReport::csv_header() << "\n";
  for (auto task : tasks) {
    for (auto strategy : {DecodeStrategy::kHolistic3d, DecodeStrategy::kSliceWise}) {
      for (auto depth : cfg.ladder_depths()) {
        const Shape3 res{depth, manifest.shape.image.height, manifest.shape.image.width};
        const auto r = profile_peak_memory(task, strategy, res, opts);
        csv << r.csv_row() << "\n";
        out << r.csv_row() << "\n";
      }
    }
  }
}

void add_options(CLI::App& app, RunConfig& c) {
  app.set_config("--config", "", "key=value configuration file");
  app.allow_config_extras(false);
  app.add_option("command", c.command, "gen-phantoms | train | sample | eval | profile")
      ->required()
      ->check(CLI::IsMember(kCommands));
  // Run
  app.add_option("--seed", c.seed, "master seed");
  app.add_option("--stage", c.stage, "training stage");
  app.add_option("--count", c.count, "phantoms to generate / volumes to sample");
  app.add_flag("--no-refine", c.no_refine, "skip the slice refiner (global diffusion + decoder only)");
  app.add_option("--label", c.label, "label volume for conditional sampling");
  app.add_option("--out", c.out, "output directory or file");
  app.add_option("--ladder", c.ladder, "comma-separated depths to profile");
  app.add_option("--task", c.task, "profile task: decode | full-synthesis | all");
  app.add_option("--dataset", c.dataset, "phantom dataset directory");
  app.add_option("--checkpoints", c.checkpoints, "checkpoint directory");
  app.add_option("--manifest", c.manifest, "bundle manifest (default: <checkpoints>/bundle.manifest)");
  app.add_option("--real", c.real, "directory of reference volumes");
  app.add_option("--syn", c.syn, "directory of synthetic volumes");
  app.add_option("--threads", c.threads, "intra-op threads (0: library default)");
  // Shape
  app.add_option("--depth", c.shape.image.depth);
  app.add_option("--height", c.shape.image.height);
  app.add_option("--width", c.shape.image.width);
  app.add_option("--latent_depth", c.shape.latent.depth);
  app.add_option("--latent_height", c.shape.latent.height);
  app.add_option("--latent_width", c.shape.latent.width);
  app.add_option("--channels", c.shape.channels);
  app.add_option("--window", c.shape.window);
  // Architecture
  app.add_option("--decoder_base", c.arch.decoder_base);
  app.add_option("--decoder_min", c.arch.decoder_min);
  app.add_option("--encoder3d_base", c.arch.encoder3d_base);
  app.add_option("--sr_channels", c.arch.sr_channels);
  app.add_option("--unet_base", c.arch.unet_base);
  app.add_option("--time_embed", c.arch.time_embed);
  app.add_option("--cond_channels", c.arch.cond_channels);
  // Schedule
  app.add_option("--T", c.schedule.steps);
  app.add_option("--beta_start", c.schedule.beta_start);
  app.add_option("--beta_end", c.schedule.beta_end);
  app.add_option("--ddim_steps", c.schedule.ddim_steps);
  // Training
  app.add_option("--lr", c.train.lr);
  app.add_option("--batch_size", c.train.batch_size);
  app.add_option("--batch_size_volume", c.train.batch_size_volume);
  app.add_option("--kl_weight", c.train.kl_weight);
  app.add_option("--steps_nhae2d", c.train.steps_nhae2d);
  app.add_option("--steps_nhae3d", c.train.steps_nhae3d);
  app.add_option("--steps_nhaehr", c.train.steps_nhaehr);
  app.add_option("--steps_diff3d", c.train.steps_diff3d);
  app.add_option("--steps_diffslice", c.train.steps_diffslice);
  app.add_option("--steps_cond", c.train.steps_cond);
  app.add_option("--diff_lr", c.diffusion.lr);
  app.add_option("--diff_batch_size", c.diffusion.batch_size);
  app.add_option("--ema_decay", c.diffusion.ema_decay);
  // Phantoms
  app.add_option("--layers", c.phantom.layer_count);
  app.add_option("--vessels", c.phantom.vessel_count);
  app.add_option("--noise", c.phantom.noise_level);
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  RunConfig cfg;
  CLI::App app{"Cascaded latent diffusion for volumetric image synthesis", "caldm"};
  add_options(app, cfg);
  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return static_cast<int>(ExitCode::kOk);
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return static_cast<int>(ExitCode::kValidation);
  }
  try {
    cfg.validate();
    if (cfg.threads > 0) torch::set_num_threads(cfg.threads);
    if (cfg.command == "gen-phantoms") cmd_gen_phantoms(cfg, out);
    if (cfg.command == "train") cmd_train(cfg, out);
    if (cfg.command == "sample") cmd_sample(cfg, out);
    if (cfg.command == "eval") cmd_eval(cfg, out, err);
    if (cfg.command == "profile") cmd_profile(cfg, out);
    return static_cast<int>(ExitCode::kOk);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return static_cast<int>(e.exit_code());
  } catch (const c10::Error& e) {
    err << "error: " << e.what_without_backtrace() << "\n";
    return static_cast<int>(ExitCode::kRuntime);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return static_cast<int>(ExitCode::kRuntime);
  }
}

}  // namespace caldm
