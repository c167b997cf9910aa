#pragma once

// Command-line front end: phantom generation, staged training, sampling,
// evaluation and memory profiling. Every configuration key can come from a
// key=value file (--config) and be overridden by the flag of the same name.

#include "caldm/config.hpp"
#include "caldm/phantom.hpp"
#include "caldm/training.hpp"

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace caldm {

struct RunConfig {
  ShapeConfig shape;
  ArchConfig arch;
  ScheduleConfig schedule;
  TrainConfig train;
  DenoiserTraining diffusion;
  PhantomSpec phantom;

  std::string command;
  std::string stage;
  std::string task = "decode";
  std::filesystem::path dataset = "data";
  std::filesystem::path checkpoints = "checkpoints";
  std::filesystem::path out;
  std::filesystem::path manifest;
  std::filesystem::path label;
  std::filesystem::path real, syn;
  std::string ladder = "32,64,128";
  int64_t count = 20;
  uint64_t seed = 0;
  bool no_refine = false;
  int threads = 0;

  // Rejects every invariant violation before any compute starts.
  void validate() const;
  std::vector<int64_t> ladder_depths() const;
};

// Checkpoint file names inside the checkpoint directory.
std::filesystem::path stage_checkpoint(const std::filesystem::path& dir, const std::string& stage);
inline constexpr const char* kBundleManifestName = "bundle.manifest";

// Runs one command; returns the process exit code. `args` excludes argv[0].
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace caldm
