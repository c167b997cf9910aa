#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <map>
#include <string>

namespace caldm {

// String metadata stored next to the parameter blocks. `kind` names the
// model family, `stage` the training stage that produced the file and
// `fingerprint` the configuration the parameter shapes derive from.
struct CheckpointMeta {
  std::string kind;
  std::string stage;
  std::string fingerprint;
  std::map<std::string, std::string> extra;

  const std::string& get(const std::string& key) const;
  double number(const std::string& key) const;
};

// Writes every parameter and buffer of `module` under its dotted name.
void save_checkpoint(const std::filesystem::path& path, torch::nn::Module& module, const CheckpointMeta& meta);

CheckpointMeta read_checkpoint_meta(const std::filesystem::path& path);

// Loads parameters into `module`, verifying kind, fingerprint and every
// parameter shape. Throws DependencyError on a missing file or mismatched
// provenance and ValidationError on shape mismatches.
CheckpointMeta load_checkpoint(const std::filesystem::path& path, torch::nn::Module& module,
                               const std::string& expected_kind, const std::string& expected_fingerprint);

}  // namespace caldm
