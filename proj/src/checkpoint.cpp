#include "caldm/checkpoint.hpp"

#include "caldm/errors.hpp"

#include <sstream>

namespace caldm {

namespace fs = std::filesystem;

namespace {

constexpr const char* kMetaPrefix = "meta.";
constexpr const char* kTensorPrefix = "tensor.";

std::string join_keys(const std::map<std::string, std::string>& m) {
  std::string out;
  for (const auto& [k, v] : m) out += (out.empty() ? "" : ",") + k;
  return out;
}

std::string read_string(torch::serialize::InputArchive& in, const std::string& key, const fs::path& path) {
  c10::IValue value;
  if (!in.try_read(kMetaPrefix + key, value) || !value.isString()) {
    throw ValidationError("checkpoint " + path.string() + " lacks metadata '" + key + "'");
  }
  return value.toStringRef();
}

torch::serialize::InputArchive open_archive(const fs::path& path) {
  if (!fs::exists(path)) throw DependencyError("missing checkpoint " + path.string());
  torch::serialize::InputArchive in;
  try {
    in.load_from(path.string());
  } catch (const c10::Error& e) {
    throw ValidationError("cannot read checkpoint " + path.string() + ": " + e.what_without_backtrace());
  }
  return in;
}

CheckpointMeta read_meta(torch::serialize::InputArchive& in, const fs::path& path) {
  CheckpointMeta meta;
  meta.kind = read_string(in, "kind", path);
  meta.stage = read_string(in, "stage", path);
  meta.fingerprint = read_string(in, "fingerprint", path);
  std::stringstream keys(read_string(in, "extra_keys", path));
  std::string key;
  while (std::getline(keys, key, ',')) {
    if (!key.empty()) meta.extra[key] = read_string(in, "extra." + key, path);
  }
  return meta;
}

}  // namespace

const std::string& CheckpointMeta::get(const std::string& key) const {
  const auto it = extra.find(key);
  if (it == extra.end()) throw ValidationError("checkpoint metadata lacks '" + key + "'");
  return it->second;
}

double CheckpointMeta::number(const std::string& key) const {
  try {
    return std::stod(get(key));
  } catch (const std::invalid_argument&) {
    throw ValidationError("checkpoint metadata '" + key + "' is not numeric");
  }
}

void save_checkpoint(const fs::path& path, torch::nn::Module& module, const CheckpointMeta& meta) {
  torch::serialize::OutputArchive out;
  for (const auto& item : module.named_parameters()) out.write(kTensorPrefix + item.key(), item.value().detach());
  for (const auto& item : module.named_buffers()) out.write(kTensorPrefix + item.key(), item.value(), true);
  const auto put = [&](const std::string& k, const std::string& v) { out.write(kMetaPrefix + k, c10::IValue(v)); };
  put("kind", meta.kind);
  put("stage", meta.stage);
  put("fingerprint", meta.fingerprint);
  put("extra_keys", join_keys(meta.extra));
  for (const auto& [k, v] : meta.extra) put("extra." + k, v);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  try {
    out.save_to(path.string());
  } catch (const c10::Error& e) {
    throw IoError("cannot write checkpoint " + path.string() + ": " + e.what_without_backtrace());
  }
}

CheckpointMeta read_checkpoint_meta(const fs::path& path) {
  auto in = open_archive(path);
  return read_meta(in, path);
}

CheckpointMeta load_checkpoint(const fs::path& path, torch::nn::Module& module, const std::string& expected_kind,
                               const std::string& expected_fingerprint) {
  auto in = open_archive(path);
  auto meta = read_meta(in, path);
  if (meta.kind != expected_kind) {
    throw DependencyError("checkpoint " + path.string() + " holds a '" + meta.kind + "' model, expected '" +
                          expected_kind + "'");
  }
  if (meta.fingerprint != expected_fingerprint) {
    throw DependencyError("checkpoint " + path.string() + " was produced under config " + meta.fingerprint +
                          ", current config is " + expected_fingerprint);
  }
  torch::NoGradGuard no_grad;
  const auto load = [&](const std::string& name, torch::Tensor& dst) {
    torch::Tensor src;
    if (!in.try_read(kTensorPrefix + name, src)) {
      throw ValidationError("checkpoint " + path.string() + " lacks tensor '" + name + "'");
    }
    if (src.sizes() != dst.sizes()) {
      throw ValidationError("checkpoint tensor '" + name + "' has shape " + c10::str(src.sizes()) +
                            ", model expects " + c10::str(dst.sizes()));
    }
    dst.copy_(src);
  };
  for (auto& item : module.named_parameters()) load(item.key(), item.value());
  for (auto& item : module.named_buffers()) load(item.key(), item.value());
  return meta;
}

}  // namespace caldm
