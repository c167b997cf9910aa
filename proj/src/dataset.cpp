#include "caldm/dataset.hpp"

#include "caldm/errors.hpp"
#include "caldm/volume_io.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace caldm {

namespace fs = std::filesystem;

namespace {

std::string indexed(const char* prefix, size_t i) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s_%04zu.raw", prefix, i);
  return buf;
}

constexpr const char* kManifestHeader = "index,volume,label,depth,height,width,layers,vessels,noise,seed";

}  // namespace

torch::Tensor Dataset::stacked_volumes() const {
  CALDM_CHECK(!volumes.empty(), ValidationError, "dataset is empty");
  std::vector<torch::Tensor> vs;
  for (const auto& v : volumes) vs.push_back(v.voxels());
  return torch::stack(vs);
}

torch::Tensor Dataset::stacked_labels() const {
  CALDM_CHECK(!labels.empty() && labels.size() == volumes.size(), ValidationError, "dataset has no labels");
  std::vector<torch::Tensor> ls;
  for (const auto& l : labels) {
    CALDM_CHECK(!l.empty(), ValidationError, "dataset sample lacks labels");
    ls.push_back(l.labels());
  }
  return torch::stack(ls);
}

int64_t Dataset::class_count() const {
  CALDM_CHECK(!labels.empty(), ValidationError, "dataset has no labels");
  return labels.front().class_count();
}

Dataset make_phantom_dataset(const PhantomSpec& base, int64_t count, uint64_t first_seed) {
  CALDM_CHECK(count >= 1, ValidationError, "phantom count must be >= 1");
  Dataset data;
  for (int64_t i = 0; i < count; ++i) {
    auto spec = base;
    spec.seed = first_seed + static_cast<uint64_t>(i);
    auto p = generate_phantom(spec);
    data.volumes.push_back(std::move(p.volume));
    data.labels.push_back(std::move(p.labels));
    data.specs.push_back(spec);
  }
  return data;
}

void write_dataset(const Dataset& data, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create dataset directory " + dir.string() + ": " + ec.message());
  std::ofstream manifest(dir / "manifest.csv", std::ios::trunc);
  if (!manifest) throw IoError("cannot write " + (dir / "manifest.csv").string());
  manifest << kManifestHeader << "\n";
  manifest.precision(17);
  for (size_t i = 0; i < data.size(); ++i) {
    const auto vol_name = indexed("volume", i);
    save_volume(data.volumes[i], dir / vol_name);
    std::string label_name;
    if (i < data.labels.size() && !data.labels[i].empty()) {
      label_name = indexed("label", i);
      save_labels(data.labels[i], dir / label_name);
    }
    const auto s = data.volumes[i].shape();
    manifest << i << "," << vol_name << "," << label_name << "," << s.depth << "," << s.height << "," << s.width;
    if (i < data.specs.size()) {
      const auto& spec = data.specs[i];
      manifest << "," << spec.layer_count << "," << spec.vessel_count << "," << spec.noise_level << ","
               << spec.seed;
    } else {
      manifest << ",,,,";
    }
    manifest << "\n";
  }
  if (!manifest) throw IoError("write failed for " + (dir / "manifest.csv").string());
}

Dataset load_dataset(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("dataset directory " + dir.string() + " does not exist");
  Dataset data;
  const auto manifest_path = dir / "manifest.csv";
  if (!fs::exists(manifest_path)) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir)) {
      if (e.path().extension() == ".raw" && e.path().filename().string().rfind("label_", 0) != 0) {
        files.push_back(e.path());
      }
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) data.volumes.push_back(load_volume(f));
    return data;
  }
  std::ifstream in(manifest_path);
  std::string line;
  std::getline(in, line);
  if (line != kManifestHeader) throw IoError("unrecognised manifest header in " + manifest_path.string());
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::stringstream ss(line);
    std::string col;
    while (std::getline(ss, col, ',')) cols.push_back(col);
    while (cols.size() < 10) cols.emplace_back();
    data.volumes.push_back(load_volume(dir / cols[1]));
    data.labels.push_back(cols[2].empty() ? LabelVolume{} : load_labels(dir / cols[2]));
    if (!cols[6].empty()) {
      PhantomSpec spec;
      spec.size = {std::stoll(cols[3]), std::stoll(cols[4]), std::stoll(cols[5])};
      spec.layer_count = std::stoll(cols[6]);
      spec.vessel_count = std::stoll(cols[7]);
      spec.noise_level = std::stod(cols[8]);
      spec.seed = std::stoull(cols[9]);
      data.specs.push_back(spec);
    }
  }
  if (data.volumes.empty()) throw IoError("dataset " + dir.string() + " lists no volumes");
  return data;
}

}  // namespace caldm
