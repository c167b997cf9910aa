#include "caldm/volume_io.hpp"

#include "caldm/errors.hpp"

#include <opencv2/imgcodecs.hpp>

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <regex>
#include <sstream>

namespace caldm {

namespace fs = std::filesystem;

static_assert(std::endian::native == std::endian::little,
              "raw volume I/O assumes a little-endian host");

namespace {

using Header = std::map<std::string, std::string>;

Header read_header(const fs::path& payload) {
  const auto path = header_path(payload);
  std::ifstream in(path);
  if (!in) throw IoError("cannot open volume header " + path.string());
  Header header;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw IoError("malformed header line '" + line + "' in " + path.string());
    header[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return header;
}

const std::string& require_key(const Header& h, const std::string& key, const fs::path& payload) {
  const auto it = h.find(key);
  if (it == h.end()) throw IoError("volume header for " + payload.string() + " lacks '" + key + "'");
  return it->second;
}

std::vector<double> split_numbers(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw IoError("non-numeric header value '" + s + "'");
    }
  }
  return out;
}

Shape3 parse_shape(const Header& h, const fs::path& payload) {
  const auto dims = split_numbers(require_key(h, "shape", payload));
  if (dims.size() != 3 || dims[0] < 1 || dims[1] < 1 || dims[2] < 1) {
    throw IoError("header shape must be three positive integers in " + payload.string());
  }
  return {static_cast<int64_t>(dims[0]), static_cast<int64_t>(dims[1]), static_cast<int64_t>(dims[2])};
}

std::vector<char> read_payload(const fs::path& path, size_t expected_bytes) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw IoError("cannot open volume payload " + path.string());
  const auto size = static_cast<size_t>(in.tellg());
  if (size != expected_bytes) {
    throw IoError("payload " + path.string() + " holds " + std::to_string(size) + " bytes, header implies " +
                  std::to_string(expected_bytes));
  }
  std::vector<char> buf(size);
  in.seekg(0);
  in.read(buf.data(), static_cast<std::streamsize>(size));
  return buf;
}

void write_file(const fs::path& path, const void* data, size_t bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(bytes));
  if (!out) throw IoError("write failed for " + path.string());
}

void write_text(const fs::path& path, const std::string& text) { write_file(path, text.data(), text.size()); }

std::string shape_line(Shape3 s) {
  return "shape=" + std::to_string(s.depth) + "," + std::to_string(s.height) + "," + std::to_string(s.width) + "\n";
}

std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

Volume load_raw(const fs::path& path) {
  const auto header = read_header(path);
  const auto shape = parse_shape(header, path);
  if (require_key(header, "dtype", path) != "f32") throw IoError("unsupported volume dtype in " + path.string());
  ValueRange range = kCanonicalRange;
  if (header.contains("range")) {
    const auto r = split_numbers(header.at("range"));
    if (r.size() != 2) throw IoError("header range must be 'lo,hi' in " + path.string());
    range = {r[0], r[1]};
  }
  auto bytes = read_payload(path, static_cast<size_t>(shape.voxels()) * sizeof(float));
  auto t = torch::from_blob(bytes.data(), shape.sizes(), torch::kFloat32).clone();
  require_finite(t, "volume file " + path.string());
  if (range == kCanonicalRange) return Volume(t.clamp(-1.0, 1.0));
  return normalize(t, range);
}

std::vector<fs::path> list_slices(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("slice directory " + dir.string() + " does not exist");
  static const std::regex pattern(R"(slice_\d+\.png)");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && std::regex_match(e.path().filename().string(), pattern)) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw IoError("no slice_XXXX.png files in " + dir.string());
  return files;
}

Volume load_slice_dir(const fs::path& dir) {
  const auto files = list_slices(dir);
  std::vector<torch::Tensor> slices;
  for (const auto& f : files) {
    cv::Mat img = cv::imread(f.string(), cv::IMREAD_GRAYSCALE | cv::IMREAD_ANYDEPTH);
    if (img.empty()) throw IoError("cannot decode image " + f.string());
    double max_value = 255.0;
    cv::Mat as_float;
    if (img.depth() == CV_16U) max_value = 65535.0;
    else if (img.depth() != CV_8U) throw IoError("unsupported pixel depth in " + f.string());
    img.convertTo(as_float, CV_32F, 2.0 / max_value, -1.0);
    auto t = torch::from_blob(as_float.ptr<float>(), {as_float.rows, as_float.cols}, torch::kFloat32).clone();
    if (!slices.empty() && t.sizes() != slices.front().sizes()) {
      throw IoError("slice " + f.string() + " differs in size from the first slice");
    }
    slices.push_back(t);
  }
  return Volume(torch::stack(slices).clamp(-1.0, 1.0));
}

void save_slice_dir(const Volume& v, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create slice directory " + dir.string() + ": " + ec.message());
  const auto shape = v.shape();
  auto u16 = ((v.voxels() + 1.0) * (65535.0 / 2.0)).round().clamp(0, 65535).to(torch::kInt32).contiguous();
  for (int64_t d = 0; d < shape.depth; ++d) {
    cv::Mat img(static_cast<int>(shape.height), static_cast<int>(shape.width), CV_16UC1);
    auto slice = u16[d];
    const auto* src = slice.data_ptr<int32_t>();
    for (int64_t i = 0; i < shape.height * shape.width; ++i) {
      img.at<uint16_t>(static_cast<int>(i / shape.width), static_cast<int>(i % shape.width)) =
          static_cast<uint16_t>(src[i]);
    }
    char name[32];
    std::snprintf(name, sizeof(name), "slice_%04lld.png", static_cast<long long>(d));
    if (!cv::imwrite((dir / name).string(), img)) throw IoError("cannot write " + (dir / name).string());
  }
}

}  // namespace

fs::path header_path(const fs::path& payload) {
  auto p = payload;
  return p.replace_extension(".hdr");
}

void write_raw_header(const fs::path& payload, Shape3 shape, ValueRange range) {
  write_text(header_path(payload),
             shape_line(shape) + "dtype=f32\nrange=" + format_double(range.lo) + "," + format_double(range.hi) + "\n");
}

Volume load_volume(const fs::path& path, VolumeLayout layout) {
  return layout == VolumeLayout::kRaw ? load_raw(path) : load_slice_dir(path);
}

void save_volume(const Volume& v, const fs::path& path, VolumeLayout layout) {
  CALDM_CHECK(!v.empty(), ValidationError, "cannot save an empty volume");
  require_finite(v.voxels(), "volume");
  if (layout == VolumeLayout::kSliceDir) {
    save_slice_dir(v, path);
    return;
  }
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const auto& t = v.voxels();
  write_file(path, t.data_ptr<float>(), static_cast<size_t>(t.numel()) * sizeof(float));
  write_raw_header(path, v.shape(), v.range());
}

LabelVolume load_labels(const fs::path& path) {
  const auto header = read_header(path);
  const auto shape = parse_shape(header, path);
  if (require_key(header, "dtype", path) != "u8") throw IoError("label file " + path.string() + " must be u8");
  const auto classes = split_numbers(require_key(header, "classes", path));
  if (classes.size() != 1 || classes[0] < 1) throw IoError("bad class count in " + path.string());
  auto bytes = read_payload(path, static_cast<size_t>(shape.voxels()));
  auto t = torch::from_blob(bytes.data(), shape.sizes(), torch::kUInt8).to(torch::kInt64);
  return LabelVolume(t, static_cast<int64_t>(classes[0]));
}

void save_labels(const LabelVolume& labels, const fs::path& path) {
  CALDM_CHECK(labels.class_count() <= 256, ValidationError, "u8 label files hold at most 256 classes");
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  auto t = labels.labels().to(torch::kUInt8).contiguous();
  write_file(path, t.data_ptr<uint8_t>(), static_cast<size_t>(t.numel()));
  write_text(header_path(path),
             shape_line(labels.shape()) + "dtype=u8\nclasses=" + std::to_string(labels.class_count()) + "\n");
}

}  // namespace caldm
