#include "caldm/sink.hpp"

#include "caldm/errors.hpp"
#include "caldm/volume_io.hpp"

namespace caldm {

namespace fs = std::filesystem;

namespace {

void check_slice(Shape3 shape, int64_t expected, int64_t index, const torch::Tensor& slice) {
  CALDM_CHECK(index == expected, IoError,
              "slice " + std::to_string(index) + " arrived out of order (expected " + std::to_string(expected) + ")");
  CALDM_CHECK(index < shape.depth, IoError, "slice index beyond the declared depth");
  CALDM_CHECK(slice.dim() == 2 && slice.size(0) == shape.height && slice.size(1) == shape.width, ValidationError,
              "slice shape does not match the declared volume");
}

}  // namespace

void VolumeSink::begin(Shape3 shape) {
  data_ = torch::empty(shape.sizes(), torch::kFloat32);
  next_ = 0;
  complete_ = false;
}

void VolumeSink::write(int64_t index, const torch::Tensor& slice) {
  check_slice(Shape3::of(data_), next_, index, slice);
  data_[index].copy_(slice);
  ++next_;
}

void VolumeSink::finish() {
  CALDM_CHECK(next_ == data_.size(0), IoError, "volume sink finished before every slice was written");
  complete_ = true;
}

Volume VolumeSink::volume() const {
  CALDM_CHECK(complete_, IoError, "volume sink holds an incomplete volume");
  return Volume(data_);
}

fs::path RawFileSink::partial_path() const {
  auto p = path_;
  p += ".partial";
  return p;
}

void RawFileSink::begin(Shape3 shape) {
  shape_ = shape;
  next_ = 0;
  if (path_.has_parent_path()) fs::create_directories(path_.parent_path());
  out_.open(partial_path(), std::ios::binary | std::ios::trunc);
  if (!out_) throw IoError("cannot open " + partial_path().string() + " for writing");
}

void RawFileSink::write(int64_t index, const torch::Tensor& slice) {
  check_slice(shape_, next_, index, slice);
  auto s = slice.to(torch::kFloat32).contiguous();
  require_finite(s, "decoded slice");
  out_.write(reinterpret_cast<const char*>(s.data_ptr<float>()),
             static_cast<std::streamsize>(s.numel() * sizeof(float)));
  if (!out_) throw IoError("write failed for " + partial_path().string());
  ++next_;
}

void RawFileSink::finish() {
  CALDM_CHECK(next_ == shape_.depth, IoError, "raw sink finished before every slice was written");
  out_.close();
  if (!out_) throw IoError("closing " + partial_path().string() + " failed");
  fs::rename(partial_path(), path_);
  write_raw_header(path_, shape_, kCanonicalRange);
}

void RawFileSink::abort() {
  if (out_.is_open()) out_.close();
}

void NullSink::write(int64_t index, const torch::Tensor& slice) {
  check_slice(shape_, written_, index, slice);
  ++written_;
}

}  // namespace caldm
