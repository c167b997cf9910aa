#pragma once

#include "caldm/volume.hpp"

#include <filesystem>
#include <fstream>

namespace caldm {

// Consumer of decoded image slices. Slices arrive strictly in depth order;
// decoders hand each slice over as soon as it exists so the assembled volume
// never has to be resident on the producer side.
class SliceSink {
 public:
  virtual ~SliceSink() = default;
  virtual void begin(Shape3 shape) = 0;
  virtual void write(int64_t index, const torch::Tensor& slice) = 0;  // (H,W)
  virtual void finish() = 0;
  // Called when production fails mid-volume; the sink must mark its output invalid.
  virtual void abort() {}
};

// Assembles slices into an in-memory Volume.
class VolumeSink final : public SliceSink {
 public:
  void begin(Shape3 shape) override;
  void write(int64_t index, const torch::Tensor& slice) override;
  void finish() override;
  void abort() override { complete_ = false; }

  bool complete() const { return complete_; }
  Volume volume() const;

 private:
  torch::Tensor data_;
  int64_t next_ = 0;
  bool complete_ = false;
};

// Streams slices into a raw volume file. Data goes to `<path>.partial` and
// is renamed into place with its header only when every slice was written;
// an aborted run leaves the `.partial` file behind as the invalid marker.
class RawFileSink final : public SliceSink {
 public:
  explicit RawFileSink(std::filesystem::path path) : path_(std::move(path)) {}

  void begin(Shape3 shape) override;
  void write(int64_t index, const torch::Tensor& slice) override;
  void finish() override;
  void abort() override;

  std::filesystem::path partial_path() const;

 private:
  std::filesystem::path path_;
  std::ofstream out_;
  Shape3 shape_;
  int64_t next_ = 0;
};

// Discards slices after validating them; used by profiling runs.
class NullSink final : public SliceSink {
 public:
  void begin(Shape3 shape) override { shape_ = shape; }
  void write(int64_t index, const torch::Tensor& slice) override;
  void finish() override {}
  int64_t written() const { return written_; }

 private:
  Shape3 shape_;
  int64_t written_ = 0;
};

}  // namespace caldm
