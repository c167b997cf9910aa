#pragma once

#include "caldm/volume.hpp"

#include <cstdint>
#include <string>
#include <utility>

namespace caldm {

// Parameters of a synthetic layered-tissue volume. Layers are stacked along
// the height (axial) axis; vessels are tubes running roughly across the
// en-face plane (depth x width).
struct PhantomSpec {
  Shape3 size{64, 64, 64};
  int64_t layer_count = 6;
  int64_t vessel_count = 4;
  double noise_level = 0.05;
  uint64_t seed = 0;

  void validate() const;
  // Class count of the generated label volume: one per layer plus vessels.
  int64_t class_count() const { return layer_count + 1; }
  int64_t vessel_class() const { return layer_count; }
  std::string str() const;
};

struct Phantom {
  Volume volume;
  LabelVolume labels;
};

// Pure function of the spec: equal specs give bit-identical outputs.
Phantom generate_phantom(const PhantomSpec& spec);

}  // namespace caldm
