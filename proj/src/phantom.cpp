#include "caldm/phantom.hpp"

#include "caldm/errors.hpp"
#include "caldm/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>
#include <vector>

namespace caldm {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr float kVitreousIntensity = -0.8f;
constexpr float kVesselIntensity = 0.9f;

struct Wave {
  double amplitude, freq_d, freq_w, phase;
};

// Height of a smooth surface over the en-face plane.
struct Surface {
  double base = 0;
  std::vector<Wave> waves;

  double at(double u, double v) const {  // u,v in [0,1)
    double h = base;
    for (const auto& w : waves) h += w.amplitude * std::sin(kTwoPi * (w.freq_d * u + w.freq_w * v) + w.phase);
    return h;
  }
};

std::vector<Wave> random_waves(SplitMix64& rng, int count, double amplitude) {
  std::vector<Wave> waves;
  for (int i = 0; i < count; ++i) {
    waves.push_back({amplitude * rng.uniform(0.3, 1.0), rng.uniform(0.2, 1.5), rng.uniform(0.2, 1.5),
                     rng.uniform(0.0, kTwoPi)});
  }
  return waves;
}

}  // namespace

void PhantomSpec::validate() const {
  CALDM_CHECK(size.depth >= 1 && size.height >= 1 && size.width >= 1, ValidationError,
              "phantom size must be >= 1 along every axis");
  CALDM_CHECK(layer_count >= 2, ValidationError, "phantom layer_count must be >= 2");
  CALDM_CHECK(vessel_count >= 0, ValidationError, "phantom vessel_count must be >= 0");
  CALDM_CHECK(std::isfinite(noise_level) && noise_level >= 0, ValidationError,
              "phantom noise_level must be a finite value >= 0");
}

std::string PhantomSpec::str() const {
  std::ostringstream os;
  os << "size=" << size.depth << "x" << size.height << "x" << size.width << " layers=" << layer_count
     << " vessels=" << vessel_count << " noise=" << noise_level << " seed=" << seed;
  return os.str();
}

Phantom generate_phantom(const PhantomSpec& spec) {
  spec.validate();
  const int64_t D = spec.size.depth, H = spec.size.height, W = spec.size.width;
  const int64_t L = spec.layer_count;
  SplitMix64 rng(spec.seed);

  // Boundaries 1..L-1 separate layer l-1 (above) from layer l (below). All
  // surfaces share a global warp so the tissue bends as one band.
  const auto global_warp = random_waves(rng, 3, 0.06 * H);
  std::vector<Surface> surfaces(static_cast<size_t>(L - 1));
  for (int64_t j = 0; j < L - 1; ++j) {
    const double frac = L > 2 ? static_cast<double>(j) / static_cast<double>(L - 2) : 0.5;
    surfaces[j].base = H * (0.25 + 0.5 * frac);
    surfaces[j].waves = global_warp;
    for (const auto& w : random_waves(rng, 2, 0.015 * H)) surfaces[j].waves.push_back(w);
  }

  std::vector<float> intensity(static_cast<size_t>(L));
  intensity[0] = kVitreousIntensity;
  for (int64_t l = 1; l < L; ++l) {
    const double golden = std::fmod(static_cast<double>(l) * 0.6180339887498949, 1.0);
    intensity[l] = static_cast<float>(-0.5 + 1.1 * golden + rng.uniform(-0.03, 0.03));
  }

  std::vector<float> voxels(static_cast<size_t>(D * H * W));
  std::vector<int64_t> labels(voxels.size());
  std::vector<double> boundary(static_cast<size_t>(L - 1));
  // Top surface per column, reused to anchor vessels.
  std::vector<double> top(static_cast<size_t>(D * W));
  for (int64_t d = 0; d < D; ++d) {
    for (int64_t w = 0; w < W; ++w) {
      const double u = (d + 0.5) / D, v = (w + 0.5) / W;
      for (int64_t j = 0; j < L - 1; ++j) {
        boundary[j] = surfaces[j].at(u, v);
        if (j > 0) boundary[j] = std::max(boundary[j], boundary[j - 1] + 1.0);
      }
      top[d * W + w] = boundary[0];
      for (int64_t h = 0; h < H; ++h) {
        const double y = h + 0.5;
        int64_t layer = 0;
        while (layer < L - 1 && y >= boundary[layer]) ++layer;
        const size_t idx = static_cast<size_t>((d * H + h) * W + w);
        voxels[idx] = intensity[layer];
        labels[idx] = layer;
      }
    }
  }

  // Vessels: tubes meandering across the en-face plane just below the top
  // tissue surface, oriented along depth or width.
  const double radius = std::max(1.0, 0.04 * static_cast<double>(H));
  for (int64_t n = 0; n < spec.vessel_count; ++n) {
    const bool along_depth = rng.uniform() < 0.5;
    const int64_t length = along_depth ? D : W;
    const int64_t across = along_depth ? W : D;
    const double start = rng.uniform(0.15, 0.85) * across;
    const double amp = rng.uniform(0.05, 0.2) * across;
    const double freq = rng.uniform(0.5, 1.5);
    const double phase = rng.uniform(0.0, kTwoPi);
    const double offset = rng.uniform(1.5 * radius, 1.5 * radius + 0.05 * H);
    for (double s = 0.0; s < static_cast<double>(length); s += 0.5) {
      const double c = start + amp * std::sin(kTwoPi * freq * s / length + phase);
      const double cd = along_depth ? s : c;
      const double cw = along_depth ? c : s;
      const int64_t col_d = std::clamp<int64_t>(static_cast<int64_t>(cd), 0, D - 1);
      const int64_t col_w = std::clamp<int64_t>(static_cast<int64_t>(cw), 0, W - 1);
      const double ch = top[col_d * W + col_w] + offset;
      const auto lo = [&](double x) { return static_cast<int64_t>(std::floor(x - radius)); };
      const auto hi = [&](double x) { return static_cast<int64_t>(std::ceil(x + radius)); };
      for (int64_t d = std::max<int64_t>(0, lo(cd)); d <= std::min(D - 1, hi(cd)); ++d) {
        for (int64_t h = std::max<int64_t>(0, lo(ch)); h <= std::min(H - 1, hi(ch)); ++h) {
          for (int64_t w = std::max<int64_t>(0, lo(cw)); w <= std::min(W - 1, hi(cw)); ++w) {
            const double dd = d + 0.5 - cd, dh = h + 0.5 - ch, dw = w + 0.5 - cw;
            if (dd * dd + dh * dh + dw * dw <= radius * radius) {
              const size_t idx = static_cast<size_t>((d * H + h) * W + w);
              voxels[idx] = kVesselIntensity;
              labels[idx] = spec.vessel_class();
            }
          }
        }
      }
    }
  }

  if (spec.noise_level > 0) {
    for (auto& x : voxels) {
      x = static_cast<float>(std::clamp(x + spec.noise_level * rng.normal(), -1.0, 1.0));
    }
  }

  auto vol = torch::from_blob(voxels.data(), {D, H, W}, torch::kFloat32).clone();
  auto lab = torch::from_blob(labels.data(), {D, H, W}, torch::kInt64).clone();
  return {Volume(std::move(vol)), LabelVolume(std::move(lab), spec.class_count())};
}

}  // namespace caldm
