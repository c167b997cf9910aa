#include "caldm/config.hpp"

#include "caldm/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace caldm {

void ShapeConfig::validate() const {
  const auto positive = [](Shape3 s) { return s.depth >= 1 && s.height >= 1 && s.width >= 1; };
  CALDM_CHECK(positive(image) && positive(latent), ValidationError, "shape dimensions must be >= 1");
  CALDM_CHECK(image.depth % latent.depth == 0, ValidationError,
              "image depth " + std::to_string(image.depth) + " is not a multiple of latent depth " +
                  std::to_string(latent.depth));
  CALDM_CHECK(image.height % latent.height == 0 && image.width % latent.width == 0, ValidationError,
              "image height/width must be multiples of the latent height/width");
  CALDM_CHECK(image.height / latent.height == image.width / latent.width, ValidationError,
              "height and width must share one compression factor");
  CALDM_CHECK(channels >= 1, ValidationError, "latent channels must be >= 1");
  CALDM_CHECK(window >= 1 && window % 2 == 1, ValidationError, "window k must be odd and >= 1");
}

std::string ShapeConfig::str() const {
  std::ostringstream os;
  os << "image=" << image.str() << " latent=" << latent.str() << " c=" << channels << " k=" << window;
  return os.str();
}

std::vector<int64_t> ArchConfig::decoder_channels(const ShapeConfig& shape) const {
  const auto levels = prime_factors(shape.spatial_factor()).size() + 1;
  std::vector<int64_t> ch;
  int64_t c = decoder_base;
  for (size_t l = 0; l < levels; ++l) {
    ch.push_back(std::max(decoder_min, c));
    c /= 2;
  }
  return ch;
}

std::string ArchConfig::str() const {
  std::ostringstream os;
  os << "dec=" << decoder_base << "/" << decoder_min << " enc3d=" << encoder3d_base << " sr=" << sr_channels
     << " unet=" << unet_base << " temb=" << time_embed << " cond=" << cond_channels;
  return os.str();
}

void ScheduleConfig::validate() const {
  CALDM_CHECK(steps >= 1, ValidationError, "T must be >= 1");
  CALDM_CHECK(beta_start > 0 && beta_start <= beta_end && beta_end < 1, ValidationError,
              "betas must satisfy 0 < beta_start <= beta_end < 1");
  CALDM_CHECK(ddim_steps >= 1 && ddim_steps <= steps, ValidationError, "ddim_steps must lie in [1, T]");
}

std::string ScheduleConfig::str() const {
  std::ostringstream os;
  os.precision(17);
  os << "T=" << steps << " beta=" << beta_start << ".." << beta_end;
  return os.str();
}

void TrainConfig::validate() const {
  CALDM_CHECK(std::isfinite(lr) && lr > 0, ValidationError, "learning rate must be positive");
  CALDM_CHECK(batch_size >= 1 && batch_size_volume >= 1, ValidationError, "batch sizes must be >= 1");
  CALDM_CHECK(std::isfinite(kl_weight) && kl_weight >= 0, ValidationError, "kl_weight must be >= 0");
  for (auto s : {steps_nhae2d, steps_nhae3d, steps_nhaehr, steps_diff3d, steps_diffslice, steps_cond}) {
    CALDM_CHECK(s >= 0, ValidationError, "step counts must be >= 0");
  }
}

std::vector<int64_t> prime_factors(int64_t n) {
  std::vector<int64_t> out;
  for (int64_t p = 2; p * p <= n; ++p) {
    while (n % p == 0) {
      out.push_back(p);
      n /= p;
    }
  }
  if (n > 1) out.push_back(n);
  return out;
}

std::string fingerprint(const std::string& canonical) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : canonical) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string model_fingerprint(const ShapeConfig& shape, const ArchConfig& arch) {
  return fingerprint(shape.str() + "|" + arch.str());
}

}  // namespace caldm
