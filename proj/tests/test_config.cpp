#include "caldm/config.hpp"
#include "caldm/errors.hpp"
#include "caldm/rng.hpp"

#include <doctest.h>

#include <set>

using namespace caldm;

TEST_CASE("shape config invariants") {
  CHECK_NOTHROW(ShapeConfig::desk().validate());
  CHECK_NOTHROW(ShapeConfig::paper().validate());
  auto s = ShapeConfig::desk();
  s.image.depth = 60;  // not a multiple of D'
  CHECK_THROWS_AS(s.validate(), ValidationError);
  s = ShapeConfig::desk();
  s.window = 4;
  CHECK_THROWS_AS(s.validate(), ValidationError);
  s = ShapeConfig::desk();
  s.image.width = 68;
  CHECK_THROWS_AS(s.validate(), ValidationError);
  s = ShapeConfig::desk();
  s.channels = 0;
  CHECK_THROWS_AS(s.validate(), ValidationError);

  CHECK(ShapeConfig::desk().thumbnail() == Shape3{16, 16, 16});
  CHECK(ShapeConfig::paper().thumbnail() == Shape3{128, 128, 128});
  CHECK(ShapeConfig::paper().depth_factor() == 8);
}

TEST_CASE("schedule and training config invariants") {
  ScheduleConfig sc;
  CHECK_NOTHROW(sc.validate());
  sc.ddim_steps = 1001;
  CHECK_THROWS_AS(sc.validate(), ValidationError);
  sc = {};
  sc.beta_end = 1.0;
  CHECK_THROWS_AS(sc.validate(), ValidationError);
  sc = {};
  sc.beta_start = 0.03;  // above beta_end
  CHECK_THROWS_AS(sc.validate(), ValidationError);

  TrainConfig tc;
  CHECK_NOTHROW(tc.validate());
  tc.lr = -1;
  CHECK_THROWS_AS(tc.validate(), ValidationError);
  tc = {};
  tc.batch_size = 0;
  CHECK_THROWS_AS(tc.validate(), ValidationError);
}

TEST_CASE("prime factors and fingerprints") {
  CHECK(prime_factors(8) == std::vector<int64_t>{2, 2, 2});
  CHECK(prime_factors(12) == std::vector<int64_t>{2, 2, 3});
  CHECK(prime_factors(1).empty());
  // Published FNV-1a 64-bit test vectors.
  CHECK(fingerprint("") == "cbf29ce484222325");
  CHECK(fingerprint("a") == "af63dc4c8601ec8c");
  CHECK(model_fingerprint(ShapeConfig::desk(), ArchConfig{}) !=
        model_fingerprint(ShapeConfig::paper(), ArchConfig{}));
}

TEST_CASE("splitmix64 reference sequence and seed derivation") {
  // First outputs of the reference SplitMix64 for seed 0.
  SplitMix64 mix(0);
  CHECK(mix.next() == 0xE220A8397B1DCDAFull);
  CHECK(mix.next() == 0x6E789E6AA1B965F4ull);

  CHECK(derive_seed(5, 3) == derive_seed(5, 3));
  std::set<uint64_t> seen;
  for (uint64_t i = 0; i < 1000; ++i) seen.insert(derive_seed(42, i));
  CHECK(seen.size() == 1000);
  CHECK(derive_seed(1, 0) != derive_seed(2, 0));

  SplitMix64 u(9);
  for (int i = 0; i < 1000; ++i) {
    const double x = u.uniform();
    CHECK((x >= 0.0 && x < 1.0));
  }
}
