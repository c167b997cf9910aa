#include "caldm/dataset.hpp"
#include "caldm/errors.hpp"
#include "caldm/phantom.hpp"
#include "helpers.hpp"

#include <doctest.h>

#include <fstream>
#include <sstream>

using namespace caldm;

TEST_CASE("phantom shape and class bookkeeping") {
  PhantomSpec spec;
  spec.seed = 7;
  const auto p = generate_phantom(spec);
  CHECK(p.volume.shape() == Shape3{64, 64, 64});
  CHECK(p.labels.shape() == Shape3{64, 64, 64});
  CHECK(p.labels.class_count() == 7);
  CHECK(p.labels.labels().max().item<int64_t>() < 7);
  // Every class shows up: all layers plus at least one vessel voxel.
  CHECK(std::get<0>(at::_unique(p.labels.labels())).numel() == 7);
}

TEST_CASE("phantom generation is a pure function of its spec") {
  PhantomSpec spec;
  spec.seed = 7;
  const auto a = generate_phantom(spec), b = generate_phantom(spec);
  CHECK(torch::equal(a.volume.voxels(), b.volume.voxels()));
  CHECK(torch::equal(a.labels.labels(), b.labels.labels()));
  spec.seed = 8;
  CHECK_FALSE(torch::equal(generate_phantom(spec).volume.voxels(), a.volume.voxels()));
}

TEST_CASE("noise-free phantom is piecewise constant per layer") {
  PhantomSpec spec;
  spec.seed = 3;
  spec.noise_level = 0;
  const auto p = generate_phantom(spec);
  const auto v = p.volume.voxels().to(torch::kFloat64).flatten();
  const auto l = p.labels.labels().flatten();
  for (int64_t c = 0; c < spec.layer_count; ++c) {
    const auto region = v.masked_select(l == c);
    if (region.numel() < 2) continue;
    const auto mean = region.mean();
    const double var = ((region - mean) * (region - mean)).mean().item<double>();
    CHECK(var < 1e-6);
  }
}

TEST_CASE("invalid phantom specs are rejected") {
  PhantomSpec spec;
  spec.size = {0, 64, 64};
  CHECK_THROWS_AS(generate_phantom(spec), ValidationError);
  spec = {};
  spec.vessel_count = -1;
  CHECK_THROWS_AS(generate_phantom(spec), ValidationError);
  spec = {};
  spec.layer_count = 0;
  CHECK_THROWS_AS(generate_phantom(spec), ValidationError);
}

TEST_CASE("dataset write/load preserves volumes, labels and provenance") {
  const auto dir = test::scratch_dir("dataset");
  PhantomSpec base;
  base.size = {16, 16, 16};
  const auto data = make_phantom_dataset(base, 3, 10);
  REQUIRE(data.size() == 3);
  CHECK(data.specs[2].seed == 12);
  write_dataset(data, dir);
  std::ifstream manifest(dir / "manifest.csv");
  std::stringstream text;
  text << manifest.rdbuf();
  CHECK(text.str().find(",12") != std::string::npos);

  const auto back = load_dataset(dir);
  REQUIRE(back.size() == 3);
  CHECK(back.class_count() == base.class_count());
  for (size_t i = 0; i < 3; ++i) {
    CHECK((back.volumes[i].voxels() - data.volumes[i].voxels()).abs().max().item<float>() <= 1e-6f);
    CHECK(torch::equal(back.labels[i].labels(), data.labels[i].labels()));
    CHECK(back.specs[i].seed == data.specs[i].seed);
  }
  CHECK(back.stacked_volumes().sizes() == torch::IntArrayRef({3, 16, 16, 16}));
}
