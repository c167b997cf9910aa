#include "caldm/errors.hpp"
#include "caldm/memory.hpp"
#include "helpers.hpp"

#include <doctest.h>

#include <algorithm>

using namespace caldm;

TEST_CASE("allocation tracker sees CPU tensor allocations") {
  ScopedAllocationTracker tracker;
  const auto before = tracker.live_bytes();
  {
    auto t = torch::empty({1 << 20}, torch::kFloat32);  // 4 MiB
    CHECK(tracker.live_bytes() - before >= (4 << 20));
  }
  CHECK(tracker.live_bytes() == before);
  CHECK(tracker.peak_bytes() - before >= (4 << 20));
}

TEST_CASE("profile geometry keeps the base ratios") {
  const auto s = profile_shape(ShapeConfig::desk(), {128, 64, 64});
  CHECK(s.image == Shape3{128, 64, 64});
  CHECK(s.latent == Shape3{16, 8, 8});
  CHECK(s.window == 5);
}

TEST_CASE("analytic reports: peak bounds every stage, trends by strategy") {
  ProfileOptions opts;
  std::vector<int64_t> slice, holistic, synth;
  for (int64_t d : {32, 64, 128}) {
    for (auto strategy : {DecodeStrategy::kSliceWise, DecodeStrategy::kHolistic3d}) {
      for (auto task : {ProfileTask::kDecode, ProfileTask::kFullSynthesis}) {
        const auto r = analyze_peak_memory(task, strategy, {d, 64, 64}, opts);
        REQUIRE_FALSE(r.stages.empty());
        int64_t max_total = 0, max_act = 0;
        for (const auto& st : r.stages) {
          max_total = std::max(max_total, st.total());
          max_act = std::max(max_act, st.activations);
        }
        CHECK(r.peak_bytes >= max_total);
        CHECK(r.activation_peak >= max_act);
        if (task == ProfileTask::kDecode) {
          (strategy == DecodeStrategy::kSliceWise ? slice : holistic).push_back(r.activation_peak);
        }
      }
    }
  }
  CHECK(static_cast<double>(*std::max_element(slice.begin(), slice.end())) /
            static_cast<double>(*std::min_element(slice.begin(), slice.end())) <=
        1.25);
  CHECK(holistic[0] < holistic[1]);
  CHECK(holistic[1] < holistic[2]);
  CHECK(static_cast<double>(holistic[2]) / static_cast<double>(holistic[0]) >= 3.0);
}

TEST_CASE("holistic decoder upsamples every axis") {
  const auto shape = test::tiny_shape();
  HolisticDecoder3d dec(shape, test::tiny_arch());
  torch::NoGradGuard g;
  const auto out = dec->forward(torch::zeros({1, 4, 4, 4, 4}));
  CHECK(out.sizes() == torch::IntArrayRef({1, 1, 16, 16, 16}));
}

TEST_CASE("measured profile rows") {
  ProfileOptions opts;
  opts.base = test::tiny_shape();
  opts.arch = test::tiny_arch();
  const auto r = profile_peak_memory(ProfileTask::kDecode, DecodeStrategy::kSliceWise, {16, 16, 16}, opts);
  CHECK_FALSE(r.failed);
  CHECK(r.measured_peak > 0);
  const auto header = MemoryReport::csv_header();
  const auto row = r.csv_row();
  CHECK(std::count(header.begin(), header.end(), ',') == std::count(row.begin(), row.end(), ','));
  CHECK(row.rfind("decode,slice-wise-decode,16,16,16,", 0) == 0);

  // Resolutions the base ratios cannot express are rejected before any work.
  CHECK_THROWS_AS(profile_peak_memory(ProfileTask::kDecode, DecodeStrategy::kHolistic3d, {17, 16, 16}, opts),
                  ValidationError);
}
