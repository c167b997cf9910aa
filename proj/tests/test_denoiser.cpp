#include "caldm/denoiser.hpp"
#include "caldm/errors.hpp"
#include "caldm/pipeline.hpp"
#include "caldm/rng.hpp"
#include "caldm/volume.hpp"

#include <doctest.h>

using namespace caldm;

TEST_CASE("timestep embedding") {
  const auto e = timestep_embedding(torch::tensor({0.0f, 10.0f, 500.0f}), 16);
  CHECK(e.sizes() == torch::IntArrayRef({3, 16}));
  CHECK(torch::isfinite(e).all().item<bool>());
  CHECK_FALSE(torch::equal(e[1], e[2]));
}

TEST_CASE("label conditioning reaches latent resolution") {
  const auto shape = ShapeConfig::desk();
  torch::manual_seed(0);
  Denoiser3d d(global_denoiser_spec(shape, ArchConfig{}, 7));
  d->eval();
  torch::NoGradGuard g;
  const LabelVolume background(torch::zeros({64, 64, 64}, torch::kInt64), 7);
  const auto oh = background.one_hot().unsqueeze(0);
  const auto cond = d->condition({}, oh);
  CHECK(cond.sizes() == torch::IntArrayRef({1, 4, 8, 8, 8}));
  CHECK(torch::isfinite(cond).all().item<bool>());
  CHECK(torch::equal(cond, d->condition({}, oh)));

  auto gen = make_generator(1);
  const auto x = torch::randn({1, 4, 8, 8, 8}, gen);
  const auto eps = d->forward(x, torch::full({1}, 10.0f), cond);
  CHECK(eps.sizes() == x.sizes());
}

TEST_CASE("slice denoiser takes the guide latent as conditioning") {
  const auto shape = ShapeConfig::desk();
  torch::manual_seed(0);
  Denoiser2d d(slice_denoiser_spec(shape, ArchConfig{}));
  CHECK(d->spec.input_channels() == 8);
  torch::NoGradGuard g;
  auto guide = torch::randn({3, 4, 8, 8});
  const auto cond = d->condition(guide, {});
  const auto eps = d->forward(torch::randn({3, 4, 8, 8}), torch::full({3}, 5.0f), cond);
  CHECK(eps.sizes() == torch::IntArrayRef({3, 4, 8, 8}));
}

TEST_CASE("class indices out of range are rejected") {
  CHECK_THROWS_AS(LabelVolume(torch::full({4, 4, 4}, 7, torch::kInt64), 7), ValidationError);
  CHECK_THROWS_AS(LabelVolume(torch::full({4, 4, 4}, -1, torch::kInt64), 7), ValidationError);
}

TEST_CASE("conditional fine-tuning starts from the unconditional model") {
  const auto shape = ShapeConfig::desk();
  const ArchConfig arch;
  torch::manual_seed(3);
  Denoiser3d base(global_denoiser_spec(shape, arch));
  {
    // Non-zero head so the comparison is not trivially 0 == 0.
    torch::NoGradGuard g;
    base->unet->head->conv->weight.normal_(0, 0.1);
  }
  Denoiser3d cond(global_denoiser_spec(shape, arch, 7));
  cond->init_from(*base);
  base->eval();
  cond->eval();
  torch::NoGradGuard g;
  auto gen = make_generator(4);
  const auto x = torch::randn({1, 4, 8, 8, 8}, gen);
  const auto t = torch::full({1}, 100.0f);
  const LabelVolume labels(torch::randint(0, 7, {64, 64, 64}, gen, torch::kInt64), 7);
  const auto c = cond->condition({}, labels.one_hot().unsqueeze(0));
  CHECK(torch::allclose(cond->forward(x, t, c), base->forward(x, t), 1e-5, 1e-6));
}
