#include "caldm/checkpoint.hpp"
#include "caldm/errors.hpp"
#include "caldm/nhae.hpp"
#include "helpers.hpp"

#include <doctest.h>

using namespace caldm;

TEST_CASE("checkpoints round-trip parameters and metadata") {
  const auto dir = test::scratch_dir("ckpt");
  const auto shape = test::tiny_shape();
  const auto arch = test::tiny_arch();
  const auto fp = model_fingerprint(shape, arch);
  torch::manual_seed(1);
  Nhae a(shape, arch);
  a->adaptors->set_alpha(0.25f);
  save_checkpoint(dir / "a.ckpt", *a, {"nhae", "nhae-2d", fp, {{"scale", "0.5"}}});

  torch::manual_seed(2);
  Nhae b(shape, arch);
  const auto meta = load_checkpoint(dir / "a.ckpt", *b, "nhae", fp);
  CHECK(meta.stage == "nhae-2d");
  CHECK(meta.number("scale") == doctest::Approx(0.5));
  CHECK_THROWS(meta.get("missing"));
  auto pa = a->named_parameters(), pb = b->named_parameters();
  for (const auto& item : pa) CHECK(torch::equal(item.value(), pb[item.key()]));
  CHECK(read_checkpoint_meta(dir / "a.ckpt").fingerprint == fp);
}

TEST_CASE("checkpoint provenance errors") {
  const auto dir = test::scratch_dir("ckpt_err");
  const auto shape = test::tiny_shape();
  const auto arch = test::tiny_arch();
  const auto fp = model_fingerprint(shape, arch);
  Nhae a(shape, arch);
  save_checkpoint(dir / "a.ckpt", *a, {"nhae", "nhae-2d", fp, {}});
  CHECK_THROWS_AS(load_checkpoint(dir / "missing.ckpt", *a, "nhae", fp), DependencyError);
  CHECK_THROWS_AS(load_checkpoint(dir / "a.ckpt", *a, "diff3d", fp), DependencyError);
  CHECK_THROWS_AS(load_checkpoint(dir / "a.ckpt", *a, "nhae", "0000"), DependencyError);

  // Same fingerprint claimed, different parameter shapes.
  auto wide = arch;
  wide.decoder_base = 32;
  Nhae c(shape, wide);
  CHECK_THROWS_AS(load_checkpoint(dir / "a.ckpt", *c, "nhae", fp), ValidationError);
}
