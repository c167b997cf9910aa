#include "caldm/nhae.hpp"

#include "caldm/errors.hpp"

namespace caldm {

namespace {

// In training mode the batch runs through the 2D layers at once. At
// inference every slice goes through alone, so a slice decodes to the same
// bits whether it sits in a window or is decoded on its own.
template <class Fn>
torch::Tensor per_sample(bool batched, const torch::Tensor& x, Fn&& fn) {
  if (batched || x.size(0) == 1) return fn(x);
  std::vector<torch::Tensor> outs;
  outs.reserve(static_cast<size_t>(x.size(0)));
  for (int64_t i = 0; i < x.size(0); ++i) outs.push_back(fn(x.narrow(0, i, 1).clone()));
  return torch::cat(outs);
}

torch::Tensor upsample_hw(const torch::Tensor& x, int64_t factor) {
  return repeat_along(repeat_along(x, 2, factor), 3, factor);
}

Posterior split_moments(const torch::Tensor& moments) {
  auto parts = moments.chunk(2, 1);
  return {parts[0], parts[1].clamp(-30.0, 20.0)};
}

void require_sizes(const torch::Tensor& t, const std::vector<int64_t>& expected, const std::string& what) {
  if (!t.defined() || t.sizes().vec() != expected) {
    std::string got = t.defined() ? std::string(c10::str(t.sizes())) : "undefined";
    throw ValidationError(what + ": expected shape " + c10::str(c10::IntArrayRef(expected)) + ", got " + got);
  }
}

}  // namespace

torch::Tensor Posterior::sample() const { return mean + torch::exp(0.5 * logvar) * torch::randn_like(mean); }

torch::Tensor Posterior::kl() const {
  auto per_elem = mean.pow(2) + logvar.exp() - 1.0 - logvar;
  return 0.5 * per_elem.flatten(1).sum(1).mean();
}

// --- SliceEncoder -----------------------------------------------------------

SliceEncoderImpl::SliceEncoderImpl(const ShapeConfig& shape, const ArchConfig& arch) {
  const auto ch = arch.decoder_channels(shape);
  const auto dec_factors = prime_factors(shape.spatial_factor());
  const size_t levels = ch.size() - 1;
  conv_in = register_module("conv_in", make_conv<2>(1, ch[levels]));
  for (size_t l = levels; l >= 1; --l) {
    blocks.push_back(register_module("block" + std::to_string(levels - l), ResBlock<2>(ch[l], ch[l])));
    downs.push_back(register_module("down" + std::to_string(levels - l), make_conv<2>(ch[l], ch[l - 1])));
    factors.push_back(dec_factors[l - 1]);
  }
  blocks.push_back(register_module("block" + std::to_string(levels), ResBlock<2>(ch[0], ch[0])));
  head = register_module("head", OutHead<2>(ch[0], 2 * shape.channels));
}

Posterior SliceEncoderImpl::forward(const torch::Tensor& x) {
  auto h = conv_in(x);
  for (size_t i = 0; i < downs.size(); ++i) {
    h = blocks[i](h);
    h = torch::avg_pool2d(downs[i](h), factors[i]);
  }
  h = blocks.back()(h);
  return split_moments(head(h));
}

// --- Adaptors ---------------------------------------------------------------

Adaptor3dImpl::Adaptor3dImpl(int64_t channels) {
  norm = register_module("norm", make_norm(channels));
  conv = register_module("conv", make_conv<3>(channels, channels));
  alpha = register_parameter("alpha", torch::zeros({1}));
}

torch::Tensor Adaptor3dImpl::forward(const torch::Tensor& h, int64_t window) {
  const auto batch = h.size(0) / window;
  const auto c = h.size(1), height = h.size(2), width = h.size(3);
  // The slice index becomes a spatial axis: (B, C, k, h, w).
  auto x = h.reshape({batch, window, c, height, width}).permute({0, 2, 1, 3, 4});
  auto y = conv(torch::silu(norm(x)));
  y = y.permute({0, 2, 1, 3, 4}).reshape({batch * window, c, height, width});
  return h + alpha * y;
}

AdaptorStackImpl::AdaptorStackImpl(const std::vector<int64_t>& level_channels) {
  for (size_t l = 0; l < level_channels.size(); ++l) {
    levels.push_back(register_module("level" + std::to_string(l), Adaptor3d(level_channels[l])));
  }
}

void AdaptorStackImpl::set_alpha(float value) {
  torch::NoGradGuard no_grad;
  for (auto& a : levels) a->alpha.fill_(value);
}

// --- SliceDecoder -----------------------------------------------------------

SliceDecoderImpl::SliceDecoderImpl(const ShapeConfig& shape, const ArchConfig& arch)
    : channels(arch.decoder_channels(shape)), factors(prime_factors(shape.spatial_factor())) {
  conv_in = register_module("conv_in", make_conv<2>(shape.channels, channels[0]));
  for (size_t l = 0; l < channels.size(); ++l) {
    blocks.push_back(register_module("block" + std::to_string(l), ResBlock<2>(channels[l], channels[l])));
    if (l + 1 < channels.size()) {
      ups.push_back(register_module("up" + std::to_string(l), make_conv<2>(channels[l], channels[l + 1])));
    }
  }
  head = register_module("head", OutHead<2>(channels.back(), 1));
}

torch::Tensor SliceDecoderImpl::level_in(const torch::Tensor& z) { return blocks[0](conv_in(z)); }

torch::Tensor SliceDecoderImpl::level_block(size_t level, const torch::Tensor& h) {
  return blocks[level](ups[level - 1](upsample_hw(h, factors[level - 1])));
}

torch::Tensor SliceDecoderImpl::finish(const torch::Tensor& h) { return torch::tanh(head(h)); }

torch::Tensor SliceDecoderImpl::forward(const torch::Tensor& z) {
  return per_sample(is_training(), z, [this](const torch::Tensor& x) {
    auto h = level_in(x);
    for (size_t l = 1; l < blocks.size(); ++l) h = level_block(l, h);
    return finish(h);
  });
}

torch::Tensor SliceDecoderImpl::forward_window(const torch::Tensor& windows, AdaptorStack& adaptors) {
  const auto batch = windows.size(0), window = windows.size(1);
  const bool batched = is_training();
  auto h = windows.reshape({batch * window, windows.size(2), windows.size(3), windows.size(4)});
  h = per_sample(batched, h, [this](const torch::Tensor& x) { return level_in(x); });
  h = adaptors->levels[0](h, window);
  for (size_t l = 1; l < blocks.size(); ++l) {
    h = per_sample(batched, h, [this, l](const torch::Tensor& x) { return level_block(l, x); });
    h = adaptors->levels[l](h, window);
  }
  auto center = h.reshape({batch, window, h.size(1), h.size(2), h.size(3)}).select(1, window / 2);
  return per_sample(batched, center, [this](const torch::Tensor& x) { return finish(x); });
}

// --- ThumbnailEncoder -------------------------------------------------------

ThumbnailEncoderImpl::ThumbnailEncoderImpl(const ShapeConfig& shape, const ArchConfig& arch) {
  const auto c0 = arch.encoder3d_base, c1 = 2 * arch.encoder3d_base;
  conv_in = register_module("conv_in", make_conv<3>(1, c0));
  block0 = register_module("block0", ResBlock<3>(c0, c0));
  down = register_module("down", make_conv<3>(c0, c1));
  block1 = register_module("block1", ResBlock<3>(c1, c1));
  head = register_module("head", OutHead<3>(c1, 2 * shape.channels));
}

Posterior ThumbnailEncoderImpl::forward(const torch::Tensor& thumb) {
  auto h = block0(conv_in(thumb));
  h = block1(torch::avg_pool3d(down(h), 2));
  return split_moments(head(h));
}

// --- UniaxialSR -------------------------------------------------------------

UniaxialSRImpl::UniaxialSRImpl(const ShapeConfig& shape, const ArchConfig& arch)
    : factors(prime_factors(shape.depth_factor())) {
  const auto s = arch.sr_channels;
  conv_in = register_module("conv_in", make_conv<3>(shape.channels, s));
  block_in = register_module("block_in", ResBlock<3>(s, s));
  for (size_t i = 0; i < factors.size(); ++i) {
    ups.push_back(register_module("up" + std::to_string(i), make_conv<3>(s, s)));
    blocks.push_back(register_module("block" + std::to_string(i), ResBlock<3>(s, s)));
  }
  head = register_module("head", OutHead<3>(s, shape.channels));
}

torch::Tensor UniaxialSRImpl::forward(const torch::Tensor& z) {
  auto h = block_in(conv_in(z));
  for (size_t i = 0; i < factors.size(); ++i) {
    h = blocks[i](ups[i](repeat_along(h, 2, factors[i])));
  }
  return head(h);
}

// --- Nhae -------------------------------------------------------------------

torch::Tensor latent_window(const torch::Tensor& z_sr, int64_t center, int64_t window) {
  const auto depth = z_sr.size(1);
  auto idx = torch::arange(center - window / 2, center + window / 2 + 1, torch::kInt64).clamp(0, depth - 1);
  return z_sr.index_select(1, idx.to(z_sr.device())).permute({1, 0, 2, 3});
}

NhaeImpl::NhaeImpl(ShapeConfig shape_, ArchConfig arch_) : shape(shape_), arch(arch_) {
  shape.validate();
  train_encoder = register_module("train_encoder", SliceEncoder(shape, arch));
  decoder = register_module("decoder", SliceDecoder(shape, arch));
  adaptors = register_module("adaptors", AdaptorStack(decoder->channels));
  thumb_encoder = register_module("thumb_encoder", ThumbnailEncoder(shape, arch));
  sr = register_module("sr", UniaxialSR(shape, arch));
  hr_encoder = register_module("hr_encoder", SliceEncoder(shape, arch));
}

Posterior NhaeImpl::encode_thumbnail(const Volume& thumbnail) {
  const auto expected = shape.thumbnail();
  CALDM_CHECK(thumbnail.shape() == expected, ValidationError,
              "thumbnail shape " + thumbnail.shape().str() + " does not match configured " + expected.str());
  auto p = thumb_encoder(thumbnail.voxels().unsqueeze(0).unsqueeze(0));
  return {p.mean.squeeze(0), p.logvar.squeeze(0)};
}

torch::Tensor NhaeImpl::uniaxial_superres(const torch::Tensor& z) {
  require_sizes(z, shape.latent_sizes(), "uniaxial_superres input");
  return sr(z.unsqueeze(0)).squeeze(0);
}

torch::Tensor NhaeImpl::decode_slice_2d(const torch::Tensor& slice) {
  require_sizes(slice, shape.latent_slice_sizes(), "decode_slice_2d input");
  return decoder(slice.unsqueeze(0)).squeeze(0).squeeze(0);
}

torch::Tensor NhaeImpl::decode_multislice(const torch::Tensor& window) {
  auto expected = shape.latent_slice_sizes();
  expected.insert(expected.begin(), shape.window);
  require_sizes(window, expected, "decode_multislice window");
  return decoder->forward_window(window.unsqueeze(0), adaptors).squeeze(0).squeeze(0);
}

void NhaeImpl::decode_volume(const torch::Tensor& z_sr, SliceSink& sink) {
  require_sizes(z_sr, shape.upsampled_sizes(), "decode_volume latent sequence");
  CALDM_CHECK(z_sr.size(1) >= shape.window, ValidationError, "latent depth must be >= k");
  torch::NoGradGuard no_grad;
  const auto depth = z_sr.size(1);
  sink.begin({depth, shape.image.height, shape.image.width});
  try {
    for (int64_t i = 0; i < depth; ++i) {
      sink.write(i, decode_multislice(latent_window(z_sr, i, shape.window)));
    }
    sink.finish();
  } catch (const Error&) {
    sink.abort();
    throw;
  } catch (const std::exception& e) {
    sink.abort();
    throw IoError(std::string("slice sink failed, output is incomplete: ") + e.what());
  }
}

torch::Tensor NhaeImpl::encode_slice_hr(const torch::Tensor& image) {
  require_sizes(image, {shape.image.height, shape.image.width}, "encode_slice_hr input");
  return hr_encoder(image.unsqueeze(0).unsqueeze(0)).mean.squeeze(0);
}

void NhaeImpl::set_decoder_frozen(bool frozen) {
  for (auto& p : decoder->parameters()) p.set_requires_grad(!frozen);
}

}  // namespace caldm
