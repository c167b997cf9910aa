#pragma once

// Dimension-generic convolutional building blocks (N = 2 for slices,
// N = 3 for volumes). Tensors are channel-first: (B, C, spatial...).

#include <torch/torch.h>

#include <string>

namespace caldm {

template <int N>
struct ConvTraits;
template <>
struct ConvTraits<2> {
  using Conv = torch::nn::Conv2d;
};
template <>
struct ConvTraits<3> {
  using Conv = torch::nn::Conv3d;
};

template <int N>
using Conv = typename ConvTraits<N>::Conv;

template <int N>
Conv<N> make_conv(int64_t in, int64_t out, int64_t kernel = 3, int64_t stride = 1) {
  torch::nn::ConvOptions<N> opts(in, out, kernel);
  opts.stride(stride).padding(stride == 1 ? kernel / 2 : 0);
  return Conv<N>(opts);
}

inline int64_t norm_groups(int64_t channels) {
  for (int64_t g = 8; g > 1; --g) {
    if (channels % g == 0) return g;
  }
  return 1;
}

inline torch::nn::GroupNorm make_norm(int64_t channels) {
  return torch::nn::GroupNorm(torch::nn::GroupNormOptions(norm_groups(channels), channels));
}

// Nearest-neighbour upsampling by an integer factor along one axis. Built
// from view ops only, so it also runs on meta tensors for shape dry-runs.
inline torch::Tensor repeat_along(const torch::Tensor& x, int64_t dim, int64_t factor) {
  auto sizes = x.sizes().vec();
  auto expanded = sizes;
  expanded.insert(expanded.begin() + dim + 1, factor);
  sizes[dim] *= factor;
  return x.unsqueeze(dim + 1).expand(expanded).reshape(sizes);
}

// Pre-activation residual block with an optional additive embedding
// (diffusion timestep) injected between the two convolutions.
template <int N>
struct ResBlockImpl : torch::nn::Module {
  ResBlockImpl(int64_t in, int64_t out, int64_t embed_dim = 0) {
    norm1 = register_module("norm1", make_norm(in));
    conv1 = register_module("conv1", make_conv<N>(in, out));
    norm2 = register_module("norm2", make_norm(out));
    conv2 = register_module("conv2", make_conv<N>(out, out));
    if (in != out) skip = register_module("skip", make_conv<N>(in, out, 1));
    if (embed_dim > 0) embed = register_module("embed", torch::nn::Linear(embed_dim, out));
  }

  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& emb = {}) {
    auto h = conv1(torch::silu(norm1(x)));
    if (!embed.is_empty() && emb.defined()) {
      auto e = embed(torch::silu(emb));
      for (int i = 0; i < N; ++i) e = e.unsqueeze(-1);
      h = h + e;
    }
    h = conv2(torch::silu(norm2(h)));
    return (skip.is_empty() ? x : skip(x)) + h;
  }

  torch::nn::GroupNorm norm1{nullptr}, norm2{nullptr};
  Conv<N> conv1{nullptr}, conv2{nullptr}, skip{nullptr};
  torch::nn::Linear embed{nullptr};
};

template <int N>
using ResBlock = torch::nn::ModuleHolder<ResBlockImpl<N>>;

// Final GroupNorm -> SiLU -> conv head.
template <int N>
struct OutHeadImpl : torch::nn::Module {
  OutHeadImpl(int64_t in, int64_t out) {
    norm = register_module("norm", make_norm(in));
    conv = register_module("conv", make_conv<N>(in, out));
  }
  torch::Tensor forward(const torch::Tensor& x) { return conv(torch::silu(norm(x))); }

  torch::nn::GroupNorm norm{nullptr};
  Conv<N> conv{nullptr};
};

template <int N>
using OutHead = torch::nn::ModuleHolder<OutHeadImpl<N>>;

}  // namespace caldm
