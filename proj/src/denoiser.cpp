#include "caldm/denoiser.hpp"

#include "caldm/config.hpp"
#include "caldm/errors.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace caldm {

std::string DenoiserSpec::str() const {
  std::ostringstream os;
  os << "latent=" << latent_channels << " guide=" << guide_channels << " classes=" << label_classes
     << " cond=" << cond_channels << " base=" << base_channels << " temb=" << time_embed << " factors=";
  for (auto f : label_factors) os << f << ",";
  return os.str();
}

torch::Tensor timestep_embedding(const torch::Tensor& t, int64_t dim) {
  const auto half = dim / 2;
  auto freqs = torch::exp(-std::log(10000.0) * torch::arange(half, torch::kFloat32) / static_cast<double>(half));
  auto args = t.to(torch::kFloat32).unsqueeze(1) * freqs.unsqueeze(0);
  return torch::cat({torch::sin(args), torch::cos(args)}, 1);
}

namespace {

template <int N>
torch::Tensor upsample_all(torch::Tensor x) {
  for (int d = 0; d < N; ++d) x = repeat_along(x, 2 + d, 2);
  return x;
}

}  // namespace

template <int N>
UNetImpl<N>::UNetImpl(int64_t in_ch, int64_t out_ch, int64_t base_, int64_t time_embed) : base(base_) {
  time_mlp = register_module("time_mlp", torch::nn::Sequential(torch::nn::Linear(base, time_embed), torch::nn::SiLU(),
                                                               torch::nn::Linear(time_embed, time_embed)));
  const int64_t wide = 2 * base;
  conv_in = register_module("conv_in", make_conv<N>(in_ch, base));
  enc0 = register_module("enc0", ResBlock<N>(base, base, time_embed));
  down = register_module("down", Conv<N>(torch::nn::ConvOptions<N>(base, base, 3).stride(2).padding(1)));
  enc1 = register_module("enc1", ResBlock<N>(base, wide, time_embed));
  mid = register_module("mid", ResBlock<N>(wide, wide, time_embed));
  dec1 = register_module("dec1", ResBlock<N>(2 * wide, wide, time_embed));
  up = register_module("up", make_conv<N>(wide, base));
  dec0 = register_module("dec0", ResBlock<N>(2 * base, base, time_embed));
  head = register_module("head", OutHead<N>(base, out_ch));
  torch::NoGradGuard no_grad;
  head->conv->weight.zero_();
  head->conv->bias.zero_();
}

template <int N>
torch::Tensor UNetImpl<N>::forward(const torch::Tensor& x, const torch::Tensor& t) {
  for (int d = 0; d < N; ++d) {
    CALDM_CHECK(x.size(2 + d) % 2 == 0, ValidationError, "denoiser input spatial sizes must be even");
  }
  auto emb = time_mlp->forward(timestep_embedding(t, base));
  auto skip0 = enc0(conv_in(x), emb);
  auto skip1 = enc1(down(skip0), emb);
  auto h = mid(skip1, emb);
  h = dec1(torch::cat({h, skip1}, 1), emb);
  h = up(upsample_all<N>(h));
  h = dec0(torch::cat({h, skip0}, 1), emb);
  return head(h);
}

template <int N>
LabelEncoderImpl<N>::LabelEncoderImpl(int64_t classes, int64_t out_channels, const std::vector<int64_t>& factors) {
  CALDM_CHECK(static_cast<int>(factors.size()) == N, ValidationError, "label encoder needs one factor per axis");
  std::array<std::vector<int64_t>, N> per_axis;
  size_t depth = 0;
  for (int a = 0; a < N; ++a) {
    per_axis[a] = prime_factors(factors[a]);
    depth = std::max(depth, per_axis[a].size());
  }
  const auto kernel_at = [&](size_t s) {
    std::vector<int64_t> k(N);
    for (int a = 0; a < N; ++a) k[a] = s < per_axis[a].size() ? per_axis[a][s] : 1;
    return k;
  };
  // The first reduction is a plain average of the one-hot maps (per-block
  // class fractions): at full resolution a learned convolution would cost
  // more than the whole denoiser.
  pool = depth > 0 ? kernel_at(0) : std::vector<int64_t>(N, 1);
  const int64_t hidden = 16;
  int64_t in = classes;
  for (size_t s = 1; s < depth; ++s) {
    torch::ExpandingArray<N> k(kernel_at(s));
    stages.push_back(register_module("stage" + std::to_string(s),
                                     Conv<N>(torch::nn::ConvOptions<N>(in, hidden, k).stride(k))));
    in = hidden;
  }
  out = register_module("out", make_conv<N>(in, out_channels));
}

template <int N>
torch::Tensor LabelEncoderImpl<N>::forward(const torch::Tensor& one_hot) {
  auto h = one_hot;
  if (std::any_of(pool.begin(), pool.end(), [](int64_t k) { return k > 1; })) {
    h = N == 3 ? torch::avg_pool3d(h, pool) : torch::avg_pool2d(h, pool);
  }
  for (auto& s : stages) h = torch::silu(s(h));
  return out(h);
}

template <int N>
DenoiserImpl<N>::DenoiserImpl(DenoiserSpec spec_) : spec(std::move(spec_)) {
  unet = register_module("unet", UNet<N>(spec.input_channels(), spec.latent_channels, spec.base_channels,
                                         spec.time_embed));
  if (spec.label_classes > 0) {
    label_encoder =
        register_module("label_encoder", LabelEncoder<N>(spec.label_classes, spec.cond_channels, spec.label_factors));
  }
}

template <int N>
torch::Tensor DenoiserImpl<N>::condition(const torch::Tensor& guide, const torch::Tensor& labels_one_hot) {
  std::vector<torch::Tensor> parts;
  if (spec.guide_channels > 0) {
    CALDM_CHECK(guide.defined() && guide.size(1) == spec.guide_channels, ValidationError,
                "denoiser expects a guide latent with " + std::to_string(spec.guide_channels) + " channels");
    parts.push_back(guide);
  }
  if (spec.label_classes > 0) {
    CALDM_CHECK(labels_one_hot.defined() && labels_one_hot.size(1) == spec.label_classes, ValidationError,
                "denoiser expects one-hot labels with " + std::to_string(spec.label_classes) + " classes");
    parts.push_back(label_encoder(labels_one_hot));
  }
  if (parts.empty()) return {};
  return torch::cat(parts, 1);
}

template <int N>
torch::Tensor DenoiserImpl<N>::forward(const torch::Tensor& x_t, const torch::Tensor& t, const torch::Tensor& cond) {
  if (!cond.defined()) {
    CALDM_CHECK(spec.input_channels() == spec.latent_channels, ValidationError,
                "conditional denoiser called without conditioning");
    return unet(x_t, t);
  }
  CALDM_CHECK(cond.size(0) == x_t.size(0), ValidationError, "conditioning batch does not match the noisy latent");
  for (int d = 0; d < N; ++d) {
    CALDM_CHECK(cond.size(2 + d) == x_t.size(2 + d), ValidationError,
                "conditioning spatial shape does not match the noisy latent");
  }
  return unet(torch::cat({x_t, cond}, 1), t);
}

template <int N>
EpsModel DenoiserImpl<N>::eps_model(torch::Tensor cond) {
  return [this, cond](const torch::Tensor& x, const torch::Tensor& t) { return forward(x, t, cond); };
}

template <int N>
void DenoiserImpl<N>::init_from(DenoiserImpl& base_model) {
  torch::NoGradGuard no_grad;
  auto src = base_model.unet->named_parameters();
  for (auto& item : unet->named_parameters()) {
    auto* other = src.find(item.key());
    CALDM_CHECK(other != nullptr, ValidationError, "base denoiser lacks parameter " + item.key());
    auto& dst = item.value();
    if (dst.sizes() == other->sizes()) {
      dst.copy_(*other);
    } else if (item.key() == "conv_in.weight" && dst.size(1) > other->size(1)) {
      dst.zero_();
      dst.narrow(1, 0, other->size(1)).copy_(*other);
    } else {
      throw ValidationError("incompatible denoiser parameter " + item.key());
    }
  }
}

template struct UNetImpl<2>;
template struct UNetImpl<3>;
template struct LabelEncoderImpl<2>;
template struct LabelEncoderImpl<3>;
template struct DenoiserImpl<2>;
template struct DenoiserImpl<3>;

}  // namespace caldm
