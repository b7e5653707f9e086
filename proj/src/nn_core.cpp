#include "dadr/nn_core.hpp"

#include <ATen/CPUGeneratorImpl.h>
#include <fmt/format.h>
#include <fmt/ranges.h>

#include <cmath>
#include <numeric>

#include "dadr/errors.hpp"

namespace dadr::nn {

void require_finite(const torch::Tensor& t, std::string_view what) {
  if (!t.defined()) throw ConfigError(fmt::format("{}: undefined tensor", what));
  if (t.numel() > 0 && !torch::isfinite(t).all().item<bool>()) {
    throw NumericError(fmt::format("{}: non-finite values (corrupted upstream state)", what));
  }
}

void check_feature_map(const torch::Tensor& x, std::string_view what) {
  if (!x.defined() || x.dim() != 4) {
    throw ConfigError(fmt::format("{}: expected a 4-D (N, C, H, W) tensor", what));
  }
  for (int64_t d = 0; d < 4; ++d) {
    if (x.size(d) < 1) throw ConfigError(fmt::format("{}: empty dimension {}", what, d));
  }
  require_finite(x, what);
}

torch::Tensor instance_norm(const torch::Tensor& x, double eps) {
  if (!(eps > 0.0)) throw ConfigError("instance_norm: eps must be positive");
  check_feature_map(x, "instance_norm input");
  auto mean = x.mean({2, 3}, /*keepdim=*/true);
  auto centered = x - mean;
  auto var = centered.pow(2).mean({2, 3}, /*keepdim=*/true);
  return centered / torch::sqrt(var + eps);
}

namespace {

torch::Tensor per_channel(const torch::Tensor& v, int64_t batch, int64_t channels,
                          std::string_view name) {
  if (!v.defined()) throw ConfigError(fmt::format("adain: {} undefined", name));
  if (v.dim() == 1 && v.size(0) == channels) return v.view({1, channels, 1, 1});
  if (v.dim() == 2 && v.size(1) == channels && (v.size(0) == batch || v.size(0) == 1)) {
    return v.view({v.size(0), channels, 1, 1});
  }
  throw ConfigError(fmt::format("adain: {} has shape {} but the feature map has {} channels",
                                name, fmt::join(v.sizes(), "x"), channels));
}

}  // namespace

torch::Tensor adain(const torch::Tensor& x, const AffineParams& params, double eps) {
  check_feature_map(x, "adain input");
  const auto n = x.size(0);
  const auto c = x.size(1);
  auto gamma = per_channel(params.gamma, n, c, "gamma");
  auto beta = per_channel(params.beta, n, c, "beta");
  return gamma * instance_norm(x, eps) + beta;
}

torch::Tensor global_avg_pool(const torch::Tensor& x) {
  check_feature_map(x, "global_avg_pool input");
  return x.mean({2, 3});
}

std::string_view to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::conv: return "conv";
    case LayerKind::residual: return "residual";
    case LayerKind::upsample: return "upsample";
    case LayerKind::downsample: return "downsample";
    case LayerKind::instance_norm: return "instance-norm";
    case LayerKind::adain: return "adain";
    case LayerKind::pool: return "pool";
    case LayerKind::dense: return "dense";
  }
  return "?";
}

std::string to_string(const Shape& s) {
  return fmt::format("{}x{}x{}", s.channels, s.height, s.width);
}

Shape infer_shape(const LayerSpec& spec, const Shape& in) {
  auto fail = [&](std::string_view why) {
    return ConfigError(fmt::format("{} layer ({} -> {}) cannot take input {}: {}",
                                   to_string(spec.kind), spec.in_channels, spec.out_channels,
                                   to_string(in), why));
  };
  if (spec.in_channels < 1 || spec.out_channels < 1) throw fail("channel counts must be positive");
  if (in.channels != spec.in_channels) throw fail("channel mismatch");
  if (in.height < 1 || in.width < 1) throw fail("empty spatial extent");

  switch (spec.kind) {
    case LayerKind::conv: {
      if (spec.kernel < 1 || spec.stride < 1 || spec.padding < 0) throw fail("bad kernel/stride/padding");
      const auto h = (in.height + 2 * spec.padding - spec.kernel) / spec.stride + 1;
      const auto w = (in.width + 2 * spec.padding - spec.kernel) / spec.stride + 1;
      if (in.height + 2 * spec.padding < spec.kernel || h < 1 || w < 1) throw fail("kernel larger than input");
      return {spec.out_channels, h, w};
    }
    case LayerKind::residual:
    case LayerKind::instance_norm:
    case LayerKind::adain:
      if (spec.out_channels != spec.in_channels) throw fail("must preserve channel count");
      return in;
    case LayerKind::upsample:
      if (spec.out_channels != spec.in_channels) throw fail("must preserve channel count");
      return {in.channels, in.height * 2, in.width * 2};
    case LayerKind::downsample:
      if (spec.out_channels != spec.in_channels) throw fail("must preserve channel count");
      if (in.height % 2 != 0 || in.width % 2 != 0) throw fail("spatial size not divisible by 2");
      return {in.channels, in.height / 2, in.width / 2};
    case LayerKind::pool:
      if (spec.out_channels != spec.in_channels) throw fail("must preserve channel count");
      return {in.channels, 1, 1};
    case LayerKind::dense:
      if (in.height != 1 || in.width != 1) throw fail("dense layers need a pooled 1x1 input");
      return {spec.out_channels, 1, 1};
  }
  throw fail("unknown layer kind");
}

Shape check_chain(std::span<const LayerSpec> chain, const Shape& input) {
  Shape s = input;
  for (size_t i = 0; i < chain.size(); ++i) {
    try {
      s = infer_shape(chain[i], s);
    } catch (const ConfigError& e) {
      throw ConfigError(fmt::format("layer {}: {}", i, e.what()));
    }
  }
  return s;
}

std::vector<int64_t> adain_layout(std::span<const LayerSpec> chain) {
  std::vector<int64_t> layout;
  for (const auto& spec : chain) {
    if (spec.kind == LayerKind::adain) layout.push_back(spec.out_channels);
    if (spec.kind == LayerKind::residual && spec.adaptive) {
      layout.push_back(spec.out_channels);
      layout.push_back(spec.out_channels);
    }
  }
  return layout;
}

LayerSpec conv(int64_t in, int64_t out, int64_t kernel, int64_t stride, int64_t padding,
               Activation act) {
  return {LayerKind::conv, in, out, kernel, stride, padding, act, false};
}
LayerSpec residual(int64_t channels, bool adaptive) {
  return {LayerKind::residual, channels, channels, 3, 1, 1, Activation::none, adaptive};
}
LayerSpec upsample(int64_t channels) {
  return {LayerKind::upsample, channels, channels, 1, 1, 0, Activation::none, false};
}
LayerSpec downsample(int64_t channels) {
  return {LayerKind::downsample, channels, channels, 2, 2, 0, Activation::none, false};
}
LayerSpec norm(int64_t channels) {
  return {LayerKind::instance_norm, channels, channels, 1, 1, 0, Activation::relu, false};
}
LayerSpec adain_layer(int64_t channels) {
  return {LayerKind::adain, channels, channels, 1, 1, 0, Activation::relu, true};
}
LayerSpec pool(int64_t channels) {
  return {LayerKind::pool, channels, channels, 1, 1, 0, Activation::none, false};
}
LayerSpec dense(int64_t in, int64_t out, Activation act) {
  return {LayerKind::dense, in, out, 1, 1, 0, act, false};
}

torch::Tensor apply_activation(const torch::Tensor& x, Activation act) {
  switch (act) {
    case Activation::none: return x;
    case Activation::relu: return torch::relu(x);
    case Activation::tanh: return torch::tanh(x);
    case Activation::sigmoid: return torch::sigmoid(x);
  }
  return x;
}

SpecStackImpl::SpecStackImpl(std::vector<LayerSpec> chain, Shape input)
    : chain_(std::move(chain)), input_(input), output_(check_chain(chain_, input)) {
  first_conv_.resize(chain_.size(), nullptr);
  second_conv_.resize(chain_.size(), nullptr);
  linear_.resize(chain_.size(), nullptr);
  for (size_t i = 0; i < chain_.size(); ++i) {
    const auto& s = chain_[i];
    const auto name = fmt::format("layer{}", i);
    switch (s.kind) {
      case LayerKind::conv:
        first_conv_[i] = register_module(
            name, torch::nn::Conv2d(torch::nn::Conv2dOptions(s.in_channels, s.out_channels, s.kernel)
                                        .stride(s.stride)
                                        .padding(s.padding)));
        break;
      case LayerKind::residual: {
        auto opts = torch::nn::Conv2dOptions(s.in_channels, s.out_channels, 3).padding(1);
        first_conv_[i] = register_module(name + "_a", torch::nn::Conv2d(opts));
        second_conv_[i] = register_module(name + "_b", torch::nn::Conv2d(opts));
        break;
      }
      case LayerKind::dense:
        linear_[i] = register_module(name, torch::nn::Linear(s.in_channels, s.out_channels));
        break;
      default:
        break;
    }
  }
}

torch::Tensor SpecStackImpl::forward(torch::Tensor x) { return forward(std::move(x), {}); }

torch::Tensor SpecStackImpl::forward(torch::Tensor x, std::span<const AffineParams> params) {
  if (x.dim() != 4 || x.size(1) != input_.channels || x.size(2) != input_.height ||
      x.size(3) != input_.width) {
    throw ConfigError(fmt::format("network expects input (N, {}), got {}", to_string(input_),
                                  fmt::join(x.sizes(), "x")));
  }
  size_t next_param = 0;
  auto take_params = [&]() -> const AffineParams& {
    if (next_param >= params.size()) {
      throw ConfigError(fmt::format("network needs {} AdaIN parameter sets, got {}",
                                    adain_layout().size(), params.size()));
    }
    return params[next_param++];
  };

  for (size_t i = 0; i < chain_.size(); ++i) {
    const auto& s = chain_[i];
    switch (s.kind) {
      case LayerKind::conv:
        x = first_conv_[i]->forward(x);
        break;
      case LayerKind::residual: {
        auto h = first_conv_[i]->forward(x);
        h = s.adaptive ? adain(h, take_params()) : instance_norm(h);
        h = torch::relu(h);
        h = second_conv_[i]->forward(h);
        h = s.adaptive ? adain(h, take_params()) : instance_norm(h);
        x = x + h;
        break;
      }
      case LayerKind::upsample:
        x = torch::nn::functional::interpolate(
            x, torch::nn::functional::InterpolateFuncOptions()
                   .scale_factor(std::vector<double>{2.0, 2.0})
                   .mode(torch::kNearest));
        break;
      case LayerKind::downsample:
        x = torch::max_pool2d(x, {2, 2}, {2, 2});
        break;
      case LayerKind::instance_norm:
        x = instance_norm(x);
        break;
      case LayerKind::adain:
        x = adain(x, take_params());
        break;
      case LayerKind::pool:
        x = global_avg_pool(x).unsqueeze(-1).unsqueeze(-1);
        break;
      case LayerKind::dense:
        x = linear_[i]->forward(x.flatten(1)).unsqueeze(-1).unsqueeze(-1);
        break;
    }
    x = apply_activation(x, s.activation);
  }
  if (next_param != params.size()) {
    throw ConfigError(fmt::format("network consumed {} AdaIN parameter sets but {} were supplied",
                                  next_param, params.size()));
  }
  return x;
}

StyleMlpImpl::StyleMlpImpl(int64_t style_dim, int64_t hidden, std::vector<int64_t> layout)
    : style_dim_(style_dim), layout_(std::move(layout)) {
  if (style_dim < 1 || hidden < 1) throw ConfigError("style_mlp: dimensions must be positive");
  if (layout_.empty()) throw ConfigError("style_mlp: empty AdaIN layout");
  const auto total = std::accumulate(layout_.begin(), layout_.end(), int64_t{0}) * 2;
  fc1_ = register_module("fc1", torch::nn::Linear(style_dim, hidden));
  fc2_ = register_module("fc2", torch::nn::Linear(hidden, hidden));
  out_ = register_module("out", torch::nn::Linear(hidden, total));
}

std::vector<AffineParams> StyleMlpImpl::forward(const torch::Tensor& style) {
  if (style.dim() != 2 || style.size(1) != style_dim_) {
    throw ConfigError(fmt::format("style_mlp: expected (N, {}) style codes, got {}", style_dim_,
                                  fmt::join(style.sizes(), "x")));
  }
  auto h = torch::relu(fc1_->forward(style));
  h = torch::relu(fc2_->forward(h));
  auto flat = out_->forward(h);
  std::vector<AffineParams> params;
  params.reserve(layout_.size());
  int64_t offset = 0;
  for (auto c : layout_) {
    auto gamma = flat.narrow(1, offset, c);
    auto beta = flat.narrow(1, offset + c, c);
    offset += 2 * c;
    params.push_back({gamma, beta});
  }
  return params;
}

std::vector<AffineParams> style_mlp(StyleMlp& mlp, const torch::Tensor& style,
                                    std::span<const int64_t> layout) {
  if (!std::equal(layout.begin(), layout.end(), mlp->layout().begin(), mlp->layout().end())) {
    throw ConfigError("style_mlp: requested layout does not match the configured generator");
  }
  return mlp->forward(style);
}

void init_fan_in_uniform(torch::nn::Module& module, at::Generator& gen) {
  torch::NoGradGuard no_grad;
  for (auto& item : module.named_parameters(/*recurse=*/true)) {
    auto& p = item.value();
    const auto& name = item.key();
    if (name.size() >= 4 && name.compare(name.size() - 4, 4, "bias") == 0) {
      p.zero_();
    } else if (p.dim() >= 2) {
      const auto fan_in = p.numel() / p.size(0);
      const double bound = std::sqrt(3.0 / static_cast<double>(fan_in));
      p.uniform_(-bound, bound, gen);
    }
  }
}

at::Generator make_generator(uint64_t seed) { return at::detail::createCPUGenerator(seed); }

}  // namespace dadr::nn
