#pragma once

// Differentiable building blocks shared by the disentanglement model and the
// segmenter. Everything operates on NCHW float/double tensors from libtorch;
// gradients come from torch autograd over the compositions written here.

#include <torch/torch.h>

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace dadr::nn {

inline constexpr double kNormEps = 1e-5;

/// Per-channel scale/shift. Shapes are (C) to broadcast over the batch or
/// (N, C) for per-sample conditioning.
struct AffineParams {
  torch::Tensor gamma;
  torch::Tensor beta;
};

/// Throws NumericError naming `what` if `t` holds NaN or Inf.
void require_finite(const torch::Tensor& t, std::string_view what);

/// Checks the FeatureMap contract: 4-D, every dimension >= 1, finite values.
void check_feature_map(const torch::Tensor& x, std::string_view what);

/// Standardizes every (sample, channel) plane to zero mean, unit variance using
/// the biased variance; zero-variance planes come out as exactly 0.
torch::Tensor instance_norm(const torch::Tensor& x, double eps = kNormEps);

/// gamma * instance_norm(x) + beta, per channel.
torch::Tensor adain(const torch::Tensor& x, const AffineParams& params, double eps = kNormEps);

/// (N, C, H, W) -> (N, C) spatial mean.
torch::Tensor global_avg_pool(const torch::Tensor& x);

enum class LayerKind { conv, residual, upsample, downsample, instance_norm, adain, pool, dense };
enum class Activation { none, relu, tanh, sigmoid };

std::string_view to_string(LayerKind kind);

/// One layer of a network description. Conv layers use zero padding;
/// `downsample` is a 2x2 max-pool, `upsample` nearest-neighbour x2, `pool`
/// global average pooling to 1x1. A residual block is
/// x + norm(conv3(relu(norm(conv3(x))))) where norm is AdaIN when `adaptive`.
struct LayerSpec {
  LayerKind kind = LayerKind::conv;
  int64_t in_channels = 1;
  int64_t out_channels = 1;
  int64_t kernel = 3;
  int64_t stride = 1;
  int64_t padding = 1;
  Activation activation = Activation::none;
  bool adaptive = false;
};

struct Shape {
  int64_t channels = 0;
  int64_t height = 0;
  int64_t width = 0;

  friend bool operator==(const Shape&, const Shape&) = default;
};

std::string to_string(const Shape& s);

/// Output shape of one layer; throws ConfigError if `in` does not fit `spec`.
Shape infer_shape(const LayerSpec& spec, const Shape& in);

/// Threads `input` through the chain, throwing ConfigError at the first
/// inconsistent layer. Returns the final shape.
Shape check_chain(std::span<const LayerSpec> chain, const Shape& input);

/// Channel count of every AdaIN application in the chain, in forward order.
std::vector<int64_t> adain_layout(std::span<const LayerSpec> chain);

// Small helpers for assembling chains.
LayerSpec conv(int64_t in, int64_t out, int64_t kernel, int64_t stride, int64_t padding,
               Activation act = Activation::relu);
LayerSpec residual(int64_t channels, bool adaptive);
LayerSpec upsample(int64_t channels);
LayerSpec downsample(int64_t channels);
LayerSpec norm(int64_t channels);
LayerSpec adain_layer(int64_t channels);
LayerSpec pool(int64_t channels);
LayerSpec dense(int64_t in, int64_t out, Activation act = Activation::none);

/// A feed-forward network built from a shape-checked LayerSpec chain.
class SpecStackImpl : public torch::nn::Module {
 public:
  SpecStackImpl(std::vector<LayerSpec> chain, Shape input);

  /// Forward for chains without AdaIN layers.
  torch::Tensor forward(torch::Tensor x);
  /// Forward consuming one AffineParams per entry of adain_layout().
  torch::Tensor forward(torch::Tensor x, std::span<const AffineParams> params);

  const std::vector<LayerSpec>& chain() const { return chain_; }
  Shape input_shape() const { return input_; }
  Shape output_shape() const { return output_; }
  std::vector<int64_t> adain_layout() const { return nn::adain_layout(chain_); }

 private:
  std::vector<LayerSpec> chain_;
  Shape input_;
  Shape output_;
  std::vector<torch::nn::Conv2d> first_conv_;
  std::vector<torch::nn::Conv2d> second_conv_;
  std::vector<torch::nn::Linear> linear_;
};
TORCH_MODULE(SpecStack);

/// Maps a style vector to the AdaIN parameters of a generator:
/// style -> dense/relu -> dense/relu -> dense, split into (gamma, beta) pairs.
class StyleMlpImpl : public torch::nn::Module {
 public:
  StyleMlpImpl(int64_t style_dim, int64_t hidden, std::vector<int64_t> layout);

  /// `style` is (N, style_dim); every returned AffineParams is (N, C_k).
  std::vector<AffineParams> forward(const torch::Tensor& style);

  int64_t style_dim() const { return style_dim_; }
  const std::vector<int64_t>& layout() const { return layout_; }

 private:
  int64_t style_dim_;
  std::vector<int64_t> layout_;
  torch::nn::Linear fc1_{nullptr};
  torch::nn::Linear fc2_{nullptr};
  torch::nn::Linear out_{nullptr};
};
TORCH_MODULE(StyleMlp);

/// Convenience wrapper with the operation-level contract: validates that the
/// style width matches the MLP and that `layout` is the one it was built for.
std::vector<AffineParams> style_mlp(StyleMlp& mlp, const torch::Tensor& style,
                                    std::span<const int64_t> layout);

/// Re-initializes every weight uniformly in +-sqrt(3 / fan_in) and zeroes
/// biases, drawing from `gen`.
void init_fan_in_uniform(torch::nn::Module& module, at::Generator& gen);

/// Seeded CPU generator.
at::Generator make_generator(uint64_t seed);

torch::Tensor apply_activation(const torch::Tensor& x, Activation act);

}  // namespace dadr::nn
