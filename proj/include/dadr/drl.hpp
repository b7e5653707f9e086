#pragma once

// Disentangled representation learning: per-domain content/style encoders,
// AdaIN generators and discriminators, the three loss groups and the
// alternating trainer.

#include <torch/torch.h>

#include <nlohmann/json.hpp>

#include <cstdint>
#include <optional>
#include <vector>

#include "dadr/nn_core.hpp"

namespace dadr {

enum class Domain : int { first = 1, second = 2 };

inline int domain_index(Domain d) { return static_cast<int>(d) - 1; }
inline Domain other(Domain d) { return d == Domain::first ? Domain::second : Domain::first; }
Domain domain_from_int(int value);

/// Single-channel images in [-1, 1], shape (N, 1, H, W), all from one domain.
struct ImageBatch {
  torch::Tensor pixels;
  Domain domain = Domain::first;
  std::vector<int64_t> scene_ids;  // provenance only; may be empty

  int64_t size() const { return pixels.defined() ? pixels.size(0) : 0; }
};

/// Domain-invariant spatial code, (N, C, H/4, W/4) at the default two stages.
struct ContentCode {
  torch::Tensor features;
};

/// Domain-specific appearance vectors, (N, style_dim).
struct StyleCode {
  torch::Tensor values;

  int64_t size() const { return values.defined() ? values.size(0) : 0; }
};

struct LossWeights {
  double alpha = 25.0;  // in-domain reconstruction
  double beta = 10.0;   // adversarial translation
  double gamma = 0.1;   // latent reconstruction
};

/// Standard normal prior over style codes with its own seeded generator.
class StylePrior {
 public:
  StylePrior(int64_t style_dim, uint64_t seed);

  StyleCode sample(int64_t n);
  int64_t dim() const { return dim_; }
  at::Generator& generator() { return gen_; }

 private:
  int64_t dim_;
  at::Generator gen_;
};

/// Draws n i.i.d. codes; n must be >= 1.
StyleCode sample_style(StylePrior& prior, int64_t n);

struct DrlConfig {
  int64_t image_size = 64;
  int64_t content_channels = 64;
  int64_t style_dim = 8;
  int64_t downsample_stages = 2;
  int64_t residual_blocks = 3;
  int64_t style_channels = 16;
  int64_t mlp_hidden = 64;
  int64_t disc_channels = 16;
  bool patch_discriminator = false;

  /// 256x256 inputs, 256 content channels.
  static DrlConfig full_scale();
};

nlohmann::json to_json(const DrlConfig& c);
DrlConfig drl_config_from_json(const nlohmann::json& j);

/// Throws ConfigError for impossible combinations.
void validate(const DrlConfig& c);

std::vector<nn::LayerSpec> content_encoder_chain(const DrlConfig& c);
std::vector<nn::LayerSpec> style_encoder_chain(const DrlConfig& c);
std::vector<nn::LayerSpec> generator_chain(const DrlConfig& c);
std::vector<nn::LayerSpec> discriminator_chain(const DrlConfig& c);

nn::Shape content_shape(const DrlConfig& c);

/// Residual AdaIN body plus the style MLP that conditions it.
class GeneratorImpl : public torch::nn::Module {
 public:
  explicit GeneratorImpl(const DrlConfig& c);
  torch::Tensor forward(const torch::Tensor& content, const torch::Tensor& style);

  nn::SpecStack body{nullptr};
  nn::StyleMlp mlp{nullptr};
};
TORCH_MODULE(Generator);

class DrlModelImpl : public torch::nn::Module {
 public:
  DrlModelImpl(const DrlConfig& c, uint64_t seed);

  const DrlConfig& config() const { return config_; }

  nn::SpecStack& content_encoder(Domain d) { return content_enc_[domain_index(d)]; }
  nn::SpecStack& style_encoder(Domain d) { return style_enc_[domain_index(d)]; }
  Generator& generator(Domain d) { return gen_[domain_index(d)]; }
  nn::SpecStack& discriminator(Domain d) { return disc_[domain_index(d)]; }

  /// Encoders, generators and style MLPs.
  std::vector<torch::Tensor> generator_parameters();
  std::vector<torch::Tensor> discriminator_parameters();

 private:
  DrlConfig config_;
  std::array<nn::SpecStack, 2> content_enc_{nullptr, nullptr};
  std::array<nn::SpecStack, 2> style_enc_{nullptr, nullptr};
  std::array<Generator, 2> gen_{nullptr, nullptr};
  std::array<nn::SpecStack, 2> disc_{nullptr, nullptr};
};
TORCH_MODULE(DrlModel);

ContentCode encode_content(DrlModel& model, const ImageBatch& x);
StyleCode encode_style(DrlModel& model, const ImageBatch& x);
ImageBatch decode(DrlModel& model, const ContentCode& c, const StyleCode& s, Domain domain);

/// x_{a->b} = G_b(E_{c,a}(x), s).
ImageBatch translate(DrlModel& model, const ImageBatch& x, Domain target, const StyleCode& s);
/// As above with one style drawn from the prior per image.
ImageBatch translate(DrlModel& model, const ImageBatch& x, Domain target, StylePrior& prior);

/// Renders the content code of x through G_1 with the all-zero style, whatever
/// the domain of x, so both domains land in one appearance space.
ImageBatch content_only(DrlModel& model, const ImageBatch& x);

/// Mean absolute difference.
torch::Tensor l1_mean(const torch::Tensor& a, const torch::Tensor& b);

/// Clamps discriminator probabilities to [1e-7, 1 - 1e-7], counting how many
/// entries were outside the range.
torch::Tensor clamp_probability(const torch::Tensor& p, int64_t* clamp_events);

/// Negated two-term adversarial objective for one direction:
/// -(E[log(1 - D(fake))] + E[log D(real)]). The discriminator minimizes this.
torch::Tensor discriminator_objective(const torch::Tensor& d_real, const torch::Tensor& d_fake,
                                      int64_t* clamp_events = nullptr);

/// Non-saturating generator term for one direction: -E[log D(fake)].
torch::Tensor generator_adversarial(const torch::Tensor& d_fake, int64_t* clamp_events = nullptr);

/// Every intermediate of one joint forward pass over a domain-1 and a domain-2
/// batch. s1/s2 are the prior styles used for translation.
struct DrlForward {
  ContentCode c1, c2;
  StyleCode s1_enc, s2_enc;
  torch::Tensor recon1, recon2;
  torch::Tensor x12, x21;
  ContentCode c12, c21;   // E_c2(x12), E_c1(x21)
  StyleCode s12, s21;     // E_s2(x12), E_s1(x21)
};

/// Runs the encoders and generators. With `reencode` false the translated
/// images are not passed back through the encoders (c12/s12/c21/s21 stay empty).
DrlForward drl_forward(DrlModel& model, const ImageBatch& x1, const ImageBatch& x2,
                       const StyleCode& s1, const StyleCode& s2, bool reencode = true);

/// Sum over both domains of the mean per-pixel L1 between x and G(E_c(x), E_s(x)).
torch::Tensor loss_recon(DrlModel& model, const ImageBatch& x1, const ImageBatch& x2);
torch::Tensor recon_from(const DrlForward& f, const ImageBatch& x1, const ImageBatch& x2);

struct AdvLosses {
  torch::Tensor generator;      // non-saturating, both directions summed
  torch::Tensor discriminator;  // negated objective, both directions summed
  int64_t clamp_events = 0;
};

AdvLosses loss_adv(DrlModel& model, const ImageBatch& x1, const ImageBatch& x2,
                   const StyleCode& s1, const StyleCode& s2);

/// |E_c2(x12) - c1| + |E_s2(x12) - s2| + |E_c1(x21) - c2| + |E_s1(x21) - s1|,
/// each mean-reduced.
torch::Tensor loss_latent(DrlModel& model, const ImageBatch& x1, const ImageBatch& x2,
                          const StyleCode& s1, const StyleCode& s2);
torch::Tensor latent_from(const DrlForward& f, const StyleCode& s1, const StyleCode& s2);

struct LossComponents {
  double recon = 0.0;
  double adv_g = 0.0;
  double latent = 0.0;
};

/// alpha * recon + beta * adv_g + gamma * latent. Throws NumericError on a
/// non-finite component.
double total_loss(const LossComponents& parts, const LossWeights& w = {});
torch::Tensor total_loss(const torch::Tensor& recon, const torch::Tensor& adv_g,
                         const torch::Tensor& latent, const LossWeights& w = {});

struct LossReport {
  int64_t step = 0;
  double recon = 0.0;
  double adv_g = 0.0;
  double adv_d = 0.0;
  double latent = 0.0;
  double total = 0.0;

  friend bool operator==(const LossReport&, const LossReport&) = default;
};

nlohmann::json to_json(const LossReport& r);

struct DrlTrainConfig {
  double learning_rate = 1e-4;
  double adam_beta1 = 0.5;
  double adam_beta2 = 0.999;
  double grad_clip = 10.0;
  LossWeights weights;
  uint64_t seed = 0;
};

nlohmann::json to_json(const DrlTrainConfig& c);

/// One discriminator update followed by one encoder/generator update per step.
/// Owns the optimizers and the style prior; single writer of the model.
class DrlTrainer {
 public:
  DrlTrainer(DrlModel model, DrlTrainConfig config);

  LossReport train_step(const ImageBatch& x1, const ImageBatch& x2);

  int64_t step() const { return step_; }
  int64_t clamp_events() const { return clamp_events_; }
  int64_t clip_events() const { return clip_events_; }
  StylePrior& prior() { return prior_; }
  DrlModel& model() { return model_; }
  const DrlTrainConfig& config() const { return config_; }
  void set_step(int64_t step) { step_ = step; }

 private:
  double clip(std::vector<torch::Tensor>& params);

  DrlModel model_;
  DrlTrainConfig config_;
  std::vector<torch::Tensor> gen_params_;
  std::vector<torch::Tensor> disc_params_;
  torch::optim::Adam gen_opt_;
  torch::optim::Adam disc_opt_;
  StylePrior prior_;
  int64_t step_ = 0;
  int64_t clamp_events_ = 0;
  int64_t clip_events_ = 0;
};

}  // namespace dadr
