#include "dadr/drl.hpp"

#include <fmt/format.h>
#include <fmt/ranges.h>

#include <cmath>

#include "dadr/errors.hpp"

namespace dadr {

namespace {

constexpr double kProbFloor = 1e-7;

bool is_power_of_two(int64_t v) { return v > 0 && (v & (v - 1)) == 0; }

void check_batch(const DrlModelImpl& model, const ImageBatch& x, std::string_view what) {
  const auto size = model.config().image_size;
  if (!x.pixels.defined() || x.pixels.dim() != 4 || x.pixels.size(1) != 1 ||
      x.pixels.size(2) != size || x.pixels.size(3) != size) {
    throw ConfigError(fmt::format("{}: expected (N, 1, {}, {}) images, got {}", what, size, size,
                                  x.pixels.defined() ? fmt::format("{}", fmt::join(x.pixels.sizes(), "x"))
                                                     : std::string("undefined")));
  }
  if (x.pixels.size(0) < 1) throw ConfigError(fmt::format("{}: empty batch", what));
}

void check_style(const DrlModelImpl& model, const StyleCode& s, int64_t n, std::string_view what) {
  if (!s.values.defined() || s.values.dim() != 2 || s.values.size(1) != model.config().style_dim) {
    throw ConfigError(fmt::format("{}: style codes must be (N, {})", what, model.config().style_dim));
  }
  if (s.values.size(0) != n && s.values.size(0) != 1) {
    throw ConfigError(fmt::format("{}: {} style codes for {} images", what, s.values.size(0), n));
  }
}

std::vector<torch::Tensor> collect(std::initializer_list<torch::nn::Module*> modules) {
  std::vector<torch::Tensor> out;
  for (auto* m : modules) {
    for (auto& p : m->parameters()) out.push_back(p);
  }
  return out;
}

}  // namespace

Domain domain_from_int(int value) {
  if (value == 1) return Domain::first;
  if (value == 2) return Domain::second;
  throw ConfigError(fmt::format("domain must be 1 or 2, got {}", value));
}

StylePrior::StylePrior(int64_t style_dim, uint64_t seed)
    : dim_(style_dim), gen_(nn::make_generator(seed)) {
  if (style_dim < 1) throw ConfigError("style prior: dimension must be positive");
}

StyleCode StylePrior::sample(int64_t n) {
  if (n < 1) throw ConfigError(fmt::format("style prior: need n >= 1 draws, got {}", n));
  return {torch::randn({n, dim_}, gen_, torch::kFloat32)};
}

StyleCode sample_style(StylePrior& prior, int64_t n) { return prior.sample(n); }

DrlConfig DrlConfig::full_scale() {
  DrlConfig c;
  c.image_size = 256;
  c.content_channels = 256;
  c.style_channels = 64;
  c.mlp_hidden = 256;
  c.disc_channels = 64;
  return c;
}

nlohmann::json to_json(const DrlConfig& c) {
  return {{"image_size", c.image_size},
          {"content_channels", c.content_channels},
          {"style_dim", c.style_dim},
          {"downsample_stages", c.downsample_stages},
          {"residual_blocks", c.residual_blocks},
          {"style_channels", c.style_channels},
          {"mlp_hidden", c.mlp_hidden},
          {"disc_channels", c.disc_channels},
          {"patch_discriminator", c.patch_discriminator}};
}

DrlConfig drl_config_from_json(const nlohmann::json& j) {
  DrlConfig c;
  c.image_size = j.at("image_size").get<int64_t>();
  c.content_channels = j.at("content_channels").get<int64_t>();
  c.style_dim = j.at("style_dim").get<int64_t>();
  c.downsample_stages = j.at("downsample_stages").get<int64_t>();
  c.residual_blocks = j.at("residual_blocks").get<int64_t>();
  c.style_channels = j.at("style_channels").get<int64_t>();
  c.mlp_hidden = j.at("mlp_hidden").get<int64_t>();
  c.disc_channels = j.at("disc_channels").get<int64_t>();
  c.patch_discriminator = j.at("patch_discriminator").get<bool>();
  return c;
}

void validate(const DrlConfig& c) {
  if (!is_power_of_two(c.image_size) || c.image_size < 8) {
    throw ConfigError(fmt::format("image_size must be a power of two >= 8, got {}", c.image_size));
  }
  if (c.downsample_stages < 1 || (c.image_size >> (c.downsample_stages + 2)) < 1) {
    throw ConfigError("downsample_stages too large for the image size");
  }
  if (c.content_channels < 1 || c.content_channels % (int64_t{1} << c.downsample_stages) != 0) {
    throw ConfigError(fmt::format("content_channels ({}) must be divisible by 2^downsample_stages",
                                  c.content_channels));
  }
  if (c.style_dim < 1 || c.residual_blocks < 1 || c.style_channels < 1 || c.mlp_hidden < 1 ||
      c.disc_channels < 1) {
    throw ConfigError("all DRL widths and counts must be positive");
  }
}

nn::Shape content_shape(const DrlConfig& c) {
  const auto side = c.image_size >> c.downsample_stages;
  return {c.content_channels, side, side};
}

std::vector<nn::LayerSpec> content_encoder_chain(const DrlConfig& c) {
  using namespace nn;
  std::vector<LayerSpec> chain;
  int64_t ch = c.content_channels >> c.downsample_stages;
  chain.push_back(conv(1, ch, 7, 1, 3, Activation::none));
  chain.push_back(norm(ch));
  for (int64_t i = 0; i < c.downsample_stages; ++i) {
    chain.push_back(conv(ch, ch * 2, 4, 2, 1, Activation::none));
    chain.push_back(norm(ch * 2));
    ch *= 2;
  }
  for (int64_t i = 0; i < c.residual_blocks; ++i) chain.push_back(residual(ch, false));
  return chain;
}

std::vector<nn::LayerSpec> style_encoder_chain(const DrlConfig& c) {
  using namespace nn;
  std::vector<LayerSpec> chain;
  int64_t ch = c.style_channels;
  chain.push_back(conv(1, ch, 7, 1, 3));
  for (int64_t i = 0; i < c.downsample_stages + 2; ++i) {
    const auto next = i < 2 ? ch * 2 : ch;
    chain.push_back(conv(ch, next, 4, 2, 1));
    ch = next;
  }
  chain.push_back(pool(ch));
  chain.push_back(dense(ch, c.style_dim));
  return chain;
}

std::vector<nn::LayerSpec> generator_chain(const DrlConfig& c) {
  using namespace nn;
  std::vector<LayerSpec> chain;
  int64_t ch = c.content_channels;
  for (int64_t i = 0; i < c.residual_blocks; ++i) chain.push_back(residual(ch, true));
  for (int64_t i = 0; i < c.downsample_stages; ++i) {
    chain.push_back(upsample(ch));
    chain.push_back(conv(ch, ch / 2, 5, 1, 2, Activation::relu));
    ch /= 2;
  }
  chain.push_back(conv(ch, 1, 7, 1, 3, Activation::tanh));
  return chain;
}

std::vector<nn::LayerSpec> discriminator_chain(const DrlConfig& c) {
  using namespace nn;
  std::vector<LayerSpec> chain;
  int64_t ch = c.disc_channels;
  chain.push_back(conv(1, ch, 4, 2, 1));
  chain.push_back(conv(ch, ch * 2, 4, 2, 1));
  chain.push_back(conv(ch * 2, ch * 4, 4, 2, 1));
  ch *= 4;
  if (c.patch_discriminator) {
    chain.push_back(conv(ch, 1, 1, 1, 0, Activation::sigmoid));
  } else {
    chain.push_back(pool(ch));
    chain.push_back(dense(ch, 1, Activation::sigmoid));
  }
  return chain;
}

GeneratorImpl::GeneratorImpl(const DrlConfig& c) {
  body = register_module("body", nn::SpecStack(generator_chain(c), content_shape(c)));
  mlp = register_module("mlp", nn::StyleMlp(c.style_dim, c.mlp_hidden, body->adain_layout()));
}

torch::Tensor GeneratorImpl::forward(const torch::Tensor& content, const torch::Tensor& style) {
  auto params = nn::style_mlp(mlp, style, body->adain_layout());
  return body->forward(content, params);
}

DrlModelImpl::DrlModelImpl(const DrlConfig& c, uint64_t seed) : config_(c) {
  validate(c);
  const nn::Shape image{1, c.image_size, c.image_size};
  for (int i = 0; i < 2; ++i) {
    const auto tag = std::to_string(i + 1);
    content_enc_[i] = register_module("content_enc" + tag, nn::SpecStack(content_encoder_chain(c), image));
    style_enc_[i] = register_module("style_enc" + tag, nn::SpecStack(style_encoder_chain(c), image));
    gen_[i] = register_module("gen" + tag, Generator(c));
    disc_[i] = register_module("disc" + tag, nn::SpecStack(discriminator_chain(c), image));
  }
  if (content_enc_[0]->output_shape() != content_shape(c)) {
    throw ConfigError("content encoder does not produce the configured content shape");
  }
  auto gen = nn::make_generator(seed);
  nn::init_fan_in_uniform(*this, gen);
}

std::vector<torch::Tensor> DrlModelImpl::generator_parameters() {
  return collect({content_enc_[0].get(), content_enc_[1].get(), style_enc_[0].get(),
                  style_enc_[1].get(), gen_[0].get(), gen_[1].get()});
}

std::vector<torch::Tensor> DrlModelImpl::discriminator_parameters() {
  return collect({disc_[0].get(), disc_[1].get()});
}

ContentCode encode_content(DrlModel& model, const ImageBatch& x) {
  check_batch(*model, x, "encode_content");
  return {model->content_encoder(x.domain)->forward(x.pixels)};
}

StyleCode encode_style(DrlModel& model, const ImageBatch& x) {
  check_batch(*model, x, "encode_style");
  return {model->style_encoder(x.domain)->forward(x.pixels).flatten(1)};
}

ImageBatch decode(DrlModel& model, const ContentCode& c, const StyleCode& s, Domain domain) {
  const auto expected = content_shape(model->config());
  const auto& f = c.features;
  if (!f.defined() || f.dim() != 4 || f.size(1) != expected.channels || f.size(2) != expected.height ||
      f.size(3) != expected.width) {
    throw ConfigError(fmt::format("decode: content code must be (N, {})", nn::to_string(expected)));
  }
  check_style(*model, s, f.size(0), "decode");
  auto style = s.values.size(0) == f.size(0) ? s.values : s.values.expand({f.size(0), -1});
  return {model->generator(domain)->forward(f, style), domain, {}};
}

ImageBatch translate(DrlModel& model, const ImageBatch& x, Domain target, const StyleCode& s) {
  if (target == x.domain) throw ConfigError("translate: target domain equals source domain");
  auto out = decode(model, encode_content(model, x), s, target);
  out.scene_ids = x.scene_ids;
  return out;
}

ImageBatch translate(DrlModel& model, const ImageBatch& x, Domain target, StylePrior& prior) {
  if (prior.dim() != model->config().style_dim) throw ConfigError("translate: prior dimension mismatch");
  return translate(model, x, target, prior.sample(x.size()));
}

ImageBatch content_only(DrlModel& model, const ImageBatch& x) {
  auto c = encode_content(model, x);
  StyleCode zero{torch::zeros({x.size(), model->config().style_dim}, x.pixels.options())};
  auto out = decode(model, c, zero, Domain::first);
  out.domain = x.domain;
  out.scene_ids = x.scene_ids;
  return out;
}

torch::Tensor l1_mean(const torch::Tensor& a, const torch::Tensor& b) { return (a - b).abs().mean(); }

torch::Tensor clamp_probability(const torch::Tensor& p, int64_t* clamp_events) {
  if (clamp_events != nullptr) {
    torch::NoGradGuard no_grad;
    *clamp_events += ((p < kProbFloor) | (p > 1.0 - kProbFloor)).sum().item<int64_t>();
  }
  return p.clamp(kProbFloor, 1.0 - kProbFloor);
}

torch::Tensor discriminator_objective(const torch::Tensor& d_real, const torch::Tensor& d_fake,
                                      int64_t* clamp_events) {
  auto real = clamp_probability(d_real, clamp_events);
  auto fake = clamp_probability(d_fake, clamp_events);
  return -(torch::log1p(-fake).mean() + torch::log(real).mean());
}

torch::Tensor generator_adversarial(const torch::Tensor& d_fake, int64_t* clamp_events) {
  return -torch::log(clamp_probability(d_fake, clamp_events)).mean();
}

DrlForward drl_forward(DrlModel& model, const ImageBatch& x1, const ImageBatch& x2,
                       const StyleCode& s1, const StyleCode& s2, bool reencode) {
  if (x1.domain != Domain::first || x2.domain != Domain::second) {
    throw ConfigError("DRL losses take a domain-1 batch and a domain-2 batch");
  }
  DrlForward f;
  f.c1 = encode_content(model, x1);
  f.c2 = encode_content(model, x2);
  f.s1_enc = encode_style(model, x1);
  f.s2_enc = encode_style(model, x2);
  f.recon1 = decode(model, f.c1, f.s1_enc, Domain::first).pixels;
  f.recon2 = decode(model, f.c2, f.s2_enc, Domain::second).pixels;
  f.x12 = decode(model, f.c1, s2, Domain::second).pixels;
  f.x21 = decode(model, f.c2, s1, Domain::first).pixels;
  if (reencode) {
    ImageBatch b12{f.x12, Domain::second, {}};
    ImageBatch b21{f.x21, Domain::first, {}};
    f.c12 = encode_content(model, b12);
    f.s12 = encode_style(model, b12);
    f.c21 = encode_content(model, b21);
    f.s21 = encode_style(model, b21);
  }
  return f;
}

torch::Tensor recon_from(const DrlForward& f, const ImageBatch& x1, const ImageBatch& x2) {
  return l1_mean(f.recon1, x1.pixels) + l1_mean(f.recon2, x2.pixels);
}

torch::Tensor loss_recon(DrlModel& model, const ImageBatch& x1, const ImageBatch& x2) {
  if (x1.domain != Domain::first || x2.domain != Domain::second) {
    throw ConfigError("loss_recon takes a domain-1 batch and a domain-2 batch");
  }
  auto r1 = decode(model, encode_content(model, x1), encode_style(model, x1), Domain::first).pixels;
  auto r2 = decode(model, encode_content(model, x2), encode_style(model, x2), Domain::second).pixels;
  return l1_mean(r1, x1.pixels) + l1_mean(r2, x2.pixels);
}

AdvLosses loss_adv(DrlModel& model, const ImageBatch& x1, const ImageBatch& x2, const StyleCode& s1,
                   const StyleCode& s2) {
  auto f = drl_forward(model, x1, x2, s1, s2, /*reencode=*/false);
  auto& d1 = model->discriminator(Domain::first);
  auto& d2 = model->discriminator(Domain::second);
  AdvLosses out;
  auto fake2 = d2->forward(f.x12);
  auto fake1 = d1->forward(f.x21);
  out.generator = generator_adversarial(fake2, &out.clamp_events) +
                  generator_adversarial(fake1, &out.clamp_events);
  out.discriminator = discriminator_objective(d2->forward(x2.pixels), fake2, &out.clamp_events) +
                      discriminator_objective(d1->forward(x1.pixels), fake1, &out.clamp_events);
  return out;
}

torch::Tensor latent_from(const DrlForward& f, const StyleCode& s1, const StyleCode& s2) {
  return l1_mean(f.c12.features, f.c1.features) + l1_mean(f.s12.values, s2.values) +
         l1_mean(f.c21.features, f.c2.features) + l1_mean(f.s21.values, s1.values);
}

torch::Tensor loss_latent(DrlModel& model, const ImageBatch& x1, const ImageBatch& x2,
                          const StyleCode& s1, const StyleCode& s2) {
  return latent_from(drl_forward(model, x1, x2, s1, s2), s1, s2);
}

double total_loss(const LossComponents& parts, const LossWeights& w) {
  for (double v : {parts.recon, parts.adv_g, parts.latent}) {
    if (!std::isfinite(v)) {
      throw NumericError(fmt::format("total_loss: non-finite component (recon={}, adv_g={}, latent={})",
                                     parts.recon, parts.adv_g, parts.latent));
    }
  }
  return w.alpha * parts.recon + w.beta * parts.adv_g + w.gamma * parts.latent;
}

torch::Tensor total_loss(const torch::Tensor& recon, const torch::Tensor& adv_g,
                         const torch::Tensor& latent, const LossWeights& w) {
  return w.alpha * recon + w.beta * adv_g + w.gamma * latent;
}

nlohmann::json to_json(const LossReport& r) {
  return {{"step", r.step},     {"recon", r.recon},   {"adv_g", r.adv_g},
          {"adv_d", r.adv_d},   {"latent", r.latent}, {"total", r.total}};
}

nlohmann::json to_json(const DrlTrainConfig& c) {
  return {{"learning_rate", c.learning_rate}, {"adam_beta1", c.adam_beta1},
          {"adam_beta2", c.adam_beta2},       {"grad_clip", c.grad_clip},
          {"alpha", c.weights.alpha},         {"beta", c.weights.beta},
          {"gamma", c.weights.gamma},         {"seed", c.seed}};
}

DrlTrainer::DrlTrainer(DrlModel model, DrlTrainConfig config)
    : model_(std::move(model)),
      config_(config),
      gen_params_(model_->generator_parameters()),
      disc_params_(model_->discriminator_parameters()),
      gen_opt_(gen_params_, torch::optim::AdamOptions(config.learning_rate)
                                .betas({config.adam_beta1, config.adam_beta2})),
      disc_opt_(disc_params_, torch::optim::AdamOptions(config.learning_rate)
                                  .betas({config.adam_beta1, config.adam_beta2})),
      prior_(model_->config().style_dim, config.seed ^ 0x5eed5eedULL) {
  if (config.learning_rate < 0.0) throw ConfigError("learning rate must be >= 0");
  if (!(config.grad_clip > 0.0)) throw ConfigError("gradient clip must be positive");
}

double DrlTrainer::clip(std::vector<torch::Tensor>& params) {
  const double norm = torch::nn::utils::clip_grad_norm_(params, config_.grad_clip);
  if (!std::isfinite(norm)) {
    throw TrainingError(fmt::format("step {}: non-finite gradient norm", step_ + 1));
  }
  if (norm > config_.grad_clip) ++clip_events_;
  return norm;
}

LossReport DrlTrainer::train_step(const ImageBatch& x1, const ImageBatch& x2) {
  if (x1.size() < 1 || x1.size() != x2.size()) {
    throw ConfigError("train_step: batches must be nonempty and of equal size");
  }
  model_->train();
  auto s1 = prior_.sample(x1.size());
  auto s2 = prior_.sample(x2.size());
  auto& d1 = model_->discriminator(Domain::first);
  auto& d2 = model_->discriminator(Domain::second);

  // Discriminator phase on detached translations.
  torch::Tensor x12, x21;
  {
    torch::NoGradGuard no_grad;
    x12 = decode(model_, encode_content(model_, x1), s2, Domain::second).pixels;
    x21 = decode(model_, encode_content(model_, x2), s1, Domain::first).pixels;
  }
  disc_opt_.zero_grad();
  auto adv_d = discriminator_objective(d2->forward(x2.pixels), d2->forward(x12), &clamp_events_) +
               discriminator_objective(d1->forward(x1.pixels), d1->forward(x21), &clamp_events_);
  const double adv_d_value = adv_d.item<double>();
  if (!std::isfinite(adv_d_value)) {
    throw TrainingError(fmt::format("step {}: non-finite discriminator loss", step_ + 1));
  }
  adv_d.backward();
  clip(disc_params_);
  disc_opt_.step();

  // Encoder/generator phase.
  gen_opt_.zero_grad();
  auto f = drl_forward(model_, x1, x2, s1, s2);
  auto recon = recon_from(f, x1, x2);
  auto adv_g = generator_adversarial(d2->forward(f.x12), &clamp_events_) +
               generator_adversarial(d1->forward(f.x21), &clamp_events_);
  auto latent = latent_from(f, s1, s2);
  auto total = total_loss(recon, adv_g, latent, config_.weights);

  LossReport report;
  report.step = step_ + 1;
  report.recon = recon.item<double>();
  report.adv_g = adv_g.item<double>();
  report.adv_d = adv_d_value;
  report.latent = latent.item<double>();
  try {
    report.total = total_loss({report.recon, report.adv_g, report.latent}, config_.weights);
  } catch (const NumericError& e) {
    throw TrainingError(fmt::format("step {}: {}", report.step, e.what()));
  }
  total.backward();
  clip(gen_params_);
  gen_opt_.step();
  // The generator phase also leaves gradients on the discriminators; drop them.
  disc_opt_.zero_grad();
  ++step_;
  return report;
}

}  // namespace dadr
