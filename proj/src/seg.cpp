#include "dadr/seg.hpp"

#include <fmt/format.h>

#include <cmath>
#include <numeric>
#include <random>

#include "dadr/errors.hpp"

namespace dadr::seg {

namespace {

std::vector<nn::LayerSpec> double_conv(int64_t in, int64_t out) {
  return {nn::conv(in, out, 3, 1, 1, nn::Activation::none), nn::norm(out),
          nn::conv(out, out, 3, 1, 1, nn::Activation::none), nn::norm(out)};
}

torch::Tensor as_mask_stack(const torch::Tensor& m) {
  if (m.dim() == 4 && m.size(1) == 1) return m.squeeze(1);
  return m;
}

void shuffle(std::vector<int64_t>& v, std::mt19937_64& rng) {
  for (size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[static_cast<size_t>(rng() % i)]);
}

}  // namespace

UNetConfig UNetConfig::full_scale() { return {256, 4, 64}; }

nlohmann::json to_json(const UNetConfig& c) {
  return {{"image_size", c.image_size}, {"depth", c.depth}, {"base_channels", c.base_channels}};
}

void validate(const UNetConfig& c) {
  if (c.depth < 1 || c.base_channels < 1 || c.image_size < 1) {
    throw ConfigError("UNet: depth, base_channels and image_size must be positive");
  }
  if (c.image_size % (int64_t{1} << c.depth) != 0) {
    throw ConfigError(fmt::format("UNet: input size {} is not divisible by 2^depth = {}", c.image_size,
                                  int64_t{1} << c.depth));
  }
}

UNetImpl::UNetImpl(const UNetConfig& c, uint64_t seed) : config_(c) {
  validate(c);
  int64_t ch = c.base_channels;
  int64_t side = c.image_size;
  int64_t in = 1;
  std::vector<int64_t> skip_channels;
  for (int64_t level = 0; level < c.depth; ++level) {
    std::vector<nn::LayerSpec> chain;
    nn::Shape shape{in, side, side};
    if (level > 0) {
      chain.push_back(nn::downsample(in));
      shape = {in, side * 2, side * 2};
    }
    auto convs = double_conv(in, ch);
    chain.insert(chain.end(), convs.begin(), convs.end());
    down_.push_back(register_module(fmt::format("down{}", level), nn::SpecStack(chain, shape)));
    skip_channels.push_back(ch);
    in = ch;
    ch *= 2;
    side /= 2;
  }
  {
    std::vector<nn::LayerSpec> chain{nn::downsample(in)};
    auto convs = double_conv(in, ch);
    chain.insert(chain.end(), convs.begin(), convs.end());
    bottom_ = register_module("bottom", nn::SpecStack(chain, nn::Shape{in, side * 2, side * 2}));
  }
  // ch = channels at the bottleneck, side = its spatial size
  for (int64_t level = c.depth - 1; level >= 0; --level) {
    const auto skip = skip_channels[static_cast<size_t>(level)];
    up_.push_back(register_module(
        fmt::format("up{}", level),
        nn::SpecStack(std::vector<nn::LayerSpec>{nn::upsample(ch), nn::conv(ch, skip, 3, 1, 1, nn::Activation::relu)},
                      nn::Shape{ch, side, side})));
    side *= 2;
    merge_.push_back(register_module(fmt::format("merge{}", level),
                                     nn::SpecStack(double_conv(2 * skip, skip), nn::Shape{2 * skip, side, side})));
    ch = skip;
  }
  head_ = register_module("head", nn::SpecStack(std::vector<nn::LayerSpec>{nn::conv(ch, 1, 1, 1, 0, nn::Activation::none)},
                                                nn::Shape{ch, side, side}));
  auto gen = nn::make_generator(seed);
  nn::init_fan_in_uniform(*this, gen);
}

torch::Tensor UNetImpl::forward(const torch::Tensor& x) {
  std::vector<torch::Tensor> skips;
  auto h = x;
  for (auto& d : down_) {
    h = d->forward(h);
    skips.push_back(h);
  }
  h = bottom_->forward(h);
  for (size_t i = 0; i < up_.size(); ++i) {
    h = up_[i]->forward(h);
    h = torch::cat({h, skips[skips.size() - 1 - i]}, 1);
    h = merge_[i]->forward(h);
  }
  return head_->forward(h);
}

torch::Tensor unet_forward(UNet& model, const ImageBatch& x) {
  const auto& c = model->config();
  if (!x.pixels.defined() || x.pixels.dim() != 4 || x.pixels.size(1) != 1) {
    throw ConfigError("unet_forward: expected (N, 1, H, W) images");
  }
  if (x.pixels.size(2) % (int64_t{1} << c.depth) != 0 || x.pixels.size(3) % (int64_t{1} << c.depth) != 0) {
    throw ConfigError(fmt::format("unet_forward: input {}x{} is not divisible by 2^{}", x.pixels.size(2),
                                  x.pixels.size(3), c.depth));
  }
  if (x.pixels.size(2) != c.image_size || x.pixels.size(3) != c.image_size) {
    throw ConfigError(fmt::format("unet_forward: model built for {}x{} inputs", c.image_size, c.image_size));
  }
  auto logits = model->forward(x.pixels);
  nn::require_finite(logits, "unet logits");
  return logits;
}

SegLossTerms seg_loss_terms(const torch::Tensor& logits, const torch::Tensor& gt) {
  auto target = as_mask_stack(gt).to(logits.dtype());
  auto l = as_mask_stack(logits);
  if (l.sizes() != target.sizes()) throw ConfigError("seg_loss: logits and mask shapes differ");
  SegLossTerms t;
  t.bce = torch::binary_cross_entropy_with_logits(l, target);
  auto p = torch::sigmoid(l).flatten(1);
  auto g = target.flatten(1);
  constexpr double kSmooth = 1.0;
  auto soft = (2.0 * (p * g).sum(1) + kSmooth) / (p.sum(1) + g.sum(1) + kSmooth);
  t.soft_dice = 1.0 - soft.mean();
  t.total = t.bce + t.soft_dice;
  return t;
}

torch::Tensor seg_loss(const torch::Tensor& logits, const torch::Tensor& gt) {
  return seg_loss_terms(logits, gt).total;
}

double dice(const torch::Tensor& pred, const torch::Tensor& gt) {
  if (pred.sizes() != gt.sizes()) throw ConfigError("dice: masks are not aligned");
  auto p = pred.to(torch::kBool);
  auto g = gt.to(torch::kBool);
  const auto inter = (p & g).sum().item<int64_t>();
  const auto total = p.sum().item<int64_t>() + g.sum().item<int64_t>();
  if (total == 0) return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(total);
}

double dice(const SegMask& pred, const SegMask& gt) { return dice(pred.pixels, gt.pixels); }

std::vector<double> dice_per_image(const torch::Tensor& pred, const torch::Tensor& gt) {
  auto p = as_mask_stack(pred);
  auto g = as_mask_stack(gt);
  if (p.sizes() != g.sizes() || p.dim() != 3) throw ConfigError("dice_per_image: expected aligned (N, H, W) stacks");
  auto pb = p.to(torch::kBool).flatten(1);
  auto gb = g.to(torch::kBool).flatten(1);
  auto inter = (pb & gb).sum(1).to(torch::kInt64);
  auto total = (pb.sum(1) + gb.sum(1)).to(torch::kInt64);
  auto ia = inter.accessor<int64_t, 1>();
  auto ta = total.accessor<int64_t, 1>();
  std::vector<double> out(static_cast<size_t>(p.size(0)));
  for (int64_t i = 0; i < p.size(0); ++i) {
    out[i] = ta[i] == 0 ? 1.0 : 2.0 * static_cast<double>(ia[i]) / static_cast<double>(ta[i]);
  }
  return out;
}

torch::Tensor threshold_logits(const torch::Tensor& logits, double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) throw ConfigError("threshold must lie in (0, 1)");
  return (torch::sigmoid(as_mask_stack(logits)) > threshold).to(torch::kUInt8);
}

torch::Tensor predict_mask(UNet& model, const ImageBatch& x, double threshold) {
  torch::NoGradGuard no_grad;
  model->eval();
  return threshold_logits(unet_forward(model, x), threshold);
}

std::vector<SegMask> to_masks(const torch::Tensor& stack, MaskRole role) {
  std::vector<SegMask> out;
  auto s = as_mask_stack(stack);
  for (int64_t i = 0; i < s.size(0); ++i) out.push_back({s[i].to(torch::kUInt8), role});
  return out;
}

nlohmann::json to_json(const SegTrainConfig& c) {
  return {{"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"learning_rate", c.learning_rate},
          {"augment", c.augment},
          {"seed", c.seed}};
}

nlohmann::json to_json(const EpochMetrics& m) {
  return {{"epoch", m.epoch}, {"loss", m.loss}, {"train_dice", m.train_dice}, {"val_dice", m.val_dice}};
}

std::vector<double> evaluate_dice(UNet& model, const SegSet& set, int64_t batch_size) {
  std::vector<double> out;
  torch::NoGradGuard no_grad;
  model->eval();
  for (int64_t start = 0; start < set.size(); start += batch_size) {
    const auto n = std::min(batch_size, set.size() - start);
    auto logits = model->forward(set.images.narrow(0, start, n));
    auto d = dice_per_image(threshold_logits(logits), set.masks.narrow(0, start, n));
    out.insert(out.end(), d.begin(), d.end());
  }
  return out;
}

SegTrainResult seg_train(UNet& model, const SegSet& train, const SegSet& val, const SegTrainConfig& config) {
  if (train.size() < 1) throw ConfigError("seg_train: empty training set");
  if (config.epochs < 1 || config.batch_size < 1) throw ConfigError("seg_train: epochs and batch size must be >= 1");
  if (config.learning_rate < 0.0) throw ConfigError("seg_train: learning rate must be >= 0");

  torch::optim::Adam opt(model->parameters(), torch::optim::AdamOptions(config.learning_rate));
  std::mt19937_64 rng(config.seed);
  std::vector<int64_t> order(static_cast<size_t>(train.size()));
  std::iota(order.begin(), order.end(), 0);

  SegTrainResult result;
  result.best_val_dice = -1.0;
  std::vector<torch::Tensor> best;

  for (int64_t epoch = 1; epoch <= config.epochs; ++epoch) {
    model->train();
    shuffle(order, rng);
    double loss_sum = 0.0;
    double dice_sum = 0.0;
    int64_t batches = 0;
    int64_t seen = 0;
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(config.batch_size)) {
      const auto end = std::min(order.size(), start + static_cast<size_t>(config.batch_size));
      auto idx = torch::tensor(std::vector<int64_t>(order.begin() + static_cast<long>(start),
                                                    order.begin() + static_cast<long>(end)));
      auto x = train.images.index_select(0, idx);
      auto y = train.masks.index_select(0, idx).unsqueeze(1);
      if (config.augment) {
        const auto op = rng() % 8;
        if (op & 1) {
          x = x.flip({3});
          y = y.flip({3});
        }
        const auto k = static_cast<int64_t>(op >> 1);
        if (k) {
          x = torch::rot90(x, k, {2, 3});
          y = torch::rot90(y, k, {2, 3});
        }
      }
      opt.zero_grad();
      auto logits = model->forward(x.contiguous());
      auto loss = seg_loss(logits, y);
      const double lv = loss.item<double>();
      if (!std::isfinite(lv)) {
        throw TrainingError(fmt::format("seg_train: non-finite loss at epoch {}", epoch));
      }
      loss.backward();
      opt.step();
      {
        torch::NoGradGuard no_grad;
        for (double d : dice_per_image(threshold_logits(logits), y)) dice_sum += d;
      }
      loss_sum += lv;
      ++batches;
      seen += static_cast<int64_t>(end - start);
    }
    EpochMetrics m;
    m.epoch = epoch;
    m.loss = loss_sum / static_cast<double>(batches);
    m.train_dice = dice_sum / static_cast<double>(seen);
    if (val.size() > 0) {
      auto d = evaluate_dice(model, val);
      m.val_dice = std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(d.size());
    } else {
      m.val_dice = m.train_dice;
    }
    result.epochs.push_back(m);
    if (m.val_dice > result.best_val_dice) {
      result.best_val_dice = m.val_dice;
      result.best_epoch = epoch;
      best.clear();
      for (const auto& p : model->parameters()) best.push_back(p.detach().clone());
    }
  }
  {
    torch::NoGradGuard no_grad;
    auto params = model->parameters();
    for (size_t i = 0; i < params.size(); ++i) params[i].copy_(best[i]);
  }
  model->eval();
  return result;
}

}  // namespace dadr::seg
