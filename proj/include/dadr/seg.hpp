#pragma once

// UNet segmenter, its loss and training loop, and the Dice metric.

#include <torch/torch.h>

#include <nlohmann/json.hpp>

#include <cstdint>
#include <vector>

#include "dadr/drl.hpp"
#include "dadr/nn_core.hpp"

namespace dadr::seg {

enum class MaskRole { ground_truth, prediction };

/// Binary (H, W) mask; pixels are uint8 in {0, 1}.
struct SegMask {
  torch::Tensor pixels;
  MaskRole role = MaskRole::ground_truth;
};

struct UNetConfig {
  int64_t image_size = 64;
  int64_t depth = 3;
  int64_t base_channels = 16;

  /// depth 4, 64 base channels, 256x256 inputs.
  static UNetConfig full_scale();
};

nlohmann::json to_json(const UNetConfig& c);

/// Encoder: per level two (conv3 -> IN -> relu), then 2x2 max-pool.
/// Decoder: nearest upsample + conv3 halving channels, concat with the skip,
/// two (conv3 -> IN -> relu). 1x1 conv to a single logit channel.
class UNetImpl : public torch::nn::Module {
 public:
  explicit UNetImpl(const UNetConfig& c, uint64_t seed = 0);

  /// (N, 1, H, W) -> (N, 1, H, W) logits.
  torch::Tensor forward(const torch::Tensor& x);

  const UNetConfig& config() const { return config_; }
  /// Final 1x1 projection, exposed for tests that zero it.
  nn::SpecStack& head() { return head_; }

 private:
  UNetConfig config_;
  std::vector<nn::SpecStack> down_;
  nn::SpecStack bottom_{nullptr};
  std::vector<nn::SpecStack> up_;
  std::vector<nn::SpecStack> merge_;
  nn::SpecStack head_{nullptr};
};
TORCH_MODULE(UNet);

/// Throws ConfigError unless the spatial size is divisible by 2^depth.
void validate(const UNetConfig& c);

torch::Tensor unet_forward(UNet& model, const ImageBatch& x);

struct SegLossTerms {
  torch::Tensor bce;        // mean binary cross-entropy with logits
  torch::Tensor soft_dice;  // 1 - mean per-image soft Dice
  torch::Tensor total;      // bce + soft_dice
};

/// `gt` is (N, H, W) or (N, 1, H, W) with values {0, 1}.
SegLossTerms seg_loss_terms(const torch::Tensor& logits, const torch::Tensor& gt);
torch::Tensor seg_loss(const torch::Tensor& logits, const torch::Tensor& gt);

/// 2|P & G| / (|P| + |G|), 1.0 when both masks are empty.
double dice(const SegMask& pred, const SegMask& gt);
double dice(const torch::Tensor& pred, const torch::Tensor& gt);
/// Per-image Dice of two (N, H, W) mask stacks.
std::vector<double> dice_per_image(const torch::Tensor& pred, const torch::Tensor& gt);

/// sigmoid(logits) > threshold as an (N, H, W) uint8 stack. threshold in (0, 1).
torch::Tensor predict_mask(UNet& model, const ImageBatch& x, double threshold = 0.5);
torch::Tensor threshold_logits(const torch::Tensor& logits, double threshold = 0.5);
std::vector<SegMask> to_masks(const torch::Tensor& stack, MaskRole role);

struct SegSet {
  torch::Tensor images;  // (N, 1, H, W)
  torch::Tensor masks;   // (N, H, W) uint8
  int64_t size() const { return images.defined() ? images.size(0) : 0; }
};

struct SegTrainConfig {
  int64_t epochs = 20;
  int64_t batch_size = 8;
  double learning_rate = 1e-3;
  bool augment = true;  // random flips / 90-degree rotations per batch
  uint64_t seed = 0;
};

nlohmann::json to_json(const SegTrainConfig& c);

struct EpochMetrics {
  int64_t epoch = 0;
  double loss = 0.0;
  double train_dice = 0.0;
  double val_dice = 0.0;

  friend bool operator==(const EpochMetrics&, const EpochMetrics&) = default;
};

nlohmann::json to_json(const EpochMetrics& m);

struct SegTrainResult {
  std::vector<EpochMetrics> epochs;
  int64_t best_epoch = 0;
  double best_val_dice = 0.0;
};

/// Mean per-image Dice of the model on a set, evaluated in batches.
std::vector<double> evaluate_dice(UNet& model, const SegSet& set, int64_t batch_size = 32);

/// Trains in place and restores the parameters of the epoch with the best
/// validation Dice (training Dice when `val` is empty). Seed-deterministic.
SegTrainResult seg_train(UNet& model, const SegSet& train, const SegSet& val,
                         const SegTrainConfig& config);

}  // namespace dadr::seg
