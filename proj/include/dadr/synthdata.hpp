#pragma once

// Synthetic two-domain segmentation benchmark. A Scene is the shared anatomy
// (one large smooth "organ" blob plus small distractors); a DomainStyle decides
// how that anatomy looks. Masks depend on the scene only.

#include <torch/torch.h>

#include <array>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "dadr/drl.hpp"

namespace dadr::synth {

enum class Phase { none, pre, arterial, venous };

std::string_view to_string(Phase p);
Phase phase_from_string(std::string_view s);

/// Ellipse whose radius is modulated by low-frequency harmonics:
/// r(phi) = 1 + sum_k amp[k] cos((k + 2) phi + shift[k]).
struct Blob {
  double cx = 0.0;
  double cy = 0.0;
  double rx = 1.0;
  double ry = 1.0;
  double angle = 0.0;
  std::array<double, 3> amp{};
  std::array<double, 3> shift{};

  bool contains(double x, double y) const;
  /// Largest distance from the centre any boundary point can reach.
  double max_extent() const;
};

struct Scene {
  int64_t id = 0;
  int64_t size = 64;
  Blob organ;
  std::vector<Blob> distractors;
  uint64_t texture_seed = 0;
};

/// Organ and distractors are disjoint and fully inside the frame; organ covers
/// 5-40% of the image. Throws ConfigError after 100 rejected draws.
Scene gen_scene(std::mt19937_64& rng, int64_t size = 64, int64_t id = 0);

/// (H, W) uint8 organ mask, 1 inside.
torch::Tensor organ_mask(const Scene& scene);
/// Fraction of pixels covered by the organ.
double organ_area_fraction(const Scene& scene);

/// Appearance model. Tissue levels are the intensity transfer curve (tissue
/// class -> intensity in [-1, 1]); texture, bias field and noise are added on top.
struct DomainStyle {
  Domain domain = Domain::first;
  Phase phase = Phase::none;
  double background = -0.3;
  double organ = 0.35;
  double distractor = 0.8;
  double texture_amplitude = 0.05;
  double bias_amplitude = 0.0;
  double noise_sigma = 0.03;

  /// Sign of organ minus background.
  int contrast_polarity() const { return organ >= background ? 1 : -1; }
  double organ_gap() const { return organ - background; }
};

/// Domain 1 is CT-like (bright organ, narrow bands, mild noise); domain 2 is
/// MRI-like (organ darker than background in every phase, bias field, heavier
/// noise). Phases of domain 2 move the organ level: pre < arterial > venous.
DomainStyle default_style(Domain domain, Phase phase = Phase::none);

/// Bumped whenever rendering changes, so cached models trained on older data
/// are not reused.
inline constexpr int kGeneratorVersion = 2;

/// Minimum |organ_gap(d1) - organ_gap(d2)| every default domain-2 phase keeps
/// against domain 1.
inline constexpr double kDomainGapMargin = 0.4;

struct Rendered {
  torch::Tensor image;  // (1, H, W) float32 in [-1, 1]
  torch::Tensor mask;   // (H, W) uint8
};

Rendered render(const Scene& scene, const DomainStyle& style, std::mt19937_64& rng);

struct DataItem {
  torch::Tensor image;  // (1, H, W)
  torch::Tensor mask;   // (H, W) uint8
  int64_t scene_id = 0;
  Domain domain = Domain::first;
  Phase phase = Phase::none;
  int fold = 0;
  bool paired = false;  // diagnostics only; never used for training
};

struct DatasetConfig {
  int64_t image_size = 64;
  int64_t domain1_count = 260;
  int64_t domain2_count = 40;
  int64_t paired_count = 0;
  bool multi_phase = false;
  int folds = 3;
  uint64_t seed = 1;
};

nlohmann::json to_json(const DatasetConfig& c);

struct Dataset {
  DatasetConfig config;
  std::vector<DataItem> items;

  /// Items of `domain` in (`in_fold` ? fold == f : fold != f), excluding paired items.
  std::vector<const DataItem*> select(Domain domain, int fold, bool in_fold) const;
  std::vector<const DataItem*> paired(Domain domain) const;
  int64_t count(Domain domain, bool include_paired = false) const;
};

/// 64-bit mix of (seed, index), used to derive independent per-scene streams.
uint64_t derive_seed(uint64_t seed, uint64_t index);

/// Pure function of the config: unpaired scenes per domain, folds assigned by
/// scene id within each domain, and an optional paired subset rendered in both
/// domains (flagged, fold -1).
Dataset gen_dataset(const DatasetConfig& config);

/// Writes images/NNNNN.pgm (16-bit), masks/NNNNN.pgm (0/255) and manifest.jsonl.
void save_dataset(const Dataset& ds, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

/// Stacks item images into an (N, 1, H, W) batch.
ImageBatch stack_images(const std::vector<const DataItem*>& items, Domain domain);

}  // namespace dadr::synth
