#pragma once

// Experiment harness: baselines, cross-domain adaptation, joint-domain
// learning, multi-phase targets and style diversity on the synthetic
// benchmark. Results are persisted per experiment directory.

#include <torch/torch.h>

#include <nlohmann/json.hpp>

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "dadr/drl.hpp"
#include "dadr/folds.hpp"
#include "dadr/seg.hpp"
#include "dadr/synthdata.hpp"

namespace dadr::experiments {

enum class ExperimentId { exp1_da, exp2_joint, exp3a_multimodal, exp3b_diverse, baseline_lower, baseline_upper };

std::string_view to_string(ExperimentId id);
/// Throws ConfigError for an unknown id.
ExperimentId experiment_from_string(std::string_view s);
const std::vector<ExperimentId>& all_experiments();

struct ExperimentConfig {
  ExperimentId experiment = ExperimentId::exp1_da;
  uint64_t seed = 1;  // model initialisation, batch sampling, augmentation
  std::filesystem::path output_dir = "results";
  std::filesystem::path dataset_dir;  // empty: generate from `dataset`
  int test_fold = 0;                  // -1 runs every fold in turn

  synth::DatasetConfig dataset;
  DrlConfig drl;
  DrlTrainConfig drl_train;
  int64_t drl_steps = 1500;
  int64_t drl_batch = 4;
  bool retrain_drl = false;  // ignore cached DRL checkpoints

  seg::UNetConfig unet;
  seg::SegTrainConfig seg_train;
  double val_fraction = 0.15;

  int64_t style_samples = 5;    // k prior samples per source
  int64_t style_sources = 16;   // test images used for the diversity report
  int64_t montage_sources = 4;  // rows written to the montage
};

/// Throws ConfigError on inconsistent settings (folds, sizes, budgets).
void validate(const ExperimentConfig& c);
nlohmann::json to_json(const ExperimentConfig& c);

/// Folds evaluated by a run: {test_fold} or 0..folds-1.
std::vector<int> folds_to_run(const ExperimentConfig& c);

struct MetricsRecord {
  std::string experiment;
  std::string variant;  // e.g. "pooled", "phase-arterial", "single-domain"
  int fold = 0;
  std::string domain;   // domain the test images came from
  double mean_dice = 0.0;
  double std_dice = 0.0;  // population standard deviation
  std::vector<double> per_image;
  double wall_clock_s = 0.0;
};

MetricsRecord make_record(std::string experiment, std::string variant, int fold, std::string domain,
                          std::vector<double> per_image, double wall_clock_s);
nlohmann::json to_json(const MetricsRecord& r);
MetricsRecord record_from_json(const nlohmann::json& j);
/// Equality of everything except wall-clock time.
bool same_metrics(const MetricsRecord& a, const MetricsRecord& b);

struct StyleReport {
  int fold = 0;
  int64_t sources = 0;
  int64_t samples = 0;
  double diversity = 0.0;          // mean pairwise L1 among the k prior-sampled outputs
  double content_l1 = 0.0;         // mean L1 of re-encoded content vs source content
  double self_reference_l1 = 0.0;  // own-style translation vs reconstruction path
  int64_t panels_per_row = 0;
  std::filesystem::path montage;
};

nlohmann::json to_json(const StyleReport& r);

/// Owns datasets and trained DRL models for one configuration. Each method
/// trains what it needs, caches DRL models in memory and on disk, and returns
/// its records without writing them; run() writes the results directory.
class ExperimentRunner {
 public:
  explicit ExperimentRunner(ExperimentConfig config);

  const ExperimentConfig& config() const { return config_; }

  const synth::Dataset& dataset(bool multi_phase);

  /// DRL trained on the non-test folds of both domains (images only).
  DrlModel& drl(bool multi_phase, int fold);

  MetricsRecord run_lower_bound(int fold);
  MetricsRecord run_upper_bound(int fold);
  MetricsRecord run_experiment1(int fold);
  /// Joint content-only model evaluated on each domain.
  std::vector<MetricsRecord> run_experiment2(int fold);
  /// Single-domain content-only models evaluated in-domain, the comparators
  /// for run_experiment2.
  std::vector<MetricsRecord> run_single_domain(int fold);
  /// Pooled record followed by one record per phase.
  std::vector<MetricsRecord> run_experiment3a(int fold);
  StyleReport run_experiment3b(int fold);

  /// Trains a UNet on `domain` (raw or content-only images), saves it under
  /// checkpoint_dir() and evaluates it on the test fold of both domains.
  std::vector<MetricsRecord> train_seg(Domain domain, bool content_only, int fold);

  /// Runs the configured experiment over folds_to_run() and writes
  /// config.txt, config.json, metrics.jsonl (and style.json / montages).
  std::vector<MetricsRecord> run();

  std::filesystem::path experiment_dir() const;
  std::filesystem::path checkpoint_dir() const;

  /// Domain-2 mask reads made while assembling training sets for
  /// label-free experiments. Must stay zero.
  int64_t domain2_training_label_reads() const { return audit_domain2_reads_; }

 private:
  struct Split {
    std::vector<const synth::DataItem*> train, val, test;
  };
  Split split(const synth::Dataset& ds, Domain d, int fold) const;
  seg::SegSet seg_set(const std::vector<const synth::DataItem*>& items, DrlModel* content_model,
                      bool training, bool label_free);
  seg::UNet train_unet(const seg::SegSet& train, const seg::SegSet& val, uint64_t stream);
  std::vector<double> evaluate(seg::UNet& model, const seg::SegSet& test);

  ExperimentConfig config_;
  std::map<bool, synth::Dataset> datasets_;
  std::map<std::pair<bool, int>, DrlModel> drls_;
  int64_t audit_domain2_reads_ = 0;
};

/// Clinical reference values shown next to synthetic results; not reproduced.
struct ReferenceValue {
  std::string table;
  std::string row;
  std::string domain;
  double dice;
  double std;
};
const std::vector<ReferenceValue>& reference_values();

/// Aggregates every <root>/<experiment>/metrics.jsonl into a summary CSV
/// laid out as the three result tables. Returns the CSV text.
std::string summarize(const std::filesystem::path& root);

}  // namespace dadr::experiments
