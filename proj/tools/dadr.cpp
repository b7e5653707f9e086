// dadr command-line entry point.
//
// Exit codes: 0 success, 2 configuration or usage error, 3 runtime failure.

#include <CLI11.hpp>
#include <fmt/format.h>

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>

#include "dadr/checkpoint.hpp"
#include "dadr/config.hpp"
#include "dadr/drl.hpp"
#include "dadr/errors.hpp"
#include "dadr/experiments.hpp"
#include "dadr/io.hpp"
#include "dadr/synthdata.hpp"

namespace fs = std::filesystem;
using namespace dadr;

namespace {

constexpr int kConfigError = 2;
constexpr int kRuntimeError = 3;

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("-c,--config", c.config_path, "key = value config file")->check(CLI::ExistingFile);
  cmd->add_option("--set", c.overrides, "override a config key (key=value), repeatable");
}

experiments::ExperimentConfig load_config(const Common& c) {
  config::RunConfig rc;
  fs::path base;
  if (!c.config_path.empty()) {
    rc = config::parse_file(c.config_path);
    base = fs::absolute(c.config_path).parent_path();
  }
  for (const auto& kv : c.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError(fmt::format("--set expects key=value, got '{}'", kv));
    rc[kv.substr(0, eq)] = kv.substr(eq + 1);
  }
  if (const char* root = std::getenv("DADR_OUTPUT_ROOT"); root != nullptr && *root != '\0') {
    rc["output_dir"] = fs::absolute(root).string();
  }
  auto cfg = config::to_experiment_config(rc, base);
  cfg.output_dir = fs::absolute(cfg.output_dir);
  if (!cfg.dataset_dir.empty()) cfg.dataset_dir = fs::absolute(cfg.dataset_dir);
  return cfg;
}

void print_records(const std::vector<experiments::MetricsRecord>& records) {
  for (const auto& r : records) {
    std::cout << fmt::format("{:<18} {:<16} fold {} {:<8} dice {:.4f} +/- {:.4f} (n={})\n", r.experiment, r.variant,
                             r.fold, r.domain, r.mean_dice, r.std_dice, r.per_image.size());
  }
}

int cmd_gen_data(const Common& common, const std::string& out_opt) {
  auto cfg = load_config(common);
  fs::path out = !out_opt.empty() ? fs::path(out_opt)
                 : !cfg.dataset_dir.empty() ? cfg.dataset_dir
                                            : cfg.output_dir / "dataset";
  auto ds = synth::gen_dataset(cfg.dataset);
  synth::save_dataset(ds, out);
  const auto n1 = ds.count(Domain::first);
  const auto n2 = ds.count(Domain::second);
  std::cout << fmt::format("wrote {} items to {}\n", ds.items.size(), out.string());
  std::cout << fmt::format("domain1 {} scenes, domain2 {} scenes, ratio {:.2f}, {} folds{}\n", n1, n2,
                           n2 > 0 ? static_cast<double>(n1) / static_cast<double>(n2) : 0.0, ds.config.folds,
                           ds.config.multi_phase ? ", multi-phase domain2" : "");
  return 0;
}

int cmd_train_drl(const Common& common, std::optional<int> fold_opt, bool multi_phase) {
  auto cfg = load_config(common);
  if (fold_opt) cfg.test_fold = *fold_opt;
  experiments::validate(cfg);
  experiments::ExperimentRunner runner(cfg);
  for (int fold : experiments::folds_to_run(cfg)) {
    runner.drl(multi_phase, fold);
    std::cout << fmt::format("fold {}: DRL checkpoint {}\n", fold,
                             (runner.checkpoint_dir() /
                              fmt::format("drl-{}-fold{}.ckpt", multi_phase ? "multi" : "single", fold))
                                 .string());
  }
  return 0;
}

int cmd_train_seg(const Common& common, int domain, bool content_only, std::optional<int> fold_opt) {
  auto cfg = load_config(common);
  if (fold_opt) cfg.test_fold = *fold_opt;
  experiments::validate(cfg);
  experiments::ExperimentRunner runner(cfg);
  for (int fold : experiments::folds_to_run(cfg)) {
    print_records(runner.train_seg(domain_from_int(domain), content_only, fold));
  }
  return 0;
}

void print_plan(const experiments::ExperimentConfig& cfg) {
  using experiments::ExperimentId;
  const auto id = cfg.experiment;
  const bool needs_drl = id != ExperimentId::baseline_lower && id != ExperimentId::baseline_upper;
  const bool multi = id == ExperimentId::exp3a_multimodal || id == ExperimentId::exp3b_diverse;
  std::cout << fmt::format("experiment {} (seed {})\n", experiments::to_string(id), cfg.seed);
  std::cout << fmt::format("output      {}\n", (cfg.output_dir / experiments::to_string(id)).string());
  std::cout << fmt::format("dataset     {}\n", cfg.dataset_dir.empty() ? std::string("generated in memory")
                                                                     : cfg.dataset_dir.string());
  for (int fold : experiments::folds_to_run(cfg)) {
    std::cout << fmt::format("fold {}:\n", fold);
    if (needs_drl) {
      const auto ckpt = cfg.output_dir / "checkpoints" /
                        fmt::format("drl-{}-fold{}.ckpt", multi ? "multi" : "single", fold);
      const bool cached = !cfg.retrain_drl && fs::exists(ckpt);
      std::cout << fmt::format("  DRL ({}-phase target): {}\n", multi ? "multi" : "single",
                               cached ? "reuse " + ckpt.string() + " if its config matches"
                                      : fmt::format("train {} steps, batch {}", cfg.drl_steps, cfg.drl_batch));
    }
    switch (id) {
      case ExperimentId::baseline_lower: std::cout << "  UNet on raw domain1, test on domain2\n"; break;
      case ExperimentId::baseline_upper: std::cout << "  UNet on raw domain2, test on domain2\n"; break;
      case ExperimentId::exp1_da: std::cout << "  UNet on content-only domain1, test on content-only domain2\n"; break;
      case ExperimentId::exp2_joint:
        std::cout << "  UNet on content-only domain1+domain2, test on both\n"
                     "  single-domain UNets on content-only domain1 and domain2\n";
        break;
      case ExperimentId::exp3a_multimodal:
        std::cout << "  UNet on content-only domain1, test on three-phase domain2 (pooled and per phase)\n";
        break;
      case ExperimentId::exp3b_diverse:
        std::cout << fmt::format("  {} prior styles + 3 phase references for {} sources, montage of {} rows\n",
                                 cfg.style_samples, cfg.style_sources, cfg.montage_sources);
        break;
    }
    if (id != ExperimentId::exp3b_diverse) {
      std::cout << fmt::format("  seg: {} epochs, batch {}, lr {}\n", cfg.seg_train.epochs, cfg.seg_train.batch_size,
                               cfg.seg_train.learning_rate);
    }
  }
}

int cmd_run(const Common& common, const std::string& experiment, bool dry_run, bool all_folds) {
  auto cfg = load_config(common);
  cfg.experiment = experiments::experiment_from_string(experiment);
  if (all_folds) cfg.test_fold = -1;
  experiments::validate(cfg);
  if (dry_run) {
    print_plan(cfg);
    return 0;
  }
  experiments::ExperimentRunner runner(cfg);
  auto records = runner.run();
  print_records(records);
  if (cfg.experiment == experiments::ExperimentId::exp3b_diverse) {
    for (const auto& j : io::read_jsonl(runner.experiment_dir() / "style.jsonl")) std::cout << j.dump() << "\n";
  }
  std::cout << fmt::format("results in {}\n", runner.experiment_dir().string());
  return 0;
}

int cmd_translate(const std::string& checkpoint, const std::string& image, int target, std::optional<int> source,
                  const std::string& style_ref, std::optional<int64_t> samples, uint64_t seed,
                  const std::string& out_dir) {
  const auto target_domain = domain_from_int(target);
  const auto source_domain = source ? domain_from_int(*source) : other(target_domain);
  if (source_domain == target_domain) {
    throw ConfigError("translate: source and target domain must differ");
  }
  if (style_ref.empty() == !samples.has_value()) {
    throw ConfigError("translate: give exactly one of --style-ref or --samples");
  }
  if (samples && *samples < 1) throw ConfigError("translate: --samples must be >= 1");

  auto ckpt = load_checkpoint(checkpoint);
  if (!ckpt.config.contains("drl")) throw ConfigError(fmt::format("{} is not a DRL checkpoint", checkpoint));
  auto dc = drl_config_from_json(ckpt.config.at("drl"));
  DrlModel model(dc, 0);
  restore_module(*model, ckpt);
  model->eval();
  torch::NoGradGuard no_grad;

  auto load = [&](const std::string& path, Domain d) {
    auto img = io::read_image_pgm(path);
    if (img.size(1) != dc.image_size || img.size(2) != dc.image_size) {
      throw ConfigError(fmt::format("{}: expected {}x{} image, got {}x{}", path, dc.image_size, dc.image_size,
                                    img.size(2), img.size(1)));
    }
    return ImageBatch{img.unsqueeze(0), d, {}};
  };
  auto x = load(image, source_domain);
  fs::create_directories(out_dir);
  if (!style_ref.empty()) {
    auto style = encode_style(model, load(style_ref, target_domain));
    auto y = translate(model, x, target_domain, style);
    const auto path = fs::path(out_dir) / "translated.pgm";
    io::write_image_pgm16(path, y.pixels[0]);
    std::cout << path.string() << "\n";
    return 0;
  }
  StylePrior prior(dc.style_dim, seed);
  for (int64_t i = 0; i < *samples; ++i) {
    auto y = translate(model, x, target_domain, prior.sample(1));
    const auto path = fs::path(out_dir) / fmt::format("sample_{:02d}.pgm", i);
    io::write_image_pgm16(path, y.pixels[0]);
    std::cout << path.string() << "\n";
  }
  return 0;
}

int cmd_report(const Common& common, const std::string& root_opt, const std::string& out_opt) {
  fs::path root;
  if (!root_opt.empty()) {
    root = root_opt;
  } else {
    root = load_config(common).output_dir;
  }
  const auto csv = experiments::summarize(root);
  const fs::path out = out_opt.empty() ? root / "summary.csv" : fs::path(out_opt);
  io::write_file_atomic(out, csv);
  std::cout << csv;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Domain adaptation via disentangled representations on a synthetic two-domain benchmark"};
  app.require_subcommand(1);
  Common common;

  auto* gen = app.add_subcommand("gen-data", "generate and persist the synthetic dataset");
  add_common(gen, common);
  std::string gen_out;
  gen->add_option("-o,--out", gen_out, "dataset directory (default: dataset_dir or <output_dir>/dataset)");

  auto* drl_cmd = app.add_subcommand("train-drl", "train the disentangled representation model");
  add_common(drl_cmd, common);
  std::optional<int> drl_fold;
  bool multi_phase = false;
  drl_cmd->add_option("--fold", drl_fold, "held-out fold (-1 for all)");
  drl_cmd->add_flag("--multi-phase", multi_phase, "use the three-phase domain2 dataset");

  auto* seg_cmd = app.add_subcommand("train-seg", "train a segmentation UNet on one domain");
  add_common(seg_cmd, common);
  int seg_domain = 1;
  bool seg_content_only = false;
  std::optional<int> seg_fold;
  seg_cmd->add_option("--domain", seg_domain, "training domain")->check(CLI::IsMember({1, 2}));
  seg_cmd->add_flag("--content-only", seg_content_only, "train on content-only images");
  seg_cmd->add_option("--fold", seg_fold, "held-out fold (-1 for all)");

  auto* run_cmd = app.add_subcommand("run", "run an experiment");
  add_common(run_cmd, common);
  std::string experiment;
  bool dry_run = false;
  bool all_folds = false;
  run_cmd->add_option("experiment", experiment,
                      "exp1-da | exp2-joint | exp3a-multimodal | exp3b-diverse | baseline-lower | baseline-upper")
      ->required();
  run_cmd->add_flag("--dry-run", dry_run, "validate the config and print the plan");
  run_cmd->add_flag("--all-folds", all_folds, "evaluate every fold instead of test_fold");

  auto* tr_cmd = app.add_subcommand("translate", "translate an image with a trained DRL checkpoint");
  std::string ckpt, image, style_ref, tr_out = ".";
  int target = 2;
  std::optional<int> source;
  std::optional<int64_t> samples;
  uint64_t seed = 0;
  tr_cmd->add_option("--checkpoint", ckpt, "DRL checkpoint")->required()->check(CLI::ExistingFile);
  tr_cmd->add_option("--image", image, "source image (PGM)")->required()->check(CLI::ExistingFile);
  tr_cmd->add_option("--target", target, "target domain")->check(CLI::IsMember({1, 2}));
  tr_cmd->add_option("--source", source, "source domain (default: the other domain)")->check(CLI::IsMember({1, 2}));
  auto* ref_opt = tr_cmd->add_option("--style-ref", style_ref, "reference image for the style")
                      ->check(CLI::ExistingFile);
  auto* samples_opt = tr_cmd->add_option("--samples", samples, "number of prior-sampled styles");
  ref_opt->excludes(samples_opt);
  tr_cmd->add_option("--seed", seed, "style prior seed");
  tr_cmd->add_option("-o,--out", tr_out, "output directory");

  auto* report_cmd = app.add_subcommand("report", "aggregate metrics into a summary CSV");
  add_common(report_cmd, common);
  std::string report_root, report_out;
  report_cmd->add_option("--root", report_root, "results root (default: output_dir)");
  report_cmd->add_option("-o,--out", report_out, "CSV path (default: <root>/summary.csv)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kConfigError;
  }

  try {
    if (*gen) return cmd_gen_data(common, gen_out);
    if (*drl_cmd) return cmd_train_drl(common, drl_fold, multi_phase);
    if (*seg_cmd) return cmd_train_seg(common, seg_domain, seg_content_only, seg_fold);
    if (*run_cmd) return cmd_run(common, experiment, dry_run, all_folds);
    if (*tr_cmd) return cmd_translate(ckpt, image, target, source, style_ref, samples, seed, tr_out);
    if (*report_cmd) return cmd_report(common, report_root, report_out);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const TrainingError& e) {
    std::cerr << "training failed: " << e.what() << "\n";
    return kRuntimeError;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kRuntimeError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntimeError;
  }
  return kConfigError;
}
