#include "dadr/experiments.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "dadr/checkpoint.hpp"
#include "dadr/config.hpp"
#include "dadr/errors.hpp"
#include "dadr/io.hpp"

namespace dadr::experiments {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

constexpr std::pair<ExperimentId, std::string_view> kNames[] = {
    {ExperimentId::exp1_da, "exp1-da"},
    {ExperimentId::exp2_joint, "exp2-joint"},
    {ExperimentId::exp3a_multimodal, "exp3a-multimodal"},
    {ExperimentId::exp3b_diverse, "exp3b-diverse"},
    {ExperimentId::baseline_lower, "baseline-lower"},
    {ExperimentId::baseline_upper, "baseline-upper"},
};

// Independent random streams derived from the master seed.
enum Stream : uint64_t {
  kValSplit = 100,
  kDrlInit = 200,
  kDrlTrain = 300,
  kDrlBatches = 400,
  kUnetLower = 500,
  kUnetUpper = 600,
  kUnetExp1 = 700,
  kUnetJoint = 800,
  kUnetSingle1 = 900,
  kUnetSingle2 = 1000,
  kUnetExp3a = 1100,
  kStylePrior = 1200,
};

uint64_t stream_seed(uint64_t seed, uint64_t stream, int fold) {
  return synth::derive_seed(seed, stream + static_cast<uint64_t>(fold) * 7919);
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string domain_name(Domain d) { return d == Domain::first ? "domain1" : "domain2"; }

double mean_of(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double population_std(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  const double m = mean_of(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size()));
}

ImageBatch batch_of(const torch::Tensor& pixels, Domain d) { return {pixels, d, {}}; }

// Maps a stack of images to their content-only rendering, in chunks.
torch::Tensor content_only_images(DrlModel& model, const torch::Tensor& images, Domain d) {
  torch::NoGradGuard no_grad;
  model->eval();
  std::vector<torch::Tensor> out;
  constexpr int64_t kChunk = 32;
  for (int64_t s = 0; s < images.size(0); s += kChunk) {
    const auto n = std::min(kChunk, images.size(0) - s);
    out.push_back(content_only(model, batch_of(images.narrow(0, s, n), d)).pixels);
  }
  return torch::cat(out);
}

seg::SegSet concat(const seg::SegSet& a, const seg::SegSet& b) {
  if (a.size() == 0) return b;
  if (b.size() == 0) return a;
  return {torch::cat({a.images, b.images}), torch::cat({a.masks, b.masks})};
}

}  // namespace

std::string_view to_string(ExperimentId id) {
  for (const auto& [k, name] : kNames) {
    if (k == id) return name;
  }
  return "unknown";
}

ExperimentId experiment_from_string(std::string_view s) {
  for (const auto& [k, name] : kNames) {
    if (name == s) return k;
  }
  std::string known;
  for (const auto& [k, name] : kNames) known += fmt::format("{}{}", known.empty() ? "" : ", ", name);
  throw ConfigError(fmt::format("unknown experiment '{}' (expected one of: {})", s, known));
}

const std::vector<ExperimentId>& all_experiments() {
  static const std::vector<ExperimentId> ids = [] {
    std::vector<ExperimentId> v;
    for (const auto& [k, name] : kNames) v.push_back(k);
    return v;
  }();
  return ids;
}

void validate(const ExperimentConfig& c) {
  if (c.dataset.folds < 2) throw ConfigError("dataset.folds must be >= 2");
  if (c.test_fold < -1 || c.test_fold >= c.dataset.folds) {
    throw ConfigError(fmt::format("test_fold {} does not exist (folds = {})", c.test_fold, c.dataset.folds));
  }
  if (c.dataset.domain1_count < c.dataset.folds || c.dataset.domain2_count < c.dataset.folds) {
    throw ConfigError("each domain needs at least one scene per fold");
  }
  if (c.drl.image_size != c.dataset.image_size || c.unet.image_size != c.dataset.image_size) {
    throw ConfigError(fmt::format("image sizes disagree: dataset {}, drl {}, unet {}", c.dataset.image_size,
                                  c.drl.image_size, c.unet.image_size));
  }
  validate(c.drl);
  seg::validate(c.unet);
  if (c.drl_steps < 1 || c.drl_batch < 1) throw ConfigError("drl.steps and drl.batch_size must be >= 1");
  if (c.seg_train.epochs < 1 || c.seg_train.batch_size < 1) {
    throw ConfigError("seg.epochs and seg.batch_size must be >= 1");
  }
  if (c.drl_train.learning_rate < 0.0 || c.seg_train.learning_rate < 0.0) {
    throw ConfigError("learning rates must be >= 0");
  }
  if (!(c.val_fraction >= 0.0 && c.val_fraction < 1.0)) throw ConfigError("seg.val_fraction must be in [0, 1)");
  if (c.style_samples < 2) throw ConfigError("style.samples must be >= 2");
  if (c.style_sources < 1 || c.montage_sources < 0) throw ConfigError("style.sources must be >= 1");
}

nlohmann::json to_json(const ExperimentConfig& c) {
  return {
      {"experiment", to_string(c.experiment)},
      {"seed", c.seed},
      {"output_dir", c.output_dir.string()},
      {"dataset_dir", c.dataset_dir.string()},
      {"test_fold", c.test_fold},
      {"dataset", synth::to_json(c.dataset)},
      {"drl", to_json(c.drl)},
      {"drl_train", to_json(c.drl_train)},
      {"drl_steps", c.drl_steps},
      {"drl_batch", c.drl_batch},
      {"retrain_drl", c.retrain_drl},
      {"unet", seg::to_json(c.unet)},
      {"seg_train", seg::to_json(c.seg_train)},
      {"val_fraction", c.val_fraction},
      {"style_samples", c.style_samples},
      {"style_sources", c.style_sources},
      {"montage_sources", c.montage_sources},
  };
}

std::vector<int> folds_to_run(const ExperimentConfig& c) {
  if (c.test_fold >= 0) return {c.test_fold};
  std::vector<int> all(static_cast<size_t>(c.dataset.folds));
  std::iota(all.begin(), all.end(), 0);
  return all;
}

MetricsRecord make_record(std::string experiment, std::string variant, int fold, std::string domain,
                          std::vector<double> per_image, double wall_clock_s) {
  MetricsRecord r;
  r.experiment = std::move(experiment);
  r.variant = std::move(variant);
  r.fold = fold;
  r.domain = std::move(domain);
  r.mean_dice = mean_of(per_image);
  r.std_dice = population_std(per_image);
  r.per_image = std::move(per_image);
  r.wall_clock_s = wall_clock_s;
  return r;
}

nlohmann::json to_json(const MetricsRecord& r) {
  return {{"experiment", r.experiment}, {"variant", r.variant},     {"fold", r.fold},
          {"domain", r.domain},         {"mean_dice", r.mean_dice}, {"std_dice", r.std_dice},
          {"per_image", r.per_image},   {"wall_clock_s", r.wall_clock_s}};
}

MetricsRecord record_from_json(const nlohmann::json& j) {
  MetricsRecord r;
  r.experiment = j.at("experiment").get<std::string>();
  r.variant = j.value("variant", "");
  r.fold = j.at("fold").get<int>();
  r.domain = j.at("domain").get<std::string>();
  r.mean_dice = j.at("mean_dice").get<double>();
  r.std_dice = j.at("std_dice").get<double>();
  r.per_image = j.at("per_image").get<std::vector<double>>();
  r.wall_clock_s = j.value("wall_clock_s", 0.0);
  return r;
}

bool same_metrics(const MetricsRecord& a, const MetricsRecord& b) {
  return a.experiment == b.experiment && a.variant == b.variant && a.fold == b.fold && a.domain == b.domain &&
         a.mean_dice == b.mean_dice && a.std_dice == b.std_dice && a.per_image == b.per_image;
}

nlohmann::json to_json(const StyleReport& r) {
  return {{"fold", r.fold},
          {"sources", r.sources},
          {"samples", r.samples},
          {"diversity", r.diversity},
          {"content_l1", r.content_l1},
          {"self_reference_l1", r.self_reference_l1},
          {"panels_per_row", r.panels_per_row},
          {"montage", r.montage.filename().string()}};
}

ExperimentRunner::ExperimentRunner(ExperimentConfig config) : config_(std::move(config)) { validate(config_); }

fs::path ExperimentRunner::experiment_dir() const { return config_.output_dir / to_string(config_.experiment); }
fs::path ExperimentRunner::checkpoint_dir() const { return config_.output_dir / "checkpoints"; }

const synth::Dataset& ExperimentRunner::dataset(bool multi_phase) {
  auto it = datasets_.find(multi_phase);
  if (it != datasets_.end()) return it->second;
  synth::Dataset ds;
  bool loaded = false;
  if (!config_.dataset_dir.empty()) {
    ds = synth::load_dataset(config_.dataset_dir);
    loaded = ds.config.multi_phase == multi_phase;
  }
  if (!loaded) {
    auto dc = config_.dataset;
    dc.multi_phase = multi_phase;
    ds = synth::gen_dataset(dc);
  }
  if (ds.config.folds != config_.dataset.folds) {
    throw ConfigError(fmt::format("dataset has {} folds, config expects {}", ds.config.folds, config_.dataset.folds));
  }
  return datasets_.emplace(multi_phase, std::move(ds)).first->second;
}

ExperimentRunner::Split ExperimentRunner::split(const synth::Dataset& ds, Domain d, int fold) const {
  Split s;
  s.test = ds.select(d, fold, true);
  auto rest = ds.select(d, fold, false);
  std::mt19937_64 rng(stream_seed(config_.seed, kValSplit + static_cast<uint64_t>(domain_index(d)), fold));
  std::shuffle(rest.begin(), rest.end(), rng);
  auto n_val = static_cast<size_t>(std::llround(config_.val_fraction * static_cast<double>(rest.size())));
  if (config_.val_fraction > 0.0 && n_val == 0 && rest.size() >= 2) n_val = 1;
  s.val.assign(rest.begin(), rest.begin() + static_cast<std::ptrdiff_t>(n_val));
  s.train.assign(rest.begin() + static_cast<std::ptrdiff_t>(n_val), rest.end());
  auto by_id = [](const synth::DataItem* a, const synth::DataItem* b) { return a->scene_id < b->scene_id; };
  std::sort(s.val.begin(), s.val.end(), by_id);
  std::sort(s.train.begin(), s.train.end(), by_id);
  if (s.train.empty() || s.test.empty()) throw ConfigError(fmt::format("fold {} leaves an empty split", fold));
  return s;
}

seg::SegSet ExperimentRunner::seg_set(const std::vector<const synth::DataItem*>& items, DrlModel* content_model,
                                      bool training, bool label_free) {
  if (items.empty()) return {};
  const Domain d = items.front()->domain;
  std::vector<torch::Tensor> masks;
  masks.reserve(items.size());
  for (const auto* it : items) {
    if (it->domain != d) throw ConfigError("seg_set: mixed domains");
    if (training && label_free && it->domain == Domain::second) ++audit_domain2_reads_;
    masks.push_back(it->mask);
  }
  auto images = synth::stack_images(items, d).pixels;
  if (content_model != nullptr) images = content_only_images(*content_model, images, d);
  return {images, torch::stack(masks)};
}

seg::UNet ExperimentRunner::train_unet(const seg::SegSet& train, const seg::SegSet& val, uint64_t stream) {
  seg::UNet model(config_.unet, synth::derive_seed(config_.seed, stream));
  auto sc = config_.seg_train;
  sc.seed = synth::derive_seed(config_.seed, stream + 1);
  seg::seg_train(model, train, val, sc);
  return model;
}

std::vector<double> ExperimentRunner::evaluate(seg::UNet& model, const seg::SegSet& test) {
  return seg::evaluate_dice(model, test);
}

DrlModel& ExperimentRunner::drl(bool multi_phase, int fold) {
  const auto key = std::pair{multi_phase, fold};
  if (auto it = drls_.find(key); it != drls_.end()) return it->second;

  const auto& ds = dataset(multi_phase);
  nlohmann::json identity = {{"generator", synth::kGeneratorVersion},
                             {"dataset", synth::to_json(ds.config)}, {"drl", to_json(config_.drl)},
                             {"drl_train", to_json(config_.drl_train)}, {"steps", config_.drl_steps},
                             {"batch", config_.drl_batch},             {"seed", config_.seed},
                             {"fold", fold}};
  const auto path = checkpoint_dir() / fmt::format("drl-{}-fold{}.ckpt", multi_phase ? "multi" : "single", fold);

  DrlModel model(config_.drl, stream_seed(config_.seed, kDrlInit, fold));
  if (!config_.retrain_drl && fs::exists(path)) {
    auto ckpt = load_checkpoint(path);
    if (ckpt.config == identity) {
      restore_module(*model, ckpt);
      model->eval();
      return drls_.emplace(key, model).first->second;
    }
  }

  // Images only: the DRL never sees masks of either domain.
  auto train1 = ds.select(Domain::first, fold, false);
  auto train2 = ds.select(Domain::second, fold, false);
  auto tc = config_.drl_train;
  tc.seed = stream_seed(config_.seed, kDrlTrain, fold);
  DrlTrainer trainer(model, tc);
  std::mt19937_64 rng(stream_seed(config_.seed, kDrlBatches, fold));
  std::vector<nlohmann::json> log;
  auto draw = [&](const std::vector<const synth::DataItem*>& pool) {
    std::vector<const synth::DataItem*> b;
    std::uniform_int_distribution<size_t> pick(0, pool.size() - 1);
    for (int64_t k = 0; k < config_.drl_batch; ++k) b.push_back(pool[pick(rng)]);
    return b;
  };
  for (int64_t step = 0; step < config_.drl_steps; ++step) {
    auto x1 = synth::stack_images(draw(train1), Domain::first);
    auto x2 = synth::stack_images(draw(train2), Domain::second);
    auto report = trainer.train_step(x1, x2);
    if (step % 10 == 0 || step + 1 == config_.drl_steps) log.push_back(to_json(report));
  }
  model->eval();
  fs::create_directories(checkpoint_dir());
  save_checkpoint(path, make_checkpoint(*model, identity, trainer.step()));
  auto log_path = path;
  log_path.replace_extension(".loss.jsonl");
  io::write_jsonl_atomic(log_path, log);
  return drls_.emplace(key, model).first->second;
}

MetricsRecord ExperimentRunner::run_lower_bound(int fold) {
  const auto t0 = Clock::now();
  const auto& ds = dataset(false);
  auto s1 = split(ds, Domain::first, fold);
  auto s2 = split(ds, Domain::second, fold);
  auto model = train_unet(seg_set(s1.train, nullptr, true, true), seg_set(s1.val, nullptr, true, true),
                          stream_seed(config_.seed, kUnetLower, fold));
  auto dice = evaluate(model, seg_set(s2.test, nullptr, false, true));
  return make_record("baseline-lower", "raw", fold, "domain2", std::move(dice), seconds_since(t0));
}

MetricsRecord ExperimentRunner::run_upper_bound(int fold) {
  const auto t0 = Clock::now();
  const auto& ds = dataset(false);
  auto s2 = split(ds, Domain::second, fold);
  auto model = train_unet(seg_set(s2.train, nullptr, true, false), seg_set(s2.val, nullptr, true, false),
                          stream_seed(config_.seed, kUnetUpper, fold));
  auto dice = evaluate(model, seg_set(s2.test, nullptr, false, false));
  return make_record("baseline-upper", "raw", fold, "domain2", std::move(dice), seconds_since(t0));
}

MetricsRecord ExperimentRunner::run_experiment1(int fold) {
  const auto t0 = Clock::now();
  auto& model = drl(false, fold);
  const auto& ds = dataset(false);
  auto s1 = split(ds, Domain::first, fold);
  auto s2 = split(ds, Domain::second, fold);
  auto unet = train_unet(seg_set(s1.train, &model, true, true), seg_set(s1.val, &model, true, true),
                         stream_seed(config_.seed, kUnetExp1, fold));
  auto dice = evaluate(unet, seg_set(s2.test, &model, false, true));
  return make_record("exp1-da", "content-only", fold, "domain2", std::move(dice), seconds_since(t0));
}

std::vector<MetricsRecord> ExperimentRunner::run_experiment2(int fold) {
  const auto t0 = Clock::now();
  auto& model = drl(false, fold);
  const auto& ds = dataset(false);
  auto s1 = split(ds, Domain::first, fold);
  auto s2 = split(ds, Domain::second, fold);
  auto train = concat(seg_set(s1.train, &model, true, false), seg_set(s2.train, &model, true, false));
  auto val = concat(seg_set(s1.val, &model, true, false), seg_set(s2.val, &model, true, false));
  auto unet = train_unet(train, val, stream_seed(config_.seed, kUnetJoint, fold));
  const double wall = seconds_since(t0);
  return {make_record("exp2-joint", "joint", fold, "domain1", evaluate(unet, seg_set(s1.test, &model, false, false)),
                      wall),
          make_record("exp2-joint", "joint", fold, "domain2", evaluate(unet, seg_set(s2.test, &model, false, false)),
                      wall)};
}

std::vector<MetricsRecord> ExperimentRunner::run_single_domain(int fold) {
  auto& model = drl(false, fold);
  const auto& ds = dataset(false);
  std::vector<MetricsRecord> out;
  for (Domain d : {Domain::first, Domain::second}) {
    const auto t0 = Clock::now();
    auto s = split(ds, d, fold);
    const auto stream = d == Domain::first ? kUnetSingle1 : kUnetSingle2;
    auto unet = train_unet(seg_set(s.train, &model, true, false), seg_set(s.val, &model, true, false),
                           stream_seed(config_.seed, stream, fold));
    out.push_back(make_record("exp2-joint", "single-domain", fold, domain_name(d),
                              evaluate(unet, seg_set(s.test, &model, false, false)), seconds_since(t0)));
  }
  return out;
}

std::vector<MetricsRecord> ExperimentRunner::run_experiment3a(int fold) {
  const auto t0 = Clock::now();
  auto& model = drl(true, fold);
  const auto& ds = dataset(true);
  auto s1 = split(ds, Domain::first, fold);
  auto s2 = split(ds, Domain::second, fold);
  auto unet = train_unet(seg_set(s1.train, &model, true, true), seg_set(s1.val, &model, true, true),
                         stream_seed(config_.seed, kUnetExp3a, fold));
  auto pooled = evaluate(unet, seg_set(s2.test, &model, false, true));
  const double wall = seconds_since(t0);

  std::vector<MetricsRecord> out;
  out.push_back(make_record("exp3a-multimodal", "pooled", fold, "domain2", pooled, wall));
  for (auto phase : {synth::Phase::pre, synth::Phase::arterial, synth::Phase::venous}) {
    std::vector<double> dice;
    for (size_t i = 0; i < s2.test.size(); ++i) {
      if (s2.test[i]->phase == phase) dice.push_back(pooled[i]);
    }
    out.push_back(make_record("exp3a-multimodal", fmt::format("phase-{}", synth::to_string(phase)), fold,
                              "domain2", std::move(dice), wall));
  }
  return out;
}

StyleReport ExperimentRunner::run_experiment3b(int fold) {
  auto& model = drl(true, fold);
  const auto& ds = dataset(true);
  torch::NoGradGuard no_grad;
  model->eval();

  auto sources = ds.select(Domain::first, fold, true);
  sources.resize(std::min<size_t>(sources.size(), static_cast<size_t>(config_.style_sources)));
  const auto n = static_cast<int64_t>(sources.size());
  const auto k = config_.style_samples;
  auto x = synth::stack_images(sources, Domain::first);
  auto content = encode_content(model, x);

  // k prior-sampled translations into domain 2.
  StylePrior prior(config_.drl.style_dim, stream_seed(config_.seed, kStylePrior, fold));
  std::vector<torch::Tensor> samples;
  double content_l1 = 0.0;
  for (int64_t j = 0; j < k; ++j) {
    auto out = decode(model, content, prior.sample(n), Domain::second);
    auto re = encode_content(model, out);
    content_l1 += l1_mean(re.features, content.features).item<double>();
    samples.push_back(out.pixels);
  }
  content_l1 /= static_cast<double>(k);
  double diversity = 0.0;
  int64_t pairs = 0;
  for (int64_t a = 0; a < k; ++a) {
    for (int64_t b = a + 1; b < k; ++b) {
      diversity += l1_mean(samples[a], samples[b]).item<double>();
      ++pairs;
    }
  }
  diversity /= static_cast<double>(pairs);

  // Own style as reference must reproduce the reconstruction path.
  auto targets = ds.select(Domain::second, fold, true);
  if (targets.empty()) throw ConfigError(fmt::format("fold {} has no domain-2 test images", fold));
  auto own = decode(model, content, encode_style(model, x), Domain::first);
  // The forward pass pairs batches one to one, so cycle the domain-2 images.
  std::vector<const synth::DataItem*> partners;
  for (int64_t i = 0; i < n; ++i) partners.push_back(targets[static_cast<size_t>(i) % targets.size()]);
  auto x2 = synth::stack_images(partners, Domain::second);
  auto fwd = drl_forward(model, x, x2, prior.sample(n), prior.sample(n), /*reencode=*/false);
  const double self_l1 = l1_mean(own.pixels, fwd.recon1).item<double>();

  // One reference image per phase, from the domain-2 test fold when it has
  // one. Only the image is read.
  std::vector<torch::Tensor> refs;
  auto others = ds.select(Domain::second, fold, false);
  for (auto phase : {synth::Phase::pre, synth::Phase::arterial, synth::Phase::venous}) {
    auto of_phase = [&](const auto* t) { return t->phase == phase; };
    const synth::DataItem* pick = nullptr;
    if (auto it = std::find_if(targets.begin(), targets.end(), of_phase); it != targets.end()) {
      pick = *it;
    } else if (auto jt = std::find_if(others.begin(), others.end(), of_phase); jt != others.end()) {
      pick = *jt;
    } else {
      throw ConfigError(fmt::format("no domain-2 image of phase {}", synth::to_string(phase)));
    }
    auto ref = encode_style(model, synth::stack_images({pick}, Domain::second));
    refs.push_back(decode(model, content, StyleCode{ref.values.expand({n, -1})}, Domain::second).pixels);
  }

  StyleReport r;
  r.fold = fold;
  r.sources = n;
  r.samples = k;
  r.diversity = diversity;
  r.content_l1 = content_l1;
  r.self_reference_l1 = self_l1;
  r.panels_per_row = 1 + k + static_cast<int64_t>(refs.size());

  const auto rows = std::min<int64_t>(config_.montage_sources, n);
  if (rows > 0) {
    std::vector<torch::Tensor> lines;
    for (int64_t i = 0; i < rows; ++i) {
      std::vector<torch::Tensor> panels{x.pixels[i]};
      for (const auto& s : samples) panels.push_back(s[i]);
      for (const auto& s : refs) panels.push_back(s[i]);
      lines.push_back(torch::cat(panels, /*dim=*/2));
    }
    r.montage = experiment_dir() / fmt::format("montage-fold{}.pgm", fold);
    fs::create_directories(experiment_dir());
    io::write_image_pgm8(r.montage, torch::cat(lines, /*dim=*/1));
  }
  return r;
}

std::vector<MetricsRecord> ExperimentRunner::train_seg(Domain domain, bool content_only, int fold) {
  const auto t0 = Clock::now();
  DrlModel* model = content_only ? &drl(false, fold) : nullptr;
  const auto& ds = dataset(false);
  auto s = split(ds, domain, fold);
  auto unet = train_unet(seg_set(s.train, model, true, false), seg_set(s.val, model, true, false),
                         stream_seed(config_.seed, domain == Domain::first ? kUnetSingle1 : kUnetSingle2, fold));
  const double wall = seconds_since(t0);
  const auto variant = fmt::format("{}-{}", domain_name(domain), content_only ? "content-only" : "raw");
  fs::create_directories(checkpoint_dir());
  nlohmann::json identity = {{"unet", seg::to_json(config_.unet)}, {"domain", domain_index(domain) + 1},
                             {"content_only", content_only}, {"seed", config_.seed}, {"fold", fold}};
  save_checkpoint(checkpoint_dir() / fmt::format("unet-{}-fold{}.ckpt", variant, fold),
                  make_checkpoint(*unet, identity, config_.seg_train.epochs));
  std::vector<MetricsRecord> out;
  for (Domain d : {Domain::first, Domain::second}) {
    auto test = split(ds, d, fold).test;
    out.push_back(make_record("train-seg", variant, fold, domain_name(d),
                              evaluate(unet, seg_set(test, model, false, false)), wall));
  }
  return out;
}

std::vector<MetricsRecord> ExperimentRunner::run() {
  const auto dir = experiment_dir();
  fs::create_directories(dir);
  io::write_file_atomic(dir / "config.txt", config::echo(config_));
  io::write_file_atomic(dir / "config.json", to_json(config_).dump(2) + "\n");

  std::vector<MetricsRecord> records;
  std::vector<nlohmann::json> style;
  for (int fold : folds_to_run(config_)) {
    std::vector<MetricsRecord> got;
    switch (config_.experiment) {
      case ExperimentId::baseline_lower: got = {run_lower_bound(fold)}; break;
      case ExperimentId::baseline_upper: got = {run_upper_bound(fold)}; break;
      case ExperimentId::exp1_da: got = {run_experiment1(fold)}; break;
      case ExperimentId::exp2_joint: {
        got = run_experiment2(fold);
        auto single = run_single_domain(fold);
        got.insert(got.end(), single.begin(), single.end());
        break;
      }
      case ExperimentId::exp3a_multimodal: got = run_experiment3a(fold); break;
      case ExperimentId::exp3b_diverse: style.push_back(to_json(run_experiment3b(fold))); break;
    }
    records.insert(records.end(), got.begin(), got.end());
    std::vector<nlohmann::json> lines;
    for (const auto& r : records) lines.push_back(to_json(r));
    io::write_jsonl_atomic(dir / "metrics.jsonl", lines);
    if (!style.empty()) io::write_jsonl_atomic(dir / "style.jsonl", style);
  }
  if (audit_domain2_reads_ != 0) {
    throw TrainingError(fmt::format("label audit: {} domain-2 masks read while training a label-free model",
                                    audit_domain2_reads_));
  }
  nlohmann::json audit = {{"domain2_training_label_reads", audit_domain2_reads_}};
  io::write_file_atomic(dir / "audit.json", audit.dump(2) + "\n");
  return records;
}

const std::vector<ReferenceValue>& reference_values() {
  static const std::vector<ReferenceValue> refs = {
      {"table1", "no adaptation", "domain2", 0.26, 0.07},
      {"table1", "cycle-consistent translation", "domain2", 0.72, 0.05},
      {"table1", "content-only adaptation", "domain2", 0.81, 0.03},
      {"table2", "domain1 trained", "domain1", 0.901, 0.020},
      {"table2", "domain1 trained", "domain2", 0.260, 0.072},
      {"table2", "domain2 trained", "domain1", 0.134, 0.091},
      {"table2", "domain2 trained", "domain2", 0.869, 0.044},
      {"table2", "joint", "domain1", 0.912, 0.012},
      {"table2", "joint", "domain2", 0.891, 0.040},
      {"table3", "cycle-consistent translation", "domain2", 0.52, 0.06},
      {"table3", "content-only adaptation", "domain2", 0.74, 0.04},
  };
  return refs;
}

std::string summarize(const fs::path& root) {
  struct Group {
    std::set<int> folds;
    std::vector<double> dice;
  };
  std::map<std::tuple<std::string, std::string, std::string>, Group> groups;
  if (!fs::is_directory(root)) throw ConfigError(fmt::format("results root {} does not exist", root.string()));
  std::vector<fs::path> dirs;
  for (const auto& e : fs::directory_iterator(root)) {
    if (e.is_directory() && fs::exists(e.path() / "metrics.jsonl")) dirs.push_back(e.path());
  }
  std::sort(dirs.begin(), dirs.end());
  for (const auto& d : dirs) {
    for (const auto& j : io::read_jsonl(d / "metrics.jsonl")) {
      auto r = record_from_json(j);
      auto& g = groups[{r.experiment, r.variant, r.domain}];
      g.folds.insert(r.fold);
      g.dice.insert(g.dice.end(), r.per_image.begin(), r.per_image.end());
    }
  }

  auto table_of = [](const std::string& exp) -> std::string {
    if (exp == "baseline-lower" || exp == "exp1-da" || exp == "baseline-upper") return "table1";
    if (exp == "exp2-joint") return "table2";
    if (exp == "exp3a-multimodal") return "table3";
    return "other";
  };
  std::ostringstream out;
  out << "table,source,experiment,variant,domain,folds,n_images,mean_dice,std_dice\n";
  std::vector<std::pair<std::string, std::string>> rows;
  for (const auto& [key, g] : groups) {
    const auto& [exp, variant, domain] = key;
    rows.emplace_back(table_of(exp), fmt::format("{},synthetic,{},{},{},{},{},{:.4f},{:.4f}", table_of(exp), exp,
                                                 variant, domain, g.folds.size(), g.dice.size(), mean_of(g.dice),
                                                 population_std(g.dice)));
  }
  for (const auto& ref : reference_values()) {
    rows.emplace_back(ref.table, fmt::format("{},clinical reference (not reproduced),,{},{},,,{:.3f},{:.3f}",
                                             ref.table, ref.row, ref.domain, ref.dice, ref.std));
  }
  std::stable_sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  for (const auto& [t, line] : rows) out << line << "\n";
  return out.str();
}

}  // namespace dadr::experiments
