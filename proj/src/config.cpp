#include "dadr/config.hpp"

#include <fmt/format.h>

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "dadr/errors.hpp"

namespace dadr::config {

namespace fs = std::filesystem;
using experiments::ExperimentConfig;

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const auto* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc{} || p != end) throw ConfigError(fmt::format("{}: '{}' is not a valid number", key, v));
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError(fmt::format("{}: '{}' is not a valid number", key, v));
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(fmt::format("{}: '{}' is not a boolean", key, v));
}

std::string fmt_double(double d) { return fmt::format("{}", d); }
std::string fmt_bool(bool b) { return b ? "true" : "false"; }

struct Field {
  std::string key;
  std::function<void(ExperimentConfig&, const std::string&, const fs::path&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

#define DADR_INT(name, member)                                                                           \
  Field {                                                                                                \
    name, [](ExperimentConfig& c, const std::string& v, const fs::path&) {                               \
      c.member = parse_number<std::decay_t<decltype(c.member)>>(name, v);                                \
    },                                                                                                   \
        [](const ExperimentConfig& c) { return std::to_string(c.member); }                               \
  }
#define DADR_DOUBLE(name, member)                                                                        \
  Field {                                                                                                \
    name, [](ExperimentConfig& c, const std::string& v, const fs::path&) { c.member = parse_double(name, v); }, \
        [](const ExperimentConfig& c) { return fmt_double(c.member); }                                   \
  }
#define DADR_BOOL(name, member)                                                                          \
  Field {                                                                                                \
    name, [](ExperimentConfig& c, const std::string& v, const fs::path&) { c.member = parse_bool(name, v); }, \
        [](const ExperimentConfig& c) { return fmt_bool(c.member); }                                     \
  }
#define DADR_PATH(name, member)                                                                          \
  Field {                                                                                                \
    name,                                                                                                \
        [](ExperimentConfig& c, const std::string& v, const fs::path& base) {                            \
          fs::path p(v);                                                                                 \
          c.member = (p.empty() || p.is_absolute() || base.empty()) ? p : base / p;                      \
        },                                                                                               \
        [](const ExperimentConfig& c) { return c.member.string(); }                                      \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> f = {
      Field{"experiment",
            [](ExperimentConfig& c, const std::string& v, const fs::path&) {
              c.experiment = experiments::experiment_from_string(v);
            },
            [](const ExperimentConfig& c) { return std::string(experiments::to_string(c.experiment)); }},
      DADR_INT("seed", seed),
      DADR_PATH("output_dir", output_dir),
      DADR_PATH("dataset_dir", dataset_dir),
      DADR_INT("test_fold", test_fold),

      DADR_INT("dataset.seed", dataset.seed),
      DADR_INT("dataset.image_size", dataset.image_size),
      DADR_INT("dataset.domain1_count", dataset.domain1_count),
      DADR_INT("dataset.domain2_count", dataset.domain2_count),
      DADR_INT("dataset.paired_count", dataset.paired_count),
      DADR_BOOL("dataset.multi_phase", dataset.multi_phase),
      DADR_INT("dataset.folds", dataset.folds),

      DADR_INT("drl.content_channels", drl.content_channels),
      DADR_INT("drl.style_dim", drl.style_dim),
      DADR_INT("drl.downsample_stages", drl.downsample_stages),
      DADR_INT("drl.residual_blocks", drl.residual_blocks),
      DADR_INT("drl.style_channels", drl.style_channels),
      DADR_INT("drl.mlp_hidden", drl.mlp_hidden),
      DADR_INT("drl.disc_channels", drl.disc_channels),
      DADR_BOOL("drl.patch_discriminator", drl.patch_discriminator),
      DADR_INT("drl.steps", drl_steps),
      DADR_INT("drl.batch_size", drl_batch),
      DADR_DOUBLE("drl.learning_rate", drl_train.learning_rate),
      DADR_DOUBLE("drl.adam_beta1", drl_train.adam_beta1),
      DADR_DOUBLE("drl.adam_beta2", drl_train.adam_beta2),
      DADR_DOUBLE("drl.grad_clip", drl_train.grad_clip),
      DADR_BOOL("drl.retrain", retrain_drl),

      DADR_DOUBLE("loss.alpha", drl_train.weights.alpha),
      DADR_DOUBLE("loss.beta", drl_train.weights.beta),
      DADR_DOUBLE("loss.gamma", drl_train.weights.gamma),

      DADR_INT("seg.depth", unet.depth),
      DADR_INT("seg.base_channels", unet.base_channels),
      DADR_INT("seg.epochs", seg_train.epochs),
      DADR_INT("seg.batch_size", seg_train.batch_size),
      DADR_DOUBLE("seg.learning_rate", seg_train.learning_rate),
      DADR_BOOL("seg.augment", seg_train.augment),
      DADR_DOUBLE("seg.val_fraction", val_fraction),

      DADR_INT("style.samples", style_samples),
      DADR_INT("style.sources", style_sources),
      DADR_INT("style.montage_rows", montage_sources),
  };
  return f;
}

#undef DADR_INT
#undef DADR_DOUBLE
#undef DADR_BOOL
#undef DADR_PATH

}  // namespace

RunConfig parse(const std::string& text) {
  RunConfig rc;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto body = trim(line);
    if (body.empty() || body.front() == '#') continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) throw ConfigError(fmt::format("line {}: expected 'key = value'", lineno));
    auto key = trim(std::string_view(body).substr(0, eq));
    auto value = trim(std::string_view(body).substr(eq + 1));
    if (key.empty()) throw ConfigError(fmt::format("line {}: empty key", lineno));
    if (!rc.emplace(key, value).second) throw ConfigError(fmt::format("line {}: duplicate key '{}'", lineno, key));
  }
  return rc;
}

RunConfig parse_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(fmt::format("cannot read config {}", path.string()));
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

ExperimentConfig to_experiment_config(const RunConfig& rc, const fs::path& base_dir) {
  ExperimentConfig c;
  for (const auto& [key, value] : rc) {
    const auto& f = fields();
    auto it = std::find_if(f.begin(), f.end(), [&](const Field& x) { return x.key == key; });
    if (it == f.end()) throw ConfigError(fmt::format("unknown config key '{}'", key));
    it->set(c, value, base_dir);
  }
  // One image size drives every model.
  c.drl.image_size = c.dataset.image_size;
  c.unet.image_size = c.dataset.image_size;
  experiments::validate(c);
  return c;
}

std::string echo(const ExperimentConfig& c) {
  std::string out;
  for (const auto& f : fields()) out += fmt::format("{} = {}\n", f.key, f.get(c));
  return out;
}

const std::vector<std::string>& known_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& f : fields()) k.push_back(f.key);
    return k;
  }();
  return keys;
}

}  // namespace dadr::config
