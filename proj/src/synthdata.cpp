#include "dadr/synthdata.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <optional>
#include <set>

#include "dadr/errors.hpp"
#include "dadr/folds.hpp"
#include "dadr/io.hpp"

namespace dadr::synth {

namespace fs = std::filesystem;

namespace {

constexpr int kMaxSceneTries = 100;
constexpr double kMinOrganFraction = 0.05;
constexpr double kMaxOrganFraction = 0.40;

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

/// Pixel-centre rasterization of a blob into a (size x size) bitmap.
std::vector<uint8_t> rasterize(const Blob& b, int64_t size) {
  std::vector<uint8_t> out(static_cast<size_t>(size * size), 0);
  for (int64_t y = 0; y < size; ++y) {
    for (int64_t x = 0; x < size; ++x) out[y * size + x] = b.contains(x + 0.5, y + 0.5) ? 1 : 0;
  }
  return out;
}

bool inside_frame(const Blob& b, int64_t size, double margin) {
  const double e = b.max_extent();
  return b.cx - e >= margin && b.cx + e <= size - margin && b.cy - e >= margin &&
         b.cy + e <= size - margin;
}

/// True if any set pixel of `a` lies within `gap` pixels (Chebyshev) of a set pixel of `b`.
bool near(const std::vector<uint8_t>& a, const std::vector<uint8_t>& b, int64_t size, int gap) {
  for (int64_t y = 0; y < size; ++y) {
    for (int64_t x = 0; x < size; ++x) {
      if (!a[y * size + x]) continue;
      for (int64_t dy = -gap; dy <= gap; ++dy) {
        for (int64_t dx = -gap; dx <= gap; ++dx) {
          const auto yy = y + dy;
          const auto xx = x + dx;
          if (yy >= 0 && yy < size && xx >= 0 && xx < size && b[yy * size + xx]) return true;
        }
      }
    }
  }
  return false;
}

std::optional<Scene> try_scene(std::mt19937_64& rng, int64_t size, int64_t id) {
  const double s = static_cast<double>(size);
  Scene scene;
  scene.id = id;
  scene.size = size;
  auto& o = scene.organ;
  o.rx = uniform(rng, 0.15, 0.32) * s;
  o.ry = uniform(rng, 0.15, 0.32) * s;
  o.angle = uniform(rng, 0.0, std::numbers::pi);
  for (int k = 0; k < 3; ++k) {
    o.amp[k] = uniform(rng, 0.0, 0.07);
    o.shift[k] = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  }
  const double e = o.max_extent();
  if (2.0 * e + 2.0 >= s) return std::nullopt;
  o.cx = uniform(rng, e + 1.0, s - e - 1.0);
  o.cy = uniform(rng, e + 1.0, s - e - 1.0);

  const auto organ = rasterize(o, size);
  const double frac =
      static_cast<double>(std::count(organ.begin(), organ.end(), 1)) / static_cast<double>(organ.size());
  if (frac < kMinOrganFraction || frac > kMaxOrganFraction) return std::nullopt;

  const int n_distractors = std::uniform_int_distribution<int>(1, 3)(rng);
  std::vector<uint8_t> occupied = organ;
  for (int i = 0; i < n_distractors; ++i) {
    bool placed = false;
    for (int attempt = 0; attempt < 50 && !placed; ++attempt) {
      Blob d;
      d.rx = uniform(rng, 0.04, 0.08) * s;
      d.ry = uniform(rng, 0.04, 0.08) * s;
      d.angle = uniform(rng, 0.0, std::numbers::pi);
      const double de = d.max_extent();
      d.cx = uniform(rng, de + 1.0, s - de - 1.0);
      d.cy = uniform(rng, de + 1.0, s - de - 1.0);
      if (!inside_frame(d, size, 1.0)) continue;
      auto pix = rasterize(d, size);
      if (std::count(pix.begin(), pix.end(), 1) == 0 || near(pix, occupied, size, 2)) continue;
      for (size_t k = 0; k < pix.size(); ++k) occupied[k] |= pix[k];
      scene.distractors.push_back(d);
      placed = true;
    }
    if (!placed) return std::nullopt;
  }
  scene.texture_seed = rng();
  return scene;
}

/// Smooth texture in [-1, 1] from a handful of low-frequency plane waves.
std::vector<double> texture(uint64_t seed, int64_t size) {
  std::mt19937_64 rng(seed);
  struct Wave {
    double fx, fy, phase;
  };
  std::vector<Wave> waves;
  for (int i = 0; i < 3; ++i) {
    const double freq = uniform(rng, 1.0, 4.0);
    const double dir = uniform(rng, 0.0, 2.0 * std::numbers::pi);
    waves.push_back({freq * std::cos(dir), freq * std::sin(dir), uniform(rng, 0.0, 2.0 * std::numbers::pi)});
  }
  std::vector<double> out(static_cast<size_t>(size * size));
  for (int64_t y = 0; y < size; ++y) {
    for (int64_t x = 0; x < size; ++x) {
      double v = 0.0;
      for (const auto& w : waves) {
        v += std::sin(2.0 * std::numbers::pi * (w.fx * x + w.fy * y) / static_cast<double>(size) + w.phase);
      }
      out[y * size + x] = v / static_cast<double>(waves.size());
    }
  }
  return out;
}

}  // namespace

std::string_view to_string(Phase p) {
  switch (p) {
    case Phase::none: return "none";
    case Phase::pre: return "pre";
    case Phase::arterial: return "arterial";
    case Phase::venous: return "venous";
  }
  return "none";
}

Phase phase_from_string(std::string_view s) {
  if (s == "none") return Phase::none;
  if (s == "pre") return Phase::pre;
  if (s == "arterial") return Phase::arterial;
  if (s == "venous") return Phase::venous;
  throw ConfigError(fmt::format("unknown phase '{}'", s));
}

bool Blob::contains(double x, double y) const {
  const double dx = x - cx;
  const double dy = y - cy;
  const double c = std::cos(angle);
  const double s = std::sin(angle);
  const double u = c * dx + s * dy;
  const double v = -s * dx + c * dy;
  const double rho = std::hypot(u, v);
  if (rho == 0.0) return true;
  const double psi = std::atan2(v, u);
  const double ellipse =
      1.0 / std::sqrt(std::pow(std::cos(psi) / rx, 2) + std::pow(std::sin(psi) / ry, 2));
  double mod = 1.0;
  for (int k = 0; k < 3; ++k) mod += amp[k] * std::cos((k + 2) * psi + shift[k]);
  return rho <= ellipse * mod;
}

double Blob::max_extent() const {
  double mod = 1.0;
  for (double a : amp) mod += std::abs(a);
  return std::max(rx, ry) * mod;
}

Scene gen_scene(std::mt19937_64& rng, int64_t size, int64_t id) {
  if (size < 16) throw ConfigError("gen_scene: image size must be at least 16");
  for (int attempt = 0; attempt < kMaxSceneTries; ++attempt) {
    if (auto scene = try_scene(rng, size, id)) return *scene;
  }
  throw ConfigError(fmt::format("gen_scene: no valid geometry after {} draws (size {})",
                                kMaxSceneTries, size));
}

torch::Tensor organ_mask(const Scene& scene) {
  auto pix = rasterize(scene.organ, scene.size);
  return torch::from_blob(pix.data(), {scene.size, scene.size}, torch::kUInt8).clone();
}

double organ_area_fraction(const Scene& scene) {
  auto pix = rasterize(scene.organ, scene.size);
  return static_cast<double>(std::count(pix.begin(), pix.end(), 1)) / static_cast<double>(pix.size());
}

DomainStyle default_style(Domain domain, Phase phase) {
  DomainStyle s;
  s.domain = domain;
  if (domain == Domain::first) {
    if (phase != Phase::none) throw ConfigError("domain 1 has no contrast phases");
    return s;  // field defaults are the CT-like appearance
  }
  s.phase = phase == Phase::none ? Phase::pre : phase;
  s.background = 0.2;
  s.texture_amplitude = 0.08;
  s.bias_amplitude = 0.3;
  s.noise_sigma = 0.08;
  switch (s.phase) {
    case Phase::pre:
      s.organ = -0.45;
      s.distractor = -0.85;
      break;
    case Phase::arterial:
      s.background = 0.5;
      s.organ = 0.05;
      s.distractor = -0.75;
      break;
    case Phase::venous:
      s.organ = -0.1;
      s.distractor = -0.8;
      break;
    case Phase::none:
      break;
  }
  return s;
}

Rendered render(const Scene& scene, const DomainStyle& style, std::mt19937_64& rng) {
  if (style.noise_sigma < 0.0 || style.bias_amplitude < 0.0 || style.texture_amplitude < 0.0) {
    throw ConfigError("render: style amplitudes must be nonnegative");
  }
  const auto n = scene.size;
  auto mask = organ_mask(scene);
  std::vector<uint8_t> distract(static_cast<size_t>(n * n), 0);
  for (const auto& d : scene.distractors) {
    auto pix = rasterize(d, n);
    for (size_t k = 0; k < pix.size(); ++k) distract[k] |= pix[k];
  }
  const auto tex = texture(scene.texture_seed, n);

  // Bias field: smooth bilinear-plus-cross-term surface with max |field| <= 1.
  double a = uniform(rng, -1.0, 1.0);
  double b = uniform(rng, -1.0, 1.0);
  double c = uniform(rng, -1.0, 1.0);
  const double norm = std::abs(a) + std::abs(b) + std::abs(c);
  if (norm > 1.0) {
    a /= norm;
    b /= norm;
    c /= norm;
  }
  std::normal_distribution<double> noise(0.0, 1.0);

  auto image = torch::empty({1, n, n}, torch::kFloat32);
  auto img = image.accessor<float, 3>();
  auto m = mask.accessor<uint8_t, 2>();
  for (int64_t y = 0; y < n; ++y) {
    for (int64_t x = 0; x < n; ++x) {
      double v = style.background;
      if (m[y][x]) v = style.organ;
      else if (distract[y * n + x]) v = style.distractor;
      v += style.texture_amplitude * tex[y * n + x];
      if (style.bias_amplitude > 0.0) {
        const double u = 2.0 * (x + 0.5) / n - 1.0;
        const double w = 2.0 * (y + 0.5) / n - 1.0;
        const double field = a * u + b * w + c * u * w;
        const double v01 = (v + 1.0) / 2.0 * (1.0 + style.bias_amplitude * field);
        v = 2.0 * v01 - 1.0;
      }
      if (style.noise_sigma > 0.0) v += style.noise_sigma * noise(rng);
      img[0][y][x] = static_cast<float>(std::clamp(v, -1.0, 1.0));
    }
  }
  return {image, mask};
}

nlohmann::json to_json(const DatasetConfig& c) {
  return {{"image_size", c.image_size},     {"domain1_count", c.domain1_count},
          {"domain2_count", c.domain2_count}, {"paired_count", c.paired_count},
          {"multi_phase", c.multi_phase},   {"folds", c.folds},
          {"seed", c.seed}};
}

std::vector<const DataItem*> Dataset::select(Domain domain, int fold, bool in_fold) const {
  std::vector<const DataItem*> out;
  for (const auto& item : items) {
    if (item.paired || item.domain != domain) continue;
    if ((item.fold == fold) == in_fold) out.push_back(&item);
  }
  return out;
}

std::vector<const DataItem*> Dataset::paired(Domain domain) const {
  std::vector<const DataItem*> out;
  for (const auto& item : items) {
    if (item.paired && item.domain == domain) out.push_back(&item);
  }
  return out;
}

int64_t Dataset::count(Domain domain, bool include_paired) const {
  return std::count_if(items.begin(), items.end(), [&](const DataItem& it) {
    return it.domain == domain && (include_paired || !it.paired);
  });
}

uint64_t derive_seed(uint64_t seed, uint64_t index) {
  // splitmix64 over the combined value
  uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

Dataset gen_dataset(const DatasetConfig& config) {
  if (config.folds < 2) throw ConfigError("dataset: need at least 2 folds");
  if (config.domain1_count < config.folds || config.domain2_count < config.folds) {
    throw ConfigError(fmt::format("dataset: each domain needs at least {} scenes (one per fold)", config.folds));
  }
  if (config.paired_count < 0) throw ConfigError("dataset: paired_count must be >= 0");
  if (config.image_size < 16) throw ConfigError("dataset: image_size must be at least 16");

  static constexpr std::array<Phase, 3> kPhases{Phase::pre, Phase::arterial, Phase::venous};
  Dataset ds;
  ds.config = config;
  const int64_t n1 = config.domain1_count;
  const int64_t n2 = config.domain2_count;
  ds.items.reserve(static_cast<size_t>(n1 + n2 + 2 * config.paired_count));

  auto make = [&](int64_t scene_id, Domain domain, Phase phase, bool paired) {
    std::mt19937_64 geometry(derive_seed(config.seed, static_cast<uint64_t>(scene_id)));
    auto scene = gen_scene(geometry, config.image_size, scene_id);
    std::mt19937_64 appearance(derive_seed(config.seed ^ 0xa77ea7a7ULL,
                                           static_cast<uint64_t>(scene_id) * 2 + domain_index(domain)));
    auto r = render(scene, default_style(domain, phase), appearance);
    DataItem item;
    item.image = r.image;
    item.mask = r.mask;
    item.scene_id = scene_id;
    item.domain = domain;
    item.phase = domain == Domain::first ? Phase::none : phase;
    item.fold = paired ? -1 : 0;
    item.paired = paired;
    ds.items.push_back(std::move(item));
  };

  for (int64_t i = 0; i < n1; ++i) make(i, Domain::first, Phase::none, false);
  for (int64_t i = 0; i < n2; ++i) {
    make(n1 + i, Domain::second, config.multi_phase ? kPhases[i % 3] : Phase::pre, false);
  }
  for (int64_t i = 0; i < config.paired_count; ++i) {
    const auto id = n1 + n2 + i;
    make(id, Domain::first, Phase::none, true);
    make(id, Domain::second, config.multi_phase ? kPhases[i % 3] : Phase::pre, true);
  }

  for (Domain d : {Domain::first, Domain::second}) {
    std::vector<int64_t> ids;
    for (const auto& it : ds.items) {
      if (it.domain == d && !it.paired) ids.push_back(it.scene_id);
    }
    auto folds = experiments::kfold_split(ids, config.folds,
                                          derive_seed(config.seed, 0xf01dULL + domain_index(d)));
    for (auto& it : ds.items) {
      if (it.domain == d && !it.paired) it.fold = folds.at(it.scene_id);
    }
  }
  return ds;
}

void save_dataset(const Dataset& ds, const fs::path& dir) {
  fs::create_directories(dir / "images");
  fs::create_directories(dir / "masks");
  std::vector<nlohmann::json> manifest;
  manifest.reserve(ds.items.size());
  for (size_t i = 0; i < ds.items.size(); ++i) {
    const auto& it = ds.items[i];
    const auto name = fmt::format("{:05d}.pgm", i);
    io::write_image_pgm16(dir / "images" / name, it.image);
    io::write_mask_pgm(dir / "masks" / name, it.mask);
    manifest.push_back({{"path", "images/" + name},
                        {"mask_path", "masks/" + name},
                        {"scene_id", it.scene_id},
                        {"domain", static_cast<int>(it.domain)},
                        {"phase", std::string(to_string(it.phase))},
                        {"fold", it.fold},
                        {"paired", it.paired}});
  }
  io::write_jsonl_atomic(dir / "manifest.jsonl", manifest);
  io::write_file_atomic(dir / "dataset.json", to_json(ds.config).dump(2) + "\n");
}

Dataset load_dataset(const fs::path& dir) {
  if (!fs::exists(dir / "manifest.jsonl")) {
    throw ConfigError(fmt::format("no dataset manifest in {}", dir.string()));
  }
  Dataset ds;
  if (fs::exists(dir / "dataset.json")) {
    std::ifstream in(dir / "dataset.json");
    auto j = nlohmann::json::parse(in);
    ds.config.image_size = j.at("image_size");
    ds.config.domain1_count = j.at("domain1_count");
    ds.config.domain2_count = j.at("domain2_count");
    ds.config.paired_count = j.at("paired_count");
    ds.config.multi_phase = j.at("multi_phase");
    ds.config.folds = j.at("folds");
    ds.config.seed = j.at("seed");
  }
  for (const auto& rec : io::read_jsonl(dir / "manifest.jsonl")) {
    DataItem it;
    it.image = io::read_image_pgm(dir / rec.at("path").get<std::string>());
    it.mask = io::read_mask_pgm(dir / rec.at("mask_path").get<std::string>());
    it.scene_id = rec.at("scene_id");
    it.domain = domain_from_int(rec.at("domain").get<int>());
    it.phase = phase_from_string(rec.at("phase").get<std::string>());
    it.fold = rec.at("fold");
    it.paired = rec.at("paired");
    ds.items.push_back(std::move(it));
  }
  return ds;
}

ImageBatch stack_images(const std::vector<const DataItem*>& items, Domain domain) {
  if (items.empty()) throw ConfigError("stack_images: no items");
  std::vector<torch::Tensor> imgs;
  std::vector<int64_t> ids;
  imgs.reserve(items.size());
  for (const auto* it : items) {
    imgs.push_back(it->image);
    ids.push_back(it->scene_id);
  }
  return {torch::stack(imgs), domain, std::move(ids)};
}

}  // namespace dadr::synth
