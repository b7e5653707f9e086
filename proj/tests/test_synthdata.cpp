#include "doctest_torch.hpp"

#include <set>

#include "dadr/errors.hpp"
#include "dadr/seg.hpp"
#include "dadr/synthdata.hpp"
#include "support.hpp"

using namespace dadr;
using namespace dadr::synth;

namespace {

double region_mean(const torch::Tensor& image, const torch::Tensor& mask) {
  auto m = mask.to(torch::kBool);
  return image[0].masked_select(m).mean().item<double>();
}

}  // namespace

TEST_SUITE("synthdata") {
  TEST_CASE("scene generation is seed deterministic") {
    std::mt19937_64 a(5), b(5);
    auto sa = gen_scene(a, 64, 1);
    auto sb = gen_scene(b, 64, 1);
    CHECK(torch::equal(organ_mask(sa), organ_mask(sb)));
    CHECK(sa.distractors.size() == sb.distractors.size());
    CHECK(sa.texture_seed == sb.texture_seed);
  }

  TEST_CASE("1000 scenes respect the area and frame bounds") {
    std::mt19937_64 rng(6);
    for (int i = 0; i < 1000; ++i) {
      auto s = gen_scene(rng, 64, i);
      const double f = organ_area_fraction(s);
      CHECK(f >= 0.05);
      CHECK(f <= 0.40);
      CHECK(s.distractors.size() >= 1);
      CHECK(s.distractors.size() <= 3);
      for (const auto* b : std::initializer_list<const Blob*>{&s.organ}) {
        CHECK(b->cx - b->max_extent() >= 0.0);
        CHECK(b->cx + b->max_extent() <= 64.0);
        CHECK(b->cy - b->max_extent() >= 0.0);
        CHECK(b->cy + b->max_extent() <= 64.0);
      }
      for (const auto& d : s.distractors) {
        CHECK(d.cx - d.max_extent() >= 0.0);
        CHECK(d.cy + d.max_extent() <= 64.0);
      }
    }
  }

  TEST_CASE("distinct seeds give distinct geometries") {
    std::mt19937_64 rng(7);
    double total = 0.0;
    const int n = 50;
    for (int i = 0; i < n; ++i) {
      auto a = gen_scene(rng, 64, 2 * i);
      auto b = gen_scene(rng, 64, 2 * i + 1);
      total += seg::dice(organ_mask(a), organ_mask(b));
    }
    CHECK(total / n < 0.95);
  }

  TEST_CASE("masks do not depend on the style") {
    std::mt19937_64 rng(8);
    auto scene = gen_scene(rng, 64, 3);
    std::vector<DomainStyle> styles{default_style(Domain::first), default_style(Domain::second, Phase::pre),
                                    default_style(Domain::second, Phase::arterial),
                                    default_style(Domain::second, Phase::venous)};
    std::mt19937_64 r1(1);
    auto ref = render(scene, styles[0], r1);
    CHECK(torch::equal(ref.mask, organ_mask(scene)));
    for (const auto& s : styles) {
      std::mt19937_64 r(2);
      auto out = render(scene, s, r);
      CHECK(torch::equal(out.mask, ref.mask));
      CHECK(out.image.min().item<double>() >= -1.0);
      CHECK(out.image.max().item<double>() <= 1.0);
    }
  }

  TEST_CASE("the two domains differ by more than the gap margin") {
    std::mt19937_64 rng(9);
    auto scene = gen_scene(rng, 64, 4);
    std::mt19937_64 r1(1), r2(2);
    auto a = render(scene, default_style(Domain::first), r1);
    auto b = render(scene, default_style(Domain::second), r2);
    CHECK((a.image - b.image).abs().mean().item<double>() > kDomainGapMargin);
    const double g1 = default_style(Domain::first).organ_gap();
    for (auto p : {Phase::pre, Phase::arterial, Phase::venous}) {
      CHECK(std::abs(g1 - default_style(Domain::second, p).organ_gap()) >= kDomainGapMargin);
    }
    CHECK(default_style(Domain::first).contrast_polarity() == 1);
    for (auto p : {Phase::pre, Phase::arterial, Phase::venous}) {
      CHECK(default_style(Domain::second, p).contrast_polarity() == -1);
    }
  }

  TEST_CASE("noise-free rendering is piecewise constant") {
    std::mt19937_64 rng(10);
    auto scene = gen_scene(rng, 64, 5);
    auto style = default_style(Domain::first);
    style.texture_amplitude = 0.0;
    style.bias_amplitude = 0.0;
    style.noise_sigma = 0.0;
    std::mt19937_64 r(3);
    auto out = render(scene, style, r);
    auto values = std::get<0>(at::_unique(out.image.flatten()));
    std::set<float> levels(values.data_ptr<float>(), values.data_ptr<float>() + values.numel());
    std::set<float> allowed{static_cast<float>(style.background), static_cast<float>(style.organ),
                            static_cast<float>(style.distractor)};
    for (float v : levels) CHECK(allowed.count(v) == 1);
    CHECK(region_mean(out.image, out.mask) == doctest::Approx(style.organ));
  }

  TEST_CASE("three phases give distinct organ contrast") {
    std::mt19937_64 rng(11);
    auto scene = gen_scene(rng, 64, 6);
    std::vector<double> organ, gap;
    for (auto p : {Phase::pre, Phase::arterial, Phase::venous}) {
      std::mt19937_64 r(4);
      auto out = render(scene, default_style(Domain::second, p), r);
      const double o = region_mean(out.image, out.mask);
      const double bg = region_mean(out.image, 1 - out.mask);
      organ.push_back(o);
      gap.push_back(o - bg);
    }
    CHECK(organ[0] < organ[1]);
    CHECK(organ[1] > organ[2]);
    for (size_t a = 0; a < 3; ++a) {
      for (size_t b = a + 1; b < 3; ++b) CHECK(std::abs(gap[a] - gap[b]) > 0.1);
    }
    CHECK_THROWS_AS(default_style(Domain::first, Phase::arterial), ConfigError);
  }

  TEST_CASE("default dataset keeps the 6.5:1 domain ratio") {
    DatasetConfig dc;
    dc.image_size = 32;
    auto ds = gen_dataset(dc);
    CHECK(static_cast<double>(ds.count(Domain::first)) / static_cast<double>(ds.count(Domain::second)) ==
          doctest::Approx(6.5).epsilon(0.05));
    std::set<int64_t> ids1, ids2;
    for (const auto& it : ds.items) (it.domain == Domain::first ? ids1 : ids2).insert(it.scene_id);
    for (auto id : ids1) CHECK(ids2.count(id) == 0);
  }

  TEST_CASE("folds partition scene ids") {
    DatasetConfig dc;
    dc.image_size = 32;
    dc.domain1_count = 23;
    dc.domain2_count = 11;
    dc.folds = 5;
    auto ds = gen_dataset(dc);
    std::map<int64_t, std::set<int>> folds_of;
    for (const auto& it : ds.items) folds_of[it.scene_id].insert(it.fold);
    for (const auto& [id, f] : folds_of) {
      CHECK(f.size() == 1);
      CHECK(*f.begin() >= 0);
      CHECK(*f.begin() < 5);
    }
    for (int f = 0; f < 5; ++f) {
      auto test = ds.select(Domain::first, f, true);
      auto train = ds.select(Domain::first, f, false);
      CHECK(test.size() + train.size() == 23);
      CHECK(test.size() >= 4);
      CHECK(test.size() <= 5);
    }
    dc.domain2_count = 4;
    CHECK_THROWS_AS(gen_dataset(dc), ConfigError);
  }

  TEST_CASE("paired subset shares scene ids and masks and stays out of training selections") {
    DatasetConfig dc;
    dc.image_size = 32;
    dc.domain1_count = 12;
    dc.domain2_count = 6;
    dc.paired_count = 4;
    auto ds = gen_dataset(dc);
    auto p1 = ds.paired(Domain::first);
    auto p2 = ds.paired(Domain::second);
    REQUIRE(p1.size() == 4);
    REQUIRE(p2.size() == 4);
    for (size_t i = 0; i < p1.size(); ++i) {
      CHECK(p1[i]->scene_id == p2[i]->scene_id);
      CHECK(torch::equal(p1[i]->mask, p2[i]->mask));
      CHECK(p1[i]->paired);
    }
    for (int f = 0; f < dc.folds; ++f) {
      for (bool in : {true, false}) {
        for (const auto* it : ds.select(Domain::second, f, in)) CHECK(!it->paired);
      }
    }
    CHECK(ds.count(Domain::first) == 12);
  }

  TEST_CASE("multi-phase dataset contains all three phases") {
    DatasetConfig dc;
    dc.image_size = 32;
    dc.multi_phase = true;
    auto ds = gen_dataset(dc);
    std::map<Phase, int> count;
    for (const auto& it : ds.items) {
      if (it.domain == Domain::second) count[it.phase]++;
      if (it.domain == Domain::first) CHECK(it.phase == Phase::none);
    }
    CHECK(count[Phase::pre] > 0);
    CHECK(count[Phase::arterial] > 0);
    CHECK(count[Phase::venous] > 0);
    CHECK(count[Phase::none] == 0);
  }

  TEST_CASE("generation is a pure function of the config") {
    DatasetConfig dc;
    dc.image_size = 32;
    dc.domain1_count = 10;
    dc.domain2_count = 4;
    auto a = gen_dataset(dc);
    auto b = gen_dataset(dc);
    REQUIRE(a.items.size() == b.items.size());
    for (size_t i = 0; i < a.items.size(); ++i) {
      CHECK(torch::equal(a.items[i].image, b.items[i].image));
      CHECK(a.items[i].fold == b.items[i].fold);
    }
    dc.seed = 2;
    auto c = gen_dataset(dc);
    CHECK(!torch::equal(a.items[0].image, c.items[0].image));
  }

  TEST_CASE("dataset save and load round trip") {
    DatasetConfig dc;
    dc.image_size = 32;
    dc.domain1_count = 6;
    dc.domain2_count = 3;
    dc.paired_count = 1;
    dc.multi_phase = true;
    auto ds = gen_dataset(dc);
    auto dir = testing::temp_dir("dataset");
    save_dataset(ds, dir);
    CHECK(std::filesystem::exists(dir / "manifest.jsonl"));
    auto back = load_dataset(dir);
    REQUIRE(back.items.size() == ds.items.size());
    CHECK(to_json(back.config) == to_json(ds.config));
    for (size_t i = 0; i < ds.items.size(); ++i) {
      const auto& a = ds.items[i];
      const auto& b = back.items[i];
      CHECK(a.scene_id == b.scene_id);
      CHECK(a.domain == b.domain);
      CHECK(a.phase == b.phase);
      CHECK(a.fold == b.fold);
      CHECK(a.paired == b.paired);
      CHECK(torch::equal(a.mask, b.mask));
      CHECK((a.image - b.image).abs().max().item<double>() <= 1.0 / 65535.0 + 1e-7);
    }
    auto dir2 = testing::temp_dir("dataset2");
    save_dataset(back, dir2);
    CHECK(testing::read_file(dir / "manifest.jsonl") == testing::read_file(dir2 / "manifest.jsonl"));
  }
}
