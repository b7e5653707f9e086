#include "doctest_torch.hpp"

#include <cmath>
#include <random>

#include "dadr/errors.hpp"
#include "dadr/seg.hpp"
#include "dadr/synthdata.hpp"
#include "support.hpp"

using namespace dadr;
using namespace dadr::seg;

namespace {

// Pixel-counting reference, independent of the tensor implementation.
double dice_oracle(const std::vector<int>& p, const std::vector<int>& g) {
  int inter = 0, np = 0, ng = 0;
  for (size_t i = 0; i < p.size(); ++i) {
    inter += p[i] & g[i];
    np += p[i];
    ng += g[i];
  }
  if (np + ng == 0) return 1.0;
  return 2.0 * inter / static_cast<double>(np + ng);
}

torch::Tensor to_tensor(const std::vector<int>& v, int64_t side) {
  auto t = torch::empty({side, side}, torch::kUInt8);
  auto a = t.accessor<uint8_t, 2>();
  for (int64_t i = 0; i < side * side; ++i) a[i / side][i % side] = static_cast<uint8_t>(v[static_cast<size_t>(i)]);
  return t;
}

UNetConfig small_unet() {
  UNetConfig c;
  c.image_size = 32;
  c.depth = 2;
  c.base_channels = 4;
  return c;
}

SegSet synthetic_set(int64_t n, int64_t size, uint64_t seed) {
  synth::DatasetConfig dc;
  dc.image_size = size;
  dc.domain1_count = n;
  dc.domain2_count = 3;
  dc.seed = seed;
  auto ds = synth::gen_dataset(dc);
  std::vector<const synth::DataItem*> items;
  std::vector<torch::Tensor> masks;
  for (const auto& it : ds.items) {
    if (it.domain == Domain::first) {
      items.push_back(&it);
      masks.push_back(it.mask);
    }
  }
  return {synth::stack_images(items, Domain::first).pixels, torch::stack(masks)};
}

}  // namespace

TEST_SUITE("seg") {
  TEST_CASE("dice matches brute-force counting on random 8x8 pairs") {
    std::mt19937_64 rng(123);
    int mismatches = 0;
    for (int trial = 0; trial < 1000; ++trial) {
      std::bernoulli_distribution fill(std::uniform_real_distribution<double>(0.0, 1.0)(rng));
      std::vector<int> p(64), g(64);
      for (auto& v : p) v = fill(rng);
      for (auto& v : g) v = fill(rng);
      if (trial % 50 == 0) std::fill(p.begin(), p.end(), 0);
      if (trial % 100 == 0) std::fill(g.begin(), g.end(), 0);
      const double expected = dice_oracle(p, g);
      if (dice(to_tensor(p, 8), to_tensor(g, 8)) != expected) ++mismatches;
      if (dice(to_tensor(g, 8), to_tensor(p, 8)) != expected) ++mismatches;
    }
    CHECK(mismatches == 0);
  }

  TEST_CASE("dice spot values") {
    auto m = to_tensor({1, 1, 0, 0, 1, 0, 0, 0, 0}, 3);
    CHECK(dice(m, m) == 1.0);
    auto pred = to_tensor({1, 1, 1, 0, 0, 0, 0, 0, 0}, 3);
    auto gt = to_tensor({0, 0, 1, 1, 0, 0, 0, 0, 0}, 3);
    CHECK(dice(pred, gt) == doctest::Approx(0.4));
    auto empty = torch::zeros({3, 3}, torch::kUInt8);
    CHECK(dice(empty, gt) == 0.0);
    CHECK(dice(empty, empty) == 1.0);
    CHECK(dice(SegMask{pred, MaskRole::prediction}, SegMask{gt}) == doctest::Approx(0.4));
    CHECK_THROWS_AS(dice(pred, torch::zeros({2, 2}, torch::kUInt8)), ConfigError);
  }

  TEST_CASE("per-image dice averages separately") {
    auto a = torch::stack({to_tensor({1, 0, 0, 0}, 2), to_tensor({1, 1, 0, 0}, 2)});
    auto b = torch::stack({to_tensor({1, 0, 0, 0}, 2), to_tensor({0, 0, 1, 1}, 2)});
    auto d = dice_per_image(a, b);
    REQUIRE(d.size() == 2);
    CHECK(d[0] == 1.0);
    CHECK(d[1] == 0.0);
  }

  TEST_CASE("unet output matches the input size") {
    UNet net(UNetConfig{}, 1);
    ImageBatch x{torch::zeros({2, 1, 64, 64}), Domain::first, {}};
    auto y = unet_forward(net, x);
    CHECK(y.sizes() == torch::IntArrayRef({2, 1, 64, 64}));
    CHECK(torch::isfinite(y).all().item<bool>());
    CHECK(torch::equal(y, unet_forward(net, x)));
  }

  TEST_CASE("unet rejects sizes not divisible by 2^depth") {
    UNetConfig c;
    c.image_size = 36;
    CHECK_THROWS_AS(validate(c), ConfigError);
    UNet net(small_unet(), 2);
    CHECK_THROWS_AS(unet_forward(net, ImageBatch{torch::zeros({1, 1, 30, 30}), Domain::first, {}}), ConfigError);
  }

  TEST_CASE("zeroed head predicts background everywhere") {
    UNet net(small_unet(), 3);
    {
      torch::NoGradGuard g;
      for (auto& p : net->head()->parameters()) p.zero_();
    }
    ImageBatch x{torch::randn({2, 1, 32, 32}), Domain::first, {}};
    CHECK(unet_forward(net, x).eq(0).all().item<bool>());
    CHECK(predict_mask(net, x).eq(0).all().item<bool>());
  }

  TEST_CASE("seg loss spot values") {
    auto gt = torch::zeros({2, 4, 4}, torch::kUInt8);
    gt.narrow(2, 0, 2).fill_(1);
    auto strong = (gt.to(torch::kFloat32) * 20.0 - 10.0).unsqueeze(1);
    CHECK(seg_loss(strong, gt).item<double>() < 0.01);
    auto terms = seg_loss_terms(torch::zeros({2, 1, 4, 4}), gt);
    CHECK(terms.bce.item<double>() == doctest::Approx(std::log(2.0)).epsilon(1e-6));
    CHECK(terms.total.item<double>() == doctest::Approx(terms.bce.item<double>() + terms.soft_dice.item<double>()));
    auto gen = nn::make_generator(4);
    for (int i = 0; i < 20; ++i) {
      CHECK(seg_loss(torch::randn({2, 1, 4, 4}, gen) * 5, gt).item<double>() >= 0.0);
    }
  }

  TEST_CASE("seg loss gradient matches finite differences") {
    auto gen = nn::make_generator(5);
    auto logits = torch::randn({2, 1, 4, 4}, gen, torch::kFloat64).requires_grad_();
    auto gt = (torch::rand({2, 4, 4}, gen) > 0.5).to(torch::kUInt8);
    auto r = testing::finite_difference_check([&] { return seg_loss(logits, gt); }, {logits}, 32);
    CHECK(r.max_rel_error < 1e-3);
  }

  TEST_CASE("threshold limits and sign agreement") {
    auto logits = torch::tensor({-10.0f, 10.0f, -10.0f, 10.0f}).view({1, 1, 2, 2});
    CHECK(threshold_logits(logits, 1e-9).eq(1).all().item<bool>());
    CHECK(threshold_logits(logits, 1.0 - 1e-9).eq(0).all().item<bool>());
    auto m = threshold_logits(logits);
    CHECK(torch::equal(m, (logits > 0).to(torch::kUInt8).squeeze(1)));
    CHECK_THROWS_AS(threshold_logits(logits, 0.0), ConfigError);
    CHECK_THROWS_AS(threshold_logits(logits, 1.0), ConfigError);
    auto masks = to_masks(m, MaskRole::prediction);
    REQUIRE(masks.size() == 1);
    CHECK(masks[0].role == MaskRole::prediction);
  }

  TEST_CASE("learning rate zero leaves the unet unchanged") {
    UNet net(small_unet(), 6);
    std::vector<torch::Tensor> before;
    for (const auto& p : net->parameters()) before.push_back(p.detach().clone());
    auto set = synthetic_set(6, 32, 7);
    SegTrainConfig sc;
    sc.epochs = 2;
    sc.learning_rate = 0.0;
    seg_train(net, set, {}, sc);
    auto after = net->parameters();
    for (size_t i = 0; i < before.size(); ++i) CHECK(torch::equal(before[i], after[i]));
  }

  TEST_CASE("same seed gives identical metric curves") {
    auto set = synthetic_set(8, 32, 8);
    auto run = [&] {
      UNet net(small_unet(), 9);
      SegTrainConfig sc;
      sc.epochs = 3;
      sc.batch_size = 4;
      sc.seed = 10;
      return seg_train(net, set, set, sc).epochs;
    };
    auto a = run();
    auto b = run();
    CHECK((a == b));
    CHECK(a.size() == 3);
  }

  TEST_CASE("the synthetic task is learnable: 50 images, 20 epochs") {
    auto set = synthetic_set(50, 64, 11);
    UNet net(UNetConfig{}, 12);
    SegTrainConfig sc;
    sc.epochs = 20;
    sc.seed = 13;
    auto r = seg_train(net, set, {}, sc);
    auto d = evaluate_dice(net, set);
    const double mean = std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(d.size());
    MESSAGE("training dice " << mean << " (best epoch " << r.best_epoch << ")");
    CHECK(mean > 0.9);
  }

  TEST_CASE("seg_train rejects empty sets") {
    UNet net(small_unet(), 14);
    CHECK_THROWS_AS(seg_train(net, SegSet{}, {}, SegTrainConfig{}), ConfigError);
  }
}
