#include "doctest_torch.hpp"

#include <set>

#include "dadr/checkpoint.hpp"
#include "dadr/config.hpp"
#include "dadr/errors.hpp"
#include "dadr/experiments.hpp"
#include "dadr/io.hpp"
#include "support.hpp"

using namespace dadr;
using namespace dadr::experiments;

namespace {

ExperimentConfig smoke_config(const std::filesystem::path& out) {
  config::RunConfig rc{
      {"seed", "3"},
      {"dataset.image_size", "32"},
      {"dataset.domain1_count", "24"},
      {"dataset.domain2_count", "9"},
      {"drl.content_channels", "8"},
      {"drl.style_channels", "8"},
      {"drl.mlp_hidden", "16"},
      {"drl.disc_channels", "8"},
      {"drl.residual_blocks", "1"},
      {"drl.steps", "4"},
      {"drl.batch_size", "2"},
      {"seg.depth", "2"},
      {"seg.base_channels", "4"},
      {"seg.epochs", "1"},
      {"seg.batch_size", "4"},
      {"style.samples", "3"},
      {"style.sources", "2"},
      {"style.montage_rows", "2"},
  };
  rc["output_dir"] = out.string();
  return config::to_experiment_config(rc);
}

}  // namespace

TEST_SUITE("experiments") {
  TEST_CASE("kfold split of 10 scenes into 5 folds") {
    std::vector<int64_t> ids(10);
    std::iota(ids.begin(), ids.end(), 100);
    auto folds = kfold_split(ids, 5, 1);
    CHECK(folds.size() == 10);
    std::map<int, int> sizes;
    for (const auto& [id, f] : folds) sizes[f]++;
    CHECK(sizes.size() == 5);
    for (const auto& [f, n] : sizes) CHECK(n == 2);
    CHECK(kfold_split(ids, 5, 1) == folds);
    CHECK(kfold_split(ids, 5, 2) != folds);
  }

  TEST_CASE("kfold split sizes differ by at most one and reject too few scenes") {
    std::vector<int64_t> ids{4, 4, 7, 9, 11, 12, 15};
    auto folds = kfold_split(ids, 3, 9);
    CHECK(folds.size() == 6);
    std::map<int, int> sizes;
    for (const auto& [id, f] : folds) sizes[f]++;
    CHECK(sizes[0] == 2);
    CHECK(sizes[1] == 2);
    CHECK(sizes[2] == 2);
    CHECK_THROWS_AS(kfold_split({1, 2}, 3, 0), ConfigError);
  }

  TEST_CASE("metrics record mean and std are recomputable from the per-image list") {
    auto r = make_record("exp1-da", "content-only", 0, "domain2", {0.5, 0.75, 1.0, 0.25}, 1.5);
    double sum = 0.0;
    for (double d : r.per_image) sum += d;
    CHECK(std::abs(r.mean_dice - sum / 4.0) < 1e-9);
    double ss = 0.0;
    for (double d : r.per_image) ss += (d - 0.625) * (d - 0.625);
    CHECK(r.std_dice == doctest::Approx(std::sqrt(ss / 4.0)));
    auto back = record_from_json(to_json(r));
    CHECK(same_metrics(back, r));
    CHECK(back.wall_clock_s == r.wall_clock_s);
    back.wall_clock_s = 99.0;
    CHECK(same_metrics(back, r));
    back.per_image[0] = 0.6;
    CHECK(!same_metrics(back, r));
  }

  TEST_CASE("experiment ids parse and reject unknowns") {
    for (auto id : all_experiments()) CHECK(experiment_from_string(to_string(id)) == id);
    CHECK(all_experiments().size() == 6);
    CHECK_THROWS_AS(experiment_from_string("exp9"), ConfigError);
  }

  TEST_CASE("config parsing rejects unknown keys and malformed values") {
    CHECK_THROWS_AS(config::to_experiment_config(config::parse("bogus = 1\n")), ConfigError);
    CHECK_THROWS_AS(config::to_experiment_config(config::parse("seed = abc\n")), ConfigError);
    CHECK_THROWS_AS(config::to_experiment_config(config::parse("seg.augment = maybe\n")), ConfigError);
    CHECK_THROWS_AS(config::parse("just text\n"), ConfigError);
    CHECK_THROWS_AS(config::parse("a = 1\na = 2\n"), ConfigError);
    CHECK_THROWS_AS(config::to_experiment_config(config::parse("test_fold = 3\n")), ConfigError);
    CHECK_THROWS_AS(config::to_experiment_config(config::parse("experiment = nope\n")), ConfigError);
  }

  TEST_CASE("config echo round-trips every key") {
    auto c = config::to_experiment_config(config::parse(
        "# comment\nexperiment = exp3a-multimodal\nseed = 42\nloss.alpha = 12.5\n  seg.augment = false  \n"
        "dataset.multi_phase = true\ndrl.patch_discriminator = true\n"));
    CHECK(c.experiment == ExperimentId::exp3a_multimodal);
    CHECK(c.seed == 42);
    CHECK(c.drl_train.weights.alpha == 12.5);
    CHECK(!c.seg_train.augment);
    auto text = config::echo(c);
    auto again = config::to_experiment_config(config::parse(text));
    CHECK(config::echo(again) == text);
    CHECK(to_json(again) == to_json(c));
    CHECK(config::parse(text).size() == config::known_keys().size());
  }

  TEST_CASE("relative paths resolve against the config directory") {
    auto c = config::to_experiment_config(config::parse("output_dir = out\ndataset_dir = /abs/ds\n"), "/base");
    CHECK(c.output_dir == std::filesystem::path("/base/out"));
    CHECK(c.dataset_dir == std::filesystem::path("/abs/ds"));
  }

  TEST_CASE("checkpoint round trip is bit identical on forward passes") {
    DrlConfig dc;
    dc.image_size = 32;
    dc.content_channels = 8;
    dc.residual_blocks = 1;
    DrlModel a(dc, 1);
    auto gen = nn::make_generator(77);
    torch::randn({3}, gen);
    auto dir = testing::temp_dir("ckpt");
    save_checkpoint(dir / "m.ckpt", make_checkpoint(*a, {{"drl", to_json(dc)}}, 17, &gen));

    auto ck = load_checkpoint(dir / "m.ckpt");
    CHECK(ck.step == 17);
    CHECK(ck.config.at("drl") == to_json(dc));
    DrlModel b(drl_config_from_json(ck.config.at("drl")), 999);
    restore_module(*b, ck);
    auto gen2 = nn::make_generator(0);
    restore_generator(gen2, ck);
    CHECK(torch::equal(torch::randn({4}, gen), torch::randn({4}, gen2)));

    ImageBatch x{torch::rand({2, 1, 32, 32}) * 2 - 1, Domain::first, {}};
    StyleCode s{torch::randn({2, 8})};
    auto ya = translate(a, x, Domain::second, s).pixels;
    auto yb = translate(b, x, Domain::second, s).pixels;
    CHECK(torch::equal(ya, yb));
    CHECK(torch::equal(content_only(a, x).pixels, content_only(b, x).pixels));

    // Saving the restored model reproduces the file byte for byte.
    save_checkpoint(dir / "again.ckpt", make_checkpoint(*b, {{"drl", to_json(dc)}}, 17, &gen2));
    auto gen3 = nn::make_generator(77);
    torch::randn({3}, gen3);
    save_checkpoint(dir / "ref.ckpt", make_checkpoint(*a, {{"drl", to_json(dc)}}, 17, &gen3));
    CHECK(testing::read_file(dir / "m.ckpt") == testing::read_file(dir / "ref.ckpt"));
  }

  TEST_CASE("checkpoint restore rejects mismatched models and corrupt files") {
    DrlConfig dc;
    dc.image_size = 32;
    dc.content_channels = 8;
    dc.residual_blocks = 1;
    DrlModel a(dc, 1);
    auto dir = testing::temp_dir("ckpt-bad");
    save_checkpoint(dir / "m.ckpt", make_checkpoint(*a, {}, 0));
    auto other = dc;
    other.content_channels = 16;
    DrlModel b(other, 1);
    CHECK_THROWS_AS(restore_module(*b, load_checkpoint(dir / "m.ckpt")), ConfigError);
    io::write_file_atomic(dir / "junk.ckpt", "not a checkpoint at all");
    CHECK_THROWS_AS(load_checkpoint(dir / "junk.ckpt"), ConfigError);
    auto bytes = testing::read_file(dir / "m.ckpt");
    io::write_file_atomic(dir / "short.ckpt", bytes.substr(0, bytes.size() / 2));
    CHECK_THROWS_AS(load_checkpoint(dir / "short.ckpt"), ConfigError);
  }

  TEST_CASE("pgm images and masks round trip") {
    auto dir = testing::temp_dir("pgm");
    auto img = torch::linspace(-1.0, 1.0, 16 * 8).view({1, 16, 8});
    io::write_image_pgm16(dir / "a.pgm", img);
    auto back = io::read_image_pgm(dir / "a.pgm");
    CHECK(back.sizes() == img.sizes());
    CHECK((back - img).abs().max().item<double>() <= 1.0 / 65535.0 + 1e-7);
    auto mask = (img[0] > 0).to(torch::kUInt8);
    io::write_mask_pgm(dir / "m.pgm", mask);
    CHECK(torch::equal(io::read_mask_pgm(dir / "m.pgm"), mask));
    io::write_image_pgm8(dir / "v.pgm", img);
    CHECK((io::read_image_pgm(dir / "v.pgm") - img).abs().max().item<double>() <= 1.0 / 255.0 + 1e-6);
  }

  TEST_CASE("jsonl helpers") {
    auto dir = testing::temp_dir("jsonl");
    io::append_jsonl(dir / "a.jsonl", {{"x", 1}});
    io::append_jsonl(dir / "a.jsonl", {{"x", 2}});
    auto rows = io::read_jsonl(dir / "a.jsonl");
    REQUIRE(rows.size() == 2);
    CHECK(rows[1]["x"] == 2);
    io::write_jsonl_atomic(dir / "a.jsonl", {nlohmann::json{{"y", 3}}});
    CHECK(io::read_jsonl(dir / "a.jsonl").size() == 1);
  }

  TEST_CASE("label-free runs never read domain-2 masks for training") {
    auto dir = testing::temp_dir("audit");
    ExperimentRunner runner(smoke_config(dir));
    auto r1 = runner.run_experiment1(0);
    auto r3 = runner.run_experiment3a(0);
    CHECK(runner.domain2_training_label_reads() == 0);
    CHECK(r1.domain == "domain2");
    REQUIRE(r3.size() == 4);
    std::set<std::string> variants;
    for (const auto& r : r3) variants.insert(r.variant);
    CHECK((variants == std::set<std::string>{"pooled", "phase-pre", "phase-arterial", "phase-venous"}));
    size_t per_phase = 0;
    for (size_t i = 1; i < r3.size(); ++i) per_phase += r3[i].per_image.size();
    CHECK(per_phase == r3[0].per_image.size());
  }

  TEST_CASE("experiment 2 yields one record per domain") {
    auto dir = testing::temp_dir("exp2");
    ExperimentRunner runner(smoke_config(dir));
    auto r = runner.run_experiment2(0);
    REQUIRE(r.size() == 2);
    CHECK(r[0].domain == "domain1");
    CHECK(r[1].domain == "domain2");
    // The DRL checkpoint is cached on disk and reused by a fresh runner.
    CHECK(std::filesystem::exists(runner.checkpoint_dir() / "drl-single-fold0.ckpt"));
    ExperimentRunner again(smoke_config(dir));
    auto r2 = again.run_experiment2(0);
    CHECK(same_metrics(r[0], r2[0]));
    CHECK(same_metrics(r[1], r2[1]));
  }

  TEST_CASE("identical config and seed reproduce records; run() writes the results directory") {
    auto a_dir = testing::temp_dir("det-a");
    auto b_dir = testing::temp_dir("det-b");
    auto ca = smoke_config(a_dir);
    auto cb = smoke_config(b_dir);
    ca.experiment = cb.experiment = ExperimentId::baseline_lower;
    auto ra = ExperimentRunner(ca).run();
    auto rb = ExperimentRunner(cb).run();
    REQUIRE(ra.size() == rb.size());
    for (size_t i = 0; i < ra.size(); ++i) CHECK(same_metrics(ra[i], rb[i]));
    const auto d = a_dir / "baseline-lower";
    CHECK(std::filesystem::exists(d / "config.txt"));
    CHECK(std::filesystem::exists(d / "config.json"));
    CHECK(io::read_jsonl(d / "metrics.jsonl").size() == ra.size());
    CHECK(testing::read_file(d / "config.txt") == config::echo(ca));
  }

  TEST_CASE("style report and montage layout") {
    auto dir = testing::temp_dir("style");
    ExperimentRunner runner(smoke_config(dir));
    auto r = runner.run_experiment3b(0);
    CHECK(r.samples == 3);
    CHECK(r.panels_per_row == 1 + 3 + 3);
    CHECK(r.diversity > 0.0);
    CHECK(r.self_reference_l1 < 0.05);
    auto montage = io::read_image_pgm(r.montage);
    CHECK(montage.size(1) == 2 * 32);
    CHECK(montage.size(2) == r.panels_per_row * 32);
  }

  TEST_CASE("summary csv carries synthetic rows and labelled reference rows") {
    auto dir = testing::temp_dir("summary");
    auto c = smoke_config(dir);
    c.experiment = ExperimentId::baseline_upper;
    ExperimentRunner(c).run();
    auto csv = summarize(dir);
    CHECK(csv.find("table1,synthetic,baseline-upper,raw,domain2") != std::string::npos);
    CHECK(csv.find("clinical reference (not reproduced)") != std::string::npos);
    CHECK(csv.find("0.810") != std::string::npos);
    CHECK(csv.find("0.891") != std::string::npos);
    CHECK(csv.find("0.740") != std::string::npos);
    CHECK_THROWS_AS(summarize(dir / "missing"), ConfigError);
  }
}
