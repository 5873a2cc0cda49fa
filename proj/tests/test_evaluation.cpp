#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <numbers>
#include <random>
#include <sstream>

#include "binloc/checkpoint.hpp"
#include "binloc/error.hpp"
#include "binloc/evaluation.hpp"
#include "binloc/synth.hpp"
#include "oracles.hpp"

using namespace binloc;

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

std::vector<double> rad(std::initializer_list<double> deg) {
  std::vector<double> out;
  for (double d : deg) out.push_back(d * kDeg);
  return out;
}

// train/val/test manifests over a handful of angles.
std::filesystem::path tiny_dataset(const std::string& name) {
  const auto dir = oracle::scratch_dir(name);
  DatasetConfig cfg;
  cfg.sets = {DatasetSet{"train", Split::kTrain, {SourceKind::kAmNoise}, {1}, false},
              DatasetSet{"val", Split::kVal, {SourceKind::kAmNoise}, {2}, false},
              DatasetSet{"test", Split::kTest, {SourceKind::kWhiteNoise, SourceKind::kPureTone}, {3}, true}};
  cfg.azimuths_deg = {-60.0, -20.0, 20.0, 60.0};
  build_dataset(cfg, dir);
  return dir;
}

SweepInputs sweep_inputs(const std::filesystem::path& dir) {
  SweepInputs in;
  in.train_manifest = dir / "train.jsonl";
  in.val_manifest = dir / "val.jsonl";
  in.test_sets = {{"test", dir / "test.jsonl"}};
  in.base.max_epochs = 2;
  in.base.batch_size = 2;
  in.base.seed = 5;
  return in;
}

std::size_t count_lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

}  // namespace

TEST_CASE("mae examples") {
  CHECK(mae_degrees(rad({10, 20}), rad({10, 20})) == 0.0);
  CHECK(mae_degrees(rad({10, -10}), rad({0, 0})) == doctest::Approx(10.0));
  CHECK(mae_degrees(rad({170}), rad({-170})) == doctest::Approx(20.0));
  CHECK(mae_degrees(rad({-170}), rad({170})) == doctest::Approx(20.0));
  CHECK(mae_degrees(rad({10 + 360}), rad({0})) == doctest::Approx(10.0));
  CHECK(mae_degrees(rad({180}), rad({0})) == doctest::Approx(180.0));
  CHECK_THROWS_AS(mae_degrees({}, {}), PreconditionError);
  CHECK_THROWS_AS(mae_degrees(rad({1}), rad({1, 2})), PreconditionError);
}

TEST_CASE("mae properties") {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(-90.0 * kDeg, 90.0 * kDeg);
  std::vector<double> a(20000), b(20000);
  for (double& v : a) v = u(rng);
  for (double& v : b) v = u(rng);
  const double m = mae_degrees(a, b);
  // E|X - Y| for independent uniforms on a 180 degree interval is 60.
  CHECK(std::abs(m - 60.0) < 5.0);
  CHECK(mae_degrees(b, a) == doctest::Approx(m).epsilon(1e-12));
  auto shifted = a;
  for (double& v : shifted) v += 2 * std::numbers::pi;
  CHECK(mae_degrees(shifted, b) == doctest::Approx(m).epsilon(1e-9));
}

TEST_CASE("bootstrap interval") {
  std::vector<double> v;
  for (int i = 0; i < 200; ++i) v.push_back(static_cast<double>(i % 17));
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  const auto [lo, hi] = bootstrap_ci(v, 3);
  CHECK(lo < mean);
  CHECK(hi > mean);
  CHECK(bootstrap_ci(v, 3) == std::make_pair(lo, hi));
  CHECK(bootstrap_ci(std::vector<double>(10, 4.0), 1) == std::make_pair(4.0, 4.0));
  CHECK_THROWS(bootstrap_ci({}, 1));
}

TEST_CASE("report partition identity") {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  const std::vector<std::string> kinds{"a", "b", "c"};
  std::vector<double> theta, pred, az;
  std::vector<std::string> src;
  for (int i = 0; i < 90; ++i) {
    az.push_back(-90.0 + 5.0 * (i % 37));
    theta.push_back(az.back() * kDeg);
    pred.push_back(u(rng));
    src.push_back(kinds[static_cast<std::size_t>(i) % (i < 60 ? 2 : 3)]);
  }
  const EvalReport r = make_report(theta, pred, src, az, {false, false, true, true}, "t", "ck");
  CHECK(r.n_samples == 90);
  CHECK(r.overall_mae_deg == doctest::Approx(mae_degrees(theta, pred)).epsilon(1e-12));
  double weighted = 0.0;
  std::size_t n = 0;
  for (const auto& [_, s] : r.per_source) {
    CHECK(s.count >= 1);
    weighted += s.mae_deg * static_cast<double>(s.count);
    n += s.count;
  }
  CHECK(n == 90);
  CHECK(std::abs(weighted / 90.0 - r.overall_mae_deg) < 1e-9);
  std::size_t angle_n = 0;
  for (const auto& [_, s] : r.per_angle) angle_n += s.count;
  CHECK(angle_n == 90);
  CHECK(r.per_angle.size() == 37);
  CHECK(r.ci_low_deg <= r.overall_mae_deg);
  CHECK(r.ci_high_deg >= r.overall_mae_deg);

  const std::vector<std::string> ab{"a", "b"};
  const std::vector<std::string> none{"zzz"};
  const double sub = *r.subset_mae(ab);
  CHECK(sub == doctest::Approx((r.per_source.at("a").abs_error_sum_deg + r.per_source.at("b").abs_error_sum_deg) /
                               static_cast<double>(r.per_source.at("a").count + r.per_source.at("b").count)));
  CHECK_FALSE(r.subset_mae(none).has_value());

  CHECK_THROWS_AS(make_report({}, {}, {}, {}, {false, false, true, true}, "t", "c"), PreconditionError);
}

TEST_CASE("report formats") {
  const std::vector<std::string> src{"white_noise", "pure_tone"};
  const EvalReport r = make_report(rad({10, -30}), rad({0, -30}), src, std::vector<double>{10, -30},
                                   {false, false, true, true}, "test_ood", "abc");
  CHECK(std::string(kResultCsvHeader) == "spec,n_types,n_planes,testset,mae_deg,ci_low,ci_high,n");
  CHECK(format_result_csv_row(r).starts_with("ild+ipd,2,2,test_ood,5.0000,"));
  CHECK(format_result_csv_row(r).ends_with(",2"));
  const std::string text = format_report_text(r);
  CHECK(text.find("ILD, IPD") != std::string::npos);
  CHECK(text.find("pure_tone") != std::string::npos);
  CHECK(text.find("5.00") != std::string::npos);
}

TEST_CASE("evaluate a zero network") {
  const auto dir = tiny_dataset("eval_zero");
  const FeatureSetSpec spec{false, false, true, true};
  // All weights zero: every prediction is the head bias.
  Checkpoint cp{ModelState(2), AdamState<float>(2), spec};
  const double b = 0.3;
  cp.params.head.bias[0] = static_cast<float>(b);
  save_checkpoint(cp, dir / "zero.bin");

  const EvalReport r = evaluate(dir / "zero.bin", dir / "test.jsonl", spec, "test");
  REQUIRE(r.n_samples == 8);
  const auto recs = read_manifest(dir / "test.jsonl");
  double expected = 0.0;
  for (const auto& rec : recs) {
    expected += std::abs(oracle::wrap_pi(rec.azimuth_deg * kDeg - static_cast<double>(static_cast<float>(b)))) / kDeg;
  }
  CHECK(r.overall_mae_deg == doctest::Approx(expected / 8.0).epsilon(1e-6));
  CHECK(r.per_source.size() == 2);
  CHECK(r.per_source.at("pure_tone").count == 4);

  // one record
  write_manifest(std::vector<ManifestRecord>{recs[0]}, dir / "one.jsonl");
  const EvalReport one = evaluate(dir / "zero.bin", dir / "one.jsonl", spec, "one");
  CHECK(one.overall_mae_deg ==
        doctest::Approx(std::abs(oracle::wrap_pi(recs[0].azimuth_deg * kDeg - static_cast<float>(b))) / kDeg)
            .epsilon(1e-6));

  SUBCASE("same checkpoint twice gives identical reports") {
    const EvalReport again = evaluate(dir / "zero.bin", dir / "test.jsonl", spec, "test");
    CHECK(format_report_text(again) == format_report_text(r));
    CHECK(format_result_csv_row(again) == format_result_csv_row(r));
  }
  SUBCASE("plane count mismatch") {
    CHECK_THROWS_AS(evaluate(dir / "zero.bin", dir / "test.jsonl", {true, true, true, false}, "test"),
                    ValidationError);
    const FeatureDataset data = load_feature_dataset(dir / "test.jsonl", spec);
    CHECK_THROWS_AS(evaluate(cp.params, data, {true, false, true, true}, "test", "x"), ValidationError);
  }
}

TEST_CASE("table rows and seeds") {
  CHECK(table_row_of({false, false, true, false}) == 1);
  CHECK(table_row_of({false, false, true, true}) == 5);
  CHECK(table_row_of({true, true, true, true}) == 13);
  CHECK(table_row_of({}) == 0);
  CHECK(row_seed(1, 5) == row_seed(1, 5));
  CHECK(row_seed(1, 5) != row_seed(1, 6));
  CHECK(row_seed(1, 5) != row_seed(2, 5));
}

TEST_CASE("sweep") {
  const auto dir = tiny_dataset("sweep");
  SweepInputs in = sweep_inputs(dir);
  // Deliberately out of table order.
  in.specs = {FeatureSetSpec{false, true, false, false}, FeatureSetSpec{false, false, true, true}};

  const SweepResult a = run_sweep(in);
  REQUIRE(a.rows.size() == 2);
  CHECK(a.rows[0].table_row == 4);
  CHECK(a.rows[1].table_row == 5);
  CHECK(a.rows[0].n_planes == 2);
  CHECK(a.rows[0].n_feature_types == 1);
  for (const SweepRow& row : a.rows) {
    CHECK(row.error.empty());
    REQUIRE(row.reports.size() == 1);
    CHECK(row.reports[0].overall_mae_deg >= 0.0);
    CHECK(row.reports[0].overall_mae_deg <= 180.0);
    CHECK(row.epochs_run == 2);
  }
  const std::string csv = format_sweep_csv(a);
  CHECK(count_lines(csv) == 3);
  CHECK(csv.starts_with(std::string(kResultCsvHeader) + "\n"));
  CHECK(format_sweep_per_source_csv(a).find("pure_tone") != std::string::npos);
  CHECK(format_sweep_table(a).find("Phase L/R") != std::string::npos);

  SUBCASE("deterministic, including across thread counts") {
    in.threads = 2;
    const auto first_dir = oracle::scratch_dir("sweep_art");
    in.artifact_dir = first_dir;
    const SweepResult b = run_sweep(in);
    // Artifact ids differ, MAE values must not.
    for (std::size_t i = 0; i < 2; ++i)
      CHECK(b.rows[i].reports[0].overall_mae_deg == a.rows[i].reports[0].overall_mae_deg);
    CHECK(std::filesystem::exists(*in.artifact_dir / "row05-ild+ipd" / "checkpoint.bin"));
    CHECK(std::filesystem::exists(*in.artifact_dir / "row04-phase_lr" / "train_log.jsonl"));
    in.threads = 1;
    in.artifact_dir = oracle::scratch_dir("sweep_art2");
    const SweepResult c = run_sweep(in);
    CHECK(format_sweep_csv(c) == format_sweep_csv(b));
    CHECK(oracle::read_file(in.artifact_dir.value() / "row05-ild+ipd" / "checkpoint.bin") ==
          oracle::read_file(first_dir / "row05-ild+ipd" / "checkpoint.bin"));
  }
  SUBCASE("failed rows are recorded and the sweep continues") {
    in.test_sets.push_back({"missing", dir / "nope.jsonl"});
    const SweepResult r = run_sweep(in);
    REQUIRE(r.rows.size() == 2);
    for (const SweepRow& row : r.rows) CHECK_FALSE(row.error.empty());
    const std::string bad = format_sweep_csv(r);
    CHECK(count_lines(bad) == 5);
    CHECK(bad.find("nan") != std::string::npos);
    CHECK(format_sweep_table(r).find("error:") != std::string::npos);
  }
  SUBCASE("bad inputs") {
    in.test_sets.clear();
    CHECK_THROWS_AS(run_sweep(in), ConfigError);
  }
}
