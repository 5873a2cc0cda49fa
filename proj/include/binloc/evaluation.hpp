#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "binloc/features.hpp"
#include "binloc/nn.hpp"
#include "binloc/training.hpp"

namespace binloc {

/// (180/pi) * mean |wrapped difference|.
double mae_degrees(std::span<const double> theta, std::span<const double> theta_hat);

struct GroupStat {
  double mae_deg = 0.0;
  double abs_error_sum_deg = 0.0;
  std::size_t count = 0;
};

struct EvalReport {
  std::string testset;
  std::string checkpoint_id;
  FeatureSetSpec feature_spec;
  double overall_mae_deg = 0.0;
  double ci_low_deg = 0.0;
  double ci_high_deg = 0.0;
  std::size_t n_samples = 0;
  std::map<std::string, GroupStat> per_source;
  std::map<double, GroupStat> per_angle;

  /// MAE over the union of the listed source types (nullopt when absent).
  std::optional<double> subset_mae(std::span<const std::string> source_types) const;
};

inline constexpr int kBootstrapResamples = 1000;

/// Percentile bootstrap 95% interval of the mean of `values`.
std::pair<double, double> bootstrap_ci(std::span<const double> values, std::uint64_t seed,
                                       int resamples = kBootstrapResamples);

/// Builds a report from labels, predictions (radians) and source tags.
EvalReport make_report(std::span<const double> theta, std::span<const double> theta_hat,
                       std::span<const std::string> source_types,
                       std::span<const double> azimuth_deg, const FeatureSetSpec& spec,
                       std::string testset, std::string checkpoint_id, std::uint64_t ci_seed = 0);

EvalReport evaluate(const ModelState& params, const FeatureDataset& data, const FeatureSetSpec& spec,
                    std::string testset, std::string checkpoint_id);

/// Loads the checkpoint (validating its plane count) and the manifest.
EvalReport evaluate(const std::filesystem::path& checkpoint_path,
                    const std::filesystem::path& manifest_path, const FeatureSetSpec& spec,
                    std::string testset, int threads = 1);

std::string format_report_text(const EvalReport& report);

inline constexpr const char* kResultCsvHeader = "spec,n_types,n_planes,testset,mae_deg,ci_low,ci_high,n";
std::string format_result_csv_row(const EvalReport& report);

// ---- Sweep ---------------------------------------------------------------

struct TestSetRef {
  std::string name;
  std::filesystem::path manifest;
};

struct SweepInputs {
  std::filesystem::path train_manifest;
  std::filesystem::path val_manifest;
  std::vector<TestSetRef> test_sets;
  std::vector<FeatureSetSpec> specs;  // empty means all 13, table order
  TrainConfig base;
  std::optional<std::filesystem::path> artifact_dir;  // per-row checkpoints and logs
  int threads = 1;                                    // rows run concurrently
};

struct SweepRow {
  int table_row = 0;  // 1-based position in the 13-row table
  FeatureSetSpec spec;
  int n_feature_types = 0;
  int n_planes = 0;
  std::vector<EvalReport> reports;  // one per test set, input order
  int best_epoch = 0;
  int epochs_run = 0;
  std::string error;  // non-empty when training or evaluation failed
};

struct SweepResult {
  std::vector<SweepRow> rows;  // table order
  std::vector<std::string> test_set_names;
};

/// Position of `spec` in the 13-row table, 1-based, or 0.
int table_row_of(const FeatureSetSpec& spec);

/// Seed used to train row `table_row` from the base seed.
std::uint64_t row_seed(std::uint64_t base_seed, int table_row);

SweepResult run_sweep(const SweepInputs& inputs);

std::string format_sweep_csv(const SweepResult& result);
std::string format_sweep_per_source_csv(const SweepResult& result);
std::string format_sweep_table(const SweepResult& result);

}  // namespace binloc
