#include "binloc/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include <fmt/format.h>

#include "binloc/checkpoint.hpp"
#include "binloc/error.hpp"
#include "binloc/parallel.hpp"
#include "binloc/rng.hpp"

namespace binloc {
namespace {

constexpr double kRadToDeg = 180.0 / std::numbers::pi;

std::string hex_id(std::uint64_t v) { return fmt::format("{:016x}", v); }

std::string file_fingerprint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream buf;
  buf << in.rdbuf();
  return hex_id(fnv1a64(buf.str()));
}

std::string num(double v) { return std::isfinite(v) ? fmt::format("{:.4f}", v) : "nan"; }

}  // namespace

double mae_degrees(std::span<const double> theta, std::span<const double> theta_hat) {
  if (theta.empty()) throw PreconditionError("mae_degrees: empty batch");
  if (theta.size() != theta_hat.size()) throw PreconditionError("mae_degrees: length mismatch");
  double sum = 0.0;
  for (std::size_t i = 0; i < theta.size(); ++i) {
    sum += std::abs(angular_difference(theta[i], theta_hat[i]));
  }
  return kRadToDeg * sum / static_cast<double>(theta.size());
}

std::optional<double> EvalReport::subset_mae(std::span<const std::string> source_types) const {
  double sum = 0.0;
  std::size_t count = 0;
  for (const std::string& s : source_types) {
    if (auto it = per_source.find(s); it != per_source.end()) {
      sum += it->second.abs_error_sum_deg;
      count += it->second.count;
    }
  }
  if (count == 0) return std::nullopt;
  return sum / static_cast<double>(count);
}

std::pair<double, double> bootstrap_ci(std::span<const double> values, std::uint64_t seed,
                                       int resamples) {
  require(!values.empty() && resamples > 0, "bootstrap_ci: need values and resamples");
  Rng rng(seed);
  std::vector<double> means(static_cast<std::size_t>(resamples));
  for (double& m : means) {
    double sum = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) sum += values[rng.below(values.size())];
    m = sum / static_cast<double>(values.size());
  }
  std::sort(means.begin(), means.end());
  const auto pick = [&](double q) {
    const double pos = q * static_cast<double>(means.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, means.size() - 1);
    return means[lo] + (pos - static_cast<double>(lo)) * (means[hi] - means[lo]);
  };
  return {pick(0.025), pick(0.975)};
}

EvalReport make_report(std::span<const double> theta, std::span<const double> theta_hat,
                       std::span<const std::string> source_types, std::span<const double> azimuth_deg,
                       const FeatureSetSpec& spec, std::string testset, std::string checkpoint_id,
                       std::uint64_t ci_seed) {
  if (theta.empty()) throw PreconditionError("make_report: empty test set");
  if (theta.size() != theta_hat.size() || theta.size() != source_types.size() ||
      theta.size() != azimuth_deg.size()) {
    throw PreconditionError("make_report: length mismatch");
  }
  EvalReport r;
  r.testset = std::move(testset);
  r.checkpoint_id = std::move(checkpoint_id);
  r.feature_spec = spec;
  r.n_samples = theta.size();
  std::vector<double> errors(theta.size());
  double total = 0.0;
  for (std::size_t i = 0; i < theta.size(); ++i) {
    errors[i] = kRadToDeg * std::abs(angular_difference(theta[i], theta_hat[i]));
    total += errors[i];
    GroupStat& s = r.per_source[source_types[i]];
    s.abs_error_sum_deg += errors[i];
    ++s.count;
    GroupStat& a = r.per_angle[azimuth_deg[i]];
    a.abs_error_sum_deg += errors[i];
    ++a.count;
  }
  for (auto& [_, s] : r.per_source) s.mae_deg = s.abs_error_sum_deg / static_cast<double>(s.count);
  for (auto& [_, a] : r.per_angle) a.mae_deg = a.abs_error_sum_deg / static_cast<double>(a.count);
  r.overall_mae_deg = total / static_cast<double>(theta.size());
  std::tie(r.ci_low_deg, r.ci_high_deg) = bootstrap_ci(errors, ci_seed);
  return r;
}

EvalReport evaluate(const ModelState& params, const FeatureDataset& data, const FeatureSetSpec& spec,
                    std::string testset, std::string checkpoint_id) {
  if (params.input_channels != spec.channel_count() ||
      data.channels != static_cast<std::size_t>(spec.channel_count())) {
    throw ValidationError("evaluate: model has " + std::to_string(params.input_channels) +
                          " input planes, feature set '" + spec.token() + "' has " +
                          std::to_string(spec.channel_count()));
  }
  if (data.size() == 0) throw PreconditionError("evaluate: empty test manifest");
  const std::vector<double> pred = predict(params, data);
  const std::uint64_t ci_seed = derive_seed(fnv1a64(testset), fnv1a64(checkpoint_id));
  return make_report(data.labels_rad, pred, data.source_types, data.azimuth_deg, spec,
                     std::move(testset), std::move(checkpoint_id), ci_seed);
}

EvalReport evaluate(const std::filesystem::path& checkpoint_path,
                    const std::filesystem::path& manifest_path, const FeatureSetSpec& spec,
                    std::string testset, int threads) {
  const Checkpoint cp = load_checkpoint(checkpoint_path, spec);
  const FeatureDataset data = load_feature_dataset(manifest_path, spec, threads);
  return evaluate(cp.params, data, spec, std::move(testset), file_fingerprint(checkpoint_path));
}

std::string format_report_text(const EvalReport& r) {
  std::string out;
  out += fmt::format("feature set : {} ({} types, {} planes)\n", r.feature_spec.display_name(),
                     r.feature_spec.feature_type_count(), r.feature_spec.channel_count());
  out += fmt::format("test set    : {}\n", r.testset);
  out += fmt::format("checkpoint  : {}\n", r.checkpoint_id);
  out += fmt::format("samples     : {}\n", r.n_samples);
  out += fmt::format("MAE         : {:.2f} deg  (95% CI {:.2f} .. {:.2f})\n\n", r.overall_mae_deg,
                     r.ci_low_deg, r.ci_high_deg);
  out += fmt::format("{:<22}{:>10}{:>8}\n", "source", "MAE(deg)", "n");
  for (const auto& [name, s] : r.per_source) {
    out += fmt::format("{:<22}{:>10.2f}{:>8}\n", name, s.mae_deg, s.count);
  }
  out += fmt::format("\n{:<22}{:>10}{:>8}\n", "azimuth(deg)", "MAE(deg)", "n");
  for (const auto& [az, s] : r.per_angle) {
    out += fmt::format("{:<22g}{:>10.2f}{:>8}\n", az, s.mae_deg, s.count);
  }
  return out;
}

std::string format_result_csv_row(const EvalReport& r) {
  return fmt::format("{},{},{},{},{},{},{},{}", r.feature_spec.token(), r.feature_spec.feature_type_count(),
                     r.feature_spec.channel_count(), r.testset, num(r.overall_mae_deg),
                     num(r.ci_low_deg), num(r.ci_high_deg), r.n_samples);
}

// ---- Sweep ---------------------------------------------------------------

int table_row_of(const FeatureSetSpec& spec) {
  const auto specs = enumerate_table1_specs();
  const auto it = std::find(specs.begin(), specs.end(), spec);
  return it == specs.end() ? 0 : static_cast<int>(it - specs.begin()) + 1;
}

std::uint64_t row_seed(std::uint64_t base_seed, int table_row) {
  return derive_seed(base_seed, 0x7ab1e000ULL + static_cast<std::uint64_t>(table_row));
}

SweepResult run_sweep(const SweepInputs& in) {
  in.base.validate();
  if (in.test_sets.empty()) throw ConfigError("sweep needs at least one test set");
  std::vector<FeatureSetSpec> specs = in.specs.empty() ? enumerate_table1_specs() : in.specs;
  for (const FeatureSetSpec& s : specs) {
    if (table_row_of(s) == 0) throw ConfigError("feature set '" + s.token() + "' is not a table row");
  }
  std::sort(specs.begin(), specs.end(), [](const FeatureSetSpec& a, const FeatureSetSpec& b) {
    return table_row_of(a) < table_row_of(b);
  });
  specs.erase(std::unique(specs.begin(), specs.end()), specs.end());

  SweepResult result;
  for (const TestSetRef& t : in.test_sets) result.test_set_names.push_back(t.name);
  result.rows.resize(specs.size());

  // Rows are independent; each trains on a single thread.
  parallel_for(specs.size(), in.threads, [&](std::size_t i) {
    SweepRow& row = result.rows[i];
    row.spec = specs[i];
    row.table_row = table_row_of(row.spec);
    row.n_feature_types = row.spec.feature_type_count();
    row.n_planes = row.spec.channel_count();
    try {
      TrainConfig cfg = in.base;
      cfg.feature_spec = row.spec;
      cfg.seed = row_seed(in.base.seed, row.table_row);
      cfg.threads = 1;
      const FeatureDataset train_set = load_feature_dataset(in.train_manifest, row.spec);
      const FeatureDataset val_set = load_feature_dataset(in.val_manifest, row.spec);
      const TrainResult trained = train(train_set, val_set, cfg);
      row.best_epoch = trained.best_epoch;
      row.epochs_run = trained.epochs_run;

      std::string checkpoint_id = fmt::format("row{:02d}-{}", row.table_row, row.spec.token());
      if (in.artifact_dir) {
        const auto dir = *in.artifact_dir / checkpoint_id;
        std::filesystem::create_directories(dir);
        save_checkpoint(Checkpoint{trained.best_params, trained.best_optimizer, row.spec},
                        dir / "checkpoint.bin");
        write_training_log(trained.log, dir / "train_log.jsonl");
        checkpoint_id = file_fingerprint(dir / "checkpoint.bin");
      }
      for (const TestSetRef& t : in.test_sets) {
        const FeatureDataset test = load_feature_dataset(t.manifest, row.spec);
        row.reports.push_back(evaluate(trained.best_params, test, row.spec, t.name, checkpoint_id));
      }
    } catch (const std::exception& e) {
      row.error = e.what();
      row.reports.clear();
    }
  });
  return result;
}

std::string format_sweep_csv(const SweepResult& result) {
  std::string out = std::string(kResultCsvHeader) + "\n";
  for (const SweepRow& row : result.rows) {
    if (!row.error.empty()) {
      for (const std::string& t : result.test_set_names) {
        out += fmt::format("{},{},{},{},nan,nan,nan,0\n", row.spec.token(), row.n_feature_types,
                           row.n_planes, t);
      }
      continue;
    }
    for (const EvalReport& r : row.reports) out += format_result_csv_row(r) + "\n";
  }
  return out;
}

std::string format_sweep_per_source_csv(const SweepResult& result) {
  std::string out = "spec,testset,source_type,mae_deg,n\n";
  for (const SweepRow& row : result.rows) {
    for (const EvalReport& r : row.reports) {
      for (const auto& [name, s] : r.per_source) {
        out += fmt::format("{},{},{},{},{}\n", row.spec.token(), r.testset, name, num(s.mae_deg),
                           s.count);
      }
    }
  }
  return out;
}

std::string format_sweep_table(const SweepResult& result) {
  std::string out = fmt::format("{:<32}{:>9}{:>9}", "Feature set", "# Types", "# Planes");
  for (const std::string& t : result.test_set_names) out += fmt::format("{:>14}", t);
  out += "\n";
  for (const SweepRow& row : result.rows) {
    out += fmt::format("{:<32}{:>9}{:>9}", row.spec.display_name(), row.n_feature_types, row.n_planes);
    if (!row.error.empty()) {
      out += "  error: " + row.error + "\n";
      continue;
    }
    for (const EvalReport& r : row.reports) out += fmt::format("{:>13.1f}°", r.overall_mae_deg);
    out += "\n";
  }
  return out;
}

}  // namespace binloc
