#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "binloc/features.hpp"
#include "binloc/nn.hpp"

namespace binloc {

/// Shortest signed difference theta - theta_hat, in [-pi, pi].
double angular_difference(double theta, double theta_hat);

struct LossAndGradient {
  double loss = 0.0;
  std::vector<double> grad;  // d loss / d theta_hat_i
};

/// Mean of squared wrapped differences and its gradient w.r.t. predictions.
LossAndGradient circular_mse_loss(std::span<const double> theta, std::span<const double> theta_hat);

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEpsilon = 1e-8;

template <typename T>
struct AdamState {
  ModelParams<T> first_moment;
  ModelParams<T> second_moment;
  std::uint64_t step = 0;

  AdamState() = default;
  explicit AdamState(int input_channels)
      : first_moment(input_channels), second_moment(input_channels) {}
};

/// One bias-corrected Adam update of `params` in place.
template <typename T>
void adam_step(ModelParams<T>& params, const ModelParams<T>& grads, AdamState<T>& state,
               double learning_rate);

/// Adam on raw parameter vectors (same update rule).
void adam_step(std::span<double> params, std::span<const double> grads, std::span<double> first,
               std::span<double> second, std::uint64_t& step, double learning_rate);

struct TrainConfig {
  double learning_rate = 0.001;
  int max_epochs = 1000;
  int patience = 20;
  int batch_size = 32;
  std::uint64_t seed = 0;
  FeatureSetSpec feature_spec{false, false, true, true};
  int threads = 1;  // feature extraction only

  void validate() const;
};

/// Tracks the best validation loss; improvement means a strict decrease.
class EarlyStopper {
 public:
  explicit EarlyStopper(int patience);

  /// Returns true when `val_loss` is a new best.
  bool observe(int epoch, double val_loss);
  bool should_stop() const { return epochs_without_improvement_ >= patience_; }
  int best_epoch() const { return best_epoch_; }
  double best_loss() const { return best_loss_; }

 private:
  int patience_;
  int epochs_without_improvement_ = 0;
  int best_epoch_ = 0;
  double best_loss_ = std::numeric_limits<double>::infinity();
};

/// Features and labels for every record of one manifest, in manifest order.
struct FeatureDataset {
  std::size_t channels = 0;
  std::size_t frames = 0;
  std::size_t bins = 0;
  std::vector<float> features;  // items x C x T x F
  std::vector<double> labels_rad;
  std::vector<double> azimuth_deg;
  std::vector<std::string> source_types;
  std::vector<std::string> layout;

  std::size_t size() const { return labels_rad.size(); }
  std::size_t item_size() const { return channels * frames * bins; }
  std::span<const float> item(std::size_t i) const {
    return std::span<const float>(features).subspan(i * item_size(), item_size());
  }
  /// Gathers the listed items into a batch tensor.
  Tensor4<float> batch(std::span<const std::size_t> indices) const;
};

/// Reads each clip (48 kHz input is resampled), extracts features.
FeatureDataset load_feature_dataset(const std::filesystem::path& manifest_path,
                                    const FeatureSetSpec& spec, int threads = 1);

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double elapsed_s = 0.0;
};

struct TrainResult {
  ModelState best_params;
  AdamState<float> best_optimizer;
  int best_epoch = 0;
  double best_val_loss = 0.0;
  int epochs_run = 0;
  std::string stop_reason;
  std::vector<EpochLog> log;
};

/// Predictions in radians, inference mode, in dataset order.
std::vector<double> predict(const ModelState& params, const FeatureDataset& data,
                            std::size_t batch_size = 1);

/// Circular MSE of inference-mode predictions.
double evaluate_loss(const ModelState& params, const FeatureDataset& data);

using EpochCallback = std::function<void(const EpochLog&)>;

/// Stops glibc from returning large freed blocks to the OS. Training
/// allocates multi-megabyte activations per step, and on a fresh mapping
/// every page faults. Called by train(); idempotent.
void retain_heap_memory();

/// Mini-batch Adam with early stopping; returns the best-validation model.
TrainResult train(const FeatureDataset& train_set, const FeatureDataset& val_set,
                  const TrainConfig& config, const EpochCallback& on_epoch = {});

std::string to_json_line(const EpochLog& entry);
void write_training_log(std::span<const EpochLog> log, const std::filesystem::path& path);

}  // namespace binloc
