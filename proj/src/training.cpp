#include "binloc/training.hpp"

#include <chrono>
#include <mutex>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "binloc/audio_io.hpp"
#include "binloc/error.hpp"
#include "binloc/parallel.hpp"
#include "binloc/rng.hpp"

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace binloc {

double angular_difference(double theta, double theta_hat) {
  const double d = theta - theta_hat;
  return std::atan2(std::sin(d), std::cos(d));
}

LossAndGradient circular_mse_loss(std::span<const double> theta, std::span<const double> theta_hat) {
  if (theta.empty()) throw PreconditionError("circular_mse_loss: empty batch");
  if (theta.size() != theta_hat.size()) throw PreconditionError("circular_mse_loss: length mismatch");
  const auto n = static_cast<double>(theta.size());
  LossAndGradient out;
  out.grad.resize(theta.size());
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double d = angular_difference(theta[i], theta_hat[i]);
    out.loss += d * d;
    out.grad[i] = -2.0 * d / n;
  }
  out.loss /= n;
  return out;
}

void adam_step(std::span<double> params, std::span<const double> grads, std::span<double> first,
               std::span<double> second, std::uint64_t& step, double learning_rate) {
  if (params.size() != grads.size() || params.size() != first.size() ||
      params.size() != second.size()) {
    throw PreconditionError("adam_step: shape mismatch");
  }
  ++step;
  const double c1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    first[i] = kAdamBeta1 * first[i] + (1.0 - kAdamBeta1) * grads[i];
    second[i] = kAdamBeta2 * second[i] + (1.0 - kAdamBeta2) * grads[i] * grads[i];
    params[i] -= learning_rate * (first[i] / c1) / (std::sqrt(second[i] / c2) + kAdamEpsilon);
  }
}

template <typename T>
void adam_step(ModelParams<T>& params, const ModelParams<T>& grads, AdamState<T>& state,
               double learning_rate) {
  if (params.input_channels != grads.input_channels ||
      params.input_channels != state.first_moment.input_channels ||
      params.input_channels != state.second_moment.input_channels) {
    throw PreconditionError("adam_step: parameter, gradient and state shapes differ");
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(state.step));
  auto p = params.blocks();
  const auto g = grads.blocks();
  auto m = state.first_moment.blocks();
  auto v = state.second_moment.blocks();
  for (std::size_t b = 0; b < p.size(); ++b) {
    for (std::size_t i = 0; i < p[b].size(); ++i) {
      const double gi = g[b][i];
      const double mi = kAdamBeta1 * static_cast<double>(m[b][i]) + (1.0 - kAdamBeta1) * gi;
      const double vi = kAdamBeta2 * static_cast<double>(v[b][i]) + (1.0 - kAdamBeta2) * gi * gi;
      m[b][i] = static_cast<T>(mi);
      v[b][i] = static_cast<T>(vi);
      p[b][i] = static_cast<T>(static_cast<double>(p[b][i]) -
                               learning_rate * (mi / c1) / (std::sqrt(vi / c2) + kAdamEpsilon));
    }
  }
}

template void adam_step<float>(ModelParams<float>&, const ModelParams<float>&, AdamState<float>&,
                               double);
template void adam_step<double>(ModelParams<double>&, const ModelParams<double>&,
                                AdamState<double>&, double);

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
  if (patience < 1) throw ConfigError("patience must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  feature_spec.validate();
}

EarlyStopper::EarlyStopper(int patience) : patience_(patience) {
  require(patience >= 1, "EarlyStopper: patience must be >= 1");
}

bool EarlyStopper::observe(int epoch, double val_loss) {
  if (val_loss < best_loss_) {
    best_loss_ = val_loss;
    best_epoch_ = epoch;
    epochs_without_improvement_ = 0;
    return true;
  }
  ++epochs_without_improvement_;
  return false;
}

Tensor4<float> FeatureDataset::batch(std::span<const std::size_t> indices) const {
  Tensor4<float> x(indices.size(), channels, frames, bins);
  for (std::size_t b = 0; b < indices.size(); ++b) {
    const auto src = item(indices[b]);
    std::copy(src.begin(), src.end(), x.item(b).begin());
  }
  return x;
}

FeatureDataset load_feature_dataset(const std::filesystem::path& manifest_path,
                                    const FeatureSetSpec& spec, int threads) {
  const std::vector<ManifestRecord> records = read_manifest(manifest_path);
  FeatureDataset data;
  data.channels = static_cast<std::size_t>(spec.channel_count());
  data.frames = kClipFrames;
  data.bins = kNumBins;
  data.layout = spec.layout();
  data.features.resize(records.size() * data.item_size());
  for (const ManifestRecord& r : records) {
    data.labels_rad.push_back(r.azimuth_deg * std::numbers::pi / 180.0);
    data.azimuth_deg.push_back(r.azimuth_deg);
    data.source_types.push_back(r.source_type);
  }
  parallel_for(records.size(), threads, [&](std::size_t i) {
    AudioClip clip = read_wav(resolve_clip_path(manifest_path, records[i]));
    if (clip.sample_rate_hz == kSourceRateHz) clip = resample_48k_to_16k(clip);
    const FeatureTensor t = assemble_features(clip, spec);
    if (t.frames != data.frames || t.bins != data.bins) {
      throw PreconditionError(records[i].clip_path + ": unexpected feature shape");
    }
    std::copy(t.values.begin(), t.values.end(),
              data.features.begin() + static_cast<std::ptrdiff_t>(i * data.item_size()));
  });
  return data;
}

std::vector<double> predict(const ModelState& params, const FeatureDataset& data,
                            std::size_t batch_size) {
  std::vector<double> out;
  out.reserve(data.size());
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    idx.clear();
    for (std::size_t i = start; i < std::min(data.size(), start + batch_size); ++i) idx.push_back(i);
    const ForwardResult<float> r = model_forward(params, data.batch(idx), Mode::kInfer);
    for (float p : r.predictions) out.push_back(p);
  }
  return out;
}

double evaluate_loss(const ModelState& params, const FeatureDataset& data) {
  return circular_mse_loss(data.labels_rad, predict(params, data)).loss;
}

void retain_heap_memory() {
#if defined(__GLIBC__)
  static std::once_flag once;
  std::call_once(once, [] {
    mallopt(M_MMAP_THRESHOLD, 32 << 20);
    mallopt(M_TRIM_THRESHOLD, 256 << 20);
    mallopt(M_TOP_PAD, 64 << 20);
  });
#endif
}

TrainResult train(const FeatureDataset& train_set, const FeatureDataset& val_set,
                  const TrainConfig& config, const EpochCallback& on_epoch) {
  config.validate();
  retain_heap_memory();
  if (train_set.size() == 0) throw ConfigError("training split is empty");
  if (val_set.size() == 0) throw ConfigError("validation split is empty");
  const int c_in = config.feature_spec.channel_count();
  if (train_set.channels != static_cast<std::size_t>(c_in) ||
      val_set.channels != static_cast<std::size_t>(c_in)) {
    throw ConfigError("dataset plane count does not match the feature set");
  }

  const auto start = std::chrono::steady_clock::now();
  ModelState params = init_params<float>(c_in, derive_seed(config.seed, 1));
  AdamState<float> adam(c_in);
  EarlyStopper stopper(config.patience);

  TrainResult result;
  result.best_params = params;
  result.best_optimizer = adam;

  std::vector<std::size_t> order(train_set.size());
  std::uint64_t global_step = 0;
  const auto batch = static_cast<std::size_t>(config.batch_size);

  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle_rng(derive_seed(config.seed, 1000 + static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[shuffle_rng.below(i)]);
    }

    double train_sum = 0.0;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += batch) {
      const std::size_t n = std::min(batch, order.size() - b0);
      const std::uint64_t step_seed = derive_seed(config.seed, 0x5eed0000ULL + global_step);
      ModelState grads(c_in);
      // Items run one at a time; gradients are summed in batch order.
      for (std::size_t k = 0; k < n; ++k) {
        const std::size_t item = order[b0 + k];
        const std::size_t one[] = {item};
        const ForwardResult<float> fwd =
            model_forward(params, train_set.batch(one), Mode::kTrain, derive_seed(step_seed, k));
        const double pred = fwd.predictions[0];
        const double d = angular_difference(train_set.labels_rad[item], pred);
        if (!std::isfinite(d)) {
          throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                              std::to_string(global_step) + " (prediction " +
                              std::to_string(pred) + ")");
        }
        train_sum += d * d;
        const float g = static_cast<float>(-2.0 * d / static_cast<double>(n));
        const ModelState item_grads = model_backward<float>(params, fwd.trace, std::span(&g, 1));
        auto dst = grads.blocks();
        const auto src = item_grads.blocks();
        for (std::size_t bl = 0; bl < dst.size(); ++bl) {
          for (std::size_t i = 0; i < dst[bl].size(); ++i) dst[bl][i] += src[bl][i];
        }
      }
      adam_step(params, grads, adam, config.learning_rate);
      ++global_step;
    }

    EpochLog entry;
    entry.epoch = epoch;
    entry.train_loss = train_sum / static_cast<double>(train_set.size());
    entry.val_loss = evaluate_loss(params, val_set);
    entry.elapsed_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (!std::isfinite(entry.val_loss)) {
      throw TrainingError("non-finite validation loss at epoch " + std::to_string(epoch));
    }
    result.log.push_back(entry);
    result.epochs_run = epoch;
    if (on_epoch) on_epoch(entry);

    if (stopper.observe(epoch, entry.val_loss)) {
      result.best_params = params;
      result.best_optimizer = adam;
    }
    if (stopper.should_stop()) {
      result.stop_reason = "no validation improvement for " + std::to_string(config.patience) +
                           " epochs";
      break;
    }
  }
  if (result.stop_reason.empty()) result.stop_reason = "reached max_epochs";
  result.best_epoch = stopper.best_epoch();
  result.best_val_loss = stopper.best_loss();
  return result;
}

std::string to_json_line(const EpochLog& entry) {
  nlohmann::ordered_json j;
  j["epoch"] = entry.epoch;
  j["train_loss"] = entry.train_loss;
  j["val_loss"] = entry.val_loss;
  j["elapsed_s"] = entry.elapsed_s;
  return j.dump();
}

void write_training_log(std::span<const EpochLog> log, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  for (const EpochLog& e : log) out << to_json_line(e) << '\n';
}

}  // namespace binloc
