#pragma once

#include <complex>
#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "binloc/audio_io.hpp"

namespace binloc {

inline constexpr std::size_t kWindowLength = 400;  // 25 ms at 16 kHz
inline constexpr std::size_t kHopLength = 160;     // 10 ms
inline constexpr std::size_t kFftLength = 512;
inline constexpr std::size_t kNumBins = kFftLength / 2 + 1;
inline constexpr std::size_t kClipFrames = 98;  // frames in a 1 s clip
inline constexpr double kMagnitudeEpsilon = 1e-8;
inline constexpr double kIldClampDb = 30.0;

enum class Ear { kLeft, kRight };

/// One-sided STFT, frames x bins, row-major.
struct ComplexSpectrogram {
  std::size_t frames = 0;
  std::size_t bins = kNumBins;
  Ear channel = Ear::kLeft;
  std::vector<std::complex<double>> values;

  std::complex<double>& at(std::size_t t, std::size_t f) { return values[t * bins + f]; }
  const std::complex<double>& at(std::size_t t, std::size_t f) const { return values[t * bins + f]; }
};

/// Real time-frequency plane, frames x bins, row-major.
struct Plane {
  std::size_t frames = 0;
  std::size_t bins = 0;
  std::vector<double> values;

  double& at(std::size_t t, std::size_t f) { return values[t * bins + f]; }
  double at(std::size_t t, std::size_t f) const { return values[t * bins + f]; }
};

/// Periodic Hann window of length 400.
std::span<const double> analysis_window();

std::size_t frame_count(std::size_t num_samples);

ComplexSpectrogram stft(std::span<const float> samples, Ear channel = Ear::kLeft);
ComplexSpectrogram stft(std::span<const double> samples, Ear channel = Ear::kLeft);

Plane magnitude(const ComplexSpectrogram& spec);
/// arg(X) in (-pi, pi]; zero-magnitude bins have phase 0.
Plane phase(const ComplexSpectrogram& spec);
/// 20 log10((|X_L| + eps) / (|X_R| + eps)), in dB.
Plane ild(const ComplexSpectrogram& left, const ComplexSpectrogram& right);
/// Phase difference left minus right, wrapped with atan2(sin, cos).
Plane ipd(const ComplexSpectrogram& left, const ComplexSpectrogram& right);

/// Which of the four feature types feed the network.
struct FeatureSetSpec {
  bool mag_lr = false;
  bool phase_lr = false;
  bool ild = false;
  bool ipd = false;

  bool operator==(const FeatureSetSpec&) const = default;

  /// Planes: 2 per L/R type, 1 each for ILD and IPD.
  int channel_count() const;
  int feature_type_count() const;
  /// Canonical plane labels, e.g. {"mag_L", "mag_R", "ild"}.
  std::vector<std::string> layout() const;
  /// Table-style name, e.g. "Mag L/R, ILD".
  std::string display_name() const;
  /// Machine token, e.g. "mag_lr+ild".
  std::string token() const;
  void validate() const;
};

/// Parses a token such as "ild+ipd" (also accepts "," as separator).
FeatureSetSpec parse_feature_set(const std::string& token);

/// The 13 feature sets in table row order.
std::vector<FeatureSetSpec> enumerate_table1_specs();

struct PlaneNormalization {
  std::string label;
  std::string method;  // "log10+zscore", "clamp30/30", "div_pi"
  double offset = 0.0;
  double scale = 1.0;
};

/// Network input: C planes of T x F float values.
struct FeatureTensor {
  std::size_t channels = 0;
  std::size_t frames = 0;
  std::size_t bins = 0;
  std::vector<std::string> layout;
  std::vector<PlaneNormalization> normalization;
  std::vector<float> values;

  std::span<const float> plane(std::size_t c) const {
    return std::span<const float>(values).subspan(c * frames * bins, frames * bins);
  }
};

struct LabeledPlane {
  std::string label;
  Plane plane;
};

/// Un-normalized planes in canonical order (mag in linear units, phases and
/// IPD in radians, ILD in dB).
std::vector<LabeledPlane> raw_feature_planes(const AudioClip& clip, const FeatureSetSpec& spec);

/// Applies the per-plane normalization in double precision; `records`
/// receives one entry per plane when non-null.
std::vector<LabeledPlane> normalize_planes(std::vector<LabeledPlane> planes,
                                           std::vector<PlaneNormalization>* records = nullptr);

FeatureTensor assemble_features(const AudioClip& clip, const FeatureSetSpec& spec);

void write_feature_cache(const FeatureTensor& tensor, const std::filesystem::path& path);
FeatureTensor read_feature_cache(const std::filesystem::path& path);

}  // namespace binloc
