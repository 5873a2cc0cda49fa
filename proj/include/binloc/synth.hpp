#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "binloc/audio_io.hpp"

namespace binloc {

enum class SourceKind {
  kWhiteNoise,
  kPinkNoise,
  kPureTone,
  kClickTrain,
  kAmNoise,
  kBurstyPink,
  kBurstyPinkReverb,
};

std::string to_string(SourceKind kind);
SourceKind parse_source_kind(const std::string& text);

inline constexpr double kClipDurationS = 1.0;
inline constexpr std::size_t kClipSamples = 16000;
inline constexpr double kSourceRms = 0.1;

struct SourceSpec {
  SourceKind kind = SourceKind::kWhiteNoise;
  double duration_s = kClipDurationS;
  double tone_freq_hz = 1000.0;  // pure_tone only
  std::uint64_t seed = 0;
};

struct HeadModel {
  double radius_m = 0.0875;
  double speed_of_sound_mps = 343.0;
  double shadow_alpha_min = 0.1;
  double shadow_theta_min_deg = 150.0;

  void validate() const;
};

/// Mono source at `sample_rate_hz`, RMS-normalized to 0.1. Deterministic in
/// spec.seed.
std::vector<float> generate_source(const SourceSpec& spec, int sample_rate_hz = kOperatingRateHz);

/// Woodworth interaural time difference in seconds; positive when the right
/// ear leads (source on the right).
double itd_woodworth(double azimuth_deg, const HeadModel& head = {});

/// One-pole/one-zero spherical-head shadow coefficient for an ear whose axis
/// makes `theta_rel_deg` with the source direction.
double shadow_alpha(double theta_rel_deg, const HeadModel& head = {});

/// Magnitude of the bilinear-transformed shadow filter at `freq_hz`.
double shadow_magnitude(double alpha, double freq_hz, const HeadModel& head = {},
                        int sample_rate_hz = kOperatingRateHz);

/// Delays `x` by `delay_samples` (negative values advance) with a 33-tap
/// Hann-windowed sinc interpolator; samples outside `x` count as zero. The
/// output has the input's length.
std::vector<double> fractional_delay(std::span<const double> x, double delay_samples);

struct RenderOptions {
  bool reverb = false;
  std::uint64_t reverb_seed = 0;
};

/// Spherical-head binaural rendering of a 16 kHz mono source. The result is
/// exactly 1 s long with peak magnitude <= 0.99.
AudioClip render_binaural(std::span<const float> source, double azimuth_deg,
                          const HeadModel& head = {}, const RenderOptions& options = {});

/// One output set of a dataset (e.g. "train" or "test_ood").
struct DatasetSet {
  std::string name;
  Split split = Split::kTrain;
  std::vector<SourceKind> kinds;
  std::vector<std::uint64_t> seeds;
  // Out-of-domain sets must not share a source kind with any train set.
  bool out_of_domain = false;
};

struct DatasetConfig {
  std::vector<DatasetSet> sets;
  std::vector<double> azimuths_deg;  // empty means -90..90 in 5 degree steps
  HeadModel head;
  double tone_min_hz = 250.0;
  double tone_max_hz = 4000.0;
  int threads = 1;

  std::vector<double> resolved_azimuths() const;
};

struct DatasetSummary {
  // One entry per set in config order.
  std::vector<std::string> set_names;
  std::vector<std::filesystem::path> manifest_paths;
  std::vector<std::size_t> record_counts;
  std::size_t total_records = 0;
};

std::vector<double> default_azimuth_grid();

/// One clip of the dataset enumeration, before rendering.
struct ClipJob {
  std::size_t set_index = 0;
  SourceKind kind = SourceKind::kWhiteNoise;
  std::uint64_t seed = 0;
  double azimuth_deg = 0.0;
  std::string relative_path;
};

/// Deterministic enumeration order: set, kind, seed, azimuth.
std::vector<ClipJob> enumerate_clips(const DatasetConfig& config);

/// Renders the clip for one job (pure function of config and job).
AudioClip render_clip(const DatasetConfig& config, const ClipJob& job);

/// Renders every clip and writes `<name>.jsonl` per set plus
/// `manifest.jsonl` with all records, under `output_dir`.
DatasetSummary build_dataset(const DatasetConfig& config, const std::filesystem::path& output_dir);

}  // namespace binloc
