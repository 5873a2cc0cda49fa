#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace binloc {

inline constexpr int kOperatingRateHz = 16000;
inline constexpr int kSourceRateHz = 48000;

/// Stereo sample buffer. Both channels always have the same length.
struct AudioClip {
  std::vector<float> left;
  std::vector<float> right;
  int sample_rate_hz = kOperatingRateHz;
  std::string source_id;

  std::size_t size() const { return left.size(); }
};

enum class Split { kTrain, kVal, kTest };

std::string to_string(Split split);
Split parse_split(const std::string& text);

/// One labeled clip. `azimuth_deg` is the frontal-plane label in [-90, 90].
struct ManifestRecord {
  std::string clip_path;
  double azimuth_deg = 0.0;
  std::string source_type;
  Split split = Split::kTrain;

  bool operator==(const ManifestRecord&) const = default;
};

enum class WavEncoding { kPcm16, kFloat32 };

AudioClip read_wav(const std::filesystem::path& path);
void write_wav(const AudioClip& clip, const std::filesystem::path& path,
               WavEncoding encoding = WavEncoding::kFloat32);

/// Lowpass taps used by resample_48k_to_16k (63 taps, unity DC gain).
std::span<const double> decimation_filter();

/// 3:1 decimation of a 48 kHz clip after the anti-alias lowpass.
AudioClip resample_48k_to_16k(const AudioClip& clip);
std::vector<float> resample_48k_to_16k(std::span<const float> samples);

/// Folds an azimuth measured clockwise from the front (0 = front, 90 = right)
/// onto the frontal plane [-90, 90].
double wrap_azimuth_to_frontal(double azimuth_deg_0_360);

void validate(const ManifestRecord& record);

std::vector<ManifestRecord> read_manifest(const std::filesystem::path& path);
void write_manifest(std::span<const ManifestRecord> records,
                    const std::filesystem::path& path);

std::string to_json_line(const ManifestRecord& record);

/// Clip paths in a manifest are relative to the manifest's directory unless
/// they are absolute.
std::filesystem::path resolve_clip_path(const std::filesystem::path& manifest_path,
                                        const ManifestRecord& record);

}  // namespace binloc
