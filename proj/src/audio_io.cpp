#include "binloc/audio_io.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numbers>
#include <sstream>

#include <json.hpp>

#include "binloc/error.hpp"

namespace binloc {
namespace {

static_assert(std::endian::native == std::endian::little,
              "WAV and checkpoint I/O assume a little-endian host");

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

std::uint16_t get_u16(const std::uint8_t* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xFF));
  out.push_back(static_cast<char>(v >> 8));
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::vector<std::uint8_t> slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::array<double, 63> design_decimation_filter() {
  // Hann-windowed sinc, cutoff 7.2 kHz at 48 kHz, normalized to unity DC gain.
  constexpr int kTaps = 63;
  constexpr double kCutoff = 7200.0 / kSourceRateHz;
  std::array<double, kTaps> h{};
  double sum = 0.0;
  for (int k = 0; k < kTaps; ++k) {
    const double m = k - (kTaps - 1) / 2.0;
    const double x = 2.0 * kCutoff * m;
    const double sinc = m == 0.0 ? 1.0 : std::sin(std::numbers::pi * x) / (std::numbers::pi * x);
    const double w = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * k / (kTaps - 1));
    h[k] = 2.0 * kCutoff * sinc * w;
    sum += h[k];
  }
  for (double& v : h) v /= sum;
  return h;
}

}  // namespace

std::string to_string(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "?";
}

Split parse_split(const std::string& text) {
  if (text == "train") return Split::kTrain;
  if (text == "val") return Split::kVal;
  if (text == "test") return Split::kTest;
  throw ValidationError("split must be train, val or test, got '" + text + "'");
}

AudioClip read_wav(const std::filesystem::path& path) {
  const std::vector<std::uint8_t> bytes = slurp(path);
  const auto fail = [&](const std::string& why) -> FormatError {
    return FormatError(path.string() + ": " + why);
  };
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw fail("not a RIFF/WAVE file");
  }

  std::uint16_t format = 0;
  std::uint16_t channels = 0;
  std::uint32_t rate = 0;
  std::uint16_t bits = 0;
  const std::uint8_t* data = nullptr;
  std::size_t data_size = 0;

  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const std::uint8_t* chunk = bytes.data() + pos;
    const std::uint32_t chunk_size = get_u32(chunk + 4);
    const std::size_t body = pos + 8;
    if (body + chunk_size > bytes.size()) {
      // Tolerate a truncated data chunk (streaming writers), nothing else.
      if (std::memcmp(chunk, "data", 4) != 0) throw fail("chunk extends past end of file");
    }
    const std::size_t avail = std::min<std::size_t>(chunk_size, bytes.size() - body);
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (avail < 16) throw fail("fmt chunk too short");
      format = get_u16(chunk + 8);
      channels = get_u16(chunk + 10);
      rate = get_u32(chunk + 12);
      bits = get_u16(chunk + 22);
      if (format == kFormatExtensible) {
        if (avail < 40) throw fail("extensible fmt chunk too short");
        format = get_u16(chunk + 8 + 24);
      }
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      data = chunk + 8;
      data_size = avail;
    }
    pos = body + chunk_size + (chunk_size & 1U);
  }
  if (channels == 0) throw fail("missing fmt chunk");
  if (data == nullptr) throw fail("missing data chunk");

  const bool pcm16 = format == kFormatPcm && bits == 16;
  const bool float32 = format == kFormatFloat && bits == 32;
  if (!pcm16 && !float32) {
    throw UnsupportedFormatError(path.string() + ": unsupported encoding (format " +
                                 std::to_string(format) + ", " + std::to_string(bits) + " bits)");
  }
  if (channels != 1 && channels != 2) {
    throw UnsupportedFormatError(path.string() + ": unsupported channel count " +
                                 std::to_string(channels));
  }
  if (rate != static_cast<std::uint32_t>(kOperatingRateHz) &&
      rate != static_cast<std::uint32_t>(kSourceRateHz)) {
    throw UnsupportedFormatError(path.string() + ": unsupported sample rate " + std::to_string(rate));
  }

  const std::size_t sample_bytes = bits / 8;
  const std::size_t frames = data_size / (sample_bytes * channels);
  AudioClip clip;
  clip.sample_rate_hz = static_cast<int>(rate);
  clip.source_id = path.filename().string();
  clip.left.resize(frames);
  clip.right.resize(frames);
  for (std::size_t i = 0; i < frames; ++i) {
    for (std::size_t ch = 0; ch < channels; ++ch) {
      const std::uint8_t* p = data + (i * channels + ch) * sample_bytes;
      float v;
      if (pcm16) {
        v = static_cast<float>(static_cast<std::int16_t>(get_u16(p))) / 32768.0F;
      } else {
        v = std::bit_cast<float>(get_u32(p));
      }
      (ch == 0 ? clip.left : clip.right)[i] = v;
    }
  }
  if (channels == 1) clip.right = clip.left;
  return clip;
}

void write_wav(const AudioClip& clip, const std::filesystem::path& path, WavEncoding encoding) {
  require(clip.left.size() == clip.right.size(), "write_wav: channel lengths differ");
  const bool pcm16 = encoding == WavEncoding::kPcm16;
  const std::uint16_t bits = pcm16 ? 16 : 32;
  const std::uint16_t channels = 2;
  const std::uint32_t rate = static_cast<std::uint32_t>(clip.sample_rate_hz);
  const std::uint32_t block_align = channels * bits / 8;
  const auto data_size = static_cast<std::uint32_t>(clip.size() * block_align);

  std::string out;
  out.reserve(44 + data_size);
  out += "RIFF";
  put_u32(out, 36 + data_size);
  out += "WAVEfmt ";
  put_u32(out, 16);
  put_u16(out, pcm16 ? kFormatPcm : kFormatFloat);
  put_u16(out, channels);
  put_u32(out, rate);
  put_u32(out, rate * block_align);
  put_u16(out, static_cast<std::uint16_t>(block_align));
  put_u16(out, bits);
  out += "data";
  put_u32(out, data_size);
  for (std::size_t i = 0; i < clip.size(); ++i) {
    for (float v : {clip.left[i], clip.right[i]}) {
      if (pcm16) {
        const float scaled = std::round(std::clamp(v, -1.0F, 32767.0F / 32768.0F) * 32768.0F);
        put_u16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(scaled)));
      } else {
        put_u32(out, std::bit_cast<std::uint32_t>(v));
      }
    }
  }

  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) throw IoError("cannot write " + path.string());
  file.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!file) throw IoError("short write to " + path.string());
}

std::span<const double> decimation_filter() {
  static const std::array<double, 63> taps = design_decimation_filter();
  return taps;
}

std::vector<float> resample_48k_to_16k(std::span<const float> samples) {
  const std::span<const double> h = decimation_filter();
  const auto taps = static_cast<std::ptrdiff_t>(h.size());
  const std::ptrdiff_t center = (taps - 1) / 2;
  const auto n = static_cast<std::ptrdiff_t>(samples.size());
  std::vector<float> out((samples.size() + 2) / 3);
  for (std::size_t m = 0; m < out.size(); ++m) {
    // Centered (zero-phase) alignment: output m sits on input 3m.
    const std::ptrdiff_t base = 3 * static_cast<std::ptrdiff_t>(m) + center;
    double acc = 0.0;
    for (std::ptrdiff_t k = 0; k < taps; ++k) {
      const std::ptrdiff_t idx = base - k;
      if (idx >= 0 && idx < n) acc += h[k] * samples[idx];
    }
    out[m] = static_cast<float>(acc);
  }
  return out;
}

AudioClip resample_48k_to_16k(const AudioClip& clip) {
  if (clip.sample_rate_hz != kSourceRateHz) {
    throw PreconditionError("resample_48k_to_16k: input rate is " +
                            std::to_string(clip.sample_rate_hz) + " Hz, expected 48000");
  }
  require(clip.left.size() == clip.right.size(), "resample_48k_to_16k: channel lengths differ");
  AudioClip out;
  out.left = resample_48k_to_16k(clip.left);
  out.right = resample_48k_to_16k(clip.right);
  out.sample_rate_hz = kOperatingRateHz;
  out.source_id = clip.source_id;
  return out;
}

double wrap_azimuth_to_frontal(double azimuth_deg) {
  if (!(azimuth_deg >= 0.0 && azimuth_deg < 360.0)) {
    throw PreconditionError("wrap_azimuth_to_frontal: azimuth must be in [0, 360), got " +
                            std::to_string(azimuth_deg));
  }
  if (azimuth_deg <= 90.0) return azimuth_deg;
  if (azimuth_deg < 270.0) return 180.0 - azimuth_deg;
  return azimuth_deg - 360.0;
}

void validate(const ManifestRecord& record) {
  if (!(record.azimuth_deg >= -90.0 && record.azimuth_deg <= 90.0)) {
    throw ValidationError("azimuth_deg " + std::to_string(record.azimuth_deg) +
                          " outside [-90, 90] for " + record.clip_path);
  }
  if (record.clip_path.empty()) throw ValidationError("empty clip_path");
}

std::string to_json_line(const ManifestRecord& record) {
  // Key order is fixed (and alphabetical) so manifests are byte-stable.
  nlohmann::json j;
  j["clip_path"] = record.clip_path;
  j["azimuth_deg"] = record.azimuth_deg;
  j["source_type"] = record.source_type;
  j["split"] = to_string(record.split);
  return j.dump();
}

std::vector<ManifestRecord> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  std::vector<ManifestRecord> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.string() + ":" + std::to_string(line_no) + ": ";
    ManifestRecord rec;
    try {
      const nlohmann::json j = nlohmann::json::parse(line);
      if (!j.is_object()) throw ParseError("expected an object");
      for (const auto& [key, _] : j.items()) {
        if (key != "clip_path" && key != "azimuth_deg" && key != "source_type" && key != "split") {
          throw ParseError("unknown key '" + key + "'");
        }
      }
      rec.clip_path = j.at("clip_path").get<std::string>();
      rec.azimuth_deg = j.at("azimuth_deg").get<double>();
      rec.source_type = j.at("source_type").get<std::string>();
      rec.split = parse_split(j.at("split").get<std::string>());
    } catch (const ValidationError& e) {
      throw ValidationError(where + e.what());
    } catch (const std::exception& e) {
      throw ParseError(where + e.what());
    }
    try {
      validate(rec);
    } catch (const ValidationError& e) {
      throw ValidationError(where + e.what());
    }
    records.push_back(std::move(rec));
  }
  return records;
}

void write_manifest(std::span<const ManifestRecord> records, const std::filesystem::path& path) {
  std::ostringstream out;
  for (const ManifestRecord& r : records) {
    validate(r);
    out << to_json_line(r) << '\n';
  }
  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) throw IoError("cannot write manifest " + path.string());
  file << out.str();
  if (!file) throw IoError("short write to " + path.string());
}

std::filesystem::path resolve_clip_path(const std::filesystem::path& manifest_path,
                                        const ManifestRecord& record) {
  const std::filesystem::path p(record.clip_path);
  if (p.is_absolute()) return p;
  return manifest_path.parent_path() / p;
}

}  // namespace binloc
