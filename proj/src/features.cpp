#include "binloc/features.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numbers>
#include <sstream>

#include <json.hpp>

#include "binloc/error.hpp"
#include "fft.hpp"

namespace binloc {
namespace {

constexpr double kPi = std::numbers::pi;

std::array<double, kWindowLength> make_window() {
  std::array<double, kWindowLength> w{};
  for (std::size_t n = 0; n < kWindowLength; ++n) {
    w[n] = 0.5 - 0.5 * std::cos(2.0 * kPi * static_cast<double>(n) / kWindowLength);
  }
  return w;
}

template <typename Sample>
ComplexSpectrogram stft_impl(std::span<const Sample> samples, Ear channel) {
  if (samples.size() < kWindowLength) {
    throw PreconditionError("stft: need at least 400 samples, got " + std::to_string(samples.size()));
  }
  const std::span<const double> w = analysis_window();
  const detail::RealFft fft(kFftLength);
  ComplexSpectrogram spec;
  spec.frames = frame_count(samples.size());
  spec.bins = kNumBins;
  spec.channel = channel;
  spec.values.resize(spec.frames * spec.bins);
  std::vector<double> frame(kFftLength, 0.0);
  for (std::size_t t = 0; t < spec.frames; ++t) {
    const std::size_t start = t * kHopLength;
    for (std::size_t n = 0; n < kWindowLength; ++n) {
      frame[n] = static_cast<double>(samples[start + n]) * w[n];
    }
    fft.forward(frame, std::span(spec.values).subspan(t * spec.bins, spec.bins));
  }
  return spec;
}

void require_same_shape(const ComplexSpectrogram& a, const ComplexSpectrogram& b, const char* op) {
  if (a.frames != b.frames || a.bins != b.bins) {
    throw PreconditionError(std::string(op) + ": spectrogram shapes differ");
  }
}

double safe_arg(std::complex<double> z) {
  return (z.real() == 0.0 && z.imag() == 0.0) ? 0.0 : std::arg(z);
}

Plane empty_like(const ComplexSpectrogram& s) {
  Plane p;
  p.frames = s.frames;
  p.bins = s.bins;
  p.values.resize(s.values.size());
  return p;
}

struct TypeInfo {
  bool FeatureSetSpec::*flag;
  const char* token;
  const char* display;
};

constexpr TypeInfo kTypes[] = {
    {&FeatureSetSpec::mag_lr, "mag_lr", "Mag L/R"},
    {&FeatureSetSpec::phase_lr, "phase_lr", "Phase L/R"},
    {&FeatureSetSpec::ild, "ild", "ILD"},
    {&FeatureSetSpec::ipd, "ipd", "IPD"},
};

}  // namespace

std::span<const double> analysis_window() {
  static const std::array<double, kWindowLength> window = make_window();
  return window;
}

std::size_t frame_count(std::size_t num_samples) {
  if (num_samples < kWindowLength) return 0;
  return 1 + (num_samples - kWindowLength) / kHopLength;
}

ComplexSpectrogram stft(std::span<const float> samples, Ear channel) {
  return stft_impl(samples, channel);
}

ComplexSpectrogram stft(std::span<const double> samples, Ear channel) {
  return stft_impl(samples, channel);
}

Plane magnitude(const ComplexSpectrogram& spec) {
  Plane p = empty_like(spec);
  for (std::size_t i = 0; i < spec.values.size(); ++i) p.values[i] = std::abs(spec.values[i]);
  return p;
}

Plane phase(const ComplexSpectrogram& spec) {
  Plane p = empty_like(spec);
  for (std::size_t i = 0; i < spec.values.size(); ++i) p.values[i] = safe_arg(spec.values[i]);
  return p;
}

Plane ild(const ComplexSpectrogram& left, const ComplexSpectrogram& right) {
  require_same_shape(left, right, "ild");
  Plane p = empty_like(left);
  for (std::size_t i = 0; i < left.values.size(); ++i) {
    p.values[i] = 20.0 * std::log10((std::abs(left.values[i]) + kMagnitudeEpsilon) /
                                    (std::abs(right.values[i]) + kMagnitudeEpsilon));
  }
  return p;
}

Plane ipd(const ComplexSpectrogram& left, const ComplexSpectrogram& right) {
  require_same_shape(left, right, "ipd");
  Plane p = empty_like(left);
  for (std::size_t i = 0; i < left.values.size(); ++i) {
    const double d = safe_arg(left.values[i]) - safe_arg(right.values[i]);
    p.values[i] = std::atan2(std::sin(d), std::cos(d));
  }
  return p;
}

int FeatureSetSpec::channel_count() const {
  return 2 * static_cast<int>(mag_lr) + 2 * static_cast<int>(phase_lr) + static_cast<int>(ild) +
         static_cast<int>(ipd);
}

int FeatureSetSpec::feature_type_count() const {
  return static_cast<int>(mag_lr) + static_cast<int>(phase_lr) + static_cast<int>(ild) +
         static_cast<int>(ipd);
}

std::vector<std::string> FeatureSetSpec::layout() const {
  std::vector<std::string> out;
  if (mag_lr) out.insert(out.end(), {"mag_L", "mag_R"});
  if (phase_lr) out.insert(out.end(), {"phase_L", "phase_R"});
  if (ild) out.emplace_back("ild");
  if (ipd) out.emplace_back("ipd");
  return out;
}

std::string FeatureSetSpec::display_name() const {
  std::string out;
  for (const TypeInfo& t : kTypes) {
    if (!(this->*t.flag)) continue;
    if (!out.empty()) out += ", ";
    out += t.display;
  }
  return out;
}

std::string FeatureSetSpec::token() const {
  std::string out;
  for (const TypeInfo& t : kTypes) {
    if (!(this->*t.flag)) continue;
    if (!out.empty()) out += "+";
    out += t.token;
  }
  return out;
}

void FeatureSetSpec::validate() const {
  if (feature_type_count() == 0) throw ParameterError("feature set must include at least one feature");
}

FeatureSetSpec parse_feature_set(const std::string& token) {
  FeatureSetSpec spec;
  std::string part;
  auto flush = [&] {
    if (part.empty()) return;
    bool known = false;
    for (const TypeInfo& t : kTypes) {
      if (part == t.token) {
        spec.*t.flag = true;
        known = true;
      }
    }
    if (!known) throw ParameterError("unknown feature '" + part + "' in '" + token + "'");
    part.clear();
  };
  for (char c : token) {
    if (c == '+' || c == ',') {
      flush();
    } else if (c != ' ') {
      part.push_back(c);
    }
  }
  flush();
  spec.validate();
  return spec;
}

std::vector<FeatureSetSpec> enumerate_table1_specs() {
  // {mag, phase, ild, ipd}
  return {
      {false, false, true, false},  {false, false, false, true}, {true, false, false, false},
      {false, true, false, false},  {false, false, true, true},  {true, false, true, false},
      {true, false, false, true},   {false, true, true, false},  {false, true, false, true},
      {true, true, false, false},   {true, false, true, true},   {false, true, true, true},
      {true, true, true, true},
  };
}

std::vector<LabeledPlane> raw_feature_planes(const AudioClip& clip, const FeatureSetSpec& spec) {
  spec.validate();
  require(clip.sample_rate_hz == kOperatingRateHz, "features: clip must be 16 kHz");
  require(clip.left.size() == clip.right.size(), "features: channel lengths differ");
  const ComplexSpectrogram left = stft(std::span<const float>(clip.left), Ear::kLeft);
  const ComplexSpectrogram right = stft(std::span<const float>(clip.right), Ear::kRight);
  std::vector<LabeledPlane> planes;
  if (spec.mag_lr) {
    planes.push_back({"mag_L", magnitude(left)});
    planes.push_back({"mag_R", magnitude(right)});
  }
  if (spec.phase_lr) {
    planes.push_back({"phase_L", phase(left)});
    planes.push_back({"phase_R", phase(right)});
  }
  if (spec.ild) planes.push_back({"ild", ild(left, right)});
  if (spec.ipd) planes.push_back({"ipd", ipd(left, right)});
  return planes;
}

std::vector<LabeledPlane> normalize_planes(std::vector<LabeledPlane> planes,
                                           std::vector<PlaneNormalization>* records) {
  if (records != nullptr) records->clear();
  for (LabeledPlane& lp : planes) {
    std::vector<double>& v = lp.plane.values;
    PlaneNormalization norm;
    norm.label = lp.label;
    if (lp.label.starts_with("mag")) {
      for (double& x : v) x = std::log10(x + kMagnitudeEpsilon);
      double mean = 0.0;
      for (double x : v) mean += x;
      mean /= static_cast<double>(v.size());
      double var = 0.0;
      for (double x : v) var += (x - mean) * (x - mean);
      const double sd = std::max(std::sqrt(var / static_cast<double>(v.size())), 1e-6);
      for (double& x : v) x = (x - mean) / sd;
      norm.method = "log10+zscore";
      norm.offset = mean;
      norm.scale = sd;
    } else if (lp.label == "ild") {
      for (double& x : v) x = std::clamp(x, -kIldClampDb, kIldClampDb) / kIldClampDb;
      norm.method = "clamp30/30";
      norm.scale = kIldClampDb;
    } else {
      for (double& x : v) x /= kPi;
      norm.method = "div_pi";
      norm.scale = kPi;
    }
    if (records != nullptr) records->push_back(norm);
  }
  return planes;
}

FeatureTensor assemble_features(const AudioClip& clip, const FeatureSetSpec& spec) {
  if (clip.size() != kOperatingRateHz) {
    throw PreconditionError("assemble_features: clip must be 1.0 s (16000 samples), got " +
                            std::to_string(clip.size()));
  }
  FeatureTensor tensor;
  const std::vector<LabeledPlane> planes =
      normalize_planes(raw_feature_planes(clip, spec), &tensor.normalization);
  tensor.channels = planes.size();
  tensor.frames = planes.front().plane.frames;
  tensor.bins = planes.front().plane.bins;
  tensor.values.reserve(tensor.channels * tensor.frames * tensor.bins);
  for (const LabeledPlane& lp : planes) {
    tensor.layout.push_back(lp.label);
    for (double x : lp.plane.values) {
      if (!std::isfinite(x)) throw Error("assemble_features: non-finite value in " + lp.label);
      tensor.values.push_back(static_cast<float>(x));
    }
  }
  return tensor;
}

void write_feature_cache(const FeatureTensor& tensor, const std::filesystem::path& path) {
  require(tensor.values.size() == tensor.channels * tensor.frames * tensor.bins,
          "write_feature_cache: value count does not match shape");
  nlohmann::json header;
  header["layout"] = tensor.layout;
  header["C"] = tensor.channels;
  header["T"] = tensor.frames;
  header["F"] = tensor.bins;
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << header.dump() << '\n';
  out.write(reinterpret_cast<const char*>(tensor.values.data()),
            static_cast<std::streamsize>(tensor.values.size() * sizeof(float)));
  if (!out) throw IoError("short write to " + path.string());
}

FeatureTensor read_feature_cache(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw FormatError(path.string() + ": missing header");
  FeatureTensor tensor;
  try {
    const nlohmann::json header = nlohmann::json::parse(line);
    tensor.layout = header.at("layout").get<std::vector<std::string>>();
    tensor.channels = header.at("C").get<std::size_t>();
    tensor.frames = header.at("T").get<std::size_t>();
    tensor.bins = header.at("F").get<std::size_t>();
  } catch (const std::exception& e) {
    throw FormatError(path.string() + ": bad header: " + e.what());
  }
  if (tensor.layout.size() != tensor.channels) {
    throw FormatError(path.string() + ": layout length does not match C");
  }
  const std::size_t count = tensor.channels * tensor.frames * tensor.bins;
  tensor.values.resize(count);
  in.read(reinterpret_cast<char*>(tensor.values.data()),
          static_cast<std::streamsize>(count * sizeof(float)));
  if (in.gcount() != static_cast<std::streamsize>(count * sizeof(float))) {
    throw FormatError(path.string() + ": truncated payload");
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    throw FormatError(path.string() + ": trailing bytes after payload");
  }
  return tensor;
}

}  // namespace binloc
