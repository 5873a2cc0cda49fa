#include "binloc/synth.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdio>
#include <numbers>
#include <set>

#include "binloc/error.hpp"
#include "binloc/parallel.hpp"
#include "binloc/rng.hpp"
#include "fft.hpp"

namespace binloc {
namespace {

constexpr double kPi = std::numbers::pi;
constexpr int kDelayHalfTaps = 16;          // 33-tap interpolator
constexpr std::size_t kRenderFftLen = 32768;  // >= 1 s + reverb tail
constexpr double kReverbLengthS = 0.25;
constexpr double kReverbLevelDb = -12.0;

struct KindName {
  SourceKind kind;
  const char* name;
};

constexpr KindName kKindNames[] = {
    {SourceKind::kWhiteNoise, "white_noise"},   {SourceKind::kPinkNoise, "pink_noise"},
    {SourceKind::kPureTone, "pure_tone"},       {SourceKind::kClickTrain, "click_train"},
    {SourceKind::kAmNoise, "am_noise"},         {SourceKind::kBurstyPink, "bursty_pink"},
    {SourceKind::kBurstyPinkReverb, "bursty_pink_reverb"},
};

std::vector<double> white(Rng& rng, std::size_t n) {
  std::vector<double> x(n);
  for (double& v : x) v = rng.gaussian();
  return x;
}

// Paul Kellet's economy pink filter (three poles plus a direct term).
std::vector<double> pink(Rng& rng, std::size_t n) {
  std::vector<double> x(n);
  double b0 = 0.0, b1 = 0.0, b2 = 0.0;
  for (double& v : x) {
    const double w = rng.gaussian();
    b0 = 0.99765 * b0 + w * 0.0990460;
    b1 = 0.96300 * b1 + w * 0.2965164;
    b2 = 0.57000 * b2 + w * 1.0526913;
    v = b0 + b1 + b2 + w * 0.1848;
  }
  return x;
}

void gate_bursts(std::vector<double>& x, int rate) {
  // 2 Hz, 50% duty: on for the first quarter second of every half second.
  const std::size_t period = static_cast<std::size_t>(rate) / 2;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (i % period >= period / 2) x[i] = 0.0;
  }
}

std::vector<float> normalize_rms(const std::vector<double>& x) {
  double energy = 0.0;
  for (double v : x) energy += v * v;
  const double rms = x.empty() ? 0.0 : std::sqrt(energy / static_cast<double>(x.size()));
  const double gain = rms > 0.0 ? kSourceRms / rms : 0.0;
  std::vector<float> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = static_cast<float>(x[i] * gain);
  return out;
}

double hann_window(double u, double half_width) {
  if (std::abs(u) >= half_width) return 0.0;
  return 0.5 + 0.5 * std::cos(kPi * u / half_width);
}

double sinc(double x) { return x == 0.0 ? 1.0 : std::sin(kPi * x) / (kPi * x); }

// Zero-phase filtering by the shadow magnitude response of one ear.
std::vector<double> apply_shadow(std::span<const double> x, double alpha, const HeadModel& head) {
  const detail::RealFft fft(kRenderFftLen);
  std::vector<double> padded(kRenderFftLen, 0.0);
  std::copy(x.begin(), x.end(), padded.begin());
  std::vector<std::complex<double>> spec(fft.bins());
  fft.forward(padded, spec);
  for (std::size_t k = 0; k < spec.size(); ++k) {
    const double f = static_cast<double>(k) * kOperatingRateHz / static_cast<double>(kRenderFftLen);
    spec[k] *= shadow_magnitude(alpha, f, head);
  }
  fft.inverse(spec, padded);
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = padded[i] / static_cast<double>(kRenderFftLen);
  return out;
}

std::vector<double> reverb_ir(std::uint64_t seed, int ear) {
  // Shared component plus an independent per-ear component (coherence 0.5).
  const std::size_t len = static_cast<std::size_t>(kReverbLengthS * kOperatingRateHz);
  Rng shared(derive_seed(seed, 100));
  Rng own(derive_seed(seed, 200 + static_cast<std::uint64_t>(ear)));
  std::vector<double> h(len);
  const double decay = std::log(1000.0) / static_cast<double>(len);  // -60 dB at the end
  for (std::size_t n = 0; n < len; ++n) {
    const double env = std::exp(-decay * static_cast<double>(n));
    h[n] = env * std::numbers::sqrt2 / 2.0 * (shared.gaussian() + own.gaussian());
  }
  return h;
}

std::vector<double> convolve_fft(std::span<const double> x, std::span<const double> h) {
  const detail::RealFft fft(kRenderFftLen);
  require(x.size() + h.size() <= kRenderFftLen, "convolve_fft: inputs too long");
  std::vector<double> a(kRenderFftLen, 0.0), b(kRenderFftLen, 0.0);
  std::copy(x.begin(), x.end(), a.begin());
  std::copy(h.begin(), h.end(), b.begin());
  std::vector<std::complex<double>> sa(fft.bins()), sb(fft.bins());
  fft.forward(a, sa);
  fft.forward(b, sb);
  for (std::size_t k = 0; k < sa.size(); ++k) sa[k] *= sb[k];
  fft.inverse(sa, a);
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] / static_cast<double>(kRenderFftLen);
  return out;
}

double energy(std::span<const double> x) {
  double e = 0.0;
  for (double v : x) e += v * v;
  return e;
}

std::string azimuth_tag(double azimuth_deg) {
  char buf[32];
  const double rounded = std::round(azimuth_deg * 100.0) / 100.0;
  if (rounded == std::round(rounded)) {
    std::snprintf(buf, sizeof buf, "%c%03d", rounded < 0 ? 'm' : 'p',
                  static_cast<int>(std::abs(rounded)));
  } else {
    std::snprintf(buf, sizeof buf, "%c%06.2f", rounded < 0 ? 'm' : 'p', std::abs(rounded));
  }
  return buf;
}

}  // namespace

std::string to_string(SourceKind kind) {
  for (const auto& [k, name] : kKindNames) {
    if (k == kind) return name;
  }
  return "unknown";
}

SourceKind parse_source_kind(const std::string& text) {
  for (const auto& [k, name] : kKindNames) {
    if (text == name) return k;
  }
  throw ParameterError("unknown source kind '" + text + "'");
}

void HeadModel::validate() const {
  if (!(radius_m > 0.0)) throw ParameterError("head radius must be positive");
  if (!(speed_of_sound_mps > 0.0)) throw ParameterError("speed of sound must be positive");
  if (!(shadow_alpha_min > 0.0 && shadow_alpha_min < 2.0)) {
    throw ParameterError("shadow_alpha_min must lie in (0, 2)");
  }
  if (!(shadow_theta_min_deg > 0.0 && shadow_theta_min_deg <= 180.0)) {
    throw ParameterError("shadow_theta_min_deg must lie in (0, 180]");
  }
}

std::vector<float> generate_source(const SourceSpec& spec, int sample_rate_hz) {
  if (sample_rate_hz != kOperatingRateHz) {
    throw ParameterError("generate_source: sample rate must be 16000");
  }
  if (spec.duration_s != kClipDurationS) throw ParameterError("generate_source: duration must be 1.0 s");
  const auto n = static_cast<std::size_t>(std::lround(spec.duration_s * sample_rate_hz));
  const double fs = sample_rate_hz;
  Rng rng(spec.seed);
  std::vector<double> x;
  switch (spec.kind) {
    case SourceKind::kWhiteNoise:
      x = white(rng, n);
      break;
    case SourceKind::kPinkNoise:
      x = pink(rng, n);
      break;
    case SourceKind::kPureTone: {
      if (!(spec.tone_freq_hz > 20.0 && spec.tone_freq_hz < 7000.0)) {
        throw ParameterError("pure_tone frequency must lie in (20, 7000) Hz");
      }
      x.resize(n);
      for (std::size_t i = 0; i < n; ++i) {
        x[i] = std::sin(2.0 * kPi * spec.tone_freq_hz * static_cast<double>(i) / fs);
      }
      break;
    }
    case SourceKind::kClickTrain: {
      // 8 Hz impulses with a 2 ms exponential tail; the seed sets the offset.
      const std::size_t period = static_cast<std::size_t>(fs / 8.0);
      const std::size_t offset = static_cast<std::size_t>(rng.below(period));
      const double tau = 0.002 * fs;
      x.assign(n, 0.0);
      for (std::size_t i = 0; i < n; ++i) {
        if (i < offset) continue;
        const double since = static_cast<double>((i - offset) % period);
        x[i] = std::exp(-since / tau);
      }
      break;
    }
    case SourceKind::kAmNoise: {
      x = white(rng, n);
      for (std::size_t i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) / fs;
        x[i] *= 0.5 * (1.0 - std::cos(2.0 * kPi * 4.0 * t));
      }
      break;
    }
    case SourceKind::kBurstyPink:
    case SourceKind::kBurstyPinkReverb:
      x = pink(rng, n);
      gate_bursts(x, sample_rate_hz);
      break;
  }
  return normalize_rms(x);
}

double itd_woodworth(double azimuth_deg, const HeadModel& head) {
  if (!(azimuth_deg >= -90.0 && azimuth_deg <= 90.0)) {
    throw PreconditionError("itd_woodworth: azimuth must lie in [-90, 90]");
  }
  const double theta = azimuth_deg * kPi / 180.0;
  return head.radius_m / head.speed_of_sound_mps * (theta + std::sin(theta));
}

double shadow_alpha(double theta_rel_deg, const HeadModel& head) {
  const double a = head.shadow_alpha_min;
  return (1.0 + a / 2.0) +
         (1.0 - a / 2.0) * std::cos(theta_rel_deg / head.shadow_theta_min_deg * kPi);
}

double shadow_magnitude(double alpha, double freq_hz, const HeadModel& head, int sample_rate_hz) {
  // Bilinear transform of (alpha s + beta) / (s + beta), beta = 2c/a.
  const double beta = 2.0 * head.speed_of_sound_mps / head.radius_m;
  const double k = 2.0 * sample_rate_hz;
  const double b0 = alpha * k + beta;
  const double b1 = beta - alpha * k;
  const double a0 = k + beta;
  const double a1 = beta - k;
  const std::complex<double> z1 = std::polar(1.0, -2.0 * kPi * freq_hz / sample_rate_hz);
  return std::abs((b0 + b1 * z1) / (a0 + a1 * z1));
}

std::vector<double> fractional_delay(std::span<const double> x, double delay_samples) {
  const double whole = std::floor(delay_samples);
  const double frac = delay_samples - whole;
  const auto shift = static_cast<std::ptrdiff_t>(whole);
  constexpr double kHalfWidth = kDelayHalfTaps + 1;
  double taps[2 * kDelayHalfTaps + 1];
  for (int k = -kDelayHalfTaps; k <= kDelayHalfTaps; ++k) {
    const double u = k - frac;
    taps[k + kDelayHalfTaps] = sinc(u) * hann_window(u, kHalfWidth);
  }
  const auto n = static_cast<std::ptrdiff_t>(x.size());
  std::vector<double> y(x.size(), 0.0);
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (int k = -kDelayHalfTaps; k <= kDelayHalfTaps; ++k) {
      const std::ptrdiff_t src = i - shift - k;
      if (src >= 0 && src < n) acc += taps[k + kDelayHalfTaps] * x[src];
    }
    y[i] = acc;
  }
  return y;
}

AudioClip render_binaural(std::span<const float> source, double azimuth_deg, const HeadModel& head,
                          const RenderOptions& options) {
  head.validate();
  if (!(azimuth_deg >= -90.0 && azimuth_deg <= 90.0)) {
    throw ParameterError("render_binaural: azimuth must lie in [-90, 90]");
  }
  std::vector<double> dry(kClipSamples, 0.0);
  std::copy_n(source.begin(), std::min(source.size(), kClipSamples), dry.begin());

  // Right ear leads for positive azimuth: delay the left, advance the right.
  const double half_itd = itd_woodworth(azimuth_deg, head) * kOperatingRateHz / 2.0;
  const double theta_rel_left = std::abs(azimuth_deg + 90.0);
  const double theta_rel_right = std::abs(azimuth_deg - 90.0);

  std::vector<double> left =
      apply_shadow(fractional_delay(dry, half_itd), shadow_alpha(theta_rel_left, head), head);
  std::vector<double> right =
      apply_shadow(fractional_delay(dry, -half_itd), shadow_alpha(theta_rel_right, head), head);

  if (options.reverb) {
    std::vector<double> wet_left = convolve_fft(left, reverb_ir(options.reverb_seed, 0));
    std::vector<double> wet_right = convolve_fft(right, reverb_ir(options.reverb_seed, 1));
    const double dry_energy = energy(left) + energy(right);
    const double wet_energy = energy(wet_left) + energy(wet_right);
    if (wet_energy > 0.0) {
      const double gain = std::sqrt(dry_energy / wet_energy) * std::pow(10.0, kReverbLevelDb / 20.0);
      for (std::size_t i = 0; i < kClipSamples; ++i) {
        left[i] += gain * wet_left[i];
        right[i] += gain * wet_right[i];
      }
    }
  }

  double peak = 0.0;
  for (std::size_t i = 0; i < kClipSamples; ++i) {
    peak = std::max({peak, std::abs(left[i]), std::abs(right[i])});
  }
  const double scale = peak > 0.99 ? 0.99 / peak : 1.0;

  AudioClip clip;
  clip.sample_rate_hz = kOperatingRateHz;
  clip.left.resize(kClipSamples);
  clip.right.resize(kClipSamples);
  for (std::size_t i = 0; i < kClipSamples; ++i) {
    clip.left[i] = static_cast<float>(left[i] * scale);
    clip.right[i] = static_cast<float>(right[i] * scale);
  }
  return clip;
}

std::vector<double> default_azimuth_grid() {
  std::vector<double> grid;
  for (int a = -90; a <= 90; a += 5) grid.push_back(a);
  return grid;
}

std::vector<double> DatasetConfig::resolved_azimuths() const {
  return azimuths_deg.empty() ? default_azimuth_grid() : azimuths_deg;
}

namespace {

void validate_dataset_config(const DatasetConfig& config) {
  config.head.validate();
  if (config.sets.empty()) throw ConfigError("dataset config has no sets");
  if (!(config.tone_min_hz > 20.0 && config.tone_max_hz < 7000.0 &&
        config.tone_min_hz <= config.tone_max_hz)) {
    throw ConfigError("tone frequency range must lie inside (20, 7000) Hz");
  }
  for (double az : config.resolved_azimuths()) {
    if (!(az >= -90.0 && az <= 90.0)) {
      throw ConfigError("azimuth " + std::to_string(az) + " outside [-90, 90]");
    }
  }
  std::set<std::string> names;
  std::set<SourceKind> train_kinds;
  for (const DatasetSet& s : config.sets) {
    if (s.name.empty() || !names.insert(s.name).second) {
      throw ConfigError("dataset set names must be unique and non-empty");
    }
    if (s.kinds.empty() || s.seeds.empty()) {
      throw ConfigError("dataset set '" + s.name + "' needs at least one kind and one seed");
    }
    if (s.split == Split::kTrain) train_kinds.insert(s.kinds.begin(), s.kinds.end());
  }
  // Seeds may repeat within a split but never across train/val/test.
  for (std::size_t i = 0; i < config.sets.size(); ++i) {
    for (std::size_t j = i + 1; j < config.sets.size(); ++j) {
      const DatasetSet& a = config.sets[i];
      const DatasetSet& b = config.sets[j];
      if (a.split == b.split) continue;
      for (std::uint64_t seed : a.seeds) {
        if (std::find(b.seeds.begin(), b.seeds.end(), seed) != b.seeds.end()) {
          throw ConfigError("seed " + std::to_string(seed) + " shared by sets '" + a.name +
                            "' and '" + b.name + "' of different splits");
        }
      }
    }
  }
  for (const DatasetSet& s : config.sets) {
    if (!s.out_of_domain) continue;
    for (SourceKind k : s.kinds) {
      if (train_kinds.contains(k)) {
        throw ConfigError("out-of-domain set '" + s.name + "' uses training kind " + to_string(k));
      }
    }
  }
}

std::uint64_t clip_seed(const ClipJob& job) {
  const auto az_key = static_cast<std::uint64_t>(std::llround(job.azimuth_deg * 1000.0) + 1'000'000);
  return derive_seed(derive_seed(job.seed, static_cast<std::uint64_t>(job.kind)), az_key);
}

}  // namespace

std::vector<ClipJob> enumerate_clips(const DatasetConfig& config) {
  validate_dataset_config(config);
  const std::vector<double> grid = config.resolved_azimuths();
  std::vector<ClipJob> jobs;
  for (std::size_t s = 0; s < config.sets.size(); ++s) {
    const DatasetSet& set = config.sets[s];
    for (SourceKind kind : set.kinds) {
      for (std::uint64_t seed : set.seeds) {
        for (double az : grid) {
          ClipJob job;
          job.set_index = s;
          job.kind = kind;
          job.seed = seed;
          job.azimuth_deg = az;
          job.relative_path = "clips/" + set.name + "/" + to_string(kind) + "_s" +
                              std::to_string(seed) + "_az" + azimuth_tag(az) + ".wav";
          jobs.push_back(std::move(job));
        }
      }
    }
  }
  return jobs;
}

AudioClip render_clip(const DatasetConfig& config, const ClipJob& job) {
  const std::uint64_t seed = clip_seed(job);
  SourceSpec spec;
  spec.kind = job.kind;
  spec.seed = derive_seed(seed, 1);
  if (job.kind == SourceKind::kPureTone) {
    Rng tone_rng(derive_seed(seed, 2));
    spec.tone_freq_hz = config.tone_min_hz *
                        std::pow(config.tone_max_hz / config.tone_min_hz, tone_rng.uniform());
  }
  RenderOptions options;
  options.reverb = job.kind == SourceKind::kBurstyPinkReverb;
  options.reverb_seed = derive_seed(seed, 3);
  AudioClip clip = render_binaural(generate_source(spec), job.azimuth_deg, config.head, options);
  clip.source_id = to_string(job.kind);
  return clip;
}

DatasetSummary build_dataset(const DatasetConfig& config, const std::filesystem::path& output_dir) {
  const std::vector<ClipJob> jobs = enumerate_clips(config);
  std::error_code ec;
  for (const DatasetSet& set : config.sets) {
    std::filesystem::create_directories(output_dir / "clips" / set.name, ec);
    if (ec) {
      throw IoError("cannot create " + (output_dir / "clips" / set.name).string() + ": " +
                    ec.message());
    }
  }

  parallel_for(jobs.size(), config.threads, [&](std::size_t i) {
    write_wav(render_clip(config, jobs[i]), output_dir / jobs[i].relative_path);
  });

  std::vector<std::vector<ManifestRecord>> per_set(config.sets.size());
  std::vector<ManifestRecord> all;
  for (const ClipJob& job : jobs) {
    ManifestRecord rec;
    rec.clip_path = job.relative_path;
    rec.azimuth_deg = job.azimuth_deg;
    rec.source_type = to_string(job.kind);
    rec.split = config.sets[job.set_index].split;
    per_set[job.set_index].push_back(rec);
    all.push_back(std::move(rec));
  }

  DatasetSummary summary;
  for (std::size_t s = 0; s < config.sets.size(); ++s) {
    const auto path = output_dir / (config.sets[s].name + ".jsonl");
    write_manifest(per_set[s], path);
    summary.set_names.push_back(config.sets[s].name);
    summary.manifest_paths.push_back(path);
    summary.record_counts.push_back(per_set[s].size());
  }
  write_manifest(all, output_dir / "manifest.jsonl");
  summary.total_records = all.size();
  return summary;
}

}  // namespace binloc
