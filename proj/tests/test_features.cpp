#include <doctest.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

#include "binloc/error.hpp"
#include "binloc/features.hpp"
#include "binloc/synth.hpp"
#include "oracles.hpp"

using namespace binloc;

namespace {

std::vector<double> tone(double freq, std::size_t n = 16000) {
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = std::sin(2.0 * oracle::kPi * freq * static_cast<double>(i) / 16000.0);
  return x;
}

ComplexSpectrogram one_row(std::vector<std::complex<double>> values) {
  ComplexSpectrogram s;
  s.frames = 1;
  s.bins = values.size();
  s.values = std::move(values);
  return s;
}

AudioClip noise_clip(double azimuth, std::uint64_t seed) {
  SourceSpec s;
  s.kind = SourceKind::kPinkNoise;
  s.seed = seed;
  return render_binaural(generate_source(s), azimuth);
}

AudioClip swapped(const AudioClip& c) {
  AudioClip s = c;
  std::swap(s.left, s.right);
  return s;
}

const Plane& plane_of(const std::vector<LabeledPlane>& planes, const std::string& label) {
  for (const auto& p : planes)
    if (p.label == label) return p.plane;
  throw std::runtime_error("no plane " + label);
}

}  // namespace

TEST_CASE("analysis window") {
  const auto w = analysis_window();
  REQUIRE(w.size() == 400);
  CHECK(w[0] == 0.0);
  CHECK(w[200] == doctest::Approx(1.0));
  for (std::size_t n = 0; n < 400; ++n) CHECK(w[n] == doctest::Approx(oracle::hann_periodic(n, 400)).epsilon(1e-14));
}

TEST_CASE("stft framing") {
  CHECK(frame_count(16000) == 98);
  CHECK(frame_count(400) == 1);
  CHECK(frame_count(559) == 1);
  CHECK(frame_count(560) == 2);
  const auto s = stft(std::vector<double>(16000, 0.0));
  CHECK(s.frames == 98);
  CHECK(s.bins == 257);
  for (const auto& v : s.values) CHECK(v == std::complex<double>(0.0, 0.0));
  CHECK_THROWS_AS(stft(std::vector<double>(399, 0.0)), PreconditionError);
}

TEST_CASE("stft matches a direct DFT") {
  std::mt19937_64 rng(3);
  std::vector<double> x(2000);
  oracle::fill_gaussian(x, rng);
  const auto s = stft(x);
  for (std::size_t t : {0u, 3u, 7u}) {
    const auto ref = oracle::direct_dft_frame(x, t * 160);
    for (std::size_t f = 0; f < 257; ++f) CHECK(std::abs(s.at(t, f) - ref[f]) < 1e-9);
  }
  // float input path
  std::vector<float> xf(x.begin(), x.end());
  const auto sf = stft(std::span<const float>(xf));
  const auto ref = oracle::direct_dft_frame(std::vector<double>(xf.begin(), xf.end()), 160);
  for (std::size_t f = 0; f < 257; ++f) CHECK(std::abs(sf.at(1, f) - ref[f]) < 1e-9);
}

TEST_CASE("stft of a constant concentrates at DC") {
  const auto s = stft(std::vector<double>(1200, 1.0));
  for (std::size_t t = 0; t < s.frames; ++t) {
    CHECK(std::abs(s.at(t, 0)) == doctest::Approx(200.0));
    // bin 1 and 2 sit in the main lobe of the zero-padded window
    CHECK(std::abs(s.at(t, 2)) < 0.15 * 200.0);
    for (std::size_t f = 4; f < 257; ++f) CHECK(std::abs(s.at(t, f)) < 0.005 * 200.0);
  }
}

TEST_CASE("stft peak bin of a 1 kHz sine") {
  const auto x = tone(1000.0);
  const auto s = stft(x);
  for (std::size_t t = 0; t < s.frames; ++t) {
    std::size_t best = 0;
    for (std::size_t f = 1; f < 257; ++f)
      if (std::abs(s.at(t, f)) > std::abs(s.at(t, best))) best = f;
    CHECK(best == 32);
    if (t % 20 == 0) CHECK(best == oracle::argmax_magnitude(oracle::direct_dft_frame(x, t * 160)));
  }
}

TEST_CASE("stft linearity and Parseval") {
  std::mt19937_64 rng(8);
  std::vector<double> a(3000), b(3000), mix(3000);
  oracle::fill_gaussian(a, rng);
  oracle::fill_gaussian(b, rng);
  for (std::size_t i = 0; i < a.size(); ++i) mix[i] = 1.5 * a[i] - 0.25 * b[i];
  const auto sa = stft(a);
  const auto sb = stft(b);
  const auto sm = stft(mix);
  for (std::size_t i = 0; i < sm.values.size(); ++i) {
    const auto expect = 1.5 * sa.values[i] - 0.25 * sb.values[i];
    CHECK(std::abs(sm.values[i] - expect) <= 1e-6 * std::max(1.0, std::abs(expect)));
  }
  for (std::size_t t = 0; t < sa.frames; ++t) {
    double freq = std::norm(sa.at(t, 0)) + std::norm(sa.at(t, 256));
    for (std::size_t f = 1; f < 256; ++f) freq += 2.0 * std::norm(sa.at(t, f));
    freq /= 512.0;
    double time = 0.0;
    for (std::size_t n = 0; n < 400; ++n) time += std::pow(a[t * 160 + n] * oracle::hann_periodic(n, 400), 2);
    CHECK(freq == doctest::Approx(time).epsilon(1e-4));
  }
}

TEST_CASE("magnitude and phase") {
  const auto s = one_row({{3.0, 4.0}, {0.0, 1.0}, {-1.0, 0.0}, {0.0, 0.0}});
  const Plane m = magnitude(s);
  CHECK(m.values == std::vector<double>{5.0, 1.0, 1.0, 0.0});
  auto conj = s;
  for (auto& v : conj.values) v = std::conj(v);
  CHECK(magnitude(conj).values == m.values);
  const Plane p = phase(s);
  CHECK(p.values[1] == doctest::Approx(oracle::kPi / 2.0));
  CHECK(p.values[2] == oracle::kPi);
  CHECK(p.values[3] == 0.0);
}

TEST_CASE("ild") {
  const auto l = one_row({{1.0, 2.0}, {0.5, -0.5}, {3.0, 0.0}});
  auto r10 = l;
  for (auto& v : r10.values) v *= 10.0;
  for (double v : ild(l, l).values) CHECK(v == 0.0);
  for (double v : ild(l, r10).values) CHECK(v == doctest::Approx(-20.0).epsilon(1e-6));
  const Plane a = ild(l, r10);
  const Plane b = ild(r10, l);
  for (std::size_t i = 0; i < a.values.size(); ++i) CHECK(a.values[i] == doctest::Approx(-b.values[i]));
  // silence stays finite
  const auto z = one_row({{0.0, 0.0}, {0.0, 0.0}, {0.0, 0.0}});
  for (double v : ild(l, z).values) CHECK(std::isfinite(v));
  CHECK_THROWS_AS(ild(l, one_row({{1.0, 0.0}})), PreconditionError);
}

TEST_CASE("ipd") {
  const auto l = one_row({std::polar(1.0, 3.0), std::polar(2.0, 0.4)});
  const auto r = one_row({std::polar(1.0, -3.0), std::polar(0.5, 0.4)});
  const Plane p = ipd(l, r);
  CHECK(p.values[0] == doctest::Approx(6.0 - 2.0 * oracle::kPi));
  CHECK(p.values[0] == doctest::Approx(-0.2832).epsilon(1e-4));
  CHECK(p.values[1] == doctest::Approx(0.0).scale(1.0));
  for (double v : ipd(l, l).values) CHECK(v == 0.0);
  CHECK_THROWS_AS(ipd(l, one_row({{1.0, 0.0}})), PreconditionError);
}

TEST_CASE("ipd of a rendered 500 Hz tone follows the ITD") {
  SourceSpec s;
  s.kind = SourceKind::kPureTone;
  s.tone_freq_hz = 500.0;
  const AudioClip c = render_binaural(generate_source(s), 90.0);
  const Plane p = ipd(stft(std::span<const float>(c.left)), stft(std::span<const float>(c.right)));
  // 500 Hz is bin 16; the left ear lags, so its phase trails the right's.
  const double expected = -2.0 * oracle::kPi * 500.0 * itd_woodworth(90.0);
  for (std::size_t t = 5; t < 90; t += 10) CHECK(p.at(t, 16) == doctest::Approx(expected).epsilon(0.05));
}

TEST_CASE("feature set specs") {
  const FeatureSetSpec ild_ipd{false, false, true, true};
  CHECK(ild_ipd.channel_count() == 2);
  CHECK(ild_ipd.feature_type_count() == 2);
  CHECK(ild_ipd.layout() == std::vector<std::string>{"ild", "ipd"});
  CHECK(ild_ipd.display_name() == "ILD, IPD");
  CHECK(ild_ipd.token() == "ild+ipd");
  const FeatureSetSpec all{true, true, true, true};
  CHECK(all.channel_count() == 6);
  CHECK(all.feature_type_count() == 4);
  CHECK(all.layout() == std::vector<std::string>{"mag_L", "mag_R", "phase_L", "phase_R", "ild", "ipd"});
  CHECK(all.display_name() == "Mag L/R, Phase L/R, ILD, IPD");

  CHECK(parse_feature_set("ild+ipd") == ild_ipd);
  CHECK(parse_feature_set("ipd, ild") == ild_ipd);
  CHECK(parse_feature_set(all.token()) == all);
  CHECK_THROWS_AS(parse_feature_set("ild+itd"), ParameterError);
  CHECK_THROWS_AS(parse_feature_set(""), ParameterError);
  CHECK_THROWS_AS(FeatureSetSpec{}.validate(), ParameterError);
}

TEST_CASE("the 13 table rows") {
  const auto rows = enumerate_table1_specs();
  REQUIRE(rows.size() == 13);
  CHECK(rows[4] == FeatureSetSpec{false, false, true, true});
  CHECK(rows[11] == FeatureSetSpec{false, true, true, true});
  const std::vector<std::string> names{
      "ILD", "IPD", "Mag L/R", "Phase L/R", "ILD, IPD", "Mag L/R, ILD", "Mag L/R, IPD",
      "Phase L/R, ILD", "Phase L/R, IPD", "Mag L/R, Phase L/R", "Mag L/R, ILD, IPD",
      "Phase L/R, ILD, IPD", "Mag L/R, Phase L/R, ILD, IPD"};
  int counts[5] = {};
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CHECK(rows[i].display_name() == names[i]);
    ++counts[rows[i].feature_type_count()];
    for (std::size_t j = 0; j < i; ++j) CHECK_FALSE(rows[i] == rows[j]);
  }
  CHECK(counts[1] == 4);
  CHECK(counts[2] == 6);
  CHECK(counts[3] == 2);
  CHECK(counts[4] == 1);
}

TEST_CASE("assemble_features") {
  const AudioClip clip = noise_clip(35.0, 4);

  SUBCASE("shapes and layout") {
    const auto t = assemble_features(clip, {false, false, true, true});
    CHECK(t.channels == 2);
    CHECK(t.frames == 98);
    CHECK(t.bins == 257);
    CHECK(t.layout == std::vector<std::string>{"ild", "ipd"});
    CHECK(t.values.size() == 2 * 98 * 257);
    const auto all = assemble_features(clip, {true, true, true, true});
    CHECK(all.channels == 6);
    CHECK(all.layout == FeatureSetSpec{true, true, true, true}.layout());
    REQUIRE(all.normalization.size() == 6);
    CHECK(all.normalization[0].method == "log10+zscore");
    CHECK(all.normalization[4].method == "clamp30/30");
    CHECK(all.normalization[5].method == "div_pi");
  }
  SUBCASE("value ranges") {
    const auto all = assemble_features(clip, {true, true, true, true});
    for (std::size_t c = 2; c < 6; ++c) {
      for (float v : all.plane(c)) {
        CHECK(v >= -1.0f);
        CHECK(v <= 1.0f);
      }
    }
    for (float v : all.values) CHECK(std::isfinite(v));
    // z-scored magnitude planes
    for (std::size_t c = 0; c < 2; ++c) {
      double mean = 0.0;
      for (float v : all.plane(c)) mean += v;
      CHECK(mean / all.plane(c).size() == doctest::Approx(0.0).scale(1.0).epsilon(1e-5));
    }
    const auto raw = raw_feature_planes(clip, {true, true, true, true});
    for (const auto& p : raw) {
      if (p.label.starts_with("phase") || p.label == "ipd") {
        for (double v : p.plane.values) {
          CHECK(v >= -oracle::kPi);
          CHECK(v <= oracle::kPi);
        }
      }
    }
  }
  SUBCASE("silence") {
    AudioClip z;
    z.left.assign(16000, 0.0f);
    z.right.assign(16000, 0.0f);
    const auto t = assemble_features(z, {true, true, true, true});
    for (std::size_t c = 0; c < 2; ++c)
      for (float v : t.plane(c)) CHECK(v == t.plane(c)[0]);
    for (std::size_t c = 2; c < 6; ++c)
      for (float v : t.plane(c)) CHECK(v == 0.0f);
  }
  SUBCASE("wrong length") {
    AudioClip s = clip;
    s.left.resize(8000);
    s.right.resize(8000);
    CHECK_THROWS_AS(assemble_features(s, {false, false, true, true}), PreconditionError);
  }
}

TEST_CASE("channel swap negates ILD and IPD") {
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const AudioClip clip = noise_clip(-50.0 + 40.0 * static_cast<double>(seed), seed);
    const FeatureSetSpec spec{true, false, true, true};
    const auto a = raw_feature_planes(clip, spec);
    const auto b = raw_feature_planes(swapped(clip), spec);
    const Plane& ml = plane_of(a, "mag_L");
    const Plane& mr = plane_of(a, "mag_R");
    for (std::size_t i = 0; i < ml.values.size(); ++i) {
      if (ml.values[i] <= 100 * kMagnitudeEpsilon || mr.values[i] <= 100 * kMagnitudeEpsilon) continue;
      CHECK(plane_of(b, "ild").values[i] == doctest::Approx(-plane_of(a, "ild").values[i]));
      CHECK(std::abs(oracle::wrap_pi(plane_of(b, "ipd").values[i] + plane_of(a, "ipd").values[i])) < 1e-9);
    }
  }
}

TEST_CASE("features are invariant to a common gain") {
  const AudioClip clip = noise_clip(-20.0, 9);
  const FeatureSetSpec spec{true, true, true, true};
  const auto base = assemble_features(clip, spec);
  const auto raw = raw_feature_planes(clip, spec);
  for (float g : {0.25f, 4.0f}) {
    AudioClip s = clip;
    for (float& v : s.left) v *= g;
    for (float& v : s.right) v *= g;
    const auto t = assemble_features(s, spec);
    for (std::size_t i = 0; i < t.values.size(); ++i) {
      const std::size_t plane_i = i % (98 * 257);
      const bool loud = raw[0].plane.values[plane_i] > 1e-3 && raw[1].plane.values[plane_i] > 1e-3;
      if (loud) CHECK(std::abs(t.values[i] - base.values[i]) < 1e-5);
    }
  }
}

TEST_CASE("feature cache round trip") {
  const auto dir = oracle::scratch_dir("feat_cache");
  const auto t = assemble_features(noise_clip(10.0, 2), {true, false, false, true});
  write_feature_cache(t, dir / "a.feat");
  const FeatureTensor r = read_feature_cache(dir / "a.feat");
  CHECK(r.channels == 3);
  CHECK(r.frames == 98);
  CHECK(r.bins == 257);
  CHECK(r.layout == t.layout);
  CHECK(std::memcmp(r.values.data(), t.values.data(), t.values.size() * sizeof(float)) == 0);

  const std::string bytes = oracle::read_file(dir / "a.feat");
  oracle::write_bytes(dir / "short.feat", std::vector<char>(bytes.begin(), bytes.end() - 4));
  CHECK_THROWS_AS(read_feature_cache(dir / "short.feat"), FormatError);
  oracle::write_bytes(dir / "long.feat", std::vector<char>(bytes.begin(), bytes.end() + 0));
  std::ofstream(dir / "long.feat", std::ios::app | std::ios::binary) << "xx";
  CHECK_THROWS_AS(read_feature_cache(dir / "long.feat"), FormatError);
  oracle::write_bytes(dir / "hdr.feat", {'{', 'x', '\n'});
  CHECK_THROWS_AS(read_feature_cache(dir / "hdr.feat"), FormatError);
}
