#include <doctest.h>

#include <cmath>
#include <random>

#include "binloc/audio_io.hpp"
#include "binloc/error.hpp"
#include "oracles.hpp"

using namespace binloc;

namespace {

std::vector<float> sine(double freq, int rate, std::size_t n, double amp = 1.0) {
  std::vector<float> x(n);
  for (std::size_t i = 0; i < n; ++i) {
    x[i] = static_cast<float>(amp * std::sin(2.0 * oracle::kPi * freq * static_cast<double>(i) / rate));
  }
  return x;
}

double rms(std::span<const float> x) {
  double s = 0.0;
  for (float v : x) s += static_cast<double>(v) * v;
  return std::sqrt(s / static_cast<double>(x.size()));
}

}  // namespace

TEST_CASE("read_wav PCM16") {
  const auto dir = oracle::scratch_dir("wav_pcm");

  SUBCASE("stereo silence") {
    oracle::write_bytes(dir / "z.wav", oracle::wav_bytes(1, 2, 16000, 16, oracle::pcm16_payload(std::vector<std::int16_t>(200, 0))));
    const AudioClip c = read_wav(dir / "z.wav");
    CHECK(c.sample_rate_hz == 16000);
    CHECK(c.size() == 100);
    for (std::size_t i = 0; i < c.size(); ++i) {
      CHECK(c.left[i] == 0.0f);
      CHECK(c.right[i] == 0.0f);
    }
  }
  SUBCASE("full-scale negative is exactly -1") {
    oracle::write_bytes(dir / "m.wav", oracle::wav_bytes(1, 2, 16000, 16, oracle::pcm16_payload({-32768, 16384})));
    const AudioClip c = read_wav(dir / "m.wav");
    CHECK(c.left[0] == -1.0f);
    CHECK(c.right[0] == 0.5f);
  }
  SUBCASE("mono is duplicated") {
    std::vector<std::int16_t> s(480);
    for (std::size_t i = 0; i < s.size(); ++i) s[i] = static_cast<std::int16_t>(i * 37 % 20000 - 10000);
    oracle::write_bytes(dir / "mono.wav", oracle::wav_bytes(1, 1, 48000, 16, oracle::pcm16_payload(s)));
    const AudioClip c = read_wav(dir / "mono.wav");
    CHECK(c.sample_rate_hz == 48000);
    CHECK(c.size() == 480);
    CHECK(c.left == c.right);
    CHECK(c.left[5] == static_cast<float>(s[5]) / 32768.0f);
  }
}

TEST_CASE("read_wav errors") {
  const auto dir = oracle::scratch_dir("wav_err");
  const auto payload = oracle::pcm16_payload({1, 2, 3, 4});

  oracle::write_bytes(dir / "junk.wav", {'n', 'o', 'p', 'e'});
  CHECK_THROWS_AS(read_wav(dir / "junk.wav"), FormatError);

  auto truncated = oracle::wav_bytes(1, 2, 16000, 16, payload);
  truncated.resize(30);
  oracle::write_bytes(dir / "trunc.wav", truncated);
  CHECK_THROWS_AS(read_wav(dir / "trunc.wav"), FormatError);

  oracle::write_bytes(dir / "b24.wav", oracle::wav_bytes(1, 2, 16000, 24, std::vector<char>(12, 0)));
  CHECK_THROWS_AS(read_wav(dir / "b24.wav"), UnsupportedFormatError);

  oracle::write_bytes(dir / "r44.wav", oracle::wav_bytes(1, 2, 44100, 16, payload));
  CHECK_THROWS_AS(read_wav(dir / "r44.wav"), UnsupportedFormatError);

  oracle::write_bytes(dir / "c3.wav", oracle::wav_bytes(1, 3, 16000, 16, oracle::pcm16_payload({1, 2, 3})));
  CHECK_THROWS_AS(read_wav(dir / "c3.wav"), UnsupportedFormatError);

  CHECK_THROWS_AS(read_wav(dir / "missing.wav"), IoError);
}

TEST_CASE("write_wav round trip") {
  const auto dir = oracle::scratch_dir("wav_rt");
  AudioClip c;
  c.left = sine(440.0, 16000, 1000, 0.8);
  c.right = sine(660.0, 16000, 1000, -0.3);
  write_wav(c, dir / "f.wav");
  const AudioClip f = read_wav(dir / "f.wav");
  CHECK(f.left == c.left);
  CHECK(f.right == c.right);

  write_wav(c, dir / "p.wav", WavEncoding::kPcm16);
  const AudioClip p = read_wav(dir / "p.wav");
  for (std::size_t i = 0; i < c.size(); ++i) CHECK(std::abs(p.left[i] - c.left[i]) <= 1.0f / 32768.0f);
}

TEST_CASE("resample_48k_to_16k") {
  SUBCASE("silence") {
    for (std::size_t n : {480u, 481u, 482u, 3u, 1u}) {
      CAPTURE(n);
      AudioClip c;
      c.sample_rate_hz = 48000;
      c.left.assign(n, 0.0f);
      c.right.assign(n, 0.0f);
      const AudioClip r = resample_48k_to_16k(c);
      CHECK(r.sample_rate_hz == 16000);
      CHECK(r.size() == (n + 2) / 3);
      for (float v : r.left) CHECK(v == 0.0f);
    }
  }
  SUBCASE("in-band tone keeps its amplitude") {
    const auto in = sine(1000.0, 48000, 48000);
    const auto out = resample_48k_to_16k(in);
    const auto ref = sine(1000.0, 16000, 16000);
    REQUIRE(out.size() == 16000);
    const std::span<const float> mid_out(out.data() + 1600, 12800);
    const std::span<const float> mid_ref(ref.data() + 1600, 12800);
    const double db = 20.0 * std::log10(rms(mid_out) / rms(mid_ref));
    CHECK(std::abs(db) < 0.5);
    double worst = 0.0;
    for (std::size_t i = 0; i < mid_out.size(); ++i) worst = std::max(worst, static_cast<double>(std::abs(mid_out[i] - mid_ref[i])));
    CHECK(worst < 0.06);
  }
  SUBCASE("tone just below the new Nyquist stays put") {
    const auto out = resample_48k_to_16k(sine(7900.0, 48000, 48000));
    std::vector<double> x(out.begin(), out.end());
    // DFT peak over 7000..8000 Hz on a 10 Hz grid
    double best_f = 0.0;
    double best = -1.0;
    for (double f = 7000.0; f <= 8000.0; f += 10.0) {
      const double m = std::abs(oracle::dft_at<double>(x, f, 16000.0));
      if (m > best) {
        best = m;
        best_f = f;
      }
    }
    CHECK(best_f == 7900.0);
  }
  SUBCASE("linearity") {
    std::mt19937_64 rng(1);
    std::normal_distribution<float> n;
    std::vector<float> a(3000), b(3000), mix(3000);
    for (std::size_t i = 0; i < a.size(); ++i) {
      a[i] = 0.3f * n(rng);
      b[i] = 0.3f * n(rng);
      mix[i] = 0.5f * a[i] - 2.0f * b[i];
    }
    const auto ra = resample_48k_to_16k(a);
    const auto rb = resample_48k_to_16k(b);
    const auto rm = resample_48k_to_16k(mix);
    for (std::size_t i = 0; i < rm.size(); ++i) CHECK(std::abs(rm[i] - (0.5f * ra[i] - 2.0f * rb[i])) < 1e-6);
  }
  SUBCASE("the filter has unity DC gain") {
    double sum = 0.0;
    for (double t : decimation_filter()) sum += t;
    CHECK(decimation_filter().size() == 63);
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("wrong rate") {
    AudioClip c;
    c.sample_rate_hz = 16000;
    c.left.assign(30, 0.0f);
    c.right.assign(30, 0.0f);
    CHECK_THROWS_AS(resample_48k_to_16k(c), PreconditionError);
  }
}

TEST_CASE("wrap_azimuth_to_frontal") {
  CHECK(wrap_azimuth_to_frontal(0.0) == 0.0);
  CHECK(wrap_azimuth_to_frontal(150.0) == 30.0);
  CHECK(wrap_azimuth_to_frontal(300.0) == -60.0);
  CHECK(wrap_azimuth_to_frontal(90.0) == 90.0);
  CHECK(wrap_azimuth_to_frontal(270.0) == -90.0);
  for (double a = 0.0; a < 360.0; a += 0.5) {
    const double w = wrap_azimuth_to_frontal(a);
    CHECK(w >= -90.0);
    CHECK(w <= 90.0);
  }
  // re-expressing a frontal angle in [0, 360) and folding returns it
  for (double f = -90.0; f <= 90.0; f += 5.0) {
    const double a = f < 0.0 ? f + 360.0 : f;
    CHECK(wrap_azimuth_to_frontal(a) == f);
  }
  CHECK_THROWS_AS(wrap_azimuth_to_frontal(360.0), PreconditionError);
  CHECK_THROWS_AS(wrap_azimuth_to_frontal(-0.5), PreconditionError);
  CHECK_THROWS_AS(wrap_azimuth_to_frontal(std::nan("")), PreconditionError);
}

TEST_CASE("manifests") {
  const auto dir = oracle::scratch_dir("manifest");

  SUBCASE("empty file") {
    oracle::write_bytes(dir / "empty.jsonl", {});
    CHECK(read_manifest(dir / "empty.jsonl").empty());
  }
  SUBCASE("round trip") {
    const std::vector<ManifestRecord> recs{
        {"clips/a.wav", -37.5, "white_noise", Split::kTrain},
        {"clips/b.wav", 90.0, "pure_tone", Split::kTest},
        {"/abs/c.wav", 0.0, "am_noise", Split::kVal},
    };
    write_manifest(recs, dir / "m.jsonl");
    CHECK(read_manifest(dir / "m.jsonl") == recs);
    const std::vector<ManifestRecord> one{recs[0]};
    write_manifest(one, dir / "one.jsonl");
    CHECK(read_manifest(dir / "one.jsonl") == one);
  }
  SUBCASE("azimuth out of range") {
    const std::string text = R"({"clip_path":"a.wav","azimuth_deg":95,"source_type":"x","split":"train"})";
    oracle::write_bytes(dir / "bad.jsonl", std::vector<char>(text.begin(), text.end()));
    CHECK_THROWS_AS(read_manifest(dir / "bad.jsonl"), ValidationError);
    ManifestRecord r{"a.wav", 95.0, "x", Split::kTrain};
    CHECK_THROWS_AS(validate(r), ValidationError);
    const std::vector<ManifestRecord> recs{r};
    CHECK_THROWS_AS(write_manifest(recs, dir / "w.jsonl"), ValidationError);
  }
  SUBCASE("malformed line names its line number") {
    const std::string text =
        R"({"clip_path":"a.wav","azimuth_deg":5,"source_type":"x","split":"train"})"
        "\n{not json\n";
    oracle::write_bytes(dir / "broken.jsonl", std::vector<char>(text.begin(), text.end()));
    try {
      read_manifest(dir / "broken.jsonl");
      FAIL("expected a parse error");
    } catch (const ParseError& e) {
      CHECK(std::string(e.what()).find(":2:") != std::string::npos);
    }
  }
  SUBCASE("unknown key and bad split") {
    const std::string extra = R"({"clip_path":"a.wav","azimuth_deg":5,"source_type":"x","split":"train","gain":1})";
    oracle::write_bytes(dir / "extra.jsonl", std::vector<char>(extra.begin(), extra.end()));
    CHECK_THROWS_AS(read_manifest(dir / "extra.jsonl"), ParseError);
    const std::string split = R"({"clip_path":"a.wav","azimuth_deg":5,"source_type":"x","split":"dev"})";
    oracle::write_bytes(dir / "split.jsonl", std::vector<char>(split.begin(), split.end()));
    CHECK_THROWS_AS(read_manifest(dir / "split.jsonl"), ValidationError);
  }
  SUBCASE("clip paths resolve against the manifest directory") {
    const ManifestRecord rel{"clips/a.wav", 0.0, "x", Split::kTrain};
    CHECK(resolve_clip_path(dir / "m.jsonl", rel) == dir / "clips/a.wav");
    const ManifestRecord abs{"/data/a.wav", 0.0, "x", Split::kTrain};
    CHECK(resolve_clip_path(dir / "m.jsonl", abs) == std::filesystem::path("/data/a.wav"));
  }
}
