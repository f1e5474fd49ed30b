#include <doctest.h>

#include <unsupported/Eigen/FFT>

#include <cmath>
#include <complex>
#include <filesystem>
#include <fstream>

#include "scmse/audio.hpp"
#include "scmse/rng.hpp"

using namespace scmse;
namespace fs = std::filesystem;

namespace {

std::string temp_path(const std::string& name) {
  return (fs::temp_directory_path() / name).string();
}

/// Minimal raw wav writer so the reader is tested against independent bytes.
void write_raw_wav(const std::string& path, uint16_t fmt, uint16_t channels, uint32_t rate,
                   uint16_t bits, const std::vector<char>& payload) {
  std::ofstream out(path, std::ios::binary);
  auto put32 = [&](uint32_t v) { out.write(reinterpret_cast<char*>(&v), 4); };
  auto put16 = [&](uint16_t v) { out.write(reinterpret_cast<char*>(&v), 2); };
  out.write("RIFF", 4);
  put32(36 + static_cast<uint32_t>(payload.size()));
  out.write("WAVE", 4);
  out.write("fmt ", 4);
  put32(16);
  put16(fmt);
  put16(channels);
  put32(rate);
  put32(rate * channels * bits / 8);
  put16(static_cast<uint16_t>(channels * bits / 8));
  put16(bits);
  out.write("data", 4);
  put32(static_cast<uint32_t>(payload.size()));
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
}

double measured_snr_db(const std::vector<double>& clean, const std::vector<double>& noise) {
  return 10.0 * std::log10(audio::signal_power(clean) / audio::signal_power(noise));
}

}  // namespace

TEST_CASE("pcm16 samples normalize by 1/32768") {
  const int16_t raw[3] = {0, 16384, -32768};
  std::vector<char> payload(reinterpret_cast<const char*>(raw),
                            reinterpret_cast<const char*>(raw) + 6);
  const std::string path = temp_path("scmse_pcm16.wav");
  write_raw_wav(path, 1, 1, 48000, 16, payload);
  const audio::AudioClip clip = audio::read_wav(path);
  REQUIRE(clip.samples.size() == 3);
  CHECK(clip.samples[0] == 0.0);
  CHECK(clip.samples[1] == 0.5);
  CHECK(clip.samples[2] == -1.0);
}

TEST_CASE("wrong sample rate is reported with both rates") {
  std::vector<char> payload(4, 0);
  const std::string path = temp_path("scmse_16k.wav");
  write_raw_wav(path, 1, 1, 16000, 16, payload);
  CHECK_THROWS_WITH_AS(audio::read_wav(path), doctest::Contains("sample_rate 16000 != 48000"),
                       std::runtime_error);
}

TEST_CASE("multichannel and malformed headers rejected") {
  std::vector<char> payload(8, 0);
  const std::string stereo = temp_path("scmse_stereo.wav");
  write_raw_wav(stereo, 1, 2, 48000, 16, payload);
  CHECK_THROWS_AS(audio::read_wav(stereo), std::runtime_error);

  const std::string bad = temp_path("scmse_bad.wav");
  std::ofstream(bad, std::ios::binary) << "JUNKJUNKJUNK";
  CHECK_THROWS_AS(audio::read_wav(bad), std::runtime_error);
}

TEST_CASE("float32 samples read exactly") {
  const float raw[1] = {0.25f};
  std::vector<char> payload(reinterpret_cast<const char*>(raw),
                            reinterpret_cast<const char*>(raw) + 4);
  const std::string path = temp_path("scmse_f32.wav");
  write_raw_wav(path, 3, 1, 48000, 32, payload);
  CHECK(audio::read_wav(path).samples[0] == 0.25);
}

TEST_CASE("float32 round trip is bit identical") {
  Rng rng(42);
  audio::AudioClip clip;
  clip.samples.resize(1200);
  for (auto& s : clip.samples) s = static_cast<float>(rng.uniform(-1.0, 1.0));
  const std::string path = temp_path("scmse_rt_f32.wav");
  audio::write_wav(path, clip, audio::WavFormat::Float32);
  const audio::AudioClip back = audio::read_wav(path);
  REQUIRE(back.samples.size() == clip.samples.size());
  for (size_t i = 0; i < clip.samples.size(); ++i) CHECK(back.samples[i] == clip.samples[i]);
}

TEST_CASE("pcm16 round trip within one quantization step") {
  Rng rng(43);
  audio::AudioClip clip;
  clip.samples.resize(1200);
  for (auto& s : clip.samples) s = rng.uniform(-0.999, 0.999);
  clip.samples[0] = 0.5;
  const std::string path = temp_path("scmse_rt_pcm.wav");
  audio::write_wav(path, clip, audio::WavFormat::Pcm16);
  const audio::AudioClip back = audio::read_wav(path);
  for (size_t i = 0; i < clip.samples.size(); ++i)
    CHECK(std::abs(back.samples[i] - clip.samples[i]) <= 1.0 / 32768.0);
  CHECK(back.samples[0] == 0.5);  // 0.5 is exactly representable
}

TEST_CASE("writing a NaN sample fails") {
  audio::AudioClip clip;
  clip.samples.assign(1200, 0.0);
  clip.samples[7] = std::nan("");
  CHECK_THROWS_AS(audio::write_wav(temp_path("scmse_nan.wav"), clip), std::runtime_error);
}

TEST_CASE("synth is deterministic per seed") {
  const audio::AudioClip a = audio::synth_clip(audio::ClipKind::White, 1.0, 7);
  const audio::AudioClip b = audio::synth_clip(audio::ClipKind::White, 1.0, 7);
  REQUIRE(a.samples.size() == b.samples.size());
  for (size_t i = 0; i < a.samples.size(); ++i) CHECK(a.samples[i] == b.samples[i]);
  const audio::AudioClip c = audio::synth_clip(audio::ClipKind::White, 1.0, 8);
  bool differs = false;
  for (size_t i = 0; i < a.samples.size(); ++i) differs = differs || a.samples[i] != c.samples[i];
  CHECK(differs);
}

TEST_CASE("speechlike clip meets the length and peak contract") {
  const audio::AudioClip clip = audio::synth_clip(audio::ClipKind::Speechlike, 1.0, 3);
  CHECK(clip.samples.size() == 48000);
  double peak = 0.0;
  for (double s : clip.samples) peak = std::max(peak, std::abs(s));
  CHECK(peak <= 0.9);
  CHECK(peak > 0.1);
}

TEST_CASE("unknown clip kind rejected") {
  CHECK_THROWS_AS(audio::clip_kind_from_string("brown"), std::runtime_error);
}

TEST_CASE("pink noise slope is about -3 dB per octave") {
  // Oracle: Welch-style averaged periodogram of the generated clip, least
  // squares fit of dB power against log2 frequency between 100 Hz and 10 kHz.
  const audio::AudioClip clip = audio::synth_clip(audio::ClipKind::Pink, 4.0, 1);
  const int nfft = 4096, hop = 2048;
  const int frames = (static_cast<int>(clip.samples.size()) - nfft) / hop + 1;
  std::vector<double> power(static_cast<size_t>(nfft / 2 + 1), 0.0);
  Eigen::FFT<double> fft;
  std::vector<double> frame(nfft);
  std::vector<std::complex<double>> spec;
  for (int n = 0; n < frames; ++n) {
    for (int i = 0; i < nfft; ++i) {
      const double w = 0.5 * (1.0 - std::cos(2.0 * M_PI * i / nfft));
      frame[static_cast<size_t>(i)] = w * clip.samples[static_cast<size_t>(n * hop + i)];
    }
    fft.fwd(spec, frame);
    for (size_t k = 0; k < power.size(); ++k) power[k] += std::norm(spec[k]);
  }
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  int count = 0;
  const double bin_hz = 48000.0 / nfft;
  for (size_t k = 1; k < power.size(); ++k) {
    const double f = k * bin_hz;
    if (f < 100.0 || f > 10000.0) continue;
    const double x = std::log2(f);
    const double y = 10.0 * std::log10(power[k] / frames);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
    ++count;
  }
  const double slope = (count * sxy - sx * sy) / (count * sxx - sx * sx);
  CHECK(slope > -4.0);
  CHECK(slope < -2.0);
}

TEST_CASE("mix at 0 dB equalizes powers") {
  const audio::AudioClip clean = audio::synth_clip(audio::ClipKind::Speechlike, 1.0, 11);
  const audio::AudioClip noise = audio::synth_clip(audio::ClipKind::White, 1.0, 12);
  const audio::Mixture mix = audio::mix_at_snr(clean, noise, 0.0, 5);
  std::vector<double> clean_part(mix.noisy.samples.size());
  for (size_t i = 0; i < clean_part.size(); ++i)
    clean_part[i] = mix.noisy.samples[i] - mix.scaled_noise.samples[i];
  const double p_c = audio::signal_power(clean_part);
  const double p_n = audio::signal_power(mix.scaled_noise.samples);
  CHECK(std::abs(p_c / p_n - 1.0) < 1e-6);
}

TEST_CASE("10 dB mix scales noise by sqrt(Pc / (10 Pn)) and reproduces the SNR") {
  audio::AudioClip clean = audio::synth_clip(audio::ClipKind::Speechlike, 1.0, 21);
  for (auto& s : clean.samples) s *= 0.5;  // keep the sum well below clipping
  const audio::AudioClip noise = audio::synth_clip(audio::ClipKind::Pink, 1.0, 22);
  const audio::Mixture mix = audio::mix_at_snr(clean, noise, 10.0, 5);
  const double expected_gain = std::sqrt(audio::signal_power(clean.samples) /
                                         (audio::signal_power(noise.samples) * 10.0));
  // equal lengths, so the fitted noise is the raw noise scaled
  const double actual_gain = mix.scaled_noise.samples[100] / noise.samples[100];
  CHECK(actual_gain == doctest::Approx(expected_gain).epsilon(1e-9));
  std::vector<double> clean_part(mix.noisy.samples.size());
  for (size_t i = 0; i < clean_part.size(); ++i)
    clean_part[i] = mix.noisy.samples[i] - mix.scaled_noise.samples[i];
  CHECK(std::abs(measured_snr_db(clean_part, mix.scaled_noise.samples) - 10.0) < 1e-6);
}

TEST_CASE("silent inputs rejected") {
  audio::AudioClip zeros;
  zeros.samples.assign(48000, 0.0);
  const audio::AudioClip noise = audio::synth_clip(audio::ClipKind::White, 1.0, 2);
  CHECK_THROWS_AS(audio::mix_at_snr(zeros, noise, 0.0, 1), std::runtime_error);
  CHECK_THROWS_AS(audio::mix_at_snr(noise, zeros, 0.0, 1), std::runtime_error);
}

TEST_CASE("property: measured SNR matches the recipe across the range") {
  Rng rng(777);
  for (int trial = 0; trial < 8; ++trial) {
    const double snr = rng.uniform(-5.0, 15.0);
    const audio::AudioClip clean =
        audio::synth_clip(audio::ClipKind::Speechlike, 0.5, 100 + trial);
    const audio::AudioClip noise = audio::synth_clip(
        trial % 2 ? audio::ClipKind::Pink : audio::ClipKind::White, 0.7, 200 + trial);
    const audio::Mixture mix = audio::mix_at_snr(clean, noise, snr, trial);
    std::vector<double> clean_part(mix.noisy.samples.size());
    for (size_t i = 0; i < clean_part.size(); ++i)
      clean_part[i] = mix.noisy.samples[i] - mix.scaled_noise.samples[i];
    CHECK(std::abs(measured_snr_db(clean_part, mix.scaled_noise.samples) - snr) < 1e-6);
  }
}

TEST_CASE("joint rescale keeps the mixture under unity and the SNR intact") {
  // loud clean plus -5 dB noise forces the raw peak over 1
  audio::AudioClip clean = audio::synth_clip(audio::ClipKind::Speechlike, 0.5, 31);
  for (auto& s : clean.samples) s *= 1.12;
  const audio::AudioClip noise = audio::synth_clip(audio::ClipKind::White, 0.5, 32);
  const audio::Mixture mix = audio::mix_at_snr(clean, noise, -5.0, 9);
  double peak = 0.0;
  for (double s : mix.noisy.samples) peak = std::max(peak, std::abs(s));
  CHECK(peak <= 0.99 + 1e-12);
  std::vector<double> clean_part(mix.noisy.samples.size());
  for (size_t i = 0; i < clean_part.size(); ++i)
    clean_part[i] = mix.noisy.samples[i] - mix.scaled_noise.samples[i];
  CHECK(std::abs(measured_snr_db(clean_part, mix.scaled_noise.samples) + 5.0) < 1e-6);
}

TEST_CASE("recipes round trip through csv") {
  std::vector<audio::MixtureRecipe> recipes = {{"clip_000", "clip_000", -2.5, 123},
                                               {"clip_001", "clip_001", 11.0, 456}};
  const std::string path = temp_path("scmse_recipes.csv");
  audio::write_recipes(path, recipes);
  const auto back = audio::read_recipes(path);
  REQUIRE(back.size() == 2);
  CHECK(back[0].clean_id == "clip_000");
  CHECK(back[1].snr_db == 11.0);
  CHECK(back[1].seed == 456);
}
