#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "scmse/audio.hpp"
#include "scmse/metrics.hpp"
#include "scmse/rng.hpp"

using namespace scmse;
namespace fs = std::filesystem;

namespace {

std::vector<double> random_signal(size_t n, uint64_t seed) {
  Rng rng(seed);
  std::vector<double> x(n);
  for (auto& v : x) v = rng.uniform(-0.5, 0.5);
  return x;
}

/// Gram-Schmidt: noise made exactly orthogonal to the reference.
std::vector<double> orthogonal_noise(const std::vector<double>& ref, uint64_t seed) {
  std::vector<double> n = random_signal(ref.size(), seed);
  double dot = 0.0, energy = 0.0;
  for (size_t i = 0; i < ref.size(); ++i) {
    dot += n[i] * ref[i];
    energy += ref[i] * ref[i];
  }
  for (size_t i = 0; i < ref.size(); ++i) n[i] -= (dot / energy) * ref[i];
  return n;
}

double energy(const std::vector<double>& x) {
  double e = 0.0;
  for (double v : x) e += v * v;
  return e;
}

}  // namespace

TEST_CASE("identical estimate caps at +100 dB") {
  const auto ref = random_signal(4800, 1);
  CHECK(metrics::si_sdr(ref, ref) == 100.0);
}

TEST_CASE("scaling the estimate does not change the score") {
  const auto ref = random_signal(4800, 2);
  std::vector<double> twice = ref;
  for (auto& v : twice) v *= 2.0;
  CHECK(metrics::si_sdr(ref, twice) == 100.0);

  // scale invariance on a non-trivial estimate
  auto est = ref;
  const auto noise = orthogonal_noise(ref, 3);
  for (size_t i = 0; i < est.size(); ++i) est[i] += noise[i];
  const double a = metrics::si_sdr(ref, est);
  for (auto& v : est) v *= 3.7;
  const double b = metrics::si_sdr(ref, est);
  CHECK(std::abs(a - b) < 1e-9);
}

TEST_CASE("constructed orthogonal noise reproduces the power ratio") {
  const auto ref = random_signal(48000, 4);
  auto noise = orthogonal_noise(ref, 5);
  // scale noise to exactly one tenth of the reference energy
  const double target = energy(ref) / 10.0;
  const double g = std::sqrt(target / energy(noise));
  std::vector<double> est(ref.size());
  for (size_t i = 0; i < ref.size(); ++i) est[i] = ref[i] + g * noise[i];
  CHECK(std::abs(metrics::si_sdr(ref, est) - 10.0) < 1e-6);

  // general identity: si_sdr == 10 log10(||ref||^2 / ||n||^2)
  for (double ratio : {2.0, 31.6227766}) {
    const double gg = std::sqrt(energy(ref) / (ratio * energy(noise)));
    for (size_t i = 0; i < ref.size(); ++i) est[i] = ref[i] + gg * noise[i];
    CHECK(std::abs(metrics::si_sdr(ref, est) - 10.0 * std::log10(ratio)) < 1e-6);
  }
}

TEST_CASE("silent reference and length mismatch rejected") {
  std::vector<double> zeros(100, 0.0);
  const auto est = random_signal(100, 6);
  CHECK_THROWS_AS(metrics::si_sdr(zeros, est), std::invalid_argument);
  CHECK_THROWS_AS(metrics::si_sdr(est, random_signal(99, 7)), std::invalid_argument);
}

TEST_CASE("evaluate_set scores directories and aggregates") {
  const auto root = fs::temp_directory_path() / "scmse_eval";
  for (const char* d : {"clean", "noisy", "enhanced"}) fs::create_directories(root / d);
  Rng rng(8);
  double expected_mean_noisy = 0.0;
  const int clips = 3;
  for (int i = 0; i < clips; ++i) {
    const std::string name = "clip_" + std::to_string(i) + ".wav";
    audio::AudioClip clean;
    clean.samples = random_signal(4800, 100 + i);
    audio::AudioClip noisy = clean;
    const auto noise = orthogonal_noise(clean.samples, 200 + i);
    const double ratio = 2.0 + i;
    const double g = std::sqrt(energy(clean.samples) / (ratio * energy(noise)));
    for (size_t k = 0; k < noisy.samples.size(); ++k) noisy.samples[k] += g * noise[k];
    expected_mean_noisy += 10.0 * std::log10(ratio) / clips;

    audio::write_wav((root / "clean" / name).string(), clean);
    audio::write_wav((root / "noisy" / name).string(), noisy);
    audio::write_wav((root / "enhanced" / name).string(), clean);  // enhanced == clean
  }

  const metrics::SdrReport report =
      metrics::evaluate_set((root / "clean").string(), (root / "noisy").string(),
                            (root / "enhanced").string());
  REQUIRE(report.clips.size() == clips);
  double mean_noisy = 0.0;
  for (const auto& s : report.clips) {
    CHECK(s.si_sdr_enhanced_db == 100.0);  // capped
    CHECK(s.delta_db == s.si_sdr_enhanced_db - s.si_sdr_noisy_db);
    mean_noisy += s.si_sdr_noisy_db / clips;
  }
  CHECK(std::abs(report.mean_noisy - mean_noisy) < 1e-9);
  CHECK(std::abs(mean_noisy - expected_mean_noisy) < 1e-4);

  // enhanced == noisy gives delta 0
  for (int i = 0; i < clips; ++i) {
    const std::string name = "clip_" + std::to_string(i) + ".wav";
    fs::copy_file(root / "noisy" / name, root / "enhanced" / name,
                  fs::copy_options::overwrite_existing);
  }
  const metrics::SdrReport same =
      metrics::evaluate_set((root / "clean").string(), (root / "noisy").string(),
                            (root / "enhanced").string());
  for (const auto& s : same.clips) CHECK(std::abs(s.delta_db) < 1e-9);

  // report csv layout
  const std::string csv = (root / "report.csv").string();
  metrics::write_report_csv(csv, same);
  std::ifstream in(csv);
  std::string header;
  std::getline(in, header);
  CHECK(header == "clip,si_sdr_noisy_db,si_sdr_enhanced_db,delta_db");
  int rows = 0;
  std::string line;
  while (std::getline(in, line)) ++rows;
  CHECK(rows == clips + 2);  // per-clip + mean + median

  // missing counterpart is reported by name
  fs::remove(root / "enhanced" / "clip_1.wav");
  CHECK_THROWS_WITH_AS(metrics::evaluate_set((root / "clean").string(),
                                             (root / "noisy").string(),
                                             (root / "enhanced").string()),
                       doctest::Contains("clip_1.wav"), std::runtime_error);
}

TEST_CASE("thread cap from the environment is honored") {
  const auto root = fs::temp_directory_path() / "scmse_eval_threads";
  for (const char* d : {"clean", "noisy", "enhanced"}) fs::create_directories(root / d);
  audio::AudioClip clip;
  clip.samples = random_signal(2400, 9);
  for (int i = 0; i < 4; ++i) {
    const std::string name = "c" + std::to_string(i) + ".wav";
    audio::write_wav((root / "clean" / name).string(), clip);
    audio::write_wav((root / "noisy" / name).string(), clip);
    audio::write_wav((root / "enhanced" / name).string(), clip);
  }
  setenv("SCM_THREADS", "1", 1);
  const metrics::SdrReport report =
      metrics::evaluate_set((root / "clean").string(), (root / "noisy").string(),
                            (root / "enhanced").string());
  unsetenv("SCM_THREADS");
  CHECK(report.clips.size() == 4);
  CHECK(report.median_delta == 0.0);
}
