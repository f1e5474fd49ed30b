#include "scmse/metrics.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <stdexcept>
#include <thread>

#include "scmse/audio.hpp"

namespace scmse::metrics {

double si_sdr(const std::vector<double>& reference, const std::vector<double>& estimate) {
  if (reference.size() != estimate.size())
    throw std::invalid_argument("si_sdr: length mismatch " + std::to_string(reference.size()) +
                                " vs " + std::to_string(estimate.size()));
  double ref_energy = 0.0, dot = 0.0;
  for (size_t i = 0; i < reference.size(); ++i) {
    ref_energy += reference[i] * reference[i];
    dot += estimate[i] * reference[i];
  }
  if (ref_energy <= 0.0) throw std::invalid_argument("si_sdr: silent reference");

  const double a = dot / ref_energy;  // projection coefficient
  double target_energy = 0.0, error_energy = 0.0;
  for (size_t i = 0; i < reference.size(); ++i) {
    const double t = a * reference[i];
    const double e = estimate[i] - t;
    target_energy += t * t;
    error_energy += e * e;
  }
  if (error_energy <= target_energy * 1e-20) return kSiSdrCap;
  return std::min(kSiSdrCap, 10.0 * std::log10(target_energy / error_energy));
}

namespace {

std::vector<std::string> wav_names(const std::string& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw std::runtime_error("eval: not a directory: " + dir);
  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".wav")
      names.push_back(e.path().filename().string());
  std::sort(names.begin(), names.end());
  return names;
}

double median_of(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

int worker_count(size_t jobs) {
  unsigned n = std::thread::hardware_concurrency();
  if (const char* env = std::getenv("SCM_THREADS")) {
    const int requested = std::atoi(env);
    if (requested > 0) n = static_cast<unsigned>(requested);
  }
  if (n == 0) n = 1;
  return static_cast<int>(std::min<size_t>(n, jobs == 0 ? 1 : jobs));
}

}  // namespace

SdrReport evaluate_set(const std::string& clean_dir, const std::string& noisy_dir,
                       const std::string& enhanced_dir) {
  namespace fs = std::filesystem;
  const std::vector<std::string> names = wav_names(clean_dir);
  if (names.empty()) throw std::runtime_error("eval: no wav files in " + clean_dir);
  for (const auto& name : names) {
    if (!fs::exists(fs::path(noisy_dir) / name))
      throw std::runtime_error("eval: missing noisy counterpart " +
                               (fs::path(noisy_dir) / name).string());
    if (!fs::exists(fs::path(enhanced_dir) / name))
      throw std::runtime_error("eval: missing enhanced counterpart " +
                               (fs::path(enhanced_dir) / name).string());
  }

  SdrReport report;
  report.clips.resize(names.size());
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::atomic<size_t> next{0};
  auto work = [&]() {
    for (size_t i = next.fetch_add(1); i < names.size(); i = next.fetch_add(1)) {
      try {
        const auto clean = audio::read_wav((fs::path(clean_dir) / names[i]).string());
        const auto noisy = audio::read_wav((fs::path(noisy_dir) / names[i]).string());
        const auto enhanced = audio::read_wav((fs::path(enhanced_dir) / names[i]).string());
        ClipScore s;
        s.clip = names[i];
        s.si_sdr_noisy_db = si_sdr(clean.samples, noisy.samples);
        s.si_sdr_enhanced_db = si_sdr(clean.samples, enhanced.samples);
        s.delta_db = s.si_sdr_enhanced_db - s.si_sdr_noisy_db;
        report.clips[i] = std::move(s);
      } catch (...) {
        std::lock_guard<std::mutex> lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        return;
      }
    }
  };

  const int workers = worker_count(names.size());
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w) pool.emplace_back(work);
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);

  std::vector<double> noisy_v, enhanced_v, delta_v;
  for (const auto& s : report.clips) {
    noisy_v.push_back(s.si_sdr_noisy_db);
    enhanced_v.push_back(s.si_sdr_enhanced_db);
    delta_v.push_back(s.delta_db);
    report.mean_noisy += s.si_sdr_noisy_db;
    report.mean_enhanced += s.si_sdr_enhanced_db;
    report.mean_delta += s.delta_db;
  }
  const double n = static_cast<double>(report.clips.size());
  report.mean_noisy /= n;
  report.mean_enhanced /= n;
  report.mean_delta /= n;
  report.median_noisy = median_of(noisy_v);
  report.median_enhanced = median_of(enhanced_v);
  report.median_delta = median_of(delta_v);
  return report;
}

void write_report_csv(const std::string& path, const SdrReport& report) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("eval: cannot write " + path);
  out.precision(10);
  out << "clip,si_sdr_noisy_db,si_sdr_enhanced_db,delta_db\n";
  for (const auto& s : report.clips)
    out << s.clip << "," << s.si_sdr_noisy_db << "," << s.si_sdr_enhanced_db << ","
        << s.delta_db << "\n";
  out << "mean," << report.mean_noisy << "," << report.mean_enhanced << "," << report.mean_delta
      << "\n";
  out << "median," << report.median_noisy << "," << report.median_enhanced << ","
      << report.median_delta << "\n";
}

}  // namespace scmse::metrics
