#pragma once

#include <string>
#include <vector>

namespace scmse::metrics {

constexpr double kSiSdrCap = 100.0;

/// Scale-invariant signal-to-distortion ratio in dB: the estimate is
/// projected onto the reference, and the energy ratio of projection to
/// residual is reported, capped at +100 dB for numerically zero error.
double si_sdr(const std::vector<double>& reference, const std::vector<double>& estimate);

struct ClipScore {
  std::string clip;
  double si_sdr_noisy_db = 0.0;
  double si_sdr_enhanced_db = 0.0;
  double delta_db = 0.0;
};

struct SdrReport {
  std::vector<ClipScore> clips;  // ordered by filename
  double mean_noisy = 0.0, mean_enhanced = 0.0, mean_delta = 0.0;
  double median_noisy = 0.0, median_enhanced = 0.0, median_delta = 0.0;
};

/// Scores every clip name found in `clean_dir` against its counterparts.
/// Worker count is bounded by the SCM_THREADS environment variable.
SdrReport evaluate_set(const std::string& clean_dir, const std::string& noisy_dir,
                       const std::string& enhanced_dir);

/// Header `clip,si_sdr_noisy_db,si_sdr_enhanced_db,delta_db`, one row per
/// clip, then `mean` and `median` summary rows.
void write_report_csv(const std::string& path, const SdrReport& report);

}  // namespace scmse::metrics
