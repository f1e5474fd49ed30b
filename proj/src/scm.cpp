#include "scmse/scm.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

#include "scmse/rng.hpp"

namespace scmse::scm {

void WarpParams::validate() const {
  if (knee_hz <= 0.0 || f_max <= knee_hz)
    throw std::invalid_argument("warp: need 0 < knee_hz < f_max");
}

double warp_frequency(double f_hz, const WarpParams& params) {
  params.validate();
  if (f_hz < 0.0 || f_hz > params.f_max)
    throw std::invalid_argument("warp: frequency " + std::to_string(f_hz) + " outside [0, " +
                                std::to_string(params.f_max) + "]");
  if (f_hz <= params.knee_hz) return f_hz;
  const double a = params.scale();
  return a * (std::log((f_hz - a) / a) + 2.0);
}

double inverse_warp(double fc_hz, const WarpParams& params) {
  params.validate();
  if (fc_hz <= params.knee_hz) return fc_hz;
  const double a = params.scale();
  return a + a * std::exp(fc_hz / a - 2.0);
}

int bin_of_knee(double bin_hz, double knee_hz) {
  if (bin_hz <= 0.0) throw std::invalid_argument("bin_of_knee: bin_hz must be positive");
  int k = 0;
  while (k * bin_hz <= knee_hz) ++k;
  return k;
}

CompressionMatrix build_compression_matrix(int full_bins, int compressed_bins, int low_bins,
                                           double bin_hz, const WarpParams& params) {
  if (!(low_bins < compressed_bins && compressed_bins < full_bins))
    throw std::invalid_argument("compression matrix: need K < F_c < F, got K=" +
                                std::to_string(low_bins) + " F_c=" +
                                std::to_string(compressed_bins) + " F=" +
                                std::to_string(full_bins));

  CompressionMatrix out;
  out.low_bins = low_bins;
  out.weights = MatrixRM::Zero(compressed_bins, full_bins);
  out.learn_mask = MaskRM::Ones(compressed_bins, full_bins);

  for (int k = 0; k < low_bins; ++k) out.weights(k, k) = 1.0;

  // Triangle centers uniform in the warped domain. A grid of n+2 points spans
  // [warp(knee), warp(f_max)]; filter i rises over (p_i, p_{i+1}) and falls
  // over (p_{i+1}, p_{i+2}).
  const int n_filters = compressed_bins - low_bins;
  const double lo = warp_frequency(params.knee_hz, params);
  const double top_hz = std::min(params.f_max, bin_hz * (full_bins - 1));
  const double hi = warp_frequency(top_hz, params);
  std::vector<double> grid(static_cast<size_t>(n_filters) + 2);
  for (size_t i = 0; i < grid.size(); ++i)
    grid[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n_filters + 1);

  for (int i = 0; i < n_filters; ++i) {
    const double left = grid[static_cast<size_t>(i)];
    const double center = grid[static_cast<size_t>(i) + 1];
    const double right = grid[static_cast<size_t>(i) + 2];
    double sum = 0.0;
    for (int j = 0; j < full_bins; ++j) {
      const double f = j * bin_hz;
      if (f > params.f_max) break;
      const double w = warp_frequency(f, params);
      double value = 0.0;
      if (w > left && w < center)
        value = (w - left) / (center - left);
      else if (w >= center && w < right)
        value = (right - w) / (right - center);
      out.weights(low_bins + i, j) = value;
      sum += value;
    }
    if (sum <= 0.0)
      throw std::runtime_error("compression matrix: filter " + std::to_string(i) +
                               " covers no bins");
    out.weights.row(low_bins + i) /= sum;
  }
  return out;
}

void freeze_low_band(CompressionMatrix& matrix, bool high_learn) {
  matrix.learn_mask.setOnes();
  if (high_learn)
    for (int k = 0; k < matrix.low_bins; ++k) matrix.learn_mask.row(k).setZero();
}

MatrixRM apply_mapping(const MatrixRM& weights, const MatrixRM& frames) {
  if (frames.cols() != weights.cols())
    throw std::invalid_argument("apply_mapping: frames have " + std::to_string(frames.cols()) +
                                " bins, matrix expects " + std::to_string(weights.cols()));
  return frames * weights.transpose();
}

MatrixRM init_inverse(int compressed_bins, int full_bins, uint64_t seed) {
  const double s = std::sqrt(6.0 / static_cast<double>(compressed_bins + full_bins));
  Rng rng(seed, "iscm");
  MatrixRM w(full_bins, compressed_bins);
  for (Eigen::Index i = 0; i < w.rows(); ++i)
    for (Eigen::Index j = 0; j < w.cols(); ++j) w(i, j) = rng.uniform(-s, s);
  return w;
}

}  // namespace scmse::scm
