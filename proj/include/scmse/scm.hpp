#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <string>

namespace scmse::scm {

/// Piecewise warp: identity below the knee, logarithmic above. The log scale
/// equals half the knee so value and slope are continuous at the knee.
struct WarpParams {
  double knee_hz = 5000.0;
  double f_max = 24000.0;

  double scale() const { return knee_hz / 2.0; }
  void validate() const;
};

double warp_frequency(double f_hz, const WarpParams& params = {});

/// Inverse of the upper branch; identity below the knee.
double inverse_warp(double fc_hz, const WarpParams& params = {});

/// Number of bins whose center frequency is <= knee_hz (ties uncompressed).
int bin_of_knee(double bin_hz, double knee_hz = 5000.0);

using MatrixRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MaskRM = Eigen::Matrix<uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// F_c x F linear map: identity on the first K bins, triangular filters
/// (uniform centers in the warped domain, rows normalized to sum 1) above.
struct CompressionMatrix {
  MatrixRM weights;    // F_c x F
  MaskRM learn_mask;   // true where trainable
  int low_bins = 0;    // K

  Eigen::Index rows() const { return weights.rows(); }
  Eigen::Index cols() const { return weights.cols(); }
};

CompressionMatrix build_compression_matrix(int full_bins, int compressed_bins, int low_bins,
                                           double bin_hz, const WarpParams& params = {});

/// high_learn=true freezes the identity rows; otherwise everything learns.
void freeze_low_band(CompressionMatrix& matrix, bool high_learn);

/// Per-frame matrix product (no bias): frames (T x F) -> T x F_c.
MatrixRM apply_mapping(const MatrixRM& weights, const MatrixRM& frames);

/// F x F_c expansion back to full resolution, uniform init in
/// [-s, s] with s = sqrt(6 / (F_c + F)), deterministic per seed.
MatrixRM init_inverse(int compressed_bins, int full_bins, uint64_t seed);

}  // namespace scmse::scm
