#pragma once

#include "scmse/diff/tape.hpp"
#include "scmse/dsp.hpp"
#include "scmse/tensor.hpp"

namespace scmse::model {

struct LossBreakdown {
  double l_mag_mha = 0.0;
  double l_mag_dpcrn = 0.0;
  double l_ri_dpcrn = 0.0;
  double l1 = 0.0;
  double l2 = 0.0;
};

/// Squared Frobenius norm of the compressed-magnitude difference, summed
/// over all T-F points (no averaging).
inline double loss_mag(const dsp::ComplexSpectrogram& est, const dsp::ComplexSpectrogram& ref,
                       double gamma = 1.0 / 3.0) {
  if (est.data.rows() != ref.data.rows() || est.data.cols() != ref.data.cols())
    throw std::invalid_argument("loss_mag: shape mismatch");
  double acc = 0.0;
  for (Eigen::Index i = 0; i < est.data.rows(); ++i)
    for (Eigen::Index j = 0; j < est.data.cols(); ++j) {
      const double d =
          std::pow(std::abs(est.data(i, j)), gamma) - std::pow(std::abs(ref.data(i, j)), gamma);
      acc += d * d;
    }
  return acc;
}

/// Sum of squared compressed real-plane and imaginary-plane differences.
inline double loss_ri(const dsp::ComplexSpectrogram& est, const dsp::ComplexSpectrogram& ref,
                      double gamma = 1.0 / 3.0) {
  if (est.data.rows() != ref.data.rows() || est.data.cols() != ref.data.cols())
    throw std::invalid_argument("loss_ri: shape mismatch");
  const dsp::CompressedSpectrum ce = dsp::power_compress(est, gamma);
  const dsp::CompressedSpectrum cr = dsp::power_compress(ref, gamma);
  return (ce.real_c - cr.real_c).squaredNorm() + (ce.imag_c - cr.imag_c).squaredNorm();
}

inline double loss_stage1(const dsp::ComplexSpectrogram& est_mha,
                          const dsp::ComplexSpectrogram& ref, double gamma = 1.0 / 3.0) {
  return loss_mag(est_mha, ref, gamma);
}

inline LossBreakdown loss_stage2(const dsp::ComplexSpectrogram& est_mha,
                                 const dsp::ComplexSpectrogram& est_dpcrn,
                                 const dsp::ComplexSpectrogram& ref, double gamma = 1.0 / 3.0) {
  LossBreakdown b;
  b.l_mag_mha = loss_mag(est_mha, ref, gamma);
  b.l_mag_dpcrn = loss_mag(est_dpcrn, ref, gamma);
  b.l_ri_dpcrn = loss_ri(est_dpcrn, ref, gamma);
  b.l1 = b.l_mag_mha;
  b.l2 = b.l_mag_mha + b.l_mag_dpcrn + b.l_ri_dpcrn;
  return b;
}

// ---------------------------------------------------------------------------
// Graph-side losses: the reference spectra carry no gradient, so their
// compressed forms are precomputed and enter as constants.

template <typename T>
diff::Var<T> loss_mag_graph(diff::Tape<T>& tape, diff::Var<T> est_re, diff::Var<T> est_im,
                            const Tensor<T>& ref_cmag, T gamma) {
  diff::Var<T> cmag = diff::pcomp_mag(est_re, est_im, gamma);
  diff::Var<T> d = diff::sub(cmag, tape.constant(ref_cmag));
  return diff::sum_all(diff::mul(d, d));
}

template <typename T>
diff::Var<T> loss_ri_graph(diff::Tape<T>& tape, diff::Var<T> est_re, diff::Var<T> est_im,
                           const Tensor<T>& ref_creal, const Tensor<T>& ref_cimag, T gamma) {
  diff::Var<T> dr = diff::sub(diff::pcomp_real(est_re, est_im, gamma), tape.constant(ref_creal));
  diff::Var<T> di = diff::sub(diff::pcomp_imag(est_re, est_im, gamma), tape.constant(ref_cimag));
  return diff::add(diff::sum_all(diff::mul(dr, dr)), diff::sum_all(diff::mul(di, di)));
}

}  // namespace scmse::model
