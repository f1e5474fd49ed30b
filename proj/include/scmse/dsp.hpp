#pragma once

#include <Eigen/Dense>

#include <complex>
#include <string>

#include "scmse/audio.hpp"

namespace scmse::dsp {

/// 25 ms windows, 12.5 ms hop, periodic Hann, 1200-point transform.
struct StftConfig {
  int win_len = 1200;
  int hop = 600;
  int fft_len = 1200;

  int bins() const { return fft_len / 2 + 1; }
  double bin_hz(int sample_rate = audio::kSampleRate) const {
    return static_cast<double>(sample_rate) / fft_len;
  }
  void validate() const;
};

using ComplexMat = Eigen::Matrix<std::complex<double>, Eigen::Dynamic, Eigen::Dynamic,
                                 Eigen::RowMajor>;
using RealMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// T x F complex frames, F = fft_len/2 + 1.
struct ComplexSpectrogram {
  ComplexMat data;
  StftConfig config;

  Eigen::Index frames() const { return data.rows(); }
  Eigen::Index bins() const { return data.cols(); }
};

/// Periodic Hann of length n: w[i] = 0.5 (1 - cos(2 pi i / n)).
Eigen::VectorXd hann_periodic(int n);

/// Frame n covers samples [n*hop, n*hop + win_len); forward transform is
/// unnormalized and only bins 0..fft_len/2 are kept. No centering or padding.
ComplexSpectrogram stft(const audio::AudioClip& clip, const StftConfig& config = {});

/// Weighted overlap-add with the analysis window, normalized per sample by
/// the summed squared window. Interior samples of istft(stft(x)) match x.
audio::AudioClip istft(const ComplexSpectrogram& spec);

constexpr double kMagEps = 1e-12;

struct CompressedSpectrum {
  RealMat real_c;
  RealMat imag_c;
  RealMat mag_c;
  double gamma = 1.0 / 3.0;
};

/// mag_c = |S|^g; real_c = |S|^g * Re(S)/max(|S|,eps); imag_c likewise.
CompressedSpectrum power_compress(const ComplexSpectrogram& spec, double gamma = 1.0 / 3.0);

/// Debug dump: rows of `frame,bin,re,im`.
void dump_spectrogram_csv(const std::string& path, const ComplexSpectrogram& spec);

}  // namespace scmse::dsp
