#include "scmse/dsp.hpp"

#include <unsupported/Eigen/FFT>

#include <cmath>
#include <fstream>
#include <stdexcept>

namespace scmse::dsp {

void StftConfig::validate() const {
  if (fft_len != win_len) throw std::invalid_argument("stft: fft_len must equal win_len");
  if (hop * 2 != win_len) throw std::invalid_argument("stft: hop must be win_len/2");
  if (win_len <= 0) throw std::invalid_argument("stft: win_len must be positive");
}

Eigen::VectorXd hann_periodic(int n) {
  Eigen::VectorXd w(n);
  for (int i = 0; i < n; ++i) w[i] = 0.5 * (1.0 - std::cos(2.0 * M_PI * i / n));
  return w;
}

ComplexSpectrogram stft(const audio::AudioClip& clip, const StftConfig& config) {
  config.validate();
  const int64_t len = clip.length();
  if (len < config.win_len)
    throw std::invalid_argument("stft: clip of " + std::to_string(len) +
                                " samples shorter than one window (" +
                                std::to_string(config.win_len) + ")");

  const int64_t frames = (len - config.win_len) / config.hop + 1;
  const int bins = config.bins();
  const Eigen::VectorXd window = hann_periodic(config.win_len);

  ComplexSpectrogram spec;
  spec.config = config;
  spec.data.resize(frames, bins);

  Eigen::FFT<double> fft;
  std::vector<double> frame(static_cast<size_t>(config.win_len));
  std::vector<std::complex<double>> out;
  for (int64_t n = 0; n < frames; ++n) {
    const double* src = clip.samples.data() + n * config.hop;
    for (int i = 0; i < config.win_len; ++i) frame[static_cast<size_t>(i)] = window[i] * src[i];
    fft.fwd(out, frame);
    for (int k = 0; k < bins; ++k) spec.data(n, k) = out[static_cast<size_t>(k)];
  }
  return spec;
}

audio::AudioClip istft(const ComplexSpectrogram& spec) {
  const StftConfig& cfg = spec.config;
  cfg.validate();
  if (spec.bins() != cfg.bins())
    throw std::invalid_argument("istft: spectrogram has " + std::to_string(spec.bins()) +
                                " bins, config wants " + std::to_string(cfg.bins()));

  const int64_t frames = spec.frames();
  const int64_t len = (frames - 1) * cfg.hop + cfg.win_len;
  const Eigen::VectorXd window = hann_periodic(cfg.win_len);

  std::vector<double> acc(static_cast<size_t>(len), 0.0);
  std::vector<double> den(static_cast<size_t>(len), 0.0);

  Eigen::FFT<double> fft;
  std::vector<std::complex<double>> full(static_cast<size_t>(cfg.fft_len));
  std::vector<double> frame;
  for (int64_t n = 0; n < frames; ++n) {
    for (int k = 0; k < cfg.bins(); ++k) full[static_cast<size_t>(k)] = spec.data(n, k);
    for (int k = cfg.bins(); k < cfg.fft_len; ++k)
      full[static_cast<size_t>(k)] = std::conj(spec.data(n, cfg.fft_len - k));
    fft.inv(frame, full);
    double* dst = acc.data() + n * cfg.hop;
    double* wgt = den.data() + n * cfg.hop;
    for (int i = 0; i < cfg.win_len; ++i) {
      dst[i] += window[i] * frame[static_cast<size_t>(i)];
      wgt[i] += window[i] * window[i];
    }
  }

  audio::AudioClip clip;
  clip.samples.resize(static_cast<size_t>(len));
  for (int64_t i = 0; i < len; ++i) {
    double d = den[static_cast<size_t>(i)];
    clip.samples[static_cast<size_t>(i)] = d > 0.0 ? acc[static_cast<size_t>(i)] / d : 0.0;
  }
  return clip;
}

CompressedSpectrum power_compress(const ComplexSpectrogram& spec, double gamma) {
  if (gamma <= 0.0 || gamma > 1.0)
    throw std::invalid_argument("power_compress: gamma " + std::to_string(gamma) +
                                " outside (0, 1]");
  CompressedSpectrum out;
  out.gamma = gamma;
  const Eigen::Index rows = spec.frames(), cols = spec.bins();
  out.real_c.resize(rows, cols);
  out.imag_c.resize(rows, cols);
  out.mag_c.resize(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) {
      const std::complex<double> s = spec.data(i, j);
      const double mag = std::abs(s);
      const double mg = std::pow(mag, gamma);
      const double guarded = std::max(mag, kMagEps);
      out.mag_c(i, j) = mg;
      out.real_c(i, j) = mg * (s.real() / guarded);
      out.imag_c(i, j) = mg * (s.imag() / guarded);
    }
  }
  return out;
}

void dump_spectrogram_csv(const std::string& path, const ComplexSpectrogram& spec) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("dump: cannot write " + path);
  out << "frame,bin,re,im\n";
  out.precision(17);
  for (Eigen::Index n = 0; n < spec.frames(); ++n)
    for (Eigen::Index k = 0; k < spec.bins(); ++k)
      out << n << "," << k << "," << spec.data(n, k).real() << "," << spec.data(n, k).imag()
          << "\n";
}

}  // namespace scmse::dsp
