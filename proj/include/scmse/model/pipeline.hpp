#pragma once

#include <cmath>
#include <string>

#include "scmse/audio.hpp"
#include "scmse/diff/checkpoint.hpp"
#include "scmse/dsp.hpp"
#include "scmse/model/dpcrn.hpp"
#include "scmse/model/mhan.hpp"
#include "scmse/tensor.hpp"

namespace scmse::model {

template <typename T>
Tensor<T> mag_tensor(const dsp::ComplexSpectrogram& spec) {
  Tensor<T> out({spec.frames(), spec.bins()});
  for (Index i = 0; i < spec.frames(); ++i)
    for (Index j = 0; j < spec.bins(); ++j)
      out.at(i, j) = static_cast<T>(std::abs(spec.data(i, j)));
  return out;
}

template <typename T>
Tensor<T> real_tensor(const dsp::ComplexSpectrogram& spec) {
  Tensor<T> out({spec.frames(), spec.bins()});
  for (Index i = 0; i < spec.frames(); ++i)
    for (Index j = 0; j < spec.bins(); ++j) out.at(i, j) = static_cast<T>(spec.data(i, j).real());
  return out;
}

template <typename T>
Tensor<T> imag_tensor(const dsp::ComplexSpectrogram& spec) {
  Tensor<T> out({spec.frames(), spec.bins()});
  for (Index i = 0; i < spec.frames(); ++i)
    for (Index j = 0; j < spec.bins(); ++j) out.at(i, j) = static_cast<T>(spec.data(i, j).imag());
  return out;
}

template <typename T>
dsp::ComplexSpectrogram spec_from_planes(const Tensor<T>& re, const Tensor<T>& im,
                                         const dsp::StftConfig& config) {
  dsp::ComplexSpectrogram spec;
  spec.config = config;
  spec.data.resize(re.dim(0), re.dim(1));
  for (Index i = 0; i < re.dim(0); ++i)
    for (Index j = 0; j < re.dim(1); ++j)
      spec.data(i, j) = {static_cast<double>(re.at(i, j)), static_cast<double>(im.at(i, j))};
  return spec;
}

/// Elementwise real mask on a complex spectrogram; the noisy phase is
/// preserved wherever the input is nonzero.
inline dsp::ComplexSpectrogram apply_smm(const dsp::RealMat& mask,
                                         const dsp::ComplexSpectrogram& x) {
  if (mask.rows() != x.data.rows() || mask.cols() != x.data.cols())
    throw std::invalid_argument("apply_smm: mask " + std::to_string(mask.rows()) + "x" +
                                std::to_string(mask.cols()) + " vs spectrogram " +
                                std::to_string(x.data.rows()) + "x" +
                                std::to_string(x.data.cols()));
  dsp::ComplexSpectrogram out;
  out.config = x.config;
  out.data = x.data.cwiseProduct(mask.cast<std::complex<double>>());
  return out;
}

/// Full inference chain on one clip: stft, mask estimation, masking,
/// refinement, istft. The tail is zero-padded to whole frames before
/// analysis and trimmed back to the input length afterwards.
template <typename T>
audio::AudioClip enhance_clip(diff::ParameterStore<T>& store, const ModelConfig& cfg,
                              const audio::AudioClip& noisy) {
  audio::validate_clip(noisy);
  const int64_t len = noisy.length();
  const int64_t win = cfg.stft.win_len, hop = cfg.stft.hop;
  const int64_t frames = (len - win + hop - 1) / hop + 1;
  const int64_t padded = (frames - 1) * hop + win;

  audio::AudioClip work = noisy;
  work.samples.resize(static_cast<size_t>(padded), 0.0);
  const dsp::ComplexSpectrogram x = dsp::stft(work, cfg.stft);

  diff::Tape<T> tape;
  diff::Var<T> mask = mhan_forward(tape, store, cfg, tape.input(mag_tensor<T>(x), false));

  dsp::RealMat mask_mat(x.frames(), x.bins());
  for (Index i = 0; i < x.frames(); ++i)
    for (Index j = 0; j < x.bins(); ++j)
      mask_mat(i, j) = static_cast<double>(mask.value().at(i, j));
  const dsp::ComplexSpectrogram pre = apply_smm(mask_mat, x);

  ComplexPair<T> refined =
      dpcrn_forward(tape, store, cfg, tape.input(real_tensor<T>(pre), false),
                    tape.input(imag_tensor<T>(pre), false), /*training=*/false);

  audio::AudioClip out =
      dsp::istft(spec_from_planes(refined.re.value(), refined.im.value(), cfg.stft));
  out.samples.resize(static_cast<size_t>(len));
  return out;
}

}  // namespace scmse::model
