#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "scmse/audio.hpp"
#include "scmse/diff/checkpoint.hpp"
#include "scmse/diff/gradcheck.hpp"
#include "scmse/model/losses.hpp"
#include "scmse/model/pipeline.hpp"
#include "scmse/rng.hpp"

namespace scmse::model {

struct TrainOptions {
  std::string data_dir;
  Stage stage = Stage::One;
  int64_t steps = 0;
  uint64_t seed = 1;
  std::string init_ckpt;  // stage-1 checkpoint, required for joint training
  std::string out_ckpt;
  std::string log_csv;  // defaults to out_ckpt + ".log.csv"
  bool quiet = false;
};

struct TrainSummary {
  double initial_total = 0.0;
  double final_total = 0.0;
  int64_t steps = 0;
  int64_t parameters = 0;
  int64_t trainable = 0;
};

namespace detail {

/// One training clip, fully prepared: noisy-spectrum tensors for the model
/// input and the compressed clean-target planes for the losses.
template <typename T>
struct PreparedClip {
  Tensor<T> x_mag, x_re, x_im;
  Tensor<T> ref_cmag, ref_creal, ref_cimag;
  Index frames = 0;
};

template <typename T>
Tensor<T> crop_rows(const Tensor<T>& t, Index row0, Index rows) {
  Tensor<T> out({rows, t.dim(1)});
  out.as_mat(rows, t.dim(1)) = t.as_mat(t.dim(0), t.dim(1)).middleRows(row0, rows);
  return out;
}

template <typename T>
Tensor<T> from_real_mat(const dsp::RealMat& m) {
  Tensor<T> out({m.rows(), m.cols()});
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j) out.at(i, j) = static_cast<T>(m(i, j));
  return out;
}

template <typename T>
std::vector<PreparedClip<T>> prepare_dataset(const ModelConfig& cfg,
                                             const std::string& data_dir) {
  namespace fs = std::filesystem;
  const auto recipes = audio::read_recipes((fs::path(data_dir) / "recipes.csv").string());
  if (recipes.empty()) throw std::runtime_error("train: no recipes in " + data_dir);

  std::vector<PreparedClip<T>> clips;
  clips.reserve(recipes.size());
  for (const auto& r : recipes) {
    const audio::AudioClip clean =
        audio::read_wav((fs::path(data_dir) / "clean" / (r.clean_id + ".wav")).string());
    const audio::AudioClip noise =
        audio::read_wav((fs::path(data_dir) / "noise" / (r.noise_id + ".wav")).string());
    const audio::Mixture mix = audio::mix_at_snr(clean, noise, r.snr_db, r.seed);

    audio::AudioClip target;
    target.samples.resize(mix.noisy.samples.size());
    for (size_t i = 0; i < target.samples.size(); ++i)
      target.samples[i] = mix.noisy.samples[i] - mix.scaled_noise.samples[i];

    const dsp::ComplexSpectrogram x = dsp::stft(mix.noisy, cfg.stft);
    const dsp::ComplexSpectrogram s = dsp::stft(target, cfg.stft);
    const dsp::CompressedSpectrum cs = dsp::power_compress(s, cfg.gamma);

    PreparedClip<T> p;
    p.x_mag = mag_tensor<T>(x);
    p.x_re = real_tensor<T>(x);
    p.x_im = imag_tensor<T>(x);
    p.ref_cmag = from_real_mat<T>(cs.mag_c);
    p.ref_creal = from_real_mat<T>(cs.real_c);
    p.ref_cimag = from_real_mat<T>(cs.imag_c);
    p.frames = x.frames();
    clips.push_back(std::move(p));
  }
  return clips;
}

}  // namespace detail

/// Deterministic two-stage training: per step, forward + loss + backward +
/// warmup Adam update over a fixed-order batch schedule. Stage 1 fits the
/// mask network alone; joint training restores it from `init_ckpt` and
/// optimizes both networks. Writes a CSV loss log and the final checkpoint.
template <typename T>
TrainSummary train(const ModelConfig& cfg, const TrainOptions& opt) {
  cfg.validate();
  diff::ParameterStore<T> store;
  init_parameters(store, cfg, opt.stage);

  if (opt.stage == Stage::Joint) {
    if (opt.init_ckpt.empty())
      throw std::runtime_error("train: joint training requires a stage-1 checkpoint");
    diff::CheckpointMeta init_meta;
    diff::load_checkpoint_into<T>(opt.init_ckpt, store, "mhan.", &init_meta);
    if (init_meta.stage != stage_tag(Stage::One))
      throw std::runtime_error("train: init checkpoint stage: " + init_meta.stage +
                               ", need 1");
  }

  TrainSummary summary;
  summary.parameters = store.count_parameters();
  summary.trainable = store.count_trainable();
  if (!opt.quiet)
    std::cout << "trainable parameters: " << summary.trainable << " (total " << summary.parameters
              << ")\n";

  auto clips = detail::prepare_dataset<T>(cfg, opt.data_dir);

  const std::string log_path = opt.log_csv.empty() ? opt.out_ckpt + ".log.csv" : opt.log_csv;
  std::ofstream log(log_path);
  if (!log) throw std::runtime_error("train: cannot write log " + log_path);
  log << "step,lr,l_mag_mha,l_mag_dpcrn,l_ri_dpcrn,total\n";
  log.precision(10);

  Rng order_rng(opt.seed, "order");
  Rng crop_rng(opt.seed, "crop");
  std::vector<size_t> order(clips.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  size_t cursor = order.size();  // forces a shuffle on first use

  diff::AdamState adam;
  const T gamma = static_cast<T>(cfg.gamma);

  for (int64_t step = 1; step <= opt.steps; ++step) {
    store.zero_grads();
    diff::Tape<T> tape;
    std::vector<diff::Var<T>> totals;
    double sum_mha = 0.0, sum_mag_d = 0.0, sum_ri_d = 0.0;

    for (int item = 0; item < cfg.batch_size; ++item) {
      if (cursor >= order.size()) {
        for (size_t i = order.size(); i > 1; --i)
          std::swap(order[i - 1], order[order_rng.below(i)]);
        cursor = 0;
      }
      const detail::PreparedClip<T>& clip = clips[order[cursor++]];
      const Index crop = std::min<Index>(cfg.frames_per_item, clip.frames);
      const Index at = static_cast<Index>(crop_rng.below(clip.frames - crop + 1));

      diff::Var<T> x_mag = tape.constant(detail::crop_rows(clip.x_mag, at, crop));
      diff::Var<T> mask = mhan_forward(tape, store, cfg, x_mag);
      diff::Var<T> est_re = mul(mask, tape.constant(detail::crop_rows(clip.x_re, at, crop)));
      diff::Var<T> est_im = mul(mask, tape.constant(detail::crop_rows(clip.x_im, at, crop)));

      diff::Var<T> l_mha = loss_mag_graph(tape, est_re, est_im,
                                          detail::crop_rows(clip.ref_cmag, at, crop), gamma);
      sum_mha += static_cast<double>(l_mha.scalar());

      if (opt.stage == Stage::One) {
        totals.push_back(l_mha);
      } else {
        ComplexPair<T> refined =
            dpcrn_forward(tape, store, cfg, est_re, est_im, /*training=*/true);
        diff::Var<T> l_mag_d = loss_mag_graph(tape, refined.re, refined.im,
                                              detail::crop_rows(clip.ref_cmag, at, crop), gamma);
        diff::Var<T> l_ri_d =
            loss_ri_graph(tape, refined.re, refined.im,
                          detail::crop_rows(clip.ref_creal, at, crop),
                          detail::crop_rows(clip.ref_cimag, at, crop), gamma);
        sum_mag_d += static_cast<double>(l_mag_d.scalar());
        sum_ri_d += static_cast<double>(l_ri_d.scalar());
        totals.push_back(add(l_mha, add(l_mag_d, l_ri_d)));
      }
    }

    diff::Var<T> batch_loss = totals[0];
    for (size_t i = 1; i < totals.size(); ++i) batch_loss = add(batch_loss, totals[i]);
    batch_loss = scale(batch_loss, static_cast<T>(1.0 / cfg.batch_size));

    const double total = static_cast<double>(batch_loss.scalar());
    if (!std::isfinite(total))
      throw std::runtime_error("train: NaN loss at step " + std::to_string(step));

    tape.backward(batch_loss);
    const double lr = diff::warmup_lr(step, cfg.warmup_c, cfg.warmup_steps);
    diff::adam_step(store, adam, lr);

    const double n = cfg.batch_size;
    log << step << "," << lr << "," << sum_mha / n << "," << sum_mag_d / n << ","
        << sum_ri_d / n << "," << total << "\n";
    if (step == 1) summary.initial_total = total;
    summary.final_total = total;
    ++summary.steps;
    if (!opt.quiet && (step == 1 || step % 200 == 0 || step == opt.steps))
      std::cout << "step " << step << "  lr " << lr << "  loss " << total << "\n";
  }

  diff::CheckpointMeta meta;
  meta.stage = stage_tag(opt.stage);
  meta.step = opt.steps;
  meta.seed = opt.seed;
  meta.config_hash = cfg.hash();
  meta.config_text = cfg.canonical();
  diff::save_checkpoint(opt.out_ckpt, store, adam, meta);
  return summary;
}

}  // namespace scmse::model
