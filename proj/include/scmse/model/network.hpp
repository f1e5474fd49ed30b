#pragma once

#include <string>
#include <vector>

#include "scmse/diff/store.hpp"
#include "scmse/model/config.hpp"
#include "scmse/rng.hpp"
#include "scmse/scm.hpp"

namespace scmse::model {

enum class Stage { One, Joint };

inline std::string stage_tag(Stage s) { return s == Stage::One ? "1" : "joint"; }
inline Stage stage_from_tag(const std::string& tag) {
  if (tag == "1") return Stage::One;
  if (tag == "joint") return Stage::Joint;
  throw std::invalid_argument("stage: unknown tag '" + tag + "'");
}

namespace detail {

template <typename T>
Tensor<T> glorot(Shape shape, Index fan_in, Index fan_out, Rng& rng) {
  Tensor<T> t(std::move(shape));
  const double s = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (Index i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(rng.uniform(-s, s));
  return t;
}

template <typename T>
void add_dense(diff::ParameterStore<T>& store, const std::string& prefix, Index dout, Index din,
               uint64_t seed, bool bias = true) {
  Rng rng(seed, prefix);
  store.add(prefix + ".w", glorot<T>({dout, din}, din, dout, rng));
  if (bias) store.add(prefix + ".b", Tensor<T>({dout}));
}

template <typename T>
void add_lstm(diff::ParameterStore<T>& store, const std::string& prefix, Index hidden, Index din,
              uint64_t seed) {
  Rng rng(seed, prefix);
  store.add(prefix + ".w", glorot<T>({4 * hidden, din}, din, 4 * hidden, rng));
  store.add(prefix + ".u", glorot<T>({4 * hidden, hidden}, hidden, 4 * hidden, rng));
  store.add(prefix + ".b", Tensor<T>({4 * hidden}));
}

template <typename T>
void add_norm_affine(diff::ParameterStore<T>& store, const std::string& prefix, Index n) {
  store.add(prefix + ".gain", Tensor<T>::full({n}, T(1)));
  store.add(prefix + ".bias", Tensor<T>({n}));
}

template <typename T>
void add_run_stats(diff::ParameterStore<T>& store, const std::string& prefix, Index n) {
  store.add(prefix + ".rmean", Tensor<T>({n}), /*state_only=*/true);
  store.add(prefix + ".rvar", Tensor<T>::full({n}, T(1)), /*state_only=*/true);
}

template <typename T>
void add_scm_pair(diff::ParameterStore<T>& store, const std::string& prefix,
                  const ModelConfig& cfg) {
  scm::CompressionMatrix cm = scm::build_compression_matrix(
      cfg.bins(), cfg.compressed_bins, cfg.low_bins(), cfg.bin_hz(), cfg.warp());
  scm::freeze_low_band(cm, cfg.high_learn);
  Tensor<T> w({cm.rows(), cm.cols()});
  Tensor<uint8_t> mask({cm.rows(), cm.cols()});
  for (Index i = 0; i < cm.rows(); ++i)
    for (Index j = 0; j < cm.cols(); ++j) {
      w.at(i, j) = static_cast<T>(cm.weights(i, j));
      mask.at(i, j) = cm.learn_mask(i, j);
    }
  store.add(prefix + ".scm.weight", std::move(w)).mask = std::move(mask);

  scm::MatrixRM inv = scm::init_inverse(cfg.compressed_bins, cfg.bins(),
                                        cfg.init_seed ^ fnv1a64(prefix + ".iscm"));
  Tensor<T> wi({inv.rows(), inv.cols()});
  for (Index i = 0; i < inv.rows(); ++i)
    for (Index j = 0; j < inv.cols(); ++j) wi.at(i, j) = static_cast<T>(inv(i, j));
  store.add(prefix + ".iscm.weight", std::move(wi));
}

}  // namespace detail

/// Channel plan of the convolutional encoder: layer i maps in_ch(i) ->
/// channels[i]; the two decoders mirror it with skip concatenation.
inline int encoder_in_channels(const ModelConfig& cfg, size_t layer) {
  return layer == 0 ? 2 : cfg.dpcrn_channels[layer - 1];
}
inline int decoder_out_channels(const ModelConfig& cfg, size_t layer) {
  return layer == 0 ? 1 : cfg.dpcrn_channels[layer - 1];
}

template <typename T>
void init_mhan_parameters(diff::ParameterStore<T>& store, const ModelConfig& cfg) {
  const uint64_t seed = cfg.init_seed;
  const Index d = cfg.mhan_d_model;
  detail::add_scm_pair(store, "mhan", cfg);
  detail::add_norm_affine(store, "mhan.in_norm", d);
  for (int b = 0; b < cfg.mhan_blocks; ++b) {
    const std::string blk = "mhan.block" + std::to_string(b);
    detail::add_dense(store, blk + ".attn.q", d, d, seed);
    // key projection is bias-free: a key bias shifts every score in a row
    // equally and the softmax cancels it
    detail::add_dense(store, blk + ".attn.k", d, d, seed, /*bias=*/false);
    detail::add_dense(store, blk + ".attn.v", d, d, seed);
    detail::add_dense(store, blk + ".attn.o", d, d, seed);
    detail::add_norm_affine(store, blk + ".norm1", d);
    detail::add_dense(store, blk + ".ffn.l1", cfg.mhan_ffn_hidden, d, seed);
    detail::add_dense(store, blk + ".ffn.l2", d, cfg.mhan_ffn_hidden, seed);
    detail::add_norm_affine(store, blk + ".norm2", d);
  }
}

template <typename T>
void init_dpcrn_parameters(diff::ParameterStore<T>& store, const ModelConfig& cfg) {
  const uint64_t seed = cfg.init_seed;
  detail::add_scm_pair(store, "dpcrn", cfg);

  // Convolutions feeding a batch norm and the recurrent projections feeding
  // an instance norm are bias-free: the normalization subtracts any
  // per-channel shift, so such a bias would be a dead parameter.
  const size_t layers = cfg.dpcrn_channels.size();
  for (size_t i = 0; i < layers; ++i) {
    const std::string lyr = "dpcrn.enc" + std::to_string(i);
    const Index cin = encoder_in_channels(cfg, i);
    const Index cout = cfg.dpcrn_channels[i];
    const Index kf = cfg.dpcrn_kernels[i].first, kt = cfg.dpcrn_kernels[i].second;
    Rng rng(seed, lyr);
    store.add(lyr + ".w", detail::glorot<T>({cout, cin, kt, kf}, cin * kt * kf, cout * kt * kf,
                                            rng));
    detail::add_norm_affine(store, lyr + ".bn", cout);
    detail::add_run_stats(store, lyr + ".bn", cout);
    store.add(lyr + ".prelu", Tensor<T>::full({cout}, T(0.25)));
  }

  const Index c_top = cfg.dpcrn_channels.back();
  const Index hidden = cfg.dpcrn_hidden;
  detail::add_lstm(store, "dpcrn.rnn.intra.fwd", hidden, c_top, seed);
  detail::add_lstm(store, "dpcrn.rnn.intra.bwd", hidden, c_top, seed);
  detail::add_dense(store, "dpcrn.rnn.intra.proj", c_top, 2 * hidden, seed, /*bias=*/false);
  detail::add_run_stats(store, "dpcrn.rnn.intra.norm", c_top);
  detail::add_lstm(store, "dpcrn.rnn.inter.fwd", hidden, c_top, seed);
  detail::add_dense(store, "dpcrn.rnn.inter.proj", c_top, hidden, seed, /*bias=*/false);
  detail::add_run_stats(store, "dpcrn.rnn.inter.norm", c_top);

  for (const char* side : {"re", "im"}) {
    for (size_t i = layers; i-- > 0;) {
      const std::string lyr = std::string("dpcrn.dec_") + side + std::to_string(i);
      const Index cin = 2 * cfg.dpcrn_channels[i];  // skip concatenation
      const Index cout = decoder_out_channels(cfg, i);
      const Index kf = cfg.dpcrn_kernels[i].first, kt = cfg.dpcrn_kernels[i].second;
      Rng rng(seed, lyr);
      store.add(lyr + ".w", detail::glorot<T>({cout, cin, kt, kf}, cin * kt * kf,
                                              cout * kt * kf, rng));
      if (i > 0) {
        detail::add_norm_affine(store, lyr + ".bn", cout);
        detail::add_run_stats(store, lyr + ".bn", cout);
        store.add(lyr + ".prelu", Tensor<T>::full({cout}, T(0.25)));
      } else {
        store.add(lyr + ".b", Tensor<T>({cout}));  // linear output layer
      }
    }
  }
}

template <typename T>
void init_parameters(diff::ParameterStore<T>& store, const ModelConfig& cfg, Stage stage) {
  cfg.validate();
  init_mhan_parameters(store, cfg);
  if (stage == Stage::Joint) init_dpcrn_parameters(store, cfg);
}

}  // namespace scmse::model
