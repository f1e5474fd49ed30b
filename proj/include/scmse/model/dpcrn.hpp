#pragma once

#include <string>
#include <utility>
#include <vector>

#include "scmse/diff/conv.hpp"
#include "scmse/diff/rnn.hpp"
#include "scmse/diff/tape.hpp"
#include "scmse/model/config.hpp"
#include "scmse/model/network.hpp"

namespace scmse::model {

template <typename T>
struct ComplexPair {
  diff::Var<T> re;
  diff::Var<T> im;
};

namespace detail {

/// Conv -> batch norm -> PReLU encoder layer.
template <typename T>
diff::Var<T> encoder_layer(diff::Tape<T>& tape, diff::ParameterStore<T>& store,
                           const ModelConfig& cfg, size_t i, diff::Var<T> x, bool training) {
  const std::string lyr = "dpcrn.enc" + std::to_string(i);
  const auto [sf, st] = cfg.dpcrn_strides[i];
  diff::Var<T> y = diff::conv2d(x, tape.param(store, lyr + ".w"), diff::Var<T>{}, st, sf);
  y = diff::batch_norm(y, tape.param(store, lyr + ".bn.gain"),
                       tape.param(store, lyr + ".bn.bias"),
                       store.entry(lyr + ".bn.rmean").value,
                       store.entry(lyr + ".bn.rvar").value, training);
  return diff::prelu(y, tape.param(store, lyr + ".prelu"));
}

/// Paired recurrences on the encoder output (C, T, F'): a bidirectional pass
/// along frequency within each frame, then a unidirectional pass along time,
/// each projected back to C channels, instance-normalized and added back.
template <typename T>
diff::Var<T> dprnn_module(diff::Tape<T>& tape, diff::ParameterStore<T>& store,
                          const ModelConfig& cfg, diff::Var<T> x, bool training) {
  using diff::Var;
  {
    Var<T> h = diff::bilstm_over_axis(
        x, diff::SeqAxis::Freq, tape.param(store, "dpcrn.rnn.intra.fwd.w"),
        tape.param(store, "dpcrn.rnn.intra.fwd.u"), tape.param(store, "dpcrn.rnn.intra.fwd.b"),
        tape.param(store, "dpcrn.rnn.intra.bwd.w"), tape.param(store, "dpcrn.rnn.intra.bwd.u"),
        tape.param(store, "dpcrn.rnn.intra.bwd.b"));
    h = diff::dense_channels(h, tape.param(store, "dpcrn.rnn.intra.proj.w"));
    h = diff::instance_norm(h, store.entry("dpcrn.rnn.intra.norm.rmean").value,
                            store.entry("dpcrn.rnn.intra.norm.rvar").value, training);
    x = diff::add(x, h);
  }
  {
    Var<T> h = diff::lstm_over_axis(x, diff::SeqAxis::Time,
                                    tape.param(store, "dpcrn.rnn.inter.fwd.w"),
                                    tape.param(store, "dpcrn.rnn.inter.fwd.u"),
                                    tape.param(store, "dpcrn.rnn.inter.fwd.b"));
    h = diff::dense_channels(h, tape.param(store, "dpcrn.rnn.inter.proj.w"));
    h = diff::instance_norm(h, store.entry("dpcrn.rnn.inter.norm.rmean").value,
                            store.entry("dpcrn.rnn.inter.norm.rvar").value, training);
    x = diff::add(x, h);
  }
  return x;
}

/// Mirror of the encoder with channel-concatenated skips; the final layer is
/// linear and single-channel (one compressed plane).
template <typename T>
diff::Var<T> decoder(diff::Tape<T>& tape, diff::ParameterStore<T>& store,
                     const ModelConfig& cfg, const char* side, diff::Var<T> x,
                     const std::vector<diff::Var<T>>& enc_outs,
                     const std::vector<std::pair<Index, Index>>& enc_in_shapes, bool training) {
  for (size_t i = cfg.dpcrn_channels.size(); i-- > 0;) {
    const std::string lyr = std::string("dpcrn.dec_") + side + std::to_string(i);
    const auto [sf, st] = cfg.dpcrn_strides[i];
    diff::Var<T> y = diff::concat_channels(x, enc_outs[i]);
    diff::Var<T> bias = i == 0 ? tape.param(store, lyr + ".b") : diff::Var<T>{};
    y = diff::transconv2d(y, tape.param(store, lyr + ".w"), bias, st, sf,
                          enc_in_shapes[i].first, enc_in_shapes[i].second);
    if (i > 0) {
      y = diff::batch_norm(y, tape.param(store, lyr + ".bn.gain"),
                           tape.param(store, lyr + ".bn.bias"),
                           store.entry(lyr + ".bn.rmean").value,
                           store.entry(lyr + ".bn.rvar").value, training);
      y = diff::prelu(y, tape.param(store, lyr + ".prelu"));
    }
    x = y;
  }
  return x;
}

}  // namespace detail

/// Complex-spectrum refinement: real/imag planes through the shared
/// compression map, stacked as 2 channels, encoder, dual-path recurrences,
/// two skip-connected decoders, shared expansion back to F bins.
template <typename T>
ComplexPair<T> dpcrn_forward(diff::Tape<T>& tape, diff::ParameterStore<T>& store,
                             const ModelConfig& cfg, diff::Var<T> in_re, diff::Var<T> in_im,
                             bool training) {
  using diff::Var;
  if (in_re.rank() != 2 || in_re.dim(1) != cfg.bins() ||
      !in_re.value().same_shape(in_im.value()))
    throw std::invalid_argument("dpcrn: inputs must be matching (T, " +
                                std::to_string(cfg.bins()) + ") planes");

  Var<T> scm_w = tape.param(store, "dpcrn.scm.weight");
  Var<T> cre = matmul_nt(in_re, scm_w);
  Var<T> cim = matmul_nt(in_im, scm_w);
  Var<T> x = diff::stack_planes(cre, cim);  // (2, T, F_c)

  std::vector<Var<T>> enc_outs;
  std::vector<std::pair<Index, Index>> enc_in_shapes;  // (T, F) seen by each layer
  for (size_t i = 0; i < cfg.dpcrn_channels.size(); ++i) {
    enc_in_shapes.emplace_back(x.dim(1), x.dim(2));
    x = detail::encoder_layer(tape, store, cfg, i, x, training);
    enc_outs.push_back(x);
  }

  x = detail::dprnn_module(tape, store, cfg, x, training);

  Var<T> plane_re =
      detail::decoder(tape, store, cfg, "re", x, enc_outs, enc_in_shapes, training);
  Var<T> plane_im =
      detail::decoder(tape, store, cfg, "im", x, enc_outs, enc_in_shapes, training);

  Var<T> iscm_w = tape.param(store, "dpcrn.iscm.weight");
  ComplexPair<T> out;
  out.re = matmul_nt(diff::take_plane(plane_re, 0), iscm_w);
  out.im = matmul_nt(diff::take_plane(plane_im, 0), iscm_w);
  return out;
}

}  // namespace scmse::model
