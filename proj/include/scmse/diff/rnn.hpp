#pragma once

#include <memory>

#include "scmse/diff/tape.hpp"

namespace scmse::diff {

/// One LSTM step over a batch of S sequences. Inputs x (S, d_in), previous
/// h and c (S, H); weights w (4H, d_in), u (4H, H), bias (4H) with gate
/// order [input, forget, candidate, output]. Returns h' and c' stacked as
/// a (2, S, H) tensor.
template <typename T>
Var<T> lstm_cell(Var<T> x, Var<T> h, Var<T> c, Var<T> w, Var<T> u, Var<T> b) {
  detail::require<T>(x.rank() == 2 && h.rank() == 2 && c.rank() == 2,
                     "lstm_cell: x, h, c must be rank 2");
  const Index s = x.dim(0), din = x.dim(1), hidden = h.dim(1);
  detail::require<T>(h.dim(0) == s && c.dim(0) == s && c.dim(1) == hidden,
                     "lstm_cell: state batch/hidden mismatch");
  detail::require<T>(w.rank() == 2 && w.dim(0) == 4 * hidden && w.dim(1) == din,
                     "lstm_cell: w must be (4H, d_in)");
  detail::require<T>(u.rank() == 2 && u.dim(0) == 4 * hidden && u.dim(1) == hidden,
                     "lstm_cell: u must be (4H, H)");
  detail::require<T>(b.rank() == 1 && b.dim(0) == 4 * hidden, "lstm_cell: bias must be (4H)");

  auto gates = std::make_shared<Tensor<T>>(Shape{s, 4 * hidden});
  auto tanh_c = std::make_shared<Tensor<T>>(Shape{s, hidden});
  {
    auto pre = gates->mat();
    pre.noalias() = x.value().mat() * w.value().mat().transpose();
    pre.noalias() += h.value().mat() * u.value().mat().transpose();
    pre.rowwise() += b.value().as_mat(1, 4 * hidden).row(0);
  }
  Tensor<T> out({2, s, hidden});
  for (Index r = 0; r < s; ++r) {
    for (Index j = 0; j < hidden; ++j) {
      T& gi = gates->at(r, j);
      T& gf = gates->at(r, hidden + j);
      T& gg = gates->at(r, 2 * hidden + j);
      T& go = gates->at(r, 3 * hidden + j);
      gi = T(1) / (T(1) + std::exp(-gi));
      gf = T(1) / (T(1) + std::exp(-gf));
      gg = std::tanh(gg);
      go = T(1) / (T(1) + std::exp(-go));
      const T cv = gf * c.value().at(r, j) + gi * gg;
      const T th = std::tanh(cv);
      tanh_c->at(r, j) = th;
      out.at(0, r, j) = go * th;  // h'
      out.at(1, r, j) = cv;       // c'
    }
  }

  int ix = x.id, ih = h.id, ic = c.id, iw = w.id, iu = u.id, ib = b.id;
  return x.tape->make_node(
      std::move(out), detail::any_grad<T>({x, h, c, w, u, b}),
      [ix, ih, ic, iw, iu, ib, s, hidden, gates, tanh_c](Tape<T>& t, int self) {
        const Tensor<T>& g = t.grad(self);
        Tensor<T> dpre({s, 4 * hidden});
        for (Index r = 0; r < s; ++r) {
          for (Index j = 0; j < hidden; ++j) {
            const T gi = gates->at(r, j);
            const T gf = gates->at(r, hidden + j);
            const T gg = gates->at(r, 2 * hidden + j);
            const T go = gates->at(r, 3 * hidden + j);
            const T th = tanh_c->at(r, j);
            const T gh = g.at(0, r, j);
            const T gc = g.at(1, r, j) + gh * go * (T(1) - th * th);
            if (ic >= 0 && t.wants_grad(ic)) t.grad(ic).at(r, j) += gc * gf;
            dpre.at(r, j) = gc * gg * gi * (T(1) - gi);
            dpre.at(r, hidden + j) = gc * t.value(ic).at(r, j) * gf * (T(1) - gf);
            dpre.at(r, 2 * hidden + j) = gc * gi * (T(1) - gg * gg);
            dpre.at(r, 3 * hidden + j) = gh * th * go * (T(1) - go);
          }
        }
        if (t.wants_grad(ix)) t.grad(ix).mat().noalias() += dpre.mat() * t.value(iw).mat();
        if (t.wants_grad(ih)) t.grad(ih).mat().noalias() += dpre.mat() * t.value(iu).mat();
        if (t.wants_grad(iw))
          t.grad(iw).mat().noalias() += dpre.mat().transpose() * t.value(ix).mat();
        if (t.wants_grad(iu))
          t.grad(iu).mat().noalias() += dpre.mat().transpose() * t.value(ih).mat();
        if (t.wants_grad(ib))
          t.grad(ib).as_mat(1, 4 * hidden).row(0) += dpre.mat().colwise().sum();
      });
}

enum class SeqAxis { Time, Freq };

/// Runs one LSTM direction along the chosen axis of a (C, T, F) tensor; the
/// other axis indexes independent sequences, processed together so each step
/// is a pair of GEMMs. Output is (H, T, F). Initial state is zero; `reverse`
/// consumes the sequence back to front.
template <typename T>
Var<T> lstm_over_axis(Var<T> x, SeqAxis axis, Var<T> w, Var<T> u, Var<T> b,
                      bool reverse = false) {
  detail::require<T>(x.rank() == 3, "lstm_over_axis: input must be (C, T, F)");
  const Index channels = x.dim(0), tlen = x.dim(1), flen = x.dim(2);
  const Index seqs = axis == SeqAxis::Time ? flen : tlen;   // S
  const Index steps = axis == SeqAxis::Time ? tlen : flen;  // L
  detail::require<T>(w.rank() == 2 && w.dim(1) == channels,
                     "lstm_over_axis: w columns " + std::to_string(w.dim(1)) +
                         " != input channels " + std::to_string(channels));
  const Index hidden = w.dim(0) / 4;
  detail::require<T>(w.dim(0) == 4 * hidden && u.rank() == 2 && u.dim(0) == 4 * hidden &&
                         u.dim(1) == hidden && b.rank() == 1 && b.dim(0) == 4 * hidden,
                     "lstm_over_axis: weight shapes inconsistent with hidden size");

  struct Ctx {
    Tensor<T> xs;      // (L, S, C) gathered input
    Tensor<T> gates;   // (L, S, 4H) post-activation
    Tensor<T> cells;   // (L, S, H)
    Tensor<T> tanh_c;  // (L, S, H)
  };
  auto ctx = std::make_shared<Ctx>();
  ctx->xs = Tensor<T>({steps, seqs, channels});
  ctx->gates = Tensor<T>({steps, seqs, 4 * hidden});
  ctx->cells = Tensor<T>({steps, seqs, hidden});
  ctx->tanh_c = Tensor<T>({steps, seqs, hidden});

  const Tensor<T>& xv = x.value();
  for (Index l = 0; l < steps; ++l)
    for (Index r = 0; r < seqs; ++r)
      for (Index ch = 0; ch < channels; ++ch)
        ctx->xs.at(l, r, ch) =
            axis == SeqAxis::Time ? xv.at(ch, l, r) : xv.at(ch, r, l);

  Tensor<T> out({hidden, tlen, flen});
  Tensor<T> h({seqs, hidden}), c({seqs, hidden});
  for (Index step = 0; step < steps; ++step) {
    const Index l = reverse ? steps - 1 - step : step;
    auto xl = ctx->xs.as_mat(steps * seqs, channels).middleRows(l * seqs, seqs);
    auto pre = ctx->gates.as_mat(steps * seqs, 4 * hidden).middleRows(l * seqs, seqs);
    pre.noalias() = xl * w.value().mat().transpose();
    pre.noalias() += h.mat() * u.value().mat().transpose();
    pre.rowwise() += b.value().as_mat(1, 4 * hidden).row(0);
    for (Index r = 0; r < seqs; ++r) {
      for (Index j = 0; j < hidden; ++j) {
        T& gi = ctx->gates.at(l, r, j);
        T& gf = ctx->gates.at(l, r, hidden + j);
        T& gg = ctx->gates.at(l, r, 2 * hidden + j);
        T& go = ctx->gates.at(l, r, 3 * hidden + j);
        gi = T(1) / (T(1) + std::exp(-gi));
        gf = T(1) / (T(1) + std::exp(-gf));
        gg = std::tanh(gg);
        go = T(1) / (T(1) + std::exp(-go));
        const T cv = gf * c.at(r, j) + gi * gg;
        const T th = std::tanh(cv);
        ctx->cells.at(l, r, j) = cv;
        ctx->tanh_c.at(l, r, j) = th;
        c.at(r, j) = cv;
        const T hv = go * th;
        h.at(r, j) = hv;
        if (axis == SeqAxis::Time)
          out.at(j, l, r) = hv;
        else
          out.at(j, r, l) = hv;
      }
    }
  }

  int ix = x.id, iw = w.id, iu = u.id, ib = b.id;
  return x.tape->make_node(
      std::move(out), detail::any_grad<T>({x, w, u, b}),
      [ix, iw, iu, ib, axis, reverse, channels, tlen, flen, seqs, steps, hidden,
       ctx](Tape<T>& t, int self) {
        const Tensor<T>& gout = t.grad(self);
        const bool wx = t.wants_grad(ix), wwt = t.wants_grad(iw), wu = t.wants_grad(iu),
                   wb = t.wants_grad(ib);
        Tensor<T> gh({seqs, hidden}), gc({seqs, hidden}), dpre({seqs, 4 * hidden});
        Tensor<T> gxs;
        if (wx) gxs = Tensor<T>({steps, seqs, channels});
        for (Index step = steps; step-- > 0;) {
          const Index l = reverse ? steps - 1 - step : step;
          const Index l_prev = reverse ? l + 1 : l - 1;  // previous step in scan order
          const bool has_prev = step > 0;
          for (Index r = 0; r < seqs; ++r) {
            for (Index j = 0; j < hidden; ++j) {
              const T go_out = axis == SeqAxis::Time ? gout.at(j, l, r) : gout.at(j, r, l);
              const T gi = ctx->gates.at(l, r, j);
              const T gf = ctx->gates.at(l, r, hidden + j);
              const T gg = ctx->gates.at(l, r, 2 * hidden + j);
              const T go = ctx->gates.at(l, r, 3 * hidden + j);
              const T th = ctx->tanh_c.at(l, r, j);
              const T ghv = gh.at(r, j) + go_out;
              const T gcv = gc.at(r, j) + ghv * go * (T(1) - th * th);
              const T c_prev = has_prev ? ctx->cells.at(l_prev, r, j) : T(0);
              dpre.at(r, j) = gcv * gg * gi * (T(1) - gi);
              dpre.at(r, hidden + j) = gcv * c_prev * gf * (T(1) - gf);
              dpre.at(r, 2 * hidden + j) = gcv * gi * (T(1) - gg * gg);
              dpre.at(r, 3 * hidden + j) = ghv * th * go * (T(1) - go);
              gc.at(r, j) = gcv * gf;
            }
          }
          auto xl = ctx->xs.as_mat(steps * seqs, channels).middleRows(l * seqs, seqs);
          if (wx)
            gxs.as_mat(steps * seqs, channels).middleRows(l * seqs, seqs).noalias() =
                dpre.mat() * t.value(iw).mat();
          if (wwt) t.grad(iw).mat().noalias() += dpre.mat().transpose() * xl;
          if (wu && has_prev) {
            // h_{prev} is the output written at the previous scan position
            Tensor<T> h_prev({seqs, hidden});
            const Tensor<T>& yv = t.value(self);
            for (Index r = 0; r < seqs; ++r)
              for (Index j = 0; j < hidden; ++j)
                h_prev.at(r, j) =
                    axis == SeqAxis::Time ? yv.at(j, l_prev, r) : yv.at(j, r, l_prev);
            t.grad(iu).mat().noalias() += dpre.mat().transpose() * h_prev.mat();
          }
          if (wb) t.grad(ib).as_mat(1, 4 * hidden).row(0) += dpre.mat().colwise().sum();
          gh.mat().noalias() = dpre.mat() * t.value(iu).mat();
        }
        if (wx) {
          Tensor<T>& gx = t.grad(ix);
          for (Index l = 0; l < steps; ++l)
            for (Index r = 0; r < seqs; ++r)
              for (Index ch = 0; ch < channels; ++ch) {
                if (axis == SeqAxis::Time)
                  gx.at(ch, l, r) += gxs.at(l, r, ch);
                else
                  gx.at(ch, r, l) += gxs.at(l, r, ch);
              }
        }
      });
}

/// Bidirectional variant: forward and reverse passes concatenated along the
/// channel axis -> (2H, T, F).
template <typename T>
Var<T> bilstm_over_axis(Var<T> x, SeqAxis axis, Var<T> wf, Var<T> uf, Var<T> bf, Var<T> wb,
                        Var<T> ub, Var<T> bb) {
  Var<T> fwd = lstm_over_axis(x, axis, wf, uf, bf, false);
  Var<T> bwd = lstm_over_axis(x, axis, wb, ub, bb, true);
  return concat_channels(fwd, bwd);
}

}  // namespace scmse::diff
