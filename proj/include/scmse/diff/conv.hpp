#pragma once

#include "scmse/diff/tape.hpp"

namespace scmse::diff {

/// Causal padding in time (kernel_t - 1 frames on the past side) and
/// symmetric zero padding in frequency; even frequency kernels place the
/// extra zero on the high side.
inline Index conv_pad_low(int kernel_f) { return (kernel_f - 1) / 2; }

inline Index conv_out_time(Index t, int stride_t) { return (t - 1) / stride_t + 1; }
inline Index conv_out_freq(Index f, int kernel_f, int stride_f) {
  const Index pad = kernel_f - 1;  // low + high
  return (f + pad - kernel_f) / stride_f + 1;
}

/// x (c_in, T, F) * w (c_out, c_in, k_t, k_f) -> (c_out, T', F'); optional
/// bias (c_out). Output frame t' depends only on input frames <= t'*stride_t.
template <typename T>
Var<T> conv2d(Var<T> x, Var<T> w, Var<T> b, int stride_t, int stride_f) {
  detail::require<T>(x.rank() == 3, "conv2d: input must be (c_in, T, F), got " +
                                        shape_str(x.shape()));
  detail::require<T>(w.rank() == 4, "conv2d: kernel must be (c_out, c_in, k_t, k_f)");
  detail::require<T>(w.dim(1) == x.dim(0),
                     "conv2d: input channels " + std::to_string(x.dim(0)) +
                         " != kernel channels " + std::to_string(w.dim(1)));
  detail::require<T>(stride_t >= 1 && stride_f >= 1, "conv2d: strides must be >= 1");
  const Index cin = x.dim(0), tlen = x.dim(1), flen = x.dim(2);
  const Index cout = w.dim(0);
  const int kt = static_cast<int>(w.dim(2)), kf = static_cast<int>(w.dim(3));
  if (b.valid())
    detail::require<T>(b.rank() == 1 && b.dim(0) == cout,
                       "conv2d: bias size != output channels " + std::to_string(cout));
  const Index pad_f = conv_pad_low(kf);
  const Index out_t = conv_out_time(tlen, stride_t);
  const Index out_f = conv_out_freq(flen, kf, stride_f);

  Tensor<T> out({cout, out_t, out_f});
  const Tensor<T>& xv = x.value();
  const Tensor<T>& wv = w.value();
  for (Index co = 0; co < cout; ++co) {
    const T bias = b.valid() ? b.value()[co] : T(0);
    for (Index to = 0; to < out_t; ++to) {
      for (Index fo = 0; fo < out_f; ++fo) {
        T acc = bias;
        for (Index ci = 0; ci < cin; ++ci) {
          for (int dt = 0; dt < kt; ++dt) {
            const Index ti = to * stride_t - (kt - 1) + dt;
            if (ti < 0 || ti >= tlen) continue;
            for (int df = 0; df < kf; ++df) {
              const Index fi = fo * stride_f - pad_f + df;
              if (fi < 0 || fi >= flen) continue;
              acc += wv.at(co, ci, dt, df) * xv.at(ci, ti, fi);
            }
          }
        }
        out.at(co, to, fo) = acc;
      }
    }
  }

  int ix = x.id, iw = w.id, ib = b.valid() ? b.id : -1;
  return x.tape->make_node(
      std::move(out),
      detail::any_grad<T>({x, w}) || (ib >= 0 && x.tape->wants_grad(ib)),
      [ix, iw, ib, cin, cout, tlen, flen, out_t, out_f, kt, kf, stride_t, stride_f,
       pad_f](Tape<T>& t, int self) {
        const Tensor<T>& g = t.grad(self);
        const Tensor<T>& xv = t.value(ix);
        const Tensor<T>& wv = t.value(iw);
        const bool wx = t.wants_grad(ix), ww = t.wants_grad(iw);
        for (Index co = 0; co < cout; ++co) {
          for (Index to = 0; to < out_t; ++to) {
            for (Index fo = 0; fo < out_f; ++fo) {
              const T gv = g.at(co, to, fo);
              if (gv == T(0)) continue;
              for (Index ci = 0; ci < cin; ++ci) {
                for (int dt = 0; dt < kt; ++dt) {
                  const Index ti = to * stride_t - (kt - 1) + dt;
                  if (ti < 0 || ti >= tlen) continue;
                  for (int df = 0; df < kf; ++df) {
                    const Index fi = fo * stride_f - pad_f + df;
                    if (fi < 0 || fi >= flen) continue;
                    if (wx) t.grad(ix).at(ci, ti, fi) += gv * wv.at(co, ci, dt, df);
                    if (ww) t.grad(iw).at(co, ci, dt, df) += gv * xv.at(ci, ti, fi);
                  }
                }
              }
            }
          }
          if (ib >= 0 && t.wants_grad(ib)) {
            T acc = T(0);
            for (Index to = 0; to < out_t; ++to)
              for (Index fo = 0; fo < out_f; ++fo) acc += g.at(co, to, fo);
            t.grad(ib)[co] += acc;
          }
        }
      });
}

/// Transposed convolution with the adjoint frequency geometry of conv2d and
/// causal time indexing: output frame t' collects input frames <= t'.
/// x (c_in, T, F) * w (c_out, c_in, k_t, k_f) -> (c_out, out_t, out_f).
template <typename T>
Var<T> transconv2d(Var<T> x, Var<T> w, Var<T> b, int stride_t, int stride_f, Index out_t,
                   Index out_f) {
  detail::require<T>(x.rank() == 3, "transconv2d: input must be (c_in, T, F)");
  detail::require<T>(w.rank() == 4, "transconv2d: kernel must be (c_out, c_in, k_t, k_f)");
  detail::require<T>(w.dim(1) == x.dim(0),
                     "transconv2d: input channels " + std::to_string(x.dim(0)) +
                         " != kernel channels " + std::to_string(w.dim(1)));
  const Index cin = x.dim(0), tlen = x.dim(1), flen = x.dim(2);
  const Index cout = w.dim(0);
  const int kt = static_cast<int>(w.dim(2)), kf = static_cast<int>(w.dim(3));
  detail::require<T>(conv_out_time(out_t, stride_t) == tlen,
                     "transconv2d: out_t " + std::to_string(out_t) +
                         " is not an adjoint time size for input " + std::to_string(tlen));
  detail::require<T>(conv_out_freq(out_f, kf, stride_f) == flen,
                     "transconv2d: out_f " + std::to_string(out_f) +
                         " is not an adjoint frequency size for input " + std::to_string(flen));
  if (b.valid())
    detail::require<T>(b.rank() == 1 && b.dim(0) == cout,
                       "transconv2d: bias size != output channels");
  const Index pad_f = conv_pad_low(kf);

  Tensor<T> out({cout, out_t, out_f});
  if (b.valid())
    for (Index co = 0; co < cout; ++co)
      for (Index i = 0; i < out_t * out_f; ++i) out[co * out_t * out_f + i] = b.value()[co];

  const Tensor<T>& xv = x.value();
  const Tensor<T>& wv = w.value();
  for (Index ci = 0; ci < cin; ++ci) {
    for (Index ti = 0; ti < tlen; ++ti) {
      for (Index fi = 0; fi < flen; ++fi) {
        const T v = xv.at(ci, ti, fi);
        if (v == T(0)) continue;
        for (Index co = 0; co < cout; ++co) {
          for (int dt = 0; dt < kt; ++dt) {
            const Index to = ti * stride_t + dt;
            if (to >= out_t) continue;
            for (int df = 0; df < kf; ++df) {
              const Index fo = fi * stride_f + df - pad_f;
              if (fo < 0 || fo >= out_f) continue;
              out.at(co, to, fo) += v * wv.at(co, ci, dt, df);
            }
          }
        }
      }
    }
  }

  int ix = x.id, iw = w.id, ib = b.valid() ? b.id : -1;
  return x.tape->make_node(
      std::move(out),
      detail::any_grad<T>({x, w}) || (ib >= 0 && x.tape->wants_grad(ib)),
      [ix, iw, ib, cin, cout, tlen, flen, out_t, out_f, kt, kf, stride_t, stride_f,
       pad_f](Tape<T>& t, int self) {
        const Tensor<T>& g = t.grad(self);
        const Tensor<T>& xv = t.value(ix);
        const Tensor<T>& wv = t.value(iw);
        const bool wx = t.wants_grad(ix), ww = t.wants_grad(iw);
        for (Index ci = 0; ci < cin; ++ci) {
          for (Index ti = 0; ti < tlen; ++ti) {
            for (Index fi = 0; fi < flen; ++fi) {
              T gx_acc = T(0);
              for (Index co = 0; co < cout; ++co) {
                for (int dt = 0; dt < kt; ++dt) {
                  const Index to = ti * stride_t + dt;
                  if (to >= out_t) continue;
                  for (int df = 0; df < kf; ++df) {
                    const Index fo = fi * stride_f + df - pad_f;
                    if (fo < 0 || fo >= out_f) continue;
                    const T gv = g.at(co, to, fo);
                    if (wx) gx_acc += gv * wv.at(co, ci, dt, df);
                    if (ww) t.grad(iw).at(co, ci, dt, df) += gv * xv.at(ci, ti, fi);
                  }
                }
              }
              if (wx) t.grad(ix).at(ci, ti, fi) += gx_acc;
            }
          }
        }
        if (ib >= 0 && t.wants_grad(ib)) {
          for (Index co = 0; co < cout; ++co) {
            T acc = T(0);
            for (Index to = 0; to < out_t; ++to)
              for (Index fo = 0; fo < out_f; ++fo) acc += g.at(co, to, fo);
            t.grad(ib)[co] += acc;
          }
        }
      });
}

}  // namespace scmse::diff
