#pragma once

#include <vector>

#include "scmse/diff/tape.hpp"

namespace scmse::diff {

template <typename T>
struct MhaParams {
  Var<T> wq, bq, wk, bk, wv, bv, wo, bo;
};

/// Masked multi-head self-attention over x (T, D): per-head scaled dot
/// product with a strict causal mask, heads concatenated and projected.
/// When `attn_out` is given it receives each head's (T, T) weight matrix.
template <typename T>
Var<T> mha_forward(Var<T> x, int heads, const MhaParams<T>& p,
                   std::vector<Tensor<T>>* attn_out = nullptr) {
  detail::require<T>(x.rank() == 2, "mha: input must be (T, D)");
  const Index d = x.dim(1);
  detail::require<T>(d % heads == 0, "mha: d_model " + std::to_string(d) +
                                         " not divisible by heads " + std::to_string(heads));
  const Index dh = d / heads;
  const T inv_sqrt_dh = T(1) / std::sqrt(static_cast<T>(dh));

  Var<T> q = dense(x, p.wq, p.bq);
  Var<T> k = dense(x, p.wk, p.bk);
  Var<T> v = dense(x, p.wv, p.bv);

  std::vector<Var<T>> head_outs;
  head_outs.reserve(static_cast<size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    Var<T> qh = slice_cols(q, h * dh, dh);
    Var<T> kh = slice_cols(k, h * dh, dh);
    Var<T> vh = slice_cols(v, h * dh, dh);
    Var<T> weights = softmax_causal(scale(matmul_nt(qh, kh), inv_sqrt_dh));
    if (attn_out) attn_out->push_back(weights.value());
    head_outs.push_back(matmul(weights, vh));
  }
  return dense(concat_cols(head_outs), p.wo, p.bo);
}

}  // namespace scmse::diff
