#pragma once

#include <string>
#include <vector>

#include "scmse/diff/attention.hpp"
#include "scmse/diff/tape.hpp"
#include "scmse/model/config.hpp"
#include "scmse/model/network.hpp"

namespace scmse::model {

/// Mask estimation from magnitude frames (T, F): compression to F_c,
/// frame-wise normalization + ReLU, B causal attention blocks (post-norm
/// residuals, no positional encoding), expansion back to F, sigmoid. The
/// result is a (T, F) mask strictly inside (0, 1), causal in time.
template <typename T>
diff::Var<T> mhan_forward(diff::Tape<T>& tape, diff::ParameterStore<T>& store,
                          const ModelConfig& cfg, diff::Var<T> x_mag,
                          std::vector<Tensor<T>>* attn_out = nullptr) {
  using diff::Var;
  if (x_mag.rank() != 2 || x_mag.dim(1) != cfg.bins())
    throw std::invalid_argument("mhan: input has " +
                                std::to_string(x_mag.rank() == 2 ? x_mag.dim(1) : -1) +
                                " bins, config wants " + std::to_string(cfg.bins()));

  Var<T> scm_w = tape.param(store, "mhan.scm.weight");
  Var<T> x = matmul_nt(x_mag, scm_w);  // (T, F_c)
  x = layer_norm(x, tape.param(store, "mhan.in_norm.gain"),
                 tape.param(store, "mhan.in_norm.bias"));
  x = relu(x);

  for (int b = 0; b < cfg.mhan_blocks; ++b) {
    const std::string blk = "mhan.block" + std::to_string(b);
    diff::MhaParams<T> p;
    p.wq = tape.param(store, blk + ".attn.q.w");
    p.bq = tape.param(store, blk + ".attn.q.b");
    p.wk = tape.param(store, blk + ".attn.k.w");
    p.wv = tape.param(store, blk + ".attn.v.w");
    p.bv = tape.param(store, blk + ".attn.v.b");
    p.wo = tape.param(store, blk + ".attn.o.w");
    p.bo = tape.param(store, blk + ".attn.o.b");
    Var<T> attn = diff::mha_forward(x, cfg.mhan_heads, p, attn_out);
    x = layer_norm(add(x, attn), tape.param(store, blk + ".norm1.gain"),
                   tape.param(store, blk + ".norm1.bias"));

    Var<T> h = dense(x, tape.param(store, blk + ".ffn.l1.w"),
                     tape.param(store, blk + ".ffn.l1.b"));
    h = relu(h);
    h = dense(h, tape.param(store, blk + ".ffn.l2.w"), tape.param(store, blk + ".ffn.l2.b"));
    x = layer_norm(add(x, h), tape.param(store, blk + ".norm2.gain"),
                   tape.param(store, blk + ".norm2.bias"));
  }

  Var<T> iscm_w = tape.param(store, "mhan.iscm.weight");
  return sigmoid(matmul_nt(x, iscm_w));  // (T, F)
}

}  // namespace scmse::model
