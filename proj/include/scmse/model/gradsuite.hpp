#pragma once

#include <iomanip>
#include <iostream>
#include <string>

#include "scmse/diff/attention.hpp"
#include "scmse/diff/conv.hpp"
#include "scmse/diff/gradcheck.hpp"
#include "scmse/diff/rnn.hpp"
#include "scmse/diff/tape.hpp"
#include "scmse/model/dpcrn.hpp"
#include "scmse/model/losses.hpp"
#include "scmse/model/mhan.hpp"

namespace scmse::model {

namespace gradsuite_detail {

using diff::ParameterStore;
using diff::Tape;
using diff::Var;
using D = double;

inline Tensor<D> random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<D> t(std::move(shape));
  for (Index i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

struct Suite {
  std::ostream& out;
  double tol;
  bool all_pass = true;

  template <typename Builder>
  void check(const std::string& name, const ParameterStore<D>& store, Builder build,
             double tolerance) {
    diff::GradCheckReport report = diff::grad_check(store, build, tolerance, 10, fnv1a64(name));
    all_pass = all_pass && report.pass;
    out << (report.pass ? "PASS" : "FAIL") << "  " << std::left << std::setw(28) << name
        << " worst rel " << std::scientific << std::setprecision(2) << report.worst_rel
        << " (" << report.coords_checked << " coords";
    if (!report.pass)
      out << "; first failure " << report.failures.front().param << "["
          << report.failures.front().index << "]";
    out << ")\n" << std::defaultfloat;
  }

  /// L2 distance to a fixed random target makes every output coordinate
  /// contribute a generic cotangent.
  static Var<D> to_loss(Tape<D>& tape, Var<D> y, const Tensor<D>& target) {
    Var<D> d = diff::sub(y, tape.constant(target));
    return diff::sum_all(diff::mul(d, d));
  }
};

}  // namespace gradsuite_detail

/// Finite-difference checks for every differentiable primitive, both losses
/// and the full reduced-width model; prints one line per check. Linear ops
/// are held to 1e-6, everything else to `tol`.
inline bool run_gradient_suite(std::ostream& out, double tol = 1e-4) {
  using namespace gradsuite_detail;
  constexpr double kLinearTol = 1e-6;
  Suite suite{out, tol};
  Rng rng(20240811, "gradsuite");

  {  // dense, with and without bias
    ParameterStore<D> store;
    store.add("x", random_tensor({5, 4}, rng));
    store.add("w", random_tensor({3, 4}, rng));
    store.add("b", random_tensor({3}, rng));
    Tensor<D> target = random_tensor({5, 3}, rng);
    suite.check("dense", store,
                [target](Tape<D>& t, ParameterStore<D>& s) {
                  return Suite::to_loss(
                      t, diff::dense(t.param(s, "x"), t.param(s, "w"), t.param(s, "b")), target);
                },
                kLinearTol);
    suite.check("dense_nobias", store,
                [target](Tape<D>& t, ParameterStore<D>& s) {
                  return Suite::to_loss(t, diff::dense(t.param(s, "x"), t.param(s, "w")), target);
                },
                kLinearTol);
  }
  {  // matmul pair
    ParameterStore<D> store;
    store.add("a", random_tensor({4, 3}, rng));
    store.add("b", random_tensor({3, 5}, rng));
    store.add("c", random_tensor({5, 3}, rng));
    Tensor<D> target = random_tensor({4, 5}, rng);
    suite.check("matmul", store,
                [target](Tape<D>& t, ParameterStore<D>& s) {
                  return Suite::to_loss(t, diff::matmul(t.param(s, "a"), t.param(s, "b")),
                                        target);
                },
                kLinearTol);
    suite.check("matmul_nt", store,
                [target](Tape<D>& t, ParameterStore<D>& s) {
                  return Suite::to_loss(t, diff::matmul_nt(t.param(s, "a"), t.param(s, "c")),
                                        target);
                },
                kLinearTol);
  }
  {  // channel mixing
    ParameterStore<D> store;
    store.add("x", random_tensor({3, 4, 5}, rng));
    store.add("w", random_tensor({2, 3}, rng));
    store.add("b", random_tensor({2}, rng));
    Tensor<D> target = random_tensor({2, 4, 5}, rng);
    suite.check("dense_channels", store,
                [target](Tape<D>& t, ParameterStore<D>& s) {
                  return Suite::to_loss(
                      t, diff::dense_channels(t.param(s, "x"), t.param(s, "w"), t.param(s, "b")),
                      target);
                },
                kLinearTol);
  }
  {  // activations
    ParameterStore<D> store;
    store.add("x", random_tensor({4, 6}, rng));
    Tensor<D> target = random_tensor({4, 6}, rng);
    suite.check("relu", store,
                [target](Tape<D>& t, ParameterStore<D>& s) {
                  return Suite::to_loss(t, diff::relu(t.param(s, "x")), target);
                },
                tol);
    suite.check("sigmoid", store,
                [target](Tape<D>& t, ParameterStore<D>& s) {
                  return Suite::to_loss(t, diff::sigmoid(t.param(s, "x")), target);
                },
                tol);
    suite.check("tanh", store,
                [target](Tape<D>& t, ParameterStore<D>& s) {
                  return Suite::to_loss(t, diff::tanh_of(t.param(s, "x")), target);
                },
                tol);
  }
  {  // prelu
    ParameterStore<D> store;
    store.add("x", random_tensor({3, 4, 5}, rng));
    store.add("a", random_tensor({3}, rng, 0.05, 0.5));
    Tensor<D> target = random_tensor({3, 4, 5}, rng);
    suite.check("prelu", store,
                [target](Tape<D>& t, ParameterStore<D>& s) {
                  return Suite::to_loss(t, diff::prelu(t.param(s, "x"), t.param(s, "a")), target);
                },
                tol);
  }
  {  // causal softmax
    ParameterStore<D> store;
    store.add("s", random_tensor({6, 6}, rng));
    Tensor<D> target = random_tensor({6, 6}, rng);
    suite.check("softmax_causal", store,
                [target](Tape<D>& t, ParameterStore<D>& s) {
                  return Suite::to_loss(t, diff::softmax_causal(t.param(s, "s")), target);
                },
                tol);
  }
  {  // layer norm
    ParameterStore<D> store;
    store.add("x", random_tensor({4, 7}, rng));
    store.add("g", random_tensor({7}, rng, 0.5, 1.5));
    store.add("b", random_tensor({7}, rng));
    Tensor<D> target = random_tensor({4, 7}, rng);
    suite.check("layer_norm", store,
                [target](Tape<D>& t, ParameterStore<D>& s) {
                  return Suite::to_loss(
                      t, diff::layer_norm(t.param(s, "x"), t.param(s, "g"), t.param(s, "b")),
                      target);
                },
                tol);
  }
  {  // batch / instance norm (training statistics path)
    ParameterStore<D> store;
    store.add("x", random_tensor({3, 4, 5}, rng));
    store.add("g", random_tensor({3}, rng, 0.5, 1.5));
    store.add("b", random_tensor({3}, rng));
    store.add("bn.rmean", Tensor<D>({3}), true);
    store.add("bn.rvar", Tensor<D>::full({3}, 1.0), true);
    Tensor<D> target = random_tensor({3, 4, 5}, rng);
    suite.check("batch_norm_train", store,
                [target](Tape<D>& t, ParameterStore<D>& s) {
                  return Suite::to_loss(
                      t,
                      diff::batch_norm(t.param(s, "x"), t.param(s, "g"), t.param(s, "b"),
                                       s.entry("bn.rmean").value, s.entry("bn.rvar").value, true),
                      target);
                },
                tol);
    suite.check("batch_norm_infer", store,
                [target](Tape<D>& t, ParameterStore<D>& s) {
                  return Suite::to_loss(
                      t,
                      diff::batch_norm(t.param(s, "x"), t.param(s, "g"), t.param(s, "b"),
                                       s.entry("bn.rmean").value, s.entry("bn.rvar").value,
                                       false),
                      target);
                },
                tol);
    suite.check("instance_norm", store,
                [target](Tape<D>& t, ParameterStore<D>& s) {
                  return Suite::to_loss(t,
                                        diff::instance_norm(t.param(s, "x"),
                                                            s.entry("bn.rmean").value,
                                                            s.entry("bn.rvar").value, true),
                                        target);
                },
                tol);
  }
  {  // conv pair
    ParameterStore<D> store;
    store.add("x", random_tensor({3, 5, 7}, rng));
    store.add("w", random_tensor({4, 3, 2, 3}, rng));
    store.add("b", random_tensor({4}, rng));
    store.add("wt", random_tensor({2, 3, 2, 3}, rng));
    store.add("bt", random_tensor({2}, rng));
    Tensor<D> target = random_tensor({4, 5, 4}, rng);
    suite.check("conv2d", store,
                [target](Tape<D>& t, ParameterStore<D>& s) {
                  return Suite::to_loss(
                      t, diff::conv2d(t.param(s, "x"), t.param(s, "w"), t.param(s, "b"), 1, 2),
                      target);
                },
                kLinearTol);
    Tensor<D> target_t = random_tensor({2, 5, 13}, rng);
    suite.check("transconv2d", store,
                [target_t](Tape<D>& t, ParameterStore<D>& s) {
                  return Suite::to_loss(t,
                                        diff::transconv2d(t.param(s, "x"), t.param(s, "wt"),
                                                          t.param(s, "bt"), 1, 2, 5, 13),
                                        target_t);
                },
                kLinearTol);
  }
  {  // recurrences
    const Index s_n = 3, din = 4, hidden = 5;
    ParameterStore<D> store;
    store.add("x", random_tensor({s_n, din}, rng));
    store.add("h", random_tensor({s_n, hidden}, rng));
    store.add("c", random_tensor({s_n, hidden}, rng));
    store.add("w", random_tensor({4 * hidden, din}, rng));
    store.add("u", random_tensor({4 * hidden, hidden}, rng));
    store.add("b", random_tensor({4 * hidden}, rng));
    Tensor<D> target = random_tensor({2, s_n, hidden}, rng);
    suite.check("lstm_cell", store,
                [target](Tape<D>& t, ParameterStore<D>& s) {
                  return Suite::to_loss(
                      t,
                      diff::lstm_cell(t.param(s, "x"), t.param(s, "h"), t.param(s, "c"),
                                      t.param(s, "w"), t.param(s, "u"), t.param(s, "b")),
                      target);
                },
                tol);
  }
  {
    const Index channels = 3, tlen = 4, flen = 5, hidden = 4;
    ParameterStore<D> store;
    store.add("x", random_tensor({channels, tlen, flen}, rng));
    store.add("wf", random_tensor({4 * hidden, channels}, rng));
    store.add("uf", random_tensor({4 * hidden, hidden}, rng));
    store.add("bf", random_tensor({4 * hidden}, rng));
    store.add("wb", random_tensor({4 * hidden, channels}, rng));
    store.add("ub", random_tensor({4 * hidden, hidden}, rng));
    store.add("bb", random_tensor({4 * hidden}, rng));
    Tensor<D> target = random_tensor({hidden, tlen, flen}, rng);
    suite.check("lstm_over_time", store,
                [target](Tape<D>& t, ParameterStore<D>& s) {
                  return Suite::to_loss(t,
                                        diff::lstm_over_axis(t.param(s, "x"), diff::SeqAxis::Time,
                                                             t.param(s, "wf"), t.param(s, "uf"),
                                                             t.param(s, "bf")),
                                        target);
                },
                tol);
    suite.check("lstm_over_freq_rev", store,
                [target](Tape<D>& t, ParameterStore<D>& s) {
                  return Suite::to_loss(t,
                                        diff::lstm_over_axis(t.param(s, "x"), diff::SeqAxis::Freq,
                                                             t.param(s, "wf"), t.param(s, "uf"),
                                                             t.param(s, "bf"), true),
                                        target);
                },
                tol);
    Tensor<D> target2 = random_tensor({2 * hidden, tlen, flen}, rng);
    suite.check("bilstm_over_freq", store,
                [target2](Tape<D>& t, ParameterStore<D>& s) {
                  return Suite::to_loss(
                      t,
                      diff::bilstm_over_axis(t.param(s, "x"), diff::SeqAxis::Freq,
                                             t.param(s, "wf"), t.param(s, "uf"), t.param(s, "bf"),
                                             t.param(s, "wb"), t.param(s, "ub"),
                                             t.param(s, "bb")),
                      target2);
                },
                tol);
  }
  {  // attention block
    const Index tlen = 5, d = 6;
    ParameterStore<D> store;
    store.add("x", random_tensor({tlen, d}, rng));
    for (const char* n : {"q", "k", "v", "o"}) {
      store.add(std::string("w") + n, random_tensor({d, d}, rng));
      store.add(std::string("b") + n, random_tensor({d}, rng));
    }
    Tensor<D> target = random_tensor({tlen, d}, rng);
    suite.check("mha", store,
                [target](Tape<D>& t, ParameterStore<D>& s) {
                  diff::MhaParams<D> p;
                  p.wq = t.param(s, "wq"); p.bq = t.param(s, "bq");
                  p.wk = t.param(s, "wk"); p.bk = t.param(s, "bk");
                  p.wv = t.param(s, "wv"); p.bv = t.param(s, "bv");
                  p.wo = t.param(s, "wo"); p.bo = t.param(s, "bo");
                  return Suite::to_loss(t, diff::mha_forward(t.param(s, "x"), 2, p), target);
                },
                tol);
  }
  {  // power compression and the two losses (magnitudes kept away from zero)
    ParameterStore<D> store;
    auto keep_away = [&rng](Shape shape) {
      Tensor<D> t(std::move(shape));
      for (Index i = 0; i < t.numel(); ++i) {
        const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
        t[i] = sign * rng.uniform(0.05, 1.0);
      }
      return t;
    };
    store.add("re", keep_away({4, 6}));
    store.add("im", keep_away({4, 6}));
    Tensor<D> t_mag = random_tensor({4, 6}, rng, 0.1, 1.0);
    Tensor<D> t_re = random_tensor({4, 6}, rng);
    Tensor<D> t_im = random_tensor({4, 6}, rng);
    const double gamma = 1.0 / 3.0;
    suite.check("pcomp_mag", store,
                [t_mag, gamma](Tape<D>& t, ParameterStore<D>& s) {
                  return Suite::to_loss(
                      t, diff::pcomp_mag(t.param(s, "re"), t.param(s, "im"), gamma), t_mag);
                },
                tol);
    suite.check("pcomp_real", store,
                [t_re, gamma](Tape<D>& t, ParameterStore<D>& s) {
                  return Suite::to_loss(
                      t, diff::pcomp_real(t.param(s, "re"), t.param(s, "im"), gamma), t_re);
                },
                tol);
    suite.check("pcomp_imag", store,
                [t_im, gamma](Tape<D>& t, ParameterStore<D>& s) {
                  return Suite::to_loss(
                      t, diff::pcomp_imag(t.param(s, "re"), t.param(s, "im"), gamma), t_im);
                },
                tol);
    suite.check("loss_mag", store,
                [t_mag, gamma](Tape<D>& t, ParameterStore<D>& s) {
                  return loss_mag_graph(t, t.param(s, "re"), t.param(s, "im"), t_mag, gamma);
                },
                tol);
    suite.check("loss_ri", store,
                [t_re, t_im, gamma](Tape<D>& t, ParameterStore<D>& s) {
                  return loss_ri_graph(t, t.param(s, "re"), t.param(s, "im"), t_re, t_im, gamma);
                },
                tol);
  }
  {  // full model, reduced width, both stages. Magnitudes are kept >= 1 so
     // the cube-root compression stays far from its |S| = 0 singularity,
     // where the finite-difference oracle itself loses accuracy.
    const ModelConfig cfg = micro_config();
    const Index frames = 4, bins = cfg.bins();
    auto signed_away = [&rng](Shape shape) {
      Tensor<D> t(std::move(shape));
      for (Index i = 0; i < t.numel(); ++i) {
        const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
        t[i] = sign * rng.uniform(1.0, 2.0);
      }
      return t;
    };
    Tensor<D> x_re = signed_away({frames, bins});
    Tensor<D> x_im = signed_away({frames, bins});
    Tensor<D> x_mag({frames, bins});
    for (Index i = 0; i < x_mag.numel(); ++i)
      x_mag[i] = std::sqrt(x_re[i] * x_re[i] + x_im[i] * x_im[i]);
    Tensor<D> ref_cmag = random_tensor({frames, bins}, rng, 0.1, 1.0);
    Tensor<D> ref_cre = random_tensor({frames, bins}, rng);
    Tensor<D> ref_cim = random_tensor({frames, bins}, rng);
    const double gamma = cfg.gamma;

    {
      ParameterStore<D> store;
      init_parameters(store, cfg, Stage::One);
      suite.check("model_stage1", store,
                  [cfg, x_mag, x_re, x_im, ref_cmag, gamma](Tape<D>& t, ParameterStore<D>& s) {
                    Var<D> mask = mhan_forward(t, s, cfg, t.constant(x_mag));
                    Var<D> er = diff::mul(mask, t.constant(x_re));
                    Var<D> ei = diff::mul(mask, t.constant(x_im));
                    return loss_mag_graph(t, er, ei, ref_cmag, gamma);
                  },
                  tol);
    }
    {
      ParameterStore<D> store;
      init_parameters(store, cfg, Stage::Joint);
      suite.check("model_joint", store,
                  [cfg, x_mag, x_re, x_im, ref_cmag, ref_cre, ref_cim, gamma](
                      Tape<D>& t, ParameterStore<D>& s) {
                    Var<D> mask = mhan_forward(t, s, cfg, t.constant(x_mag));
                    Var<D> er = diff::mul(mask, t.constant(x_re));
                    Var<D> ei = diff::mul(mask, t.constant(x_im));
                    Var<D> l1 = loss_mag_graph(t, er, ei, ref_cmag, gamma);
                    ComplexPair<D> refined = dpcrn_forward(t, s, cfg, er, ei, true);
                    Var<D> l2m = loss_mag_graph(t, refined.re, refined.im, ref_cmag, gamma);
                    Var<D> l2r =
                        loss_ri_graph(t, refined.re, refined.im, ref_cre, ref_cim, gamma);
                    return diff::add(l1, diff::add(l2m, l2r));
                  },
                  tol);
    }
  }

  out << (suite.all_pass ? "gradient suite: all checks passed\n"
                         : "gradient suite: FAILURES present\n");
  return suite.all_pass;
}

}  // namespace scmse::model
