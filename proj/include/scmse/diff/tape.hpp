#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "scmse/diff/store.hpp"
#include "scmse/tensor.hpp"

namespace scmse::diff {

template <typename T>
class Tape;

/// Handle to a tape node. Cheap to copy; the tensor lives on the tape.
template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  int id = -1;

  bool valid() const { return tape != nullptr && id >= 0; }
  const Tensor<T>& value() const;
  const Shape& shape() const { return value().shape(); }
  Index dim(int i) const { return value().dim(i); }
  int rank() const { return value().rank(); }
  T scalar() const { return value()[0]; }
};

/// Define-by-run reverse-mode tape. Forward values are computed eagerly as
/// nodes are created; backward() walks nodes in reverse creation order and
/// accumulates cotangents, finally adding parameter-leaf gradients into the
/// bound store entries.
template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, int)>;

  struct Node {
    Tensor<T> value;
    Tensor<T> grad;  // allocated lazily during backward
    bool needs_grad = false;
    std::string bound_param;  // name in the bound store, if a parameter leaf
    ParameterStore<T>* store = nullptr;
    BackwardFn backward;
  };

  Var<T> constant(Tensor<T> v) { return push(std::move(v), false, {}); }

  Var<T> input(Tensor<T> v, bool needs_grad = true) {
    return push(std::move(v), needs_grad, {});
  }

  Var<T> param(ParameterStore<T>& store, const std::string& name) {
    ParamEntry<T>& e = store.entry(name);
    Var<T> var = push(e.value, !e.state_only, {});
    node(var.id).bound_param = name;
    node(var.id).store = &store;
    return var;
  }

  /// Generic extension point used by every primitive: installs a node with
  /// the given forward value and backward closure.
  Var<T> make_node(Tensor<T> value, bool needs_grad, BackwardFn backward) {
    return push(std::move(value), needs_grad, std::move(backward));
  }

  const Tensor<T>& value(int id) const { return nodes_[static_cast<size_t>(id)].value; }
  bool wants_grad(int id) const { return nodes_[static_cast<size_t>(id)].needs_grad; }
  Node& node(int id) { return nodes_[static_cast<size_t>(id)]; }

  /// Cotangent of a node; allocates zeros on first touch.
  Tensor<T>& grad(int id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (n.grad.empty()) n.grad = Tensor<T>(n.value.shape());
    return n.grad;
  }

  bool has_grad(int id) const { return !nodes_[static_cast<size_t>(id)].grad.empty(); }

  void backward(Var<T> loss) {
    if (loss.tape != this) throw std::invalid_argument("backward: var from another tape");
    if (loss.value().numel() != 1)
      throw std::invalid_argument("backward: loss must be scalar, got " +
                                  shape_str(loss.shape()));
    grad(loss.id)[0] = T(1);
    for (int id = loss.id; id >= 0; --id) {
      Node& n = nodes_[static_cast<size_t>(id)];
      if (!n.needs_grad || n.grad.empty()) continue;
      if (n.backward) n.backward(*this, id);
      if (n.store != nullptr) {
        ParamEntry<T>& e = n.store->entry(n.bound_param);
        e.grad.arr() += n.grad.arr();
      }
    }
  }

  size_t size() const { return nodes_.size(); }

 private:
  Var<T> push(Tensor<T> v, bool needs_grad, BackwardFn backward) {
    Node n;
    n.value = std::move(v);
    n.needs_grad = needs_grad;
    n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var<T>{this, static_cast<int>(nodes_.size()) - 1};
  }

  std::vector<Node> nodes_;
};

template <typename T>
const Tensor<T>& Var<T>::value() const {
  if (!valid()) throw std::logic_error("Var: invalid handle");
  return tape->value(id);
}

namespace detail {

template <typename T>
void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

template <typename T>
bool any_grad(std::initializer_list<Var<T>> vars) {
  for (const Var<T>& v : vars)
    if (v.valid() && v.tape->wants_grad(v.id)) return true;
  return false;
}

template <typename T>
void accumulate(Tape<T>& t, int id, const Tensor<T>& delta) {
  if (id < 0 || !t.wants_grad(id)) return;
  t.grad(id).arr() += delta.arr();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  detail::require<T>(a.value().same_shape(b.value()),
                     "add: shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  Tensor<T> out(a.value().shape());
  out.arr() = a.value().arr() + b.value().arr();
  int ia = a.id, ib = b.id;
  return a.tape->make_node(std::move(out), detail::any_grad<T>({a, b}),
                           [ia, ib](Tape<T>& t, int self) {
                             const Tensor<T>& g = t.grad(self);
                             detail::accumulate(t, ia, g);
                             detail::accumulate(t, ib, g);
                           });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  detail::require<T>(a.value().same_shape(b.value()),
                     "sub: shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  Tensor<T> out(a.value().shape());
  out.arr() = a.value().arr() - b.value().arr();
  int ia = a.id, ib = b.id;
  return a.tape->make_node(std::move(out), detail::any_grad<T>({a, b}),
                           [ia, ib](Tape<T>& t, int self) {
                             const Tensor<T>& g = t.grad(self);
                             detail::accumulate(t, ia, g);
                             if (ib >= 0 && t.wants_grad(ib)) t.grad(ib).arr() -= g.arr();
                           });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  detail::require<T>(a.value().same_shape(b.value()),
                     "mul: shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  Tensor<T> out(a.value().shape());
  out.arr() = a.value().arr() * b.value().arr();
  int ia = a.id, ib = b.id;
  return a.tape->make_node(std::move(out), detail::any_grad<T>({a, b}),
                           [ia, ib](Tape<T>& t, int self) {
                             const Tensor<T>& g = t.grad(self);
                             if (ia >= 0 && t.wants_grad(ia))
                               t.grad(ia).arr() += g.arr() * t.value(ib).arr();
                             if (ib >= 0 && t.wants_grad(ib))
                               t.grad(ib).arr() += g.arr() * t.value(ia).arr();
                           });
}

template <typename T>
Var<T> scale(Var<T> a, T s) {
  Tensor<T> out(a.value().shape());
  out.arr() = a.value().arr() * s;
  int ia = a.id;
  return a.tape->make_node(std::move(out), a.tape->wants_grad(ia),
                           [ia, s](Tape<T>& t, int self) {
                             if (t.wants_grad(ia)) t.grad(ia).arr() += t.grad(self).arr() * s;
                           });
}

template <typename T>
Var<T> relu(Var<T> x) {
  Tensor<T> out(x.value().shape());
  out.arr() = x.value().arr().max(T(0));
  int ix = x.id;
  return x.tape->make_node(std::move(out), x.tape->wants_grad(ix),
                           [ix](Tape<T>& t, int self) {
                             if (!t.wants_grad(ix)) return;
                             auto mask = (t.value(ix).arr() > T(0)).template cast<T>();
                             t.grad(ix).arr() += t.grad(self).arr() * mask;
                           });
}

template <typename T>
Var<T> sigmoid(Var<T> x) {
  Tensor<T> out(x.value().shape());
  out.arr() = T(1) / (T(1) + (-x.value().arr()).exp());
  int ix = x.id;
  return x.tape->make_node(std::move(out), x.tape->wants_grad(ix),
                           [ix](Tape<T>& t, int self) {
                             if (!t.wants_grad(ix)) return;
                             auto y = t.value(self).arr();
                             t.grad(ix).arr() += t.grad(self).arr() * y * (T(1) - y);
                           });
}

template <typename T>
Var<T> tanh_of(Var<T> x) {
  Tensor<T> out(x.value().shape());
  out.arr() = x.value().arr().tanh();
  int ix = x.id;
  return x.tape->make_node(std::move(out), x.tape->wants_grad(ix),
                           [ix](Tape<T>& t, int self) {
                             if (!t.wants_grad(ix)) return;
                             auto y = t.value(self).arr();
                             t.grad(ix).arr() += t.grad(self).arr() * (T(1) - y * y);
                           });
}

/// Channelwise parametric ReLU over a (C, ...) tensor; `slope` has shape (C).
template <typename T>
Var<T> prelu(Var<T> x, Var<T> slope) {
  detail::require<T>(x.rank() >= 2, "prelu: input must have a leading channel axis");
  detail::require<T>(slope.rank() == 1 && slope.dim(0) == x.dim(0),
                     "prelu: slope count " + std::to_string(slope.value().numel()) +
                         " != channels " + std::to_string(x.dim(0)));
  const Index channels = x.dim(0);
  const Index per = x.value().numel() / channels;
  Tensor<T> out(x.value().shape());
  for (Index c = 0; c < channels; ++c) {
    const T a = slope.value()[c];
    for (Index i = 0; i < per; ++i) {
      const T v = x.value()[c * per + i];
      out[c * per + i] = v > T(0) ? v : a * v;
    }
  }
  int ix = x.id, is = slope.id;
  return x.tape->make_node(
      std::move(out), detail::any_grad<T>({x, slope}),
      [ix, is, channels, per](Tape<T>& t, int self) {
        const Tensor<T>& g = t.grad(self);
        const Tensor<T>& xv = t.value(ix);
        const Tensor<T>& sv = t.value(is);
        if (t.wants_grad(ix)) {
          Tensor<T>& gx = t.grad(ix);
          for (Index c = 0; c < channels; ++c)
            for (Index i = 0; i < per; ++i) {
              const Index k = c * per + i;
              gx[k] += g[k] * (xv[k] > T(0) ? T(1) : sv[c]);
            }
        }
        if (t.wants_grad(is)) {
          Tensor<T>& gs = t.grad(is);
          for (Index c = 0; c < channels; ++c) {
            T acc = T(0);
            for (Index i = 0; i < per; ++i) {
              const Index k = c * per + i;
              if (xv[k] <= T(0)) acc += g[k] * xv[k];
            }
            gs[c] += acc;
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Reductions

template <typename T>
Var<T> sum_all(Var<T> x) {
  Tensor<T> out = Tensor<T>::scalar(x.value().arr().sum());
  int ix = x.id;
  return x.tape->make_node(std::move(out), x.tape->wants_grad(ix),
                           [ix](Tape<T>& t, int self) {
                             if (t.wants_grad(ix)) t.grad(ix).arr() += t.grad(self)[0];
                           });
}

// ---------------------------------------------------------------------------
// Linear algebra

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  detail::require<T>(a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(0),
                     "matmul: incompatible " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  Tensor<T> out({a.dim(0), b.dim(1)});
  out.mat().noalias() = a.value().mat() * b.value().mat();
  int ia = a.id, ib = b.id;
  return a.tape->make_node(std::move(out), detail::any_grad<T>({a, b}),
                           [ia, ib](Tape<T>& t, int self) {
                             auto g = t.grad(self).mat();
                             if (t.wants_grad(ia))
                               t.grad(ia).mat().noalias() += g * t.value(ib).mat().transpose();
                             if (t.wants_grad(ib))
                               t.grad(ib).mat().noalias() += t.value(ia).mat().transpose() * g;
                           });
}

/// a (m,k) times b (n,k) transposed -> (m,n).
template <typename T>
Var<T> matmul_nt(Var<T> a, Var<T> b) {
  detail::require<T>(a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(1),
                     "matmul_nt: incompatible " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()) + "^T");
  Tensor<T> out({a.dim(0), b.dim(0)});
  out.mat().noalias() = a.value().mat() * b.value().mat().transpose();
  int ia = a.id, ib = b.id;
  return a.tape->make_node(std::move(out), detail::any_grad<T>({a, b}),
                           [ia, ib](Tape<T>& t, int self) {
                             auto g = t.grad(self).mat();
                             if (t.wants_grad(ia))
                               t.grad(ia).mat().noalias() += g * t.value(ib).mat();
                             if (t.wants_grad(ib))
                               t.grad(ib).mat().noalias() += g.transpose() * t.value(ia).mat();
                           });
}

/// Row-wise affine map: x (n, d_in), w (d_out, d_in), optional bias (d_out).
template <typename T>
Var<T> dense(Var<T> x, Var<T> w, Var<T> b = {}) {
  detail::require<T>(x.rank() == 2 && w.rank() == 2 && x.dim(1) == w.dim(1),
                     "dense: input features " + std::to_string(x.rank() == 2 ? x.dim(1) : -1) +
                         " != weight columns " + std::to_string(w.dim(1)));
  if (b.valid())
    detail::require<T>(b.rank() == 1 && b.dim(0) == w.dim(0),
                       "dense: bias size != weight rows " + std::to_string(w.dim(0)));
  Tensor<T> out({x.dim(0), w.dim(0)});
  out.mat().noalias() = x.value().mat() * w.value().mat().transpose();
  if (b.valid()) out.mat().rowwise() += b.value().as_mat(1, b.dim(0)).row(0);
  int ix = x.id, iw = w.id, ib = b.valid() ? b.id : -1;
  return x.tape->make_node(
      std::move(out), detail::any_grad<T>({x, w}) || (ib >= 0 && x.tape->wants_grad(ib)),
      [ix, iw, ib](Tape<T>& t, int self) {
        auto g = t.grad(self).mat();
        if (t.wants_grad(ix)) t.grad(ix).mat().noalias() += g * t.value(iw).mat();
        if (t.wants_grad(iw))
          t.grad(iw).mat().noalias() += g.transpose() * t.value(ix).mat();
        if (ib >= 0 && t.wants_grad(ib)) {
          auto gb = t.grad(ib).as_mat(1, t.value(ib).dim(0));
          gb.row(0) += g.colwise().sum();
        }
      });
}

/// Pointwise channel mixing on a (c_in, T, F) tensor: w (c_out, c_in).
template <typename T>
Var<T> dense_channels(Var<T> x, Var<T> w, Var<T> b = {}) {
  detail::require<T>(x.rank() == 3 && w.rank() == 2 && x.dim(0) == w.dim(1),
                     "dense_channels: input channels " + std::to_string(x.dim(0)) +
                         " != weight columns " + std::to_string(w.dim(1)));
  const Index cols = x.dim(1) * x.dim(2);
  Tensor<T> out({w.dim(0), x.dim(1), x.dim(2)});
  out.as_mat(w.dim(0), cols).noalias() = w.value().mat() * x.value().as_mat(x.dim(0), cols);
  if (b.valid()) {
    detail::require<T>(b.rank() == 1 && b.dim(0) == w.dim(0),
                       "dense_channels: bias size != weight rows");
    out.as_mat(w.dim(0), cols).colwise() += b.value().as_mat(b.dim(0), 1).col(0);
  }
  int ix = x.id, iw = w.id, ib = b.valid() ? b.id : -1;
  const Index cin = x.dim(0), cout = w.dim(0);
  return x.tape->make_node(
      std::move(out), detail::any_grad<T>({x, w}) || (ib >= 0 && x.tape->wants_grad(ib)),
      [ix, iw, ib, cin, cout, cols](Tape<T>& t, int self) {
        auto g = t.grad(self).as_mat(cout, cols);
        if (t.wants_grad(ix))
          t.grad(ix).as_mat(cin, cols).noalias() += t.value(iw).mat().transpose() * g;
        if (t.wants_grad(iw))
          t.grad(iw).mat().noalias() += g * t.value(ix).as_mat(cin, cols).transpose();
        if (ib >= 0 && t.wants_grad(ib))
          t.grad(ib).as_mat(cout, 1).col(0) += g.rowwise().sum();
      });
}

// ---------------------------------------------------------------------------
// Shape plumbing

template <typename T>
Var<T> slice_cols(Var<T> x, Index c0, Index len) {
  detail::require<T>(x.rank() == 2 && c0 >= 0 && c0 + len <= x.dim(1),
                     "slice_cols: range [" + std::to_string(c0) + ", " +
                         std::to_string(c0 + len) + ") outside " + shape_str(x.shape()));
  Tensor<T> out({x.dim(0), len});
  out.mat() = x.value().mat().middleCols(c0, len);
  int ix = x.id;
  return x.tape->make_node(std::move(out), x.tape->wants_grad(ix),
                           [ix, c0, len](Tape<T>& t, int self) {
                             if (t.wants_grad(ix))
                               t.grad(ix).mat().middleCols(c0, len) += t.grad(self).mat();
                           });
}

template <typename T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
  detail::require<T>(!parts.empty(), "concat_cols: no inputs");
  const Index rows = parts[0].dim(0);
  Index cols = 0;
  bool needs = false;
  for (const Var<T>& p : parts) {
    detail::require<T>(p.rank() == 2 && p.dim(0) == rows, "concat_cols: row mismatch");
    cols += p.dim(1);
    needs = needs || p.tape->wants_grad(p.id);
  }
  Tensor<T> out({rows, cols});
  Index at = 0;
  std::vector<int> ids;
  std::vector<Index> widths;
  for (const Var<T>& p : parts) {
    out.mat().middleCols(at, p.dim(1)) = p.value().mat();
    ids.push_back(p.id);
    widths.push_back(p.dim(1));
    at += p.dim(1);
  }
  return parts[0].tape->make_node(std::move(out), needs,
                                  [ids, widths](Tape<T>& t, int self) {
                                    Index at = 0;
                                    for (size_t i = 0; i < ids.size(); ++i) {
                                      if (t.wants_grad(ids[i]))
                                        t.grad(ids[i]).mat() +=
                                            t.grad(self).mat().middleCols(at, widths[i]);
                                      at += widths[i];
                                    }
                                  });
}

template <typename T>
Var<T> concat_channels(Var<T> a, Var<T> b) {
  detail::require<T>(a.rank() == 3 && b.rank() == 3 && a.dim(1) == b.dim(1) &&
                         a.dim(2) == b.dim(2),
                     "concat_channels: trailing dims differ: " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  Tensor<T> out({a.dim(0) + b.dim(0), a.dim(1), a.dim(2)});
  const Index na = a.value().numel(), nb = b.value().numel();
  std::copy_n(a.value().data(), na, out.data());
  std::copy_n(b.value().data(), nb, out.data() + na);
  int ia = a.id, ib = b.id;
  return a.tape->make_node(std::move(out), detail::any_grad<T>({a, b}),
                           [ia, ib, na, nb](Tape<T>& t, int self) {
                             const Tensor<T>& g = t.grad(self);
                             if (t.wants_grad(ia)) {
                               Tensor<T>& ga = t.grad(ia);
                               for (Index i = 0; i < na; ++i) ga[i] += g[i];
                             }
                             if (t.wants_grad(ib)) {
                               Tensor<T>& gb = t.grad(ib);
                               for (Index i = 0; i < nb; ++i) gb[i] += g[na + i];
                             }
                           });
}

/// Two (T, F) planes stacked into a (2, T, F) tensor.
template <typename T>
Var<T> stack_planes(Var<T> a, Var<T> b) {
  detail::require<T>(a.rank() == 2 && a.value().same_shape(b.value()),
                     "stack_planes: shape mismatch");
  Tensor<T> out({2, a.dim(0), a.dim(1)});
  const Index n = a.value().numel();
  std::copy_n(a.value().data(), n, out.data());
  std::copy_n(b.value().data(), n, out.data() + n);
  int ia = a.id, ib = b.id;
  return a.tape->make_node(std::move(out), detail::any_grad<T>({a, b}),
                           [ia, ib, n](Tape<T>& t, int self) {
                             const Tensor<T>& g = t.grad(self);
                             if (t.wants_grad(ia)) {
                               Tensor<T>& ga = t.grad(ia);
                               for (Index i = 0; i < n; ++i) ga[i] += g[i];
                             }
                             if (t.wants_grad(ib)) {
                               Tensor<T>& gb = t.grad(ib);
                               for (Index i = 0; i < n; ++i) gb[i] += g[n + i];
                             }
                           });
}

template <typename T>
Var<T> take_plane(Var<T> x, Index channel) {
  detail::require<T>(x.rank() == 3 && channel >= 0 && channel < x.dim(0),
                     "take_plane: channel " + std::to_string(channel) + " outside " +
                         shape_str(x.shape()));
  const Index n = x.dim(1) * x.dim(2);
  Tensor<T> out({x.dim(1), x.dim(2)});
  std::copy_n(x.value().data() + channel * n, n, out.data());
  int ix = x.id;
  return x.tape->make_node(std::move(out), x.tape->wants_grad(ix),
                           [ix, channel, n](Tape<T>& t, int self) {
                             if (!t.wants_grad(ix)) return;
                             Tensor<T>& gx = t.grad(ix);
                             const Tensor<T>& g = t.grad(self);
                             for (Index i = 0; i < n; ++i) gx[channel * n + i] += g[i];
                           });
}

// ---------------------------------------------------------------------------
// Attention

/// Row-wise softmax of a (T, T) score matrix restricted to columns <= row;
/// masked (future) entries are exactly zero.
template <typename T>
Var<T> softmax_causal(Var<T> scores) {
  detail::require<T>(scores.rank() == 2 && scores.dim(0) == scores.dim(1),
                     "softmax_causal: scores must be square, got " + shape_str(scores.shape()));
  const Index n = scores.dim(0);
  Tensor<T> out({n, n});
  const Tensor<T>& s = scores.value();
  for (Index t = 0; t < n; ++t) {
    T mx = s.at(t, 0);
    for (Index j = 1; j <= t; ++j) mx = std::max(mx, s.at(t, j));
    T denom = T(0);
    for (Index j = 0; j <= t; ++j) {
      const T e = std::exp(s.at(t, j) - mx);
      out.at(t, j) = e;
      denom += e;
    }
    for (Index j = 0; j <= t; ++j) out.at(t, j) /= denom;
  }
  int is = scores.id;
  return scores.tape->make_node(
      std::move(out), scores.tape->wants_grad(is), [is, n](Tape<T>& t, int self) {
        if (!t.wants_grad(is)) return;
        const Tensor<T>& y = t.value(self);
        const Tensor<T>& g = t.grad(self);
        Tensor<T>& gs = t.grad(is);
        for (Index r = 0; r < n; ++r) {
          T dot = T(0);
          for (Index j = 0; j <= r; ++j) dot += g.at(r, j) * y.at(r, j);
          for (Index j = 0; j <= r; ++j) gs.at(r, j) += y.at(r, j) * (g.at(r, j) - dot);
        }
      });
}

// ---------------------------------------------------------------------------
// Normalization

/// Per-row normalization over the feature axis with learnable gain/bias.
template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gain, Var<T> bias, T eps = T(1e-5)) {
  detail::require<T>(x.rank() == 2, "layer_norm: input must be (rows, features)");
  const Index rows = x.dim(0), d = x.dim(1);
  detail::require<T>(gain.rank() == 1 && gain.dim(0) == d && bias.rank() == 1 &&
                         bias.dim(0) == d,
                     "layer_norm: gain/bias size != features " + std::to_string(d));
  Tensor<T> out({rows, d});
  auto ctx = std::make_shared<Tensor<T>>(Shape{rows, d});  // cached x_hat
  auto sigma = std::make_shared<Tensor<T>>(Shape{rows});
  for (Index r = 0; r < rows; ++r) {
    T mu = T(0);
    for (Index j = 0; j < d; ++j) mu += x.value().at(r, j);
    mu /= static_cast<T>(d);
    T var = T(0);
    for (Index j = 0; j < d; ++j) {
      const T c = x.value().at(r, j) - mu;
      var += c * c;
    }
    var /= static_cast<T>(d);
    const T sd = std::sqrt(var + eps);
    (*sigma)[r] = sd;
    for (Index j = 0; j < d; ++j) {
      const T xh = (x.value().at(r, j) - mu) / sd;
      ctx->at(r, j) = xh;
      out.at(r, j) = gain.value()[j] * xh + bias.value()[j];
    }
  }
  int ix = x.id, ig = gain.id, ib = bias.id;
  return x.tape->make_node(
      std::move(out), detail::any_grad<T>({x, gain, bias}),
      [ix, ig, ib, rows, d, ctx, sigma](Tape<T>& t, int self) {
        const Tensor<T>& g = t.grad(self);
        const Tensor<T>& xh = *ctx;
        const Tensor<T>& gv = t.value(ig);
        for (Index r = 0; r < rows; ++r) {
          if (t.wants_grad(ix)) {
            T sum_dxh = T(0), sum_dxh_xh = T(0);
            for (Index j = 0; j < d; ++j) {
              const T dxh = g.at(r, j) * gv[j];
              sum_dxh += dxh;
              sum_dxh_xh += dxh * xh.at(r, j);
            }
            Tensor<T>& gx = t.grad(ix);
            const T inv_d = T(1) / static_cast<T>(d);
            for (Index j = 0; j < d; ++j) {
              const T dxh = g.at(r, j) * gv[j];
              gx.at(r, j) +=
                  (dxh - inv_d * sum_dxh - xh.at(r, j) * inv_d * sum_dxh_xh) / (*sigma)[r];
            }
          }
        }
        if (t.wants_grad(ig)) {
          Tensor<T>& gg = t.grad(ig);
          for (Index r = 0; r < rows; ++r)
            for (Index j = 0; j < d; ++j) gg[j] += g.at(r, j) * xh.at(r, j);
        }
        if (t.wants_grad(ib)) {
          Tensor<T>& gb = t.grad(ib);
          for (Index r = 0; r < rows; ++r)
            for (Index j = 0; j < d; ++j) gb[j] += g.at(r, j);
        }
      });
}

namespace detail {

/// Shared core of batch/instance normalization on a (C, T, F) tensor.
/// Training mode normalizes with the current per-channel statistics and
/// folds them into the running averages; inference normalizes with the
/// running averages only.
template <typename T>
Var<T> channel_norm(Var<T> x, Var<T> gain, Var<T> bias, Tensor<T>& run_mean,
                    Tensor<T>& run_var, bool training, T momentum, T eps,
                    const char* opname) {
  require<T>(x.rank() == 3, std::string(opname) + ": input must be (C, T, F)");
  const Index channels = x.dim(0);
  const Index per = x.value().numel() / channels;
  require<T>(run_mean.numel() == channels && run_var.numel() == channels,
             std::string(opname) + ": running stats size != channels");

  Tensor<T> out(x.value().shape());
  auto xhat = std::make_shared<Tensor<T>>(x.value().shape());
  auto sigma = std::make_shared<Tensor<T>>(Shape{channels});
  const bool affine = gain.valid();

  for (Index c = 0; c < channels; ++c) {
    T mu, var;
    if (training) {
      mu = T(0);
      for (Index i = 0; i < per; ++i) mu += x.value()[c * per + i];
      mu /= static_cast<T>(per);
      var = T(0);
      for (Index i = 0; i < per; ++i) {
        const T d = x.value()[c * per + i] - mu;
        var += d * d;
      }
      var /= static_cast<T>(per);
      run_mean[c] = momentum * run_mean[c] + (T(1) - momentum) * mu;
      run_var[c] = momentum * run_var[c] + (T(1) - momentum) * var;
    } else {
      mu = run_mean[c];
      var = run_var[c];
    }
    const T sd = std::sqrt(var + eps);
    (*sigma)[c] = sd;
    const T g = affine ? gain.value()[c] : T(1);
    const T b = affine ? bias.value()[c] : T(0);
    for (Index i = 0; i < per; ++i) {
      const T xh = (x.value()[c * per + i] - mu) / sd;
      (*xhat)[c * per + i] = xh;
      out[c * per + i] = g * xh + b;
    }
  }

  int ix = x.id, ig = affine ? gain.id : -1, ib = affine ? bias.id : -1;
  bool needs = x.tape->wants_grad(ix) || (affine && any_grad<T>({gain, bias}));
  return x.tape->make_node(
      std::move(out), needs,
      [ix, ig, ib, channels, per, xhat, sigma, training](Tape<T>& t, int self) {
        const Tensor<T>& g = t.grad(self);
        const Tensor<T>& xh = *xhat;
        for (Index c = 0; c < channels; ++c) {
          const T gv = ig >= 0 ? t.value(ig)[c] : T(1);
          if (t.wants_grad(ix)) {
            Tensor<T>& gx = t.grad(ix);
            if (training) {
              T sum_dxh = T(0), sum_dxh_xh = T(0);
              for (Index i = 0; i < per; ++i) {
                const T dxh = g[c * per + i] * gv;
                sum_dxh += dxh;
                sum_dxh_xh += dxh * xh[c * per + i];
              }
              const T inv_n = T(1) / static_cast<T>(per);
              for (Index i = 0; i < per; ++i) {
                const T dxh = g[c * per + i] * gv;
                gx[c * per + i] += (dxh - inv_n * sum_dxh - xh[c * per + i] * inv_n * sum_dxh_xh) /
                                   (*sigma)[c];
              }
            } else {
              for (Index i = 0; i < per; ++i)
                gx[c * per + i] += g[c * per + i] * gv / (*sigma)[c];
            }
          }
          if (ig >= 0 && t.wants_grad(ig)) {
            T acc = T(0);
            for (Index i = 0; i < per; ++i) acc += g[c * per + i] * xh[c * per + i];
            t.grad(ig)[c] += acc;
          }
          if (ib >= 0 && t.wants_grad(ib)) {
            T acc = T(0);
            for (Index i = 0; i < per; ++i) acc += g[c * per + i];
            t.grad(ib)[c] += acc;
          }
        }
      });
}

}  // namespace detail

/// Affine per-channel normalization; training uses batch statistics and
/// maintains running averages (momentum 0.99), inference uses the averages.
template <typename T>
Var<T> batch_norm(Var<T> x, Var<T> gain, Var<T> bias, Tensor<T>& run_mean, Tensor<T>& run_var,
                  bool training, T momentum = T(0.99), T eps = T(1e-5)) {
  return detail::channel_norm(x, gain, bias, run_mean, run_var, training, momentum, eps,
                              "batch_norm");
}

/// Per-sample per-channel normalization, no affine parameters. Tracks running
/// averages like batch_norm so inference stays causal.
template <typename T>
Var<T> instance_norm(Var<T> x, Tensor<T>& run_mean, Tensor<T>& run_var, bool training,
                     T momentum = T(0.99), T eps = T(1e-5)) {
  return detail::channel_norm(x, Var<T>{}, Var<T>{}, run_mean, run_var, training, momentum, eps,
                              "instance_norm");
}

// ---------------------------------------------------------------------------
// Power compression (magnitude-domain, phase-preserving)

namespace detail {

enum class PcompPart { Mag, Real, Imag };

template <typename T>
Var<T> pcomp(Var<T> re, Var<T> im, T gamma, PcompPart part) {
  require<T>(re.value().same_shape(im.value()), "pcomp: re/im shape mismatch");
  const T eps = T(1e-12);
  const Index n = re.value().numel();
  Tensor<T> out(re.value().shape());
  for (Index i = 0; i < n; ++i) {
    const T r = re.value()[i], q = im.value()[i];
    const T mag = std::sqrt(r * r + q * q);
    const T mg = std::pow(mag, gamma);
    const T guarded = std::max(mag, eps);
    switch (part) {
      case PcompPart::Mag: out[i] = mg; break;
      case PcompPart::Real: out[i] = mg * (r / guarded); break;
      case PcompPart::Imag: out[i] = mg * (q / guarded); break;
    }
  }
  int ire = re.id, iim = im.id;
  return re.tape->make_node(
      std::move(out), any_grad<T>({re, im}),
      [ire, iim, gamma, eps, n, part](Tape<T>& t, int self) {
        const Tensor<T>& g = t.grad(self);
        const Tensor<T>& rv = t.value(ire);
        const Tensor<T>& qv = t.value(iim);
        const bool wr = t.wants_grad(ire), wq = t.wants_grad(iim);
        for (Index i = 0; i < n; ++i) {
          const T r = rv[i], q = qv[i];
          const T mag = std::sqrt(r * r + q * q);
          if (mag <= eps) continue;  // gradient defined as zero at the guard
          T dr = T(0), dq = T(0);
          switch (part) {
            case PcompPart::Mag: {
              const T k = gamma * std::pow(mag, gamma - T(2));
              dr = k * r;
              dq = k * q;
              break;
            }
            case PcompPart::Real: {
              const T m1 = std::pow(mag, gamma - T(1));
              const T m3 = std::pow(mag, gamma - T(3));
              dr = m1 + (gamma - T(1)) * r * r * m3;
              dq = (gamma - T(1)) * r * q * m3;
              break;
            }
            case PcompPart::Imag: {
              const T m1 = std::pow(mag, gamma - T(1));
              const T m3 = std::pow(mag, gamma - T(3));
              dq = m1 + (gamma - T(1)) * q * q * m3;
              dr = (gamma - T(1)) * r * q * m3;
              break;
            }
          }
          if (wr) t.grad(ire)[i] += g[i] * dr;
          if (wq) t.grad(iim)[i] += g[i] * dq;
        }
      });
}

}  // namespace detail

template <typename T>
Var<T> pcomp_mag(Var<T> re, Var<T> im, T gamma) {
  return detail::pcomp(re, im, gamma, detail::PcompPart::Mag);
}
template <typename T>
Var<T> pcomp_real(Var<T> re, Var<T> im, T gamma) {
  return detail::pcomp(re, im, gamma, detail::PcompPart::Real);
}
template <typename T>
Var<T> pcomp_imag(Var<T> re, Var<T> im, T gamma) {
  return detail::pcomp(re, im, gamma, detail::PcompPart::Imag);
}

}  // namespace scmse::diff
