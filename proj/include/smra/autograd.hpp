// Copyright (c) 2026 The smrabooth authors
// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode tape over Tensor<T>. Nodes are appended in evaluation order,
// so reverse index order is a valid topological order for backward().
// Nodes whose inputs carry no gradient record no closure, which keeps
// inference on the same code path cheap.

#pragma once

#include <array>
#include <deque>
#include <memory>
#include <numbers>

#include "smra/tensor.hpp"

namespace smra::ag {

template <class T>
class Graph;

template <class T>
struct Var {
  Graph<T>* g = nullptr;
  std::size_t id = 0;

  const Tensor<T>& value() const { return g->value(*this); }
  const Dims& dims() const { return value().dims(); }
  std::size_t dim(std::size_t i) const { return value().dim(i); }
  std::size_t size() const { return value().size(); }
  bool requires_grad() const { return g->requires_grad(id); }
};

template <class T>
class Graph {
 public:
  using BackFn = std::function<void(Graph&, std::size_t self)>;

  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    BackFn backward;
  };

  Var<T> constant(Tensor<T> v) { return push(std::move(v), false, nullptr); }
  Var<T> leaf(Tensor<T> v, bool requires_grad = true) { return push(std::move(v), requires_grad, nullptr); }

  Var<T> op(Tensor<T> v, std::initializer_list<Var<T>> parents, BackFn fn) {
    bool rg = false;
    for (const auto& p : parents) rg = rg || nodes_[p.id].requires_grad;
    return push(std::move(v), rg, rg ? std::move(fn) : nullptr);
  }
  Var<T> op(Tensor<T> v, const std::vector<Var<T>>& parents, BackFn fn) {
    bool rg = false;
    for (const auto& p : parents) rg = rg || nodes_[p.id].requires_grad;
    return push(std::move(v), rg, rg ? std::move(fn) : nullptr);
  }

  const Tensor<T>& value(Var<T> v) const { return nodes_[v.id].value; }
  const Tensor<T>& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  // Gradient buffer of a node, zero-allocated on first touch.
  Tensor<T>& grad_ref(std::size_t id) {
    auto& n = nodes_[id];
    if (n.grad.empty()) n.grad = Tensor<T>(n.value.dims());
    return n.grad;
  }
  const Tensor<T>& grad_of(std::size_t id) const { return nodes_[id].grad; }

  // Gradient of the last backward() root w.r.t. v; zeros if v was unreachable.
  Tensor<T> grad(Var<T> v) const {
    const auto& n = nodes_[v.id];
    return n.grad.empty() ? Tensor<T>(n.value.dims()) : n.grad;
  }

  void backward(Var<T> root) {
    if (nodes_[root.id].value.size() != 1)
      throw Error(ErrorCode::ShapeError, "backward() needs a scalar root");
    for (auto& n : nodes_) n.grad = Tensor<T>();
    grad_ref(root.id)[0] = T(1);
    for (std::size_t i = root.id + 1; i-- > 0;) {
      auto& n = nodes_[i];
      if (n.backward && !n.grad.empty()) n.backward(*this, i);
    }
  }

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  Var<T> push(Tensor<T> v, bool rg, BackFn fn) {
    nodes_.push_back(Node{std::move(v), Tensor<T>(), rg, std::move(fn)});
    return Var<T>{this, nodes_.size() - 1};
  }

  std::deque<Node> nodes_;  // stable references across push_back
};

// ---------------------------------------------------------------- helpers

namespace detail {
template <class T>
void check_same(const Var<T>& a, const Var<T>& b, const char* what) {
  require_same_shape(a.value(), b.value(), what);
}

template <class T>
void accumulate(Graph<T>& g, std::size_t id, const Tensor<T>& delta) {
  if (!g.requires_grad(id)) return;
  auto& gr = g.grad_ref(id);
  for (std::size_t i = 0; i < gr.size(); ++i) gr[i] += delta[i];
}
}  // namespace detail

// ---------------------------------------------------------------- elementwise

template <class T>
Var<T> add(Var<T> a, Var<T> b) {
  detail::check_same(a, b, "add");
  Tensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  const auto ia = a.id, ib = b.id;
  return a.g->op(std::move(out), {a, b}, [ia, ib](Graph<T>& g, std::size_t s) {
    const auto& go = g.grad_of(s);
    detail::accumulate(g, ia, go);
    detail::accumulate(g, ib, go);
  });
}

template <class T>
Var<T> sub(Var<T> a, Var<T> b) {
  detail::check_same(a, b, "sub");
  Tensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  const auto ia = a.id, ib = b.id;
  return a.g->op(std::move(out), {a, b}, [ia, ib](Graph<T>& g, std::size_t s) {
    const auto& go = g.grad_of(s);
    detail::accumulate(g, ia, go);
    if (g.requires_grad(ib)) {
      auto& gb = g.grad_ref(ib);
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= go[i];
    }
  });
}

template <class T>
Var<T> mul(Var<T> a, Var<T> b) {
  detail::check_same(a, b, "mul");
  Tensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  const auto ia = a.id, ib = b.id;
  return a.g->op(std::move(out), {a, b}, [ia, ib](Graph<T>& g, std::size_t s) {
    const auto& go = g.grad_of(s);
    const auto& av = g.value(ia);
    const auto& bv = g.value(ib);
    if (g.requires_grad(ia)) {
      auto& ga = g.grad_ref(ia);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += go[i] * bv[i];
    }
    if (g.requires_grad(ib)) {
      auto& gb = g.grad_ref(ib);
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += go[i] * av[i];
    }
  });
}

template <class T>
Var<T> div(Var<T> a, Var<T> b) {
  detail::check_same(a, b, "div");
  Tensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] /= bv[i];
  const auto ia = a.id, ib = b.id;
  return a.g->op(std::move(out), {a, b}, [ia, ib](Graph<T>& g, std::size_t s) {
    const auto& go = g.grad_of(s);
    const auto& bv = g.value(ib);
    const auto& ov = g.value(s);
    if (g.requires_grad(ia)) {
      auto& ga = g.grad_ref(ia);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += go[i] / bv[i];
    }
    if (g.requires_grad(ib)) {
      auto& gb = g.grad_ref(ib);
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= go[i] * ov[i] / bv[i];
    }
  });
}

template <class T>
Var<T> scale(Var<T> a, T s) {
  Tensor<T> out = a.value();
  for (auto& v : out.vec()) v *= s;
  const auto ia = a.id;
  return a.g->op(std::move(out), {a}, [ia, s](Graph<T>& g, std::size_t self) {
    const auto& go = g.grad_of(self);
    auto& ga = g.grad_ref(ia);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += s * go[i];
  });
}

template <class T>
Var<T> add_scalar(Var<T> a, T s) {
  Tensor<T> out = a.value();
  for (auto& v : out.vec()) v += s;
  const auto ia = a.id;
  return a.g->op(std::move(out), {a}, [ia](Graph<T>& g, std::size_t self) {
    detail::accumulate(g, ia, g.grad_of(self));
  });
}

template <class T>
Var<T> square(Var<T> a) {
  Tensor<T> out = a.value();
  for (auto& v : out.vec()) v *= v;
  const auto ia = a.id;
  return a.g->op(std::move(out), {a}, [ia](Graph<T>& g, std::size_t self) {
    const auto& go = g.grad_of(self);
    const auto& av = g.value(ia);
    auto& ga = g.grad_ref(ia);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += T(2) * av[i] * go[i];
  });
}

template <class T>
Var<T> abs(Var<T> a) {
  Tensor<T> out = a.value();
  for (auto& v : out.vec()) v = std::abs(v);
  const auto ia = a.id;
  return a.g->op(std::move(out), {a}, [ia](Graph<T>& g, std::size_t self) {
    const auto& go = g.grad_of(self);
    const auto& av = g.value(ia);
    auto& ga = g.grad_ref(ia);
    for (std::size_t i = 0; i < ga.size(); ++i)
      ga[i] += av[i] > T(0) ? go[i] : (av[i] < T(0) ? -go[i] : T(0));
  });
}

template <class T>
Var<T> tanh(Var<T> a) {
  Tensor<T> out = a.value();
  for (auto& v : out.vec()) v = std::tanh(v);
  const auto ia = a.id;
  return a.g->op(std::move(out), {a}, [ia](Graph<T>& g, std::size_t self) {
    const auto& go = g.grad_of(self);
    const auto& ov = g.value(self);
    auto& ga = g.grad_ref(ia);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += go[i] * (T(1) - ov[i] * ov[i]);
  });
}

// Exact (erf) GELU.
template <class T>
Var<T> gelu(Var<T> a) {
  constexpr T inv_sqrt2 = T(0.70710678118654752440);
  Tensor<T> out = a.value();
  for (auto& v : out.vec()) v = T(0.5) * v * (T(1) + std::erf(v * inv_sqrt2));
  const auto ia = a.id;
  return a.g->op(std::move(out), {a}, [ia](Graph<T>& g, std::size_t self) {
    constexpr T inv_sqrt2pi = T(0.39894228040143267794);
    const auto& go = g.grad_of(self);
    const auto& av = g.value(ia);
    auto& ga = g.grad_ref(ia);
    for (std::size_t i = 0; i < ga.size(); ++i) {
      const T x = av[i];
      const T cdf = T(0.5) * (T(1) + std::erf(x * inv_sqrt2));
      const T pdf = inv_sqrt2pi * std::exp(T(-0.5) * x * x);
      ga[i] += go[i] * (cdf + x * pdf);
    }
  });
}

// ---------------------------------------------------------------- reductions

template <class T>
Var<T> sum(Var<T> a) {
  T s = T(0);
  for (auto v : a.value().vec()) s += v;
  const auto ia = a.id;
  return a.g->op(Tensor<T>::scalar(s), {a}, [ia](Graph<T>& g, std::size_t self) {
    const T go = g.grad_of(self)[0];
    auto& ga = g.grad_ref(ia);
    for (auto& v : ga.vec()) v += go;
  });
}

template <class T>
Var<T> mean(Var<T> a) {
  return scale(sum(a), T(1) / static_cast<T>(a.size()));
}

// ---------------------------------------------------------------- shape

template <class T>
Var<T> reshape(Var<T> a, Dims dims) {
  Tensor<T> out = a.value().reshaped(std::move(dims));
  const auto ia = a.id;
  return a.g->op(std::move(out), {a}, [ia](Graph<T>& g, std::size_t self) {
    detail::accumulate(g, ia, g.grad_of(self));
  });
}

using IndexMap = std::shared_ptr<const std::vector<std::size_t>>;

// out[i] = a[idx[i]]; repeated indices accumulate in backward.
template <class T>
Var<T> gather(Var<T> a, IndexMap idx, Dims out_dims) {
  if (idx->size() != numel(out_dims)) throw Error(ErrorCode::ShapeError, "gather index size mismatch");
  const auto& av = a.value();
  Tensor<T> out(std::move(out_dims));
  for (std::size_t i = 0; i < out.size(); ++i) {
    const auto j = (*idx)[i];
    if (j >= av.size()) throw Error(ErrorCode::ShapeError, "gather index out of range");
    out[i] = av[j];
  }
  const auto ia = a.id;
  return a.g->op(std::move(out), {a}, [ia, idx](Graph<T>& g, std::size_t self) {
    const auto& go = g.grad_of(self);
    auto& ga = g.grad_ref(ia);
    for (std::size_t i = 0; i < go.size(); ++i) ga[(*idx)[i]] += go[i];
  });
}

// Concatenate along axis 0; trailing dims must agree.
template <class T>
Var<T> concat0(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw Error(ErrorCode::ShapeError, "concat0 of nothing");
  Dims tail(parts[0].dims().begin() + 1, parts[0].dims().end());
  std::size_t rows = 0;
  std::vector<T> data;
  for (const auto& p : parts) {
    if (Dims(p.dims().begin() + 1, p.dims().end()) != tail)
      throw Error(ErrorCode::ShapeError, "concat0 trailing dims differ");
    rows += p.dim(0);
    data.insert(data.end(), p.value().vec().begin(), p.value().vec().end());
  }
  Dims dims{rows};
  dims.insert(dims.end(), tail.begin(), tail.end());
  std::vector<std::size_t> ids;
  for (const auto& p : parts) ids.push_back(p.id);
  return parts[0].g->op(Tensor<T>(std::move(dims), std::move(data)), parts,
                        [ids](Graph<T>& g, std::size_t self) {
                          const auto& go = g.grad_of(self);
                          std::size_t off = 0;
                          for (auto id : ids) {
                            const std::size_t n = g.value(id).size();
                            if (g.requires_grad(id)) {
                              auto& gp = g.grad_ref(id);
                              for (std::size_t i = 0; i < n; ++i) gp[i] += go[off + i];
                            }
                            off += n;
                          }
                        });
}

// Rows [begin, end) of the leading axis.
template <class T>
Var<T> slice0(Var<T> a, std::size_t begin, std::size_t end) {
  if (begin >= end || end > a.dim(0)) throw Error(ErrorCode::ShapeError, "slice0 out of range");
  const std::size_t row = a.size() / a.dim(0);
  auto idx = std::make_shared<std::vector<std::size_t>>((end - begin) * row);
  std::iota(idx->begin(), idx->end(), begin * row);
  Dims dims = a.dims();
  dims[0] = end - begin;
  return gather(a, IndexMap(idx), std::move(dims));
}

// ---------------------------------------------------------------- linear algebra

// a[M,K] * b[K,N]
template <class T>
Var<T> matmul(Var<T> a, Var<T> b) {
  Tensor<T> out = smra::matmul(a.value(), b.value());
  const auto ia = a.id, ib = b.id;
  return a.g->op(std::move(out), {a, b}, [ia, ib](Graph<T>& g, std::size_t self) {
    const auto& go = g.grad_of(self);
    const auto& av = g.value(ia);
    const auto& bv = g.value(ib);
    const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
    if (g.requires_grad(ia)) {
      const Tensor<T> bt = transpose2d(bv);
      matmul_kernel(go.data(), bt.data(), g.grad_ref(ia).data(), m, n, k, true);
    }
    if (g.requires_grad(ib)) {
      const Tensor<T> at = transpose2d(av);
      matmul_kernel(at.data(), go.data(), g.grad_ref(ib).data(), k, m, n, true);
    }
  });
}

// x[N,in] * w[out,in]^T (+ bias[out]).
template <class T>
Var<T> linear(Var<T> x, Var<T> w, const Var<T>* bias = nullptr) {
  const auto& xv = x.value();
  const auto& wv = w.value();
  if (xv.rank() != 2 || wv.rank() != 2 || xv.dim(1) != wv.dim(1))
    throw Error(ErrorCode::ShapeError, "linear " + dims_str(xv.dims()) + " with weight " + dims_str(wv.dims()));
  const std::size_t n = xv.dim(0), in = xv.dim(1), out_f = wv.dim(0);
  const Tensor<T> wt = transpose2d(wv);
  Tensor<T> out({n, out_f});
  matmul_kernel(xv.data(), wt.data(), out.data(), n, in, out_f);
  std::vector<Var<T>> parents{x, w};
  std::size_t ibias = 0;
  bool has_bias = bias != nullptr;
  if (has_bias) {
    const auto& bv = bias->value();
    if (bv.size() != out_f) throw Error(ErrorCode::ShapeError, "linear bias size mismatch");
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < out_f; ++j) out[i * out_f + j] += bv[j];
    parents.push_back(*bias);
    ibias = bias->id;
  }
  const auto ix = x.id, iw = w.id;
  return x.g->op(std::move(out), parents, [ix, iw, ibias, has_bias](Graph<T>& g, std::size_t self) {
    const auto& go = g.grad_of(self);
    const auto& xv = g.value(ix);
    const auto& wv = g.value(iw);
    const std::size_t n = xv.dim(0), in = xv.dim(1), out_f = wv.dim(0);
    if (g.requires_grad(ix)) matmul_kernel(go.data(), wv.data(), g.grad_ref(ix).data(), n, out_f, in, true);
    if (g.requires_grad(iw)) {
      const Tensor<T> gt = transpose2d(go);
      matmul_kernel(gt.data(), xv.data(), g.grad_ref(iw).data(), out_f, n, in, true);
    }
    if (has_bias && g.requires_grad(ibias)) {
      auto& gb = g.grad_ref(ibias);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < out_f; ++j) gb[j] += go[i * out_f + j];
    }
  });
}

template <class T>
Var<T> linear(Var<T> x, Var<T> w, Var<T> bias) {
  return linear(x, w, &bias);
}

// x[N,D] + v[D] broadcast over rows.
template <class T>
Var<T> add_rowvec(Var<T> x, Var<T> v) {
  const std::size_t n = x.dim(0), d = x.size() / x.dim(0);
  if (v.size() != d) throw Error(ErrorCode::ShapeError, "add_rowvec width mismatch");
  Tensor<T> out = x.value();
  const auto& vv = v.value();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] += vv[j];
  const auto ix = x.id, iv = v.id;
  return x.g->op(std::move(out), {x, v}, [ix, iv, n, d](Graph<T>& g, std::size_t self) {
    const auto& go = g.grad_of(self);
    detail::accumulate(g, ix, go);
    if (g.requires_grad(iv)) {
      auto& gv = g.grad_ref(iv);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) gv[j] += go[i * d + j];
    }
  });
}

// Per-row normalization to zero mean, unit variance (no affine).
template <class T>
Var<T> layernorm_rows(Var<T> x, T eps = T(1e-5)) {
  const auto& xv = x.value();
  const std::size_t n = xv.dim(0), d = xv.size() / n;
  Tensor<T> out(xv.dims());
  auto inv_std = std::make_shared<std::vector<T>>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const T* r = xv.data() + i * d;
    T mu = 0;
    for (std::size_t j = 0; j < d; ++j) mu += r[j];
    mu /= static_cast<T>(d);
    T var = 0;
    for (std::size_t j = 0; j < d; ++j) var += (r[j] - mu) * (r[j] - mu);
    var /= static_cast<T>(d);
    const T is = T(1) / std::sqrt(var + eps);
    (*inv_std)[i] = is;
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] = (r[j] - mu) * is;
  }
  const auto ix = x.id;
  return x.g->op(std::move(out), {x}, [ix, inv_std, n, d](Graph<T>& g, std::size_t self) {
    const auto& go = g.grad_of(self);
    const auto& y = g.value(self);
    auto& gx = g.grad_ref(ix);
    for (std::size_t i = 0; i < n; ++i) {
      const T* gr = go.data() + i * d;
      const T* yr = y.data() + i * d;
      T mg = 0, mgy = 0;
      for (std::size_t j = 0; j < d; ++j) {
        mg += gr[j];
        mgy += gr[j] * yr[j];
      }
      mg /= static_cast<T>(d);
      mgy /= static_cast<T>(d);
      for (std::size_t j = 0; j < d; ++j) gx[i * d + j] += (*inv_std)[i] * (gr[j] - mg - yr[j] * mgy);
    }
  });
}

template <class T>
void softmax_rows_inplace(T* data, std::size_t n, std::size_t d) {
  for (std::size_t i = 0; i < n; ++i) {
    T* r = data + i * d;
    const T mx = *std::max_element(r, r + d);
    T s = 0;
    for (std::size_t j = 0; j < d; ++j) {
      r[j] = std::exp(r[j] - mx);
      s += r[j];
    }
    for (std::size_t j = 0; j < d; ++j) r[j] /= s;
  }
}

template <class T>
Var<T> softmax_rows(Var<T> x) {
  if (x.value().rank() != 2) throw Error(ErrorCode::ShapeError, "softmax_rows needs rank 2");
  Tensor<T> out = x.value();
  const std::size_t n = out.dim(0), d = out.dim(1);
  softmax_rows_inplace(out.data(), n, d);
  const auto ix = x.id;
  return x.g->op(std::move(out), {x}, [ix, n, d](Graph<T>& g, std::size_t self) {
    const auto& go = g.grad_of(self);
    const auto& p = g.value(self);
    auto& gx = g.grad_ref(ix);
    for (std::size_t i = 0; i < n; ++i) {
      T dot = 0;
      for (std::size_t j = 0; j < d; ++j) dot += go[i * d + j] * p[i * d + j];
      for (std::size_t j = 0; j < d; ++j) gx[i * d + j] += p[i * d + j] * (go[i * d + j] - dot);
    }
  });
}

// Multi-head scaled dot-product attention. q[N,D], k[M,D], v[M,D] -> [N,D].
template <class T>
Var<T> attention(Var<T> q, Var<T> k, Var<T> v, std::size_t heads) {
  const auto& qv = q.value();
  const auto& kv = k.value();
  const auto& vv = v.value();
  const std::size_t n = qv.dim(0), m = kv.dim(0), d = qv.dim(1);
  if (kv.dim(1) != d || vv.dim(1) != d || vv.dim(0) != m || d % heads != 0)
    throw Error(ErrorCode::ShapeError, "attention shape mismatch");
  const std::size_t dh = d / heads;
  const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(dh));

  auto probs = std::make_shared<std::vector<Tensor<T>>>();
  Tensor<T> out({n, d});
  Tensor<T> qh({n, dh}), kht({dh, m}), vh({m, dh}), oh({n, dh});
  for (std::size_t h = 0; h < heads; ++h) {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < dh; ++j) qh[i * dh + j] = qv[i * d + h * dh + j] * inv_sqrt;
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < dh; ++j) {
        kht[j * m + i] = kv[i * d + h * dh + j];
        vh[i * dh + j] = vv[i * d + h * dh + j];
      }
    Tensor<T> p({n, m});
    matmul_kernel(qh.data(), kht.data(), p.data(), n, dh, m);
    softmax_rows_inplace(p.data(), n, m);
    matmul_kernel(p.data(), vh.data(), oh.data(), n, m, dh);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < dh; ++j) out[i * d + h * dh + j] = oh[i * dh + j];
    probs->push_back(std::move(p));
  }
  const auto iq = q.id, ik = k.id, iv = v.id;
  return q.g->op(std::move(out), {q, k, v},
                 [iq, ik, iv, probs, n, m, d, dh, heads, inv_sqrt](Graph<T>& g, std::size_t self) {
                   const auto& go = g.grad_of(self);
                   const auto& qv = g.value(iq);
                   const auto& kv = g.value(ik);
                   const auto& vv = g.value(iv);
                   Tensor<T> goh({n, dh}), vht({dh, m}), kh({m, dh}), qh({n, dh});
                   Tensor<T> dp({n, m}), tmp_nd({n, dh}), tmp_md({m, dh});
                   for (std::size_t h = 0; h < heads; ++h) {
                     const auto& p = (*probs)[h];
                     for (std::size_t i = 0; i < n; ++i)
                       for (std::size_t j = 0; j < dh; ++j) {
                         goh[i * dh + j] = go[i * d + h * dh + j];
                         qh[i * dh + j] = qv[i * d + h * dh + j];
                       }
                     for (std::size_t i = 0; i < m; ++i)
                       for (std::size_t j = 0; j < dh; ++j) {
                         vht[j * m + i] = vv[i * d + h * dh + j];
                         kh[i * dh + j] = kv[i * d + h * dh + j];
                       }
                     if (g.requires_grad(iv)) {
                       const Tensor<T> pt = transpose2d(p);
                       matmul_kernel(pt.data(), goh.data(), tmp_md.data(), m, n, dh);
                       auto& gv = g.grad_ref(iv);
                       for (std::size_t i = 0; i < m; ++i)
                         for (std::size_t j = 0; j < dh; ++j) gv[i * d + h * dh + j] += tmp_md[i * dh + j];
                     }
                     // dS = P .* (dP - rowsum(dP .* P)), scaled by 1/sqrt(dh).
                     matmul_kernel(goh.data(), vht.data(), dp.data(), n, dh, m);
                     for (std::size_t i = 0; i < n; ++i) {
                       T dot = 0;
                       for (std::size_t j = 0; j < m; ++j) dot += dp[i * m + j] * p[i * m + j];
                       for (std::size_t j = 0; j < m; ++j)
                         dp[i * m + j] = p[i * m + j] * (dp[i * m + j] - dot) * inv_sqrt;
                     }
                     if (g.requires_grad(iq)) {
                       matmul_kernel(dp.data(), kh.data(), tmp_nd.data(), n, m, dh);
                       auto& gq = g.grad_ref(iq);
                       for (std::size_t i = 0; i < n; ++i)
                         for (std::size_t j = 0; j < dh; ++j) gq[i * d + h * dh + j] += tmp_nd[i * dh + j];
                     }
                     if (g.requires_grad(ik)) {
                       const Tensor<T> dst = transpose2d(dp);
                       matmul_kernel(dst.data(), qh.data(), tmp_md.data(), m, n, dh);
                       auto& gk = g.grad_ref(ik);
                       for (std::size_t i = 0; i < m; ++i)
                         for (std::size_t j = 0; j < dh; ++j) gk[i * d + h * dh + j] += tmp_md[i * dh + j];
                     }
                   }
                 });
}

// Row-wise cosine similarity of a[N,D] and b[N,D] -> [N]; norms are clamped
// below at eps.
template <class T>
Var<T> cosine_rows(Var<T> a, Var<T> b, T eps = T(1e-8)) {
  detail::check_same(a, b, "cosine_rows");
  const auto& av = a.value();
  const auto& bv = b.value();
  const std::size_t n = av.dim(0), d = av.size() / n;
  Tensor<T> out({n});
  auto na = std::make_shared<std::vector<T>>(n);
  auto nb = std::make_shared<std::vector<T>>(n);
  for (std::size_t i = 0; i < n; ++i) {
    T dot = 0, sa = 0, sb = 0;
    for (std::size_t j = 0; j < d; ++j) {
      dot += av[i * d + j] * bv[i * d + j];
      sa += av[i * d + j] * av[i * d + j];
      sb += bv[i * d + j] * bv[i * d + j];
    }
    (*na)[i] = std::sqrt(sa);
    (*nb)[i] = std::sqrt(sb);
    out[i] = dot / (std::max((*na)[i], eps) * std::max((*nb)[i], eps));
  }
  const auto ia = a.id, ib = b.id;
  return a.g->op(std::move(out), {a, b}, [ia, ib, na, nb, n, d, eps](Graph<T>& g, std::size_t self) {
    const auto& go = g.grad_of(self);
    const auto& av = g.value(ia);
    const auto& bv = g.value(ib);
    const auto& cv = g.value(self);
    for (std::size_t i = 0; i < n; ++i) {
      const T a_n = std::max((*na)[i], eps), b_n = std::max((*nb)[i], eps);
      const bool a_clamped = (*na)[i] < eps, b_clamped = (*nb)[i] < eps;
      const T c = cv[i];
      // d cos / d a = b/(|a||b|) - c a/|a|^2 (second term vanishes when clamped).
      if (g.requires_grad(ia)) {
        auto& ga = g.grad_ref(ia);
        for (std::size_t j = 0; j < d; ++j) {
          T v = bv[i * d + j] / (a_n * b_n);
          if (!a_clamped) v -= c * av[i * d + j] / (a_n * a_n);
          ga[i * d + j] += go[i] * v;
        }
      }
      if (g.requires_grad(ib)) {
        auto& gb = g.grad_ref(ib);
        for (std::size_t j = 0; j < d; ++j) {
          T v = av[i * d + j] / (a_n * b_n);
          if (!b_clamped) v -= c * bv[i * d + j] / (b_n * b_n);
          gb[i * d + j] += go[i] * v;
        }
      }
    }
  });
}

// 3x3 correlation over the last two axes of x[B,H,W] with replicate padding.
// w is row-major over offsets (dy, dx) in {-1,0,1}^2.
template <class T>
Var<T> stencil3x3(Var<T> x, const std::array<T, 9>& w) {
  const auto& xv = x.value();
  if (xv.rank() != 3) throw Error(ErrorCode::ShapeError, "stencil3x3 needs [B,H,W]");
  const std::size_t b = xv.dim(0), h = xv.dim(1), wd = xv.dim(2);
  auto clampi = [](std::ptrdiff_t v, std::size_t hi) {
    return static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(v, 0, static_cast<std::ptrdiff_t>(hi) - 1));
  };
  Tensor<T> out(xv.dims());
  for (std::size_t k = 0; k < b; ++k) {
    const T* src = xv.data() + k * h * wd;
    T* dst = out.data() + k * h * wd;
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < wd; ++j) {
        T acc = 0;
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            const T c = w[(dy + 1) * 3 + (dx + 1)];
            if (c == T(0)) continue;
            acc += c * src[clampi(std::ptrdiff_t(i) + dy, h) * wd + clampi(std::ptrdiff_t(j) + dx, wd)];
          }
        dst[i * wd + j] = acc;
      }
  }
  const auto ix = x.id;
  return x.g->op(std::move(out), {x}, [ix, w, b, h, wd, clampi](Graph<T>& g, std::size_t self) {
    const auto& go = g.grad_of(self);
    auto& gx = g.grad_ref(ix);
    for (std::size_t k = 0; k < b; ++k) {
      const T* src = go.data() + k * h * wd;
      T* dst = gx.data() + k * h * wd;
      for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < wd; ++j)
          for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
              const T c = w[(dy + 1) * 3 + (dx + 1)];
              if (c == T(0)) continue;
              dst[clampi(std::ptrdiff_t(i) + dy, h) * wd + clampi(std::ptrdiff_t(j) + dx, wd)] +=
                  c * src[i * wd + j];
            }
    }
  });
}

}  // namespace smra::ag
