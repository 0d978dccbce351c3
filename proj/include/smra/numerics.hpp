// Copyright (c) 2026 The smrabooth authors
// SPDX-License-Identifier: Apache-2.0
//
// Value-level numerics and the finite-difference gradient checker that every
// differentiable path in the library is verified against.

#pragma once

#include "smra/autograd.hpp"
#include "smra/param_store.hpp"

namespace smra {

/// Row-wise softmax of a rank-2 tensor with per-row max subtraction.
template <class T>
Tensor<T> softmax_rows(const Tensor<T>& m) {
  if (m.rank() != 2) throw Error(ErrorCode::ShapeError, "softmax_rows needs rank 2");
  Tensor<T> out = m;
  ag::softmax_rows_inplace(out.data(), out.dim(0), out.dim(1));
  return out;
}

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t entries_checked = 0;
  bool passed = false;
};

/// Loss under test. Returns the loss; when `grads` is non-null it must also
/// fill the analytic gradient for every entry of `params`.
using LossWithGrad = std::function<double(const ParamStore<double>& params, ParamStore<double>* grads)>;

/// Compares analytic gradients to central differences (f(p+eps)-f(p-eps))/(2 eps)
/// for every parameter entry. Relative error uses max(|analytic|, |numeric|, 1e-8).
inline GradCheckReport grad_check(const LossWithGrad& loss_fn, const ParamStore<double>& params, double eps = 1e-4,
                                  double tol = 1e-3) {
  ParamStore<double> grads;
  const double f0 = loss_fn(params, &grads);
  if (!std::isfinite(f0)) throw Error(ErrorCode::NonFiniteProbe, "loss at the base point");

  GradCheckReport rep;
  ParamStore<double> probe = params;
  for (auto& [name, tensor] : probe.tensors) {
    const auto git = grads.tensors.find(name);
    for (std::size_t i = 0; i < tensor.size(); ++i) {
      const double orig = tensor[i];
      tensor[i] = orig + eps;
      const double fp = loss_fn(probe, nullptr);
      tensor[i] = orig - eps;
      const double fm = loss_fn(probe, nullptr);
      tensor[i] = orig;
      if (!std::isfinite(fp) || !std::isfinite(fm))
        throw Error(ErrorCode::NonFiniteProbe, name + "[" + std::to_string(i) + "]");
      const double numeric = (fp - fm) / (2.0 * eps);
      const double analytic = git == grads.tensors.end() ? 0.0 : git->second[i];
      const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
      const double rel = std::abs(analytic - numeric) / denom;
      ++rep.entries_checked;
      if (rep.worst_param.empty() || rel > rep.max_rel_err) {
        rep.max_rel_err = rel;
        rep.worst_param = name;
        rep.worst_index = i;
        rep.worst_analytic = analytic;
        rep.worst_numeric = numeric;
      }
    }
  }
  rep.passed = rep.max_rel_err < tol;
  return rep;
}

/// Adapts a tape-built scalar loss to the grad_check contract. The builder
/// receives one leaf per parameter (all requiring grad) and returns the loss.
template <class Builder>
LossWithGrad tape_loss(Builder builder) {
  return [builder](const ParamStore<double>& params, ParamStore<double>* grads) -> double {
    ag::Graph<double> g;
    std::map<std::string, ag::Var<double>> leaves;
    for (const auto& [name, t] : params.tensors) leaves.emplace(name, g.leaf(t, grads != nullptr));
    ag::Var<double> loss = builder(g, leaves);
    const double value = loss.value()[0];
    if (grads) {
      g.backward(loss);
      grads->tensors.clear();
      for (const auto& [name, v] : leaves) grads->tensors.emplace(name, g.grad(v));
    }
    return value;
  };
}

}  // namespace smra
