// Copyright (c) 2026 The smrabooth authors
// SPDX-License-Identifier: Apache-2.0
//
// Toy diffusion transformer. Every latent site (t', i, j) is one token;
// blocks are pre-norm {self-attention, cross-attention to text, GELU FFN}
// with residuals. Linear layers are addressed by name so adapters can be
// routed onto them.

#pragma once

#include <array>
#include <map>
#include <optional>
#include <sstream>

#include <Eigen/Eigenvalues>

#include "smra/autograd.hpp"
#include "smra/param_store.hpp"

namespace smra::dit {

enum class TapMode { PostResidual, Normalized };

/// What the output head regresses. Velocity: u directly. Clean: an estimate
/// of z0, returned as u = (z_t - z0_hat) / max(t, t_min).
enum class Prediction { Velocity, Clean, Preconditioned };

struct ModelConfig {
  std::size_t d_model = 64;
  std::size_t n_blocks = 4;
  std::size_t n_heads = 4;
  std::size_t d_ffn = 256;
  std::size_t d_lat = 192;
  std::size_t max_text_tokens = 8;
  std::size_t text_buckets = 512;
  bool cross_attn_targetable = false;
  TapMode tap = TapMode::PostResidual;
  Prediction prediction = Prediction::Preconditioned;
  double t_min = 0.05;
  double data_mean = 0.5;  // per-element latent statistics for preconditioning
  double data_std = 0.2;

  void validate() const {
    if (d_model == 0 || n_blocks == 0 || n_heads == 0 || d_ffn == 0 || d_lat == 0 || max_text_tokens == 0 ||
        text_buckets == 0)
      throw Error(ErrorCode::BadConfig, "model dimensions must be positive");
    if (d_model % n_heads != 0) throw Error(ErrorCode::BadConfig, "d_model must be divisible by n_heads");
    if (!(t_min > 0.0 && t_min <= 1.0)) throw Error(ErrorCode::BadConfig, "t_min must lie in (0,1]");
    if (!(data_std > 0.0)) throw Error(ErrorCode::BadConfig, "data_std must be > 0");
  }
};

// The six adapter-targetable layer types.
inline const std::array<std::string, 6> kLayerTypes{"q", "k", "v", "o", "ffn.0", "ffn.2"};

inline bool is_layer_type(std::string_view t) {
  return std::find(kLayerTypes.begin(), kLayerTypes.end(), t) != kLayerTypes.end();
}

inline std::string block_prefix(std::size_t b) { return "block" + std::to_string(b); }

struct LayerInfo {
  std::string name;
  std::string type;  // one of kLayerTypes, or "cross.q" / "cross.k" / ... for cross-attention
  std::size_t block;
  bool targetable;
  std::size_t d_in, d_out;
};

inline std::vector<LayerInfo> named_layers(const ModelConfig& cfg) {
  cfg.validate();
  std::vector<LayerInfo> out;
  const std::size_t d = cfg.d_model;
  for (std::size_t b = 1; b <= cfg.n_blocks; ++b) {
    const std::string p = block_prefix(b);
    for (const char* x : {"q", "k", "v", "o"}) out.push_back({p + ".self_attn." + x, x, b, true, d, d});
    out.push_back({p + ".ffn.0", "ffn.0", b, true, d, cfg.d_ffn});
    out.push_back({p + ".ffn.2", "ffn.2", b, true, cfg.d_ffn, d});
    for (const char* x : {"q", "k", "v", "o"})
      out.push_back({p + ".cross_attn." + x, std::string("cross.") + x, b, cfg.cross_attn_targetable, d, d});
  }
  return out;
}

inline std::vector<std::string> targetable_layer_names(const ModelConfig& cfg) {
  std::vector<std::string> out;
  for (const auto& l : named_layers(cfg))
    if (l.targetable) out.push_back(l.name);
  return out;
}

/// Layer type of a full layer name, e.g. "block2.self_attn.v" -> "v".
inline std::string layer_type_of(std::string_view name) {
  const auto dot = name.find('.');
  std::string_view rest = dot == std::string_view::npos ? name : name.substr(dot + 1);
  if (rest.starts_with("self_attn.")) return std::string(rest.substr(10));
  if (rest.starts_with("cross_attn.")) return "cross." + std::string(rest.substr(11));
  return std::string(rest);
}

// ---------------------------------------------------------------- text

inline constexpr std::string_view kSubjectToken = "V*";
inline constexpr std::string_view kMotionToken = "S*";

struct CondTokens {
  std::vector<std::size_t> token_ids;
  Tensor<float> embeddings;  // [n_tok, d_model]; rows of reserved ids are zero placeholders
};

inline std::size_t subject_token_id(const ModelConfig& c) { return c.text_buckets; }
inline std::size_t motion_token_id(const ModelConfig& c) { return c.text_buckets + 1; }
inline std::size_t null_token_id(const ModelConfig& c) { return c.text_buckets + 2; }

inline bool is_reserved(const ModelConfig& c, std::size_t id) { return id >= c.text_buckets; }

inline std::string reserved_param(const ModelConfig& c, std::size_t id) {
  if (id == subject_token_id(c)) return "text.vstar";
  if (id == motion_token_id(c)) return "text.sstar";
  return "text.null";
}

inline std::vector<std::string> tokenize(std::string_view prompt) {
  std::vector<std::string> out;
  std::istringstream is{std::string(prompt)};
  for (std::string w; is >> w;) out.push_back(w);
  return out;
}

/// Frozen hashed-bucket text embedding; "V*" and "S*" get dedicated trainable rows.
inline CondTokens embed_text(std::string_view prompt, std::uint64_t table_seed, const ModelConfig& cfg) {
  const auto words = tokenize(prompt);
  if (words.empty()) throw Error(ErrorCode::EmptyPrompt, "prompt has no tokens");
  if (words.size() > cfg.max_text_tokens)
    throw Error(ErrorCode::TooManyTokens,
                std::to_string(words.size()) + " tokens > max " + std::to_string(cfg.max_text_tokens));
  CondTokens ct{{}, Tensor<float>({words.size(), cfg.d_model})};
  for (std::size_t i = 0; i < words.size(); ++i) {
    std::size_t id;
    if (words[i] == kSubjectToken) {
      id = subject_token_id(cfg);
    } else if (words[i] == kMotionToken) {
      id = motion_token_id(cfg);
    } else {
      id = fnv1a(words[i]) % cfg.text_buckets;
      const auto row = randn<float>({cfg.d_model}, derive_seed(table_seed, id));
      std::copy(row.vec().begin(), row.vec().end(), ct.embeddings.data() + i * cfg.d_model);
    }
    ct.token_ids.push_back(id);
  }
  return ct;
}

/// Unconditional input for classifier-free guidance: one learned null token.
inline CondTokens null_cond(const ModelConfig& cfg) {
  return CondTokens{{null_token_id(cfg)}, Tensor<float>({1, cfg.d_model})};
}

// ---------------------------------------------------------------- latent prior

// Frozen per-token Gaussian prior used by the preconditioned output: mean
// [d_lat], orthonormal basis [d_lat, d_lat] (one direction per column) and
// per-direction variances [d_lat]. Stored with the checkpoint, never trained.
inline bool is_buffer(std::string_view name) { return name.starts_with("prior."); }

inline void set_default_prior(ParamStore<float>& p, const ModelConfig& cfg) {
  const std::size_t n = cfg.d_lat;
  p["prior.mean"] = Tensor<float>({n}, static_cast<float>(cfg.data_mean));
  Tensor<float> basis({n, n});
  for (std::size_t i = 0; i < n; ++i) basis[i * n + i] = 1.0f;
  p["prior.basis"] = std::move(basis);
  p["prior.var"] = Tensor<float>({n}, static_cast<float>(cfg.data_std * cfg.data_std));
}

/// Fits the prior to the tokens of `latents` ([T',h,w,d_lat] each): sample
/// mean, covariance eigenbasis, eigenvalues floored at `var_floor`.
inline void fit_prior(ParamStore<float>& p, const ModelConfig& cfg, const std::vector<Tensor<float>>& latents,
                      double var_floor = 1e-4) {
  const std::size_t n = cfg.d_lat;
  Eigen::VectorXd mu = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  std::size_t count = 0;
  for (const auto& z : latents) {
    if (z.rank() != 4 || z.dim(3) != n) throw Error(ErrorCode::ShapeError, "prior fit needs latents with d_lat channels");
    const std::size_t rows = z.size() / n;
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t i = 0; i < n; ++i) mu(static_cast<Eigen::Index>(i)) += z[r * n + i];
    count += rows;
  }
  if (count < 2) throw Error(ErrorCode::EmptyEvalSet, "prior fit needs at least two tokens");
  mu /= static_cast<double>(count);
  Eigen::VectorXd x(static_cast<Eigen::Index>(n));
  for (const auto& z : latents)
    for (std::size_t r = 0; r < z.size() / n; ++r) {
      for (std::size_t i = 0; i < n; ++i) x(static_cast<Eigen::Index>(i)) = z[r * n + i] - mu(static_cast<Eigen::Index>(i));
      cov.selfadjointView<Eigen::Lower>().rankUpdate(x);
    }
  cov = cov.selfadjointView<Eigen::Lower>();
  cov /= static_cast<double>(count - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  if (es.info() != Eigen::Success) throw Error(ErrorCode::NonFiniteActivation, "prior eigendecomposition failed");
  Tensor<float> mean({n}), basis({n, n}), var({n});
  for (std::size_t k = 0; k < n; ++k) {
    // Descending variance order.
    const auto src = static_cast<Eigen::Index>(n - 1 - k);
    mean[k] = static_cast<float>(mu(static_cast<Eigen::Index>(k)));
    var[k] = static_cast<float>(std::max(es.eigenvalues()(src), var_floor));
    for (std::size_t i = 0; i < n; ++i) basis[i * n + k] = static_cast<float>(es.eigenvectors()(static_cast<Eigen::Index>(i), src));
  }
  p["prior.mean"] = std::move(mean);
  p["prior.basis"] = std::move(basis);
  p["prior.var"] = std::move(var);
}

// ---------------------------------------------------------------- params

inline ParamStore<float> init_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ParamStore<float> p;
  p.rng_seed = seed;
  Rng rng(derive_seed(seed, "dit.init"));
  const std::size_t d = cfg.d_model;
  auto lin = [&](const std::string& name, std::size_t in, std::size_t out, double gain = 1.0) {
    p[name + ".weight"] = randn<float>({out, in}, rng, gain / std::sqrt(static_cast<double>(in)));
    p[name + ".bias"] = Tensor<float>({out});
  };
  lin("in", cfg.d_lat, d);
  lin("time", d, d);
  for (std::size_t b = 1; b <= cfg.n_blocks; ++b) {
    const std::string pre = block_prefix(b);
    for (const char* attn : {".self_attn.", ".cross_attn."}) {
      for (const char* x : {"q", "k", "v"}) lin(pre + attn + x, d, d);
      lin(pre + attn + "o", d, d, 0.5);
    }
    lin(pre + ".ffn.0", d, cfg.d_ffn);
    lin(pre + ".ffn.2", cfg.d_ffn, d, 0.5);
  }
  lin("out", d, cfg.d_lat, 0.5);
  for (const char* t : {"text.null", "text.vstar", "text.sstar"}) p[t] = randn<float>({1, d}, rng);
  set_default_prior(p, cfg);
  return p;
}

template <class T>
using BoundParams = std::map<std::string, ag::Var<T>>;

template <class T, class S>
BoundParams<T> bind(ag::Graph<T>& g, const ParamStore<S>& store, bool requires_grad = false) {
  BoundParams<T> out;
  for (const auto& [k, t] : store.tensors) {
    const bool rg = requires_grad && !is_buffer(k);
    if constexpr (std::is_same_v<T, S>)
      out.emplace(k, g.leaf(t, rg));
    else
      out.emplace(k, g.leaf(t.template cast<T>(), rg));
  }
  return out;
}

template <class T>
const ag::Var<T>& param(const BoundParams<T>& p, const std::string& name) {
  auto it = p.find(name);
  if (it == p.end()) throw Error(ErrorCode::ShapeError, "missing parameter '" + name + "'");
  return it->second;
}

/// Adapter terms bound into a graph: per layer, a list of scale * B * A deltas
/// (summed in list order before being added to the base output), plus
/// overrides for reserved token rows.
template <class T>
struct BoundLora {
  struct Term {
    ag::Var<T> A;  // [r, D_in]
    ag::Var<T> B;  // [D_out, r]
    T scale;
  };
  std::map<std::string, std::vector<Term>> layers;
  std::map<std::size_t, ag::Var<T>> token_rows;
};

// ---------------------------------------------------------------- embeddings

/// Factorized sinusoidal position code over (t', i, j).
template <class T>
Tensor<T> position_embedding(std::size_t frames, std::size_t h, std::size_t w, std::size_t d) {
  const std::size_t dt = std::max<std::size_t>(2, (d / 4) & ~std::size_t{1});
  const std::size_t dy = (d - dt) / 2;
  Tensor<T> out({frames * h * w, d});
  std::size_t row = 0;
  for (std::size_t k = 0; k < frames; ++k)
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j, ++row)
        for (std::size_t c = 0; c < d; ++c) {
          std::size_t local, len;
          double pos;
          if (c < dt) {
            local = c, len = dt, pos = static_cast<double>(k);
          } else if (c < dt + dy) {
            local = c - dt, len = dy, pos = static_cast<double>(i);
          } else {
            local = c - dt - dy, len = d - dt - dy, pos = static_cast<double>(j);
          }
          const double half = std::max<double>(1.0, static_cast<double>(len / 2));
          const double freq = std::exp(-std::log(100.0) * static_cast<double>(local / 2) / half);
          out[row * d + c] = static_cast<T>(local % 2 == 0 ? std::sin(pos * freq) : std::cos(pos * freq));
        }
  return out;
}

template <class T>
Tensor<T> time_embedding(T t, std::size_t d) {
  Tensor<T> out({1, d});
  const std::size_t half = d / 2;
  for (std::size_t i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
    const double arg = 1000.0 * static_cast<double>(t) * freq;
    out[i] = static_cast<T>(std::sin(arg));
    out[half + i] = static_cast<T>(std::cos(arg));
  }
  return out;
}

// ---------------------------------------------------------------- forward

template <class T>
struct ForwardOutput {
  ag::Var<T> velocity;  // latent-shaped
  ag::Var<T> tap;       // [n_latent_tokens, d_model], hidden state after block 1
};

/// Per-direction output coefficients at time t: with prior variance v and
/// s^2 = (1-t)^2 v + t^2, the velocity is skip * c + out * F in prior
/// coordinates c, where skip = (t - (1-t) v) / s^2 is the linear least-squares
/// estimate and out = sqrt(v) / s scales the unit-variance network residual F.
struct Preconditioning {
  double skip, out;
};

inline Preconditioning precondition(double var, double t) {
  const double r = 1.0 - t, s2 = r * r * var + t * t;
  return {(t - r * var) / s2, std::sqrt(var / s2)};
}

namespace detail {

template <class T>
ag::Var<T> named_linear(ag::Var<T> x, const BoundParams<T>& p, const std::string& name, const BoundLora<T>* lora) {
  ag::Var<T> y = ag::linear(x, param(p, name + ".weight"), param(p, name + ".bias"));
  if (!lora) return y;
  auto it = lora->layers.find(name);
  if (it == lora->layers.end() || it->second.empty()) return y;
  std::optional<ag::Var<T>> delta;
  for (const auto& term : it->second) {
    ag::Var<T> d = ag::scale(ag::linear(ag::linear(x, term.A), term.B), term.scale);
    delta = delta ? ag::add(*delta, d) : d;
  }
  return ag::add(y, *delta);
}

template <class T>
ag::Var<T> cond_matrix(ag::Graph<T>& g, const ModelConfig& cfg, const BoundParams<T>& p, const CondTokens& cond,
                       const BoundLora<T>* lora) {
  if (cond.token_ids.empty() || cond.token_ids.size() > cfg.max_text_tokens)
    throw Error(ErrorCode::TooManyTokens, "conditioning must have 1..max_text_tokens tokens");
  if (cond.embeddings.rank() != 2 || cond.embeddings.dim(0) != cond.token_ids.size() ||
      cond.embeddings.dim(1) != cfg.d_model)
    throw Error(ErrorCode::ShapeError, "conditioning embeddings " + dims_str(cond.embeddings.dims()));
  std::vector<ag::Var<T>> rows;
  const std::size_t d = cfg.d_model;
  for (std::size_t i = 0; i < cond.token_ids.size(); ++i) {
    const auto id = cond.token_ids[i];
    if (is_reserved(cfg, id)) {
      if (lora) {
        auto it = lora->token_rows.find(id);
        if (it != lora->token_rows.end()) {
          rows.push_back(it->second);
          continue;
        }
      }
      rows.push_back(param(p, reserved_param(cfg, id)));
    } else {
      std::vector<T> r(d);
      for (std::size_t c = 0; c < d; ++c) r[c] = static_cast<T>(cond.embeddings[i * d + c]);
      rows.push_back(g.constant(Tensor<T>({1, d}, std::move(r))));
    }
  }
  return rows.size() == 1 ? rows[0] : ag::concat0(rows);
}

// u = B (skip * (B^T (z - (1-t) mu)) + out * F) - mu over tokens [n, d_lat].
template <class T>
ag::Var<T> precondition_output(ag::Graph<T>& g, const ModelConfig& cfg, const BoundParams<T>& p, ag::Var<T> tokens,
                               ag::Var<T> f, T t) {
  const std::size_t n = tokens.dim(0), dl = cfg.d_lat;
  const Tensor<T> mu = param(p, "prior.mean").value();
  const Tensor<T> basis = param(p, "prior.basis").value();
  const Tensor<T> var = param(p, "prior.var").value();
  if (mu.size() != dl || basis.size() != dl * dl || var.size() != dl)
    throw Error(ErrorCode::ShapeError, "latent prior does not match d_lat");
  Tensor<T> centre({n, dl}), skip({n, dl}), gain({n, dl}), shift({n, dl});
  const T r = T(1) - t;
  for (std::size_t k = 0; k < dl; ++k) {
    const auto pc = precondition(static_cast<double>(var[k]), static_cast<double>(t));
    for (std::size_t i = 0; i < n; ++i) {
      centre[i * dl + k] = -r * mu[k];
      skip[i * dl + k] = static_cast<T>(pc.skip);
      gain[i * dl + k] = static_cast<T>(pc.out);
      shift[i * dl + k] = -mu[k];
    }
  }
  const auto c = ag::matmul(ag::add(tokens, g.constant(centre)), g.constant(basis));
  const auto uc = ag::add(ag::mul(c, g.constant(skip)), ag::mul(f, g.constant(gain)));
  return ag::add(ag::matmul(uc, g.constant(transpose2d(basis))), g.constant(shift));
}

}  // namespace detail

/// Velocity prediction u(z_t, c, t) plus the block-1 feature tap.
template <class T>
ForwardOutput<T> forward(ag::Graph<T>& g, const ModelConfig& cfg, const BoundParams<T>& p, ag::Var<T> z_t, T t,
                         const CondTokens& cond, const BoundLora<T>* lora = nullptr) {
  cfg.validate();
  const Dims zd = z_t.dims();
  if (zd.size() != 4 || zd[3] != cfg.d_lat)
    throw Error(ErrorCode::ShapeError, "latent " + dims_str(zd) + " does not match d_lat " + std::to_string(cfg.d_lat));
  if (!(t >= T(0) && t <= T(1))) throw Error(ErrorCode::ShapeError, "t must lie in [0,1]");
  const std::size_t n = zd[0] * zd[1] * zd[2];
  const std::size_t d = cfg.d_model;

  ag::Var<T> tokens = ag::reshape(z_t, {n, cfg.d_lat});
  ag::Var<T> x = ag::linear(tokens, param(p, "in.weight"), param(p, "in.bias"));
  x = ag::add(x, g.constant(position_embedding<T>(zd[0], zd[1], zd[2], d)));
  ag::Var<T> temb = ag::linear(g.constant(time_embedding<T>(t, d)), param(p, "time.weight"), param(p, "time.bias"));
  x = ag::add_rowvec(x, temb);

  const ag::Var<T> ctx = detail::cond_matrix(g, cfg, p, cond, lora);
  std::optional<ag::Var<T>> tap;
  for (std::size_t b = 1; b <= cfg.n_blocks; ++b) {
    const std::string pre = block_prefix(b);
    auto lin = [&](ag::Var<T> in, const std::string& name) { return detail::named_linear(in, p, pre + name, lora); };

    ag::Var<T> h = ag::layernorm_rows(x);
    ag::Var<T> sa = ag::attention(lin(h, ".self_attn.q"), lin(h, ".self_attn.k"), lin(h, ".self_attn.v"), cfg.n_heads);
    x = ag::add(x, lin(sa, ".self_attn.o"));

    h = ag::layernorm_rows(x);
    ag::Var<T> ca = ag::attention(lin(h, ".cross_attn.q"), lin(ctx, ".cross_attn.k"), lin(ctx, ".cross_attn.v"),
                                  cfg.n_heads);
    x = ag::add(x, lin(ca, ".cross_attn.o"));

    h = ag::layernorm_rows(x);
    x = ag::add(x, lin(ag::gelu(lin(h, ".ffn.0")), ".ffn.2"));

    if (b == 1) tap = cfg.tap == TapMode::PostResidual ? x : ag::layernorm_rows(x);
  }
  ag::Var<T> out = ag::linear(ag::layernorm_rows(x), param(p, "out.weight"), param(p, "out.bias"));
  out = ag::reshape(out, zd);
  if (cfg.prediction == Prediction::Clean) {
    out = ag::scale(ag::sub(z_t, out), static_cast<T>(1.0 / std::max(static_cast<double>(t), cfg.t_min)));
  } else if (cfg.prediction == Prediction::Preconditioned) {
    out = detail::precondition_output(g, cfg, p, tokens, ag::reshape(out, {n, cfg.d_lat}), t);
    out = ag::reshape(out, zd);
  }
  require_finite(out.value(), ErrorCode::NonFiniteActivation, "dit forward");
  return {out, *tap};
}

template <class T>
struct ForwardValues {
  Tensor<T> velocity;
  Tensor<T> tap;
};

/// Value-level forward (no gradients).
template <class T, class S>
ForwardValues<T> forward_values(const ModelConfig& cfg, const ParamStore<S>& params, const Tensor<T>& z_t, T t,
                                const CondTokens& cond,
                                const std::function<BoundLora<T>(ag::Graph<T>&)>& bind_lora = {}) {
  ag::Graph<T> g;
  const auto p = bind<T>(g, params);
  std::optional<BoundLora<T>> lora;
  if (bind_lora) lora = bind_lora(g);
  auto out = forward(g, cfg, p, g.constant(z_t), t, cond, lora ? &*lora : nullptr);
  return {out.velocity.value(), out.tap.value()};
}

}  // namespace smra::dit
