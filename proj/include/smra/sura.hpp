// Copyright (c) 2026 The smrabooth authors
// SPDX-License-Identifier: Apache-2.0
//
// Subject alignment: a frozen seeded patch encoder, the trainable projector
// h(x) = W2 gelu(W1 x + b1) + b2, the negative mean row cosine between
// encoder targets and projected DiT features, and the relation-aware fusion
// R = softmax(P Y^T / sqrt(d)), X = R Y.

#pragma once

#include "smra/autograd.hpp"
#include "smra/param_store.hpp"

namespace smra::sura {

struct PatchEncoder {
  std::size_t patch_size = 4;
  std::size_t channels = 3;
  std::size_t d_hidden = 64;
  std::size_t d_enc = 32;
  std::uint64_t seed = 0;
  Tensor<float> w1, b1, w2;  // [d_hidden, p*p*C], [d_hidden], [d_enc, d_hidden]

  std::size_t d_in() const { return patch_size * patch_size * channels; }
};

inline PatchEncoder make_encoder(std::uint64_t seed, std::size_t patch_size = 4, std::size_t d_enc = 32,
                                 std::size_t channels = 3, std::size_t d_hidden = 64) {
  PatchEncoder e{patch_size, channels, d_hidden, d_enc, seed, {}, {}, {}};
  Rng rng(derive_seed(seed, "sura.encoder"));
  e.w1 = randn<float>({d_hidden, e.d_in()}, rng, 2.0 / std::sqrt(static_cast<double>(e.d_in())));
  e.b1 = Tensor<float>({d_hidden});
  e.w2 = randn<float>({d_enc, d_hidden}, rng, 1.0 / std::sqrt(static_cast<double>(d_hidden)));
  return e;
}

/// Patch embeddings y* [N, d_enc] of one frame ([H,W,C] or [1,H,W,C]),
/// patches in row-major grid order. Pixels are centered at 0.5.
template <class T = float>
Tensor<T> encode_patches(const PatchEncoder& enc, const Tensor<T>& image) {
  const Tensor<T> img = image.rank() == 4 && image.dim(0) == 1
                            ? image.reshaped({image.dim(1), image.dim(2), image.dim(3)})
                            : image;
  if (img.rank() != 3) throw Error(ErrorCode::ShapeError, "encode_patches needs one frame, got " + dims_str(image.dims()));
  const std::size_t h = img.dim(0), w = img.dim(1), c = img.dim(2), p = enc.patch_size;
  if (c != enc.channels) throw Error(ErrorCode::BadChannelCount, "encoder expects " + std::to_string(enc.channels));
  if (h % p || w % p)
    throw Error(ErrorCode::BadResolution,
                std::to_string(h) + "x" + std::to_string(w) + " not divisible by patch " + std::to_string(p));
  const std::size_t gh = h / p, gw = w / p, n = gh * gw, din = enc.d_in();
  Tensor<T> out({n, enc.d_enc});
  std::vector<T> patch(din), hid(enc.d_hidden);
  for (std::size_t pi = 0; pi < gh; ++pi)
    for (std::size_t pj = 0; pj < gw; ++pj) {
      std::size_t o = 0;
      for (std::size_t dy = 0; dy < p; ++dy)
        for (std::size_t dx = 0; dx < p; ++dx)
          for (std::size_t ch = 0; ch < c; ++ch) patch[o++] = img[((pi * p + dy) * w + pj * p + dx) * c + ch] - T(0.5);
      for (std::size_t k = 0; k < enc.d_hidden; ++k) {
        T acc = static_cast<T>(enc.b1[k]);
        for (std::size_t i = 0; i < din; ++i) acc += static_cast<T>(enc.w1[k * din + i]) * patch[i];
        hid[k] = std::tanh(acc);
      }
      T* row = out.data() + (pi * gw + pj) * enc.d_enc;
      for (std::size_t k = 0; k < enc.d_enc; ++k) {
        T acc = 0;
        for (std::size_t i = 0; i < enc.d_hidden; ++i) acc += static_cast<T>(enc.w2[k * enc.d_hidden + i]) * hid[i];
        row[k] = acc;
      }
    }
  return out;
}

/// Mean-pooled frame embedding [d_enc].
template <class T = float>
std::vector<double> embed_frame(const PatchEncoder& enc, const Tensor<T>& frame) {
  const Tensor<T> y = encode_patches(enc, frame);
  std::vector<double> m(enc.d_enc, 0.0);
  for (std::size_t n = 0; n < y.dim(0); ++n)
    for (std::size_t k = 0; k < enc.d_enc; ++k) m[k] += static_cast<double>(y[n * enc.d_enc + k]);
  for (auto& v : m) v /= static_cast<double>(y.dim(0));
  return m;
}

inline double cosine(const std::vector<double>& a, const std::vector<double>& b, double eps = 1e-8) {
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return dot / (std::max(std::sqrt(na), eps) * std::max(std::sqrt(nb), eps));
}

// ---------------------------------------------------------------- projector

inline void init_projector(ParamStore<float>& p, std::size_t d_model, std::size_t d_enc, std::uint64_t seed) {
  Rng rng(derive_seed(seed, "sura.projector"));
  p["proj.0.weight"] = randn<float>({d_model, d_model}, rng, 1.0 / std::sqrt(static_cast<double>(d_model)));
  p["proj.0.bias"] = Tensor<float>({d_model});
  p["proj.2.weight"] = randn<float>({d_enc, d_model}, rng, 1.0 / std::sqrt(static_cast<double>(d_model)));
  p["proj.2.bias"] = Tensor<float>({d_enc});
}

inline ParamStore<float> make_projector(std::size_t d_model, std::size_t d_enc, std::uint64_t seed) {
  ParamStore<float> p;
  p.rng_seed = seed;
  init_projector(p, d_model, d_enc, seed);
  return p;
}

template <class T>
struct ProjectorVars {
  ag::Var<T> w0, b0, w2, b2;
};

template <class T, class Map>
ProjectorVars<T> projector_vars(const Map& m) {
  return {m.at("proj.0.weight"), m.at("proj.0.bias"), m.at("proj.2.weight"), m.at("proj.2.bias")};
}

template <class T>
ag::Var<T> project(ag::Var<T> tap, const ProjectorVars<T>& p) {
  return ag::linear(ag::gelu(ag::linear(tap, p.w0, p.b0)), p.w2, p.b2);
}

// ---------------------------------------------------------------- losses

/// -(1/N) sum_n cos(y*[n], h(tap[n])).
template <class T>
ag::Var<T> sura_loss(ag::Graph<T>& g, const Tensor<T>& y_star, ag::Var<T> tap, const ProjectorVars<T>& proj) {
  if (tap.dims().size() != 2 || y_star.rank() != 2 || tap.dim(0) != y_star.dim(0))
    throw Error(ErrorCode::TokenCountMismatch,
                "tap " + dims_str(tap.dims()) + " vs targets " + dims_str(y_star.dims()));
  return ag::scale(ag::mean(ag::cosine_rows(g.constant(y_star), project(tap, proj))), T(-1));
}

/// Loss on already-projected features.
template <class T>
ag::Var<T> alignment_loss(ag::Var<T> y_star, ag::Var<T> projected) {
  if (y_star.dims() != projected.dims())
    throw Error(ErrorCode::TokenCountMismatch,
                "targets " + dims_str(y_star.dims()) + " vs features " + dims_str(projected.dims()));
  return ag::scale(ag::mean(ag::cosine_rows(y_star, projected)), T(-1));
}

template <class T>
T alignment_loss(const Tensor<T>& y_star, const Tensor<T>& projected) {
  ag::Graph<T> g;
  return alignment_loss(g.constant(y_star), g.constant(projected)).value()[0];
}

template <class T>
T total_subject_loss(T region_loss, T sura, T lambda) {
  if (lambda < T(0)) throw Error(ErrorCode::BadConfig, "lambda must be >= 0");
  return region_loss + lambda * sura;
}

template <class T>
ag::Var<T> total_subject_loss(ag::Var<T> region_loss, ag::Var<T> sura, T lambda) {
  if (lambda < T(0)) throw Error(ErrorCode::BadConfig, "lambda must be >= 0");
  return ag::add(region_loss, ag::scale(sura, lambda));
}

// ---------------------------------------------------------------- relation-aware fusion

template <class T>
struct RaaOutput {
  ag::Var<T> relation;  // [N, N]
  ag::Var<T> fused;     // [N, d_enc]
};

template <class T>
RaaOutput<T> raa_fuse(ag::Graph<T>& g, ag::Var<T> projected, const Tensor<T>& y_star) {
  if (projected.dims().size() != 2 || y_star.rank() != 2 || projected.dims() != y_star.dims())
    throw Error(ErrorCode::ShapeError, "raa_fuse " + dims_str(projected.dims()) + " vs " + dims_str(y_star.dims()));
  const T inv = T(1) / std::sqrt(static_cast<T>(y_star.dim(1)));
  auto logits = ag::scale(ag::matmul(projected, g.constant(transpose2d(y_star))), inv);
  auto r = ag::softmax_rows(logits);
  return {r, ag::matmul(r, g.constant(y_star))};
}

template <class T>
std::pair<Tensor<T>, Tensor<T>> raa_fuse(const Tensor<T>& projected, const Tensor<T>& y_star) {
  ag::Graph<T> g;
  auto out = raa_fuse(g, g.constant(projected), y_star);
  return {out.relation.value(), out.fused.value()};
}

enum class Similarity { Cosine, NegSquaredL2 };

/// -(1/N) sum_n sim(y*[n], x*[n]).
template <class T>
ag::Var<T> raa_loss(ag::Graph<T>& g, const Tensor<T>& y_star, ag::Var<T> x_star,
                    Similarity sim = Similarity::Cosine) {
  if (x_star.dims() != y_star.dims())
    throw Error(ErrorCode::ShapeError, "raa_loss " + dims_str(x_star.dims()) + " vs " + dims_str(y_star.dims()));
  const auto y = g.constant(y_star);
  if (sim == Similarity::Cosine) return ag::scale(ag::mean(ag::cosine_rows(y, x_star)), T(-1));
  return ag::scale(ag::sum(ag::square(ag::sub(y, x_star))), T(1) / static_cast<T>(y_star.dim(0)));
}

template <class T>
T raa_loss(const Tensor<T>& y_star, const Tensor<T>& x_star, Similarity sim = Similarity::Cosine) {
  ag::Graph<T> g;
  return raa_loss(g, y_star, g.constant(x_star), sim).value()[0];
}

}  // namespace smra::sura
