// Copyright (c) 2026 The smrabooth authors
// SPDX-License-Identifier: Apache-2.0
//
// Motion alignment: unrolled Horn-Schunck optical flow on luminance, flow
// stacks over adjacent frames, flows of one-step-recovered videos, and the
// L1 flow-stack loss.
//
// Each Jacobi update is
//   u <- ubar - Ix (Ix ubar + Iy vbar + It) / (alpha^2 + Ix^2 + Iy^2)
//   v <- vbar - Iy (Ix ubar + Iy vbar + It) / (alpha^2 + Ix^2 + Iy^2)
// starting from zero flow.

#pragma once

#include "smra/flowmatch.hpp"
#include "smra/toyvae.hpp"

namespace smra::mora {

struct FlowConfig {
  double alpha = 10.0;
  int iters = 20;
  std::array<double, 3> grayscale{0.299, 0.587, 0.114};
  double intensity_scale = 255.0;

  void validate() const {
    if (!(alpha > 0.0)) throw Error(ErrorCode::BadConfig, "flow alpha must be > 0");
    if (iters < 1) throw Error(ErrorCode::BadConfig, "flow iters must be >= 1");
  }

  bool operator==(const FlowConfig&) const = default;
};

namespace detail {

inline constexpr std::array<double, 9> kDx{0, 0, 0, -0.5, 0, 0.5, 0, 0, 0};
inline constexpr std::array<double, 9> kDy{0, -0.5, 0, 0, 0, 0, 0, 0.5, 0};
inline constexpr std::array<double, 9> kAvg{1.0 / 12, 1.0 / 6, 1.0 / 12, 1.0 / 6, 0, 1.0 / 6, 1.0 / 12, 1.0 / 6, 1.0 / 12};

template <class T>
std::array<T, 9> kernel(const std::array<double, 9>& k) {
  std::array<T, 9> out;
  for (std::size_t i = 0; i < 9; ++i) out[i] = static_cast<T>(k[i]);
  return out;
}

// Channel c of x[..., C] as a tensor of the leading dims.
template <class T>
ag::Var<T> channel(ag::Var<T> x, std::size_t c) {
  const Dims d = x.dims();
  const std::size_t ch = d.back();
  const std::size_t n = x.size() / ch;
  auto idx = std::make_shared<std::vector<std::size_t>>(n);
  for (std::size_t i = 0; i < n; ++i) (*idx)[i] = i * ch + c;
  Dims out(d.begin(), d.end() - 1);
  return ag::gather(x, idx, out);
}

// Interleaves u[B,H,W] and v[B,H,W] into [B,H,W,2].
template <class T>
ag::Var<T> interleave(ag::Var<T> u, ag::Var<T> v) {
  const Dims d = u.dims();
  const std::size_t n = u.size();
  auto idx = std::make_shared<std::vector<std::size_t>>(2 * n);
  for (std::size_t i = 0; i < n; ++i) {
    (*idx)[2 * i] = i;
    (*idx)[2 * i + 1] = n + i;
  }
  Dims out = d;
  out.push_back(2);
  return ag::gather(ag::concat0(std::vector<ag::Var<T>>{u, v}), idx, out);
}

}  // namespace detail

/// Luminance [T,H,W] of a video [T,H,W,C] (C = 3), scaled by intensity_scale.
template <class T>
ag::Var<T> luminance(ag::Var<T> video, const FlowConfig& cfg) {
  const Dims d = video.dims();
  if (d.size() != 4 || d[3] != 3) throw Error(ErrorCode::ShapeError, "luminance needs [T,H,W,3], got " + dims_str(d));
  ag::Var<T> y = ag::scale(detail::channel(video, 0), static_cast<T>(cfg.grayscale[0] * cfg.intensity_scale));
  for (std::size_t c = 1; c < 3; ++c)
    y = ag::add(y, ag::scale(detail::channel(video, c), static_cast<T>(cfg.grayscale[c] * cfg.intensity_scale)));
  return y;
}

/// Horn-Schunck flow between luminance batches ia, ib [B,H,W] -> [B,H,W,2].
template <class T>
ag::Var<T> flow_luma(ag::Var<T> ia, ag::Var<T> ib, const FlowConfig& cfg) {
  cfg.validate();
  if (ia.dims() != ib.dims()) throw Error(ErrorCode::ShapeError, "flow frames differ in shape");
  const auto kdx = detail::kernel<T>(detail::kDx), kdy = detail::kernel<T>(detail::kDy),
             kavg = detail::kernel<T>(detail::kAvg);
  auto ix = ag::scale(ag::add(ag::stencil3x3(ia, kdx), ag::stencil3x3(ib, kdx)), T(0.5));
  auto iy = ag::scale(ag::add(ag::stencil3x3(ia, kdy), ag::stencil3x3(ib, kdy)), T(0.5));
  auto it = ag::sub(ib, ia);
  auto denom = ag::add_scalar(ag::add(ag::square(ix), ag::square(iy)), static_cast<T>(cfg.alpha * cfg.alpha));
  ag::Graph<T>& g = *ia.g;
  ag::Var<T> u = g.constant(Tensor<T>(ia.dims()));
  ag::Var<T> v = g.constant(Tensor<T>(ia.dims()));
  for (int k = 0; k < cfg.iters; ++k) {
    auto ub = ag::stencil3x3(u, kavg);
    auto vb = ag::stencil3x3(v, kavg);
    auto r = ag::div(ag::add(ag::add(ag::mul(ix, ub), ag::mul(iy, vb)), it), denom);
    u = ag::sub(ub, ag::mul(ix, r));
    v = ag::sub(vb, ag::mul(iy, r));
  }
  return detail::interleave(u, v);
}

/// Flow between two frames [H,W,C] -> [H,W,2].
template <class T>
ag::Var<T> flow(ag::Var<T> a, ag::Var<T> b, const FlowConfig& cfg) {
  if (a.dims() != b.dims()) throw Error(ErrorCode::ShapeError, "flow frames differ in shape");
  const Dims d = a.dims();
  if (d.size() != 3) throw Error(ErrorCode::ShapeError, "flow needs [H,W,C] frames");
  const Dims vd{1, d[0], d[1], d[2]};
  auto f = flow_luma(luminance(ag::reshape(a, vd), cfg), luminance(ag::reshape(b, vd), cfg), cfg);
  return ag::reshape(f, {d[0], d[1], 2});
}

/// Flows over adjacent frames of a video [T,H,W,C] -> [T-1,H,W,2].
template <class T>
ag::Var<T> flow_stack(ag::Var<T> video, const FlowConfig& cfg) {
  const Dims d = video.dims();
  if (d.size() != 4) throw Error(ErrorCode::ShapeError, "flow_stack needs [T,H,W,C]");
  if (d[0] < 2) throw Error(ErrorCode::TooFewFrames, "flow_stack needs at least 2 frames");
  auto lum = luminance(video, cfg);
  return flow_luma(ag::slice0(lum, 0, d[0] - 1), ag::slice0(lum, 1, d[0]), cfg);
}

template <class T>
Tensor<T> flow(const Tensor<T>& a, const Tensor<T>& b, const FlowConfig& cfg) {
  ag::Graph<T> g;
  return flow(g.constant(a), g.constant(b), cfg).value();
}

template <class T>
Tensor<T> flow_stack(const Tensor<T>& video, const FlowConfig& cfg) {
  ag::Graph<T> g;
  return flow_stack(g.constant(video), cfg).value();
}

/// Contiguous pixel-frame ranges [begin, end) that flows are taken within.
struct FrameBlock {
  std::size_t begin, end;
};

inline std::vector<FrameBlock> frame_blocks(std::size_t latent_frames, bool windowed, std::size_t window = 6,
                                            std::size_t stride = 2) {
  if (!windowed) return {{0, toyvae::video_frames(latent_frames)}};
  std::vector<FrameBlock> out;
  for (const auto& p : toyvae::window_plan(latent_frames, window, stride))
    out.push_back({p.pixel_frame_offset, p.pixel_frame_offset + p.kept});
  return out;
}

template <class T>
ag::Var<T> concat_blocks(const std::vector<ag::Var<T>>& parts) {
  return parts.size() == 1 ? parts[0] : ag::concat0(parts);
}

/// Flow stack of the one-step recovered video decode(z_t - t u); in windowed
/// mode flows are taken within each kept window block only.
template <class T>
ag::Var<T> denoised_flow_stack(ag::Var<T> z_t, ag::Var<T> u, T t, const FlowConfig& cfg, bool windowed = false,
                               std::size_t window = 6, std::size_t stride = 2) {
  auto z0 = flowmatch::recover_z0(z_t, u, t);
  if (!windowed) return flow_stack(toyvae::decode(z0), cfg);
  std::vector<ag::Var<T>> parts;
  for (auto& block : toyvae::decode_windowed(z0, window, stride)) parts.push_back(flow_stack(block, cfg));
  return concat_blocks(parts);
}

/// Reference flow stack over the same frame blocks a latent of
/// `latent_frames` frames yields in denoised_flow_stack.
template <class T>
ag::Var<T> reference_flow_stack(ag::Var<T> video, const FlowConfig& cfg, bool windowed = false,
                                std::size_t window = 6, std::size_t stride = 2) {
  const std::size_t lt = toyvae::latent_frames(video.dim(0));
  std::vector<ag::Var<T>> parts;
  for (const auto& b : frame_blocks(lt, windowed, window, stride))
    parts.push_back(flow_stack(ag::slice0(video, b.begin, b.end), cfg));
  return concat_blocks(parts);
}

template <class T>
Tensor<T> denoised_flow_stack(const Tensor<T>& z_t, const Tensor<T>& u, T t, const FlowConfig& cfg,
                              bool windowed = false) {
  require_same_shape(z_t, u, "denoised_flow_stack");
  ag::Graph<T> g;
  return denoised_flow_stack(g.constant(z_t), g.constant(u), t, cfg, windowed).value();
}

template <class T>
Tensor<T> reference_flow_stack(const Tensor<T>& video, const FlowConfig& cfg, bool windowed = false) {
  ag::Graph<T> g;
  return reference_flow_stack(g.constant(video), cfg, windowed).value();
}

// ---------------------------------------------------------------- losses

template <class T>
ag::Var<T> mora_loss(ag::Var<T> f_ref, ag::Var<T> f_gen) {
  if (f_ref.dims() != f_gen.dims())
    throw Error(ErrorCode::ShapeError, "flow stacks " + dims_str(f_ref.dims()) + " vs " + dims_str(f_gen.dims()));
  return ag::mean(ag::abs(ag::sub(f_ref, f_gen)));
}

template <class T>
T mora_loss(const Tensor<T>& f_ref, const Tensor<T>& f_gen) {
  require_same_shape(f_ref, f_gen, "mora_loss");
  T s = 0;
  for (std::size_t i = 0; i < f_ref.size(); ++i) s += std::abs(f_ref[i] - f_gen[i]);
  return s / static_cast<T>(f_ref.size());
}

template <class T>
T total_motion_loss(T temporal, T mora, T alpha_w) {
  if (alpha_w < T(0)) throw Error(ErrorCode::BadConfig, "alpha_w must be >= 0");
  return temporal + alpha_w * mora;
}

template <class T>
ag::Var<T> total_motion_loss(ag::Var<T> temporal, ag::Var<T> mora, T alpha_w) {
  if (alpha_w < T(0)) throw Error(ErrorCode::BadConfig, "alpha_w must be >= 0");
  return ag::add(temporal, ag::scale(mora, alpha_w));
}

/// Mean flow vector over sites where `mask` [H,W] (or everywhere if empty) is 1.
template <class T>
std::array<double, 2> mean_flow(const Tensor<T>& f, const Tensor<T>* mask = nullptr) {
  const std::size_t sites = f.size() / 2;
  const std::size_t per = mask ? mask->size() : sites;
  double su = 0, sv = 0, n = 0;
  for (std::size_t s = 0; s < sites; ++s) {
    if (mask && (*mask)[s % per] == T(0)) continue;
    su += static_cast<double>(f[2 * s]);
    sv += static_cast<double>(f[2 * s + 1]);
    n += 1;
  }
  if (n == 0) return {0.0, 0.0};
  return {su / n, sv / n};
}

/// Color-wheel rendering of one flow slice [H,W,2] -> [H,W,3]: hue from
/// direction, brightness from magnitude relative to the slice maximum.
template <class T>
Tensor<float> visualize(const Tensor<T>& f) {
  const std::size_t h = f.dim(0), w = f.dim(1);
  double maxmag = 0;
  for (std::size_t s = 0; s < h * w; ++s) maxmag = std::max(maxmag, std::hypot(double(f[2 * s]), double(f[2 * s + 1])));
  Tensor<float> out({h, w, 3});
  for (std::size_t s = 0; s < h * w; ++s) {
    const double u = f[2 * s], v = f[2 * s + 1];
    const double hue = (std::atan2(v, u) + std::numbers::pi) / (2 * std::numbers::pi) * 6.0;
    const double val = maxmag > 0 ? std::hypot(u, v) / maxmag : 0.0;
    const int sector = static_cast<int>(std::floor(hue)) % 6;
    const double fr = hue - std::floor(hue);
    const double p = 0.0, q = val * (1 - fr), tt = val * fr;
    double r, gg, b;
    switch (sector) {
      case 0: r = val, gg = tt, b = p; break;
      case 1: r = q, gg = val, b = p; break;
      case 2: r = p, gg = val, b = tt; break;
      case 3: r = p, gg = q, b = val; break;
      case 4: r = tt, gg = p, b = val; break;
      default: r = val, gg = p, b = q; break;
    }
    out[3 * s] = static_cast<float>(r);
    out[3 * s + 1] = static_cast<float>(gg);
    out[3 * s + 2] = static_cast<float>(b);
  }
  return out;
}

}  // namespace smra::mora
