// Copyright (c) 2026 The smrabooth authors
// SPDX-License-Identifier: Apache-2.0
//
// Flow matching: z_t = (1-t) z0 + t z1, target v = z1 - z0, squared-error
// velocity losses, one-step recovery z0 = z_t - t u, and the Euler sampler
// integrating from noise at t=1 to data at t=0 with velocity-space
// classifier-free guidance and per-step adapter schedules.

#pragma once

#include <ostream>

#include <nlohmann/json.hpp>

#include "smra/dit.hpp"
#include "smra/lora.hpp"
#include "smra/toyvae.hpp"

namespace smra::flowmatch {

// ---------------------------------------------------------------- value level

template <class T>
Tensor<T> interpolate(const Tensor<T>& z0, const Tensor<T>& z1, T t) {
  require_same_shape(z0, z1, "interpolate");
  Tensor<T> out(z0.dims());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (T(1) - t) * z0[i] + t * z1[i];
  return out;
}

template <class T>
Tensor<T> velocity_target(const Tensor<T>& z0, const Tensor<T>& z1) {
  require_same_shape(z0, z1, "velocity_target");
  Tensor<T> out(z0.dims());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = z1[i] - z0[i];
  return out;
}

template <class T>
T velocity_loss(const Tensor<T>& u, const Tensor<T>& v) {
  require_same_shape(u, v, "velocity_loss");
  T s = 0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    const T d = u[i] - v[i];
    s += d * d;
  }
  return s / static_cast<T>(u.size());
}

template <class T>
void validate_mask(const Tensor<T>& mask) {
  for (auto m : mask.vec())
    if (m != T(0) && m != T(1)) throw Error(ErrorCode::BadMask, "mask values must be 0 or 1");
}

/// Broadcasts a per-site mask over the trailing channel axis of `like`.
template <class T>
Tensor<T> expand_mask(const Tensor<T>& mask, const Dims& like) {
  validate_mask(mask);
  const std::size_t sites = mask.size();
  if (like.empty() || numel(like) % sites != 0 || numel(like) / sites != like.back())
    throw Error(ErrorCode::BadMask, "mask " + dims_str(mask.dims()) + " does not cover " + dims_str(like));
  const std::size_t ch = like.back();
  Tensor<T> out(like);
  for (std::size_t s = 0; s < sites; ++s)
    for (std::size_t c = 0; c < ch; ++c) out[s * ch + c] = mask[s];
  return out;
}

/// Mean over all elements of (u*M - v*M)^2; M has one value per latent site.
template <class T>
T masked_velocity_loss(const Tensor<T>& u, const Tensor<T>& v, const Tensor<T>& mask) {
  require_same_shape(u, v, "masked_velocity_loss");
  const Tensor<T> m = expand_mask(mask, u.dims());
  T s = 0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    const T d = u[i] * m[i] - v[i] * m[i];
    s += d * d;
  }
  return s / static_cast<T>(u.size());
}

template <class T>
Tensor<T> recover_z0(const Tensor<T>& z_t, const Tensor<T>& u, T t) {
  require_same_shape(z_t, u, "recover_z0");
  Tensor<T> out(z_t.dims());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = z_t[i] - t * u[i];
  return out;
}

/// Max-pools a pixel mask [T,H,W] (or [H,W]) onto latent sites [T',H/4,W/4];
/// each latent frame pools over the pixel frames it packs.
template <class T>
Tensor<T> pool_mask_to_latent(const Tensor<T>& pixel_mask) {
  validate_mask(pixel_mask);
  const Tensor<T> m = pixel_mask.rank() == 2 ? pixel_mask.reshaped({1, pixel_mask.dim(0), pixel_mask.dim(1)})
                                              : pixel_mask;
  if (m.rank() != 3) throw Error(ErrorCode::BadMask, "mask must be [H,W] or [T,H,W]");
  const std::size_t tf = m.dim(0), h = m.dim(1), w = m.dim(2);
  const std::size_t lt = toyvae::latent_frames(tf);
  if (h % toyvae::kSpace || w % toyvae::kSpace) throw Error(ErrorCode::BadResolution, "mask resolution");
  const std::size_t lh = h / toyvae::kSpace, lw = w / toyvae::kSpace;
  Tensor<T> out({lt, lh, lw});
  for (std::size_t k = 0; k < lt; ++k) {
    const std::size_t f0 = k == 0 ? 0 : toyvae::kTime * (k - 1) + 1;
    const std::size_t f1 = k == 0 ? 1 : f0 + toyvae::kTime;
    for (std::size_t f = f0; f < f1; ++f)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
          T& o = out[(k * lh + y / toyvae::kSpace) * lw + x / toyvae::kSpace];
          o = std::max(o, m[(f * h + y) * w + x]);
        }
  }
  return out;
}

// ---------------------------------------------------------------- tape level

template <class T>
ag::Var<T> interpolate(ag::Var<T> z0, ag::Var<T> z1, T t) {
  return ag::add(ag::scale(z0, T(1) - t), ag::scale(z1, t));
}

template <class T>
ag::Var<T> velocity_loss(ag::Var<T> u, ag::Var<T> v) {
  return ag::mean(ag::square(ag::sub(u, v)));
}

/// `mask` is already expanded to u's shape.
template <class T>
ag::Var<T> masked_velocity_loss(ag::Var<T> u, ag::Var<T> v, ag::Var<T> mask) {
  return ag::mean(ag::square(ag::sub(ag::mul(u, mask), ag::mul(v, mask))));
}

template <class T>
ag::Var<T> recover_z0(ag::Var<T> z_t, ag::Var<T> u, T t) {
  return ag::sub(z_t, ag::scale(u, t));
}

// ---------------------------------------------------------------- sampler

struct SamplerConfig {
  int steps = 50;
  double cfg_scale = 5.0;
  std::uint64_t seed = 0;
  lora::ScaleSchedule subject_schedule{15, 0.5, 1.0};
  lora::ScaleSchedule motion_schedule{0, 1.0, 1.0};

  void validate() const {
    if (steps < 1) throw Error(ErrorCode::BadConfig, "sampler steps must be >= 1");
    if (!(cfg_scale >= 0.0)) throw Error(ErrorCode::BadConfig, "cfg_scale must be >= 0");
  }
};

/// State visible to per-step observers: latent z at time t before the update
/// and the guided velocity u used for it.
template <class T>
struct StepState {
  int step;
  T t;
  const Tensor<T>& z;
  const Tensor<T>& u;
  double subject_scale;
  double motion_scale;
};

/// Model callback: velocity at (z, t) for denoise step `step`, conditional or not.
template <class T>
using VelocityFn = std::function<Tensor<T>(const Tensor<T>& z, T t, bool conditional, int step)>;

template <class T>
using StepObserver = std::function<void(const StepState<T>&)>;

template <class T>
Tensor<T> initial_noise(const Dims& shape, std::uint64_t seed) {
  return randn<T>(shape, derive_seed(seed, "sampler.noise"));
}

/// Euler integration of dz/dt = u from t=1 to t=0 with guidance
/// u = u_u + g (u_c - u_u). At g == 1 the unconditional pass is skipped.
template <class T>
Tensor<T> sample_with(const VelocityFn<T>& model, const Dims& shape, const SamplerConfig& cfg,
                      const StepObserver<T>& observer = {},
                      const std::function<std::pair<double, double>(int)>& scales = {}) {
  cfg.validate();
  Tensor<T> z = initial_noise<T>(shape, cfg.seed);
  const T dt = T(1) / static_cast<T>(cfg.steps);
  for (int k = 1; k <= cfg.steps; ++k) {
    const T t = T(1) - static_cast<T>(k - 1) / static_cast<T>(cfg.steps);
    Tensor<T> u = model(z, t, true, k);
    if (cfg.cfg_scale != 1.0) {
      const Tensor<T> uu = model(z, t, false, k);
      const T gs = static_cast<T>(cfg.cfg_scale);
      for (std::size_t i = 0; i < u.size(); ++i) u[i] = uu[i] + gs * (u[i] - uu[i]);
    }
    if (observer) {
      const auto [ss, ms] = scales ? scales(k) : std::pair<double, double>{0.0, 0.0};
      observer(StepState<T>{k, t, z, u, ss, ms});
    }
    for (std::size_t i = 0; i < z.size(); ++i) z[i] -= dt * u[i];
  }
  return z;
}

template <class T>
double l2_norm(const Tensor<T>& x) {
  double s = 0;
  for (auto v : x.vec()) s += static_cast<double>(v) * static_cast<double>(v);
  return std::sqrt(s);
}

/// JSON-lines trace record for one sampler step.
template <class T>
std::string trace_line(const StepState<T>& s) {
  nlohmann::json j{{"step", s.step},
                   {"t", static_cast<double>(s.t)},
                   {"u_norm", l2_norm(s.u)},
                   {"subject_scale", s.subject_scale},
                   {"motion_scale", s.motion_scale}};
  return j.dump();
}

/// DiT-backed sampler. Adapter schedules come from `cfg`; sets may be null.
template <class T = float>
Tensor<T> sample(const ParamStore<float>& params, const dit::ModelConfig& mcfg, const dit::CondTokens& cond,
                 const dit::CondTokens& uncond, const SamplerConfig& cfg, const lora::LoraSet<float>* subject,
                 const lora::LoraSet<float>* motion, const Dims& latent_shape, const StepObserver<T>& observer = {}) {
  std::optional<lora::LoraSet<float>> sub, mot;
  if (subject) {
    sub = *subject;
    sub->schedule = cfg.subject_schedule;
  }
  if (motion) {
    mot = *motion;
    mot->schedule = cfg.motion_schedule;
  }
  // Parameters are bound once per step pair; the graph is rebuilt per call.
  VelocityFn<T> model = [&](const Tensor<T>& z, T t, bool conditional, int step) {
    ag::Graph<T> g;
    const auto p = dit::bind<T>(g, params);
    const auto ctx = lora::merge<float>(sub ? &*sub : nullptr, mot ? &*mot : nullptr, step);
    const auto bound = lora::bind<T>(g, ctx, mcfg);
    const auto out = dit::forward(g, mcfg, p, g.constant(z), t, conditional ? cond : uncond,
                                  ctx.empty() ? nullptr : &bound);
    return out.velocity.value();
  };
  auto scales = [&](int step) {
    const double ss = sub ? lora::schedule_scale(sub->schedule, step) : 0.0;
    const double ms = mot ? lora::schedule_scale(mot->schedule, step) : 0.0;
    return std::pair<double, double>{ss, ms};
  };
  return sample_with<T>(model, latent_shape, cfg, observer, scales);
}

}  // namespace smra::flowmatch
