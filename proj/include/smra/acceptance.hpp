// Copyright (c) 2026 The smrabooth authors
// SPDX-License-Identifier: Apache-2.0
//
// Acceptance suite: nine pass/fail criteria over the whole stack. Criteria 1-5
// are fast invariant checks; 6-9 train the desk-scale model end to end.

#pragma once

#include <chrono>
#include <cstdio>

#include "smra/commands.hpp"
#include "smra/numerics.hpp"

namespace smra::acceptance {

namespace fs = std::filesystem;
using cli::json;

struct Outcome {
  int id = 0;
  std::string name;
  bool pass = false;
  std::string detail;
  double seconds = 0.0;
};

inline std::string format(const Outcome& o) {
  char head[128];
  std::snprintf(head, sizeof head, "[%s] %d %s (%.1fs)", o.pass ? "PASS" : "FAIL", o.id, o.name.c_str(), o.seconds);
  return std::string(head) + (o.detail.empty() ? "" : ": " + o.detail);
}

struct Options {
  bool quick = false;          // criteria 1-5 only
  fs::path work = "acceptance";  // scratch directory for artifacts
  std::size_t seeds = 3;
};

using Reporter = std::function<void(const Outcome&)>;

namespace detail {

using clk = std::chrono::steady_clock;

inline double since(clk::time_point t0) { return std::chrono::duration<double>(clk::now() - t0).count(); }

inline std::string fmt(double v) {
  char b[32];
  std::snprintf(b, sizeof b, "%.4g", v);
  return b;
}

template <class T>
bool bit_equal(const Tensor<T>& a, const Tensor<T>& b) {
  return a.dims() == b.dims() && a.vec() == b.vec();
}

// ---------------------------------------------------------------- 1. codec

inline Outcome codec() {
  Outcome o{1, "codec exactness", false, {}, 0.0};
  const auto t0 = clk::now();
  Rng rng(101);
  const std::array<std::size_t, 5> frames{1, 5, 9, 13, 17};
  const std::array<std::size_t, 4> sides{4, 8, 12, 16};
  std::size_t bad = 0;
  for (std::size_t i = 0; i < 50; ++i) {
    const Dims d{frames[i % 5], sides[i % 4], sides[(i / 4) % 4], 3};
    const auto x = rand_uniform<float>(d, rng);
    if (!bit_equal(toyvae::decode(toyvae::encode(x)), x)) ++bad;
  }
  std::size_t bad_win = 0;
  for (std::size_t frames_n : {21, 29, 33}) {
    const auto x = rand_uniform<float>({frames_n, 8, 8, 3}, rng);
    const auto z = toyvae::encode(x);
    const auto full = toyvae::decode(z);
    const std::size_t per = full.size() / full.dim(0);
    for (const auto& b : toyvae::decode_windowed(z)) {
      const std::vector<float> want(full.vec().begin() + b.pixel_frame_offset * per,
                                    full.vec().begin() + (b.pixel_frame_offset + b.frames.dim(0)) * per);
      if (b.frames.vec() != want) ++bad_win;
    }
  }
  o.seconds = since(t0);
  o.pass = bad == 0 && bad_win == 0 && o.seconds < 5.0;
  o.detail = std::to_string(50 - bad) + "/50 round trips exact, " + std::to_string(bad_win) + " windowed mismatches";
  return o;
}

// ---------------------------------------------------------------- 2. flow matching

inline Outcome flow_matching() {
  Outcome o{2, "flow-matching algebra", false, {}, 0.0};
  const auto t0 = clk::now();
  Rng rng(202);
  double worst = 0.0;
  for (int i = 0; i < 20; ++i) {
    const auto z0 = randn<double>({2, 4, 4, 8}, rng);
    const auto z1 = randn<double>({2, 4, 4, 8}, rng);
    const double t = std::uniform_real_distribution<double>(0.01, 1.0)(rng);
    const auto zh = flowmatch::recover_z0(flowmatch::interpolate(z0, z1, t), flowmatch::velocity_target(z0, z1), t);
    worst = std::max(worst, max_abs_diff(zh, z0));
  }
  double worst_sampler = 0.0;
  const Dims shape{2, 4, 4, 8};
  for (int steps : {1, 5, 50}) {
    flowmatch::SamplerConfig sc;
    sc.steps = steps;
    sc.cfg_scale = 1.0;
    sc.seed = 7;
    const auto z0 = randn<double>(shape, 99);
    const auto noise = flowmatch::initial_noise<double>(shape, sc.seed);
    const auto u = flowmatch::velocity_target(z0, noise);
    const auto out = flowmatch::sample_with<double>([&](const Tensor<double>&, double, bool, int) { return u; }, shape, sc);
    worst_sampler = std::max(worst_sampler, max_abs_diff(out, z0));
  }
  o.seconds = since(t0);
  o.pass = worst <= 1e-6 && worst_sampler <= 1e-12 && o.seconds < 5.0;
  o.detail = "recover err " + fmt(worst) + ", oracle sampler err " + fmt(worst_sampler);
  return o;
}

// ---------------------------------------------------------------- 3. gradient checks

struct ToyModel {
  dit::ModelConfig cfg;
  ParamStore<double> params;   // trainable base parameters
  ParamStore<double> buffers;  // frozen prior
};

inline ToyModel toy_model() {
  ToyModel m;
  m.cfg.d_model = 8;
  m.cfg.n_blocks = 1;
  m.cfg.n_heads = 2;
  m.cfg.d_ffn = 16;
  m.cfg.text_buckets = 16;
  auto pf = dit::init_params(m.cfg, 1);
  std::vector<Tensor<float>> lat;
  Rng lr(30);
  for (int i = 0; i < 4; ++i) lat.push_back(rand_uniform<float>({1, 2, 2, 192}, lr));
  dit::fit_prior(pf, m.cfg, lat);
  Rng rng(5);
  for (auto& [k, t] : pf.tensors) {
    auto d = t.cast<double>();
    if (dit::is_buffer(k)) {
      m.buffers[k] = d;
      continue;
    }
    for (auto& v : d.vec()) v += 0.05 * std::normal_distribution<double>()(rng);
    m.params[k] = d;
  }
  return m;
}

inline dit::BoundParams<double> with_buffers(ag::Graph<double>& g, const std::map<std::string, ag::Var<double>>& leaves,
                                             const ToyModel& m, const ParamStore<double>* frozen = nullptr) {
  dit::BoundParams<double> p;
  for (const auto& [k, v] : leaves)
    if (!k.starts_with("lora:") && !k.starts_with("proj.")) p.emplace(k, v);
  for (const auto& [k, t] : m.buffers.tensors) p.emplace(k, g.constant(t));
  if (frozen)
    for (const auto& [k, t] : frozen->tensors) p.emplace(k, g.constant(t));
  return p;
}

/// Adapter factors as named parameters "lora:<layer>.A" / ".B", with B non-zero.
inline void add_lora_params(ParamStore<double>& ps, const ToyModel& m, lora::Role role, std::uint64_t seed) {
  auto set = lora::attach<double>(role, m.cfg, 2, seed, std::nullopt, 0.3);
  Rng rng(seed + 1);
  for (auto& [name, a] : *set.adapters) {
    ps["lora:" + name + ".A"] = a.A;
    ps["lora:" + name + ".B"] = randn<double>(a.B.dims(), rng, 0.3);
  }
}

inline dit::BoundLora<double> lora_from(const std::map<std::string, ag::Var<double>>& leaves) {
  dit::BoundLora<double> b;
  for (const auto& [k, v] : leaves) {
    if (!k.starts_with("lora:") || !k.ends_with(".A")) continue;
    const std::string layer = k.substr(5, k.size() - 7);
    b.layers[layer].push_back({v, leaves.at("lora:" + layer + ".B"), 1.0});
  }
  return b;
}

inline void add_projector_params(ParamStore<double>& ps, const ToyModel& m, std::size_t d_enc) {
  const auto pj = sura::make_projector(m.cfg.d_model, d_enc, 17);
  Rng rng(18);
  for (const auto& [k, t] : pj.tensors) {
    auto d = t.cast<double>();
    for (auto& v : d.vec()) v += 0.05 * std::normal_distribution<double>()(rng);
    ps["proj." + k] = d;
  }
}

inline sura::ProjectorVars<double> projector_from(const std::map<std::string, ag::Var<double>>& leaves) {
  std::map<std::string, ag::Var<double>> m;
  for (const auto& [k, v] : leaves)
    if (k.starts_with("proj.")) m.emplace(k.substr(5), v);
  return sura::projector_vars<double>(m);
}

inline Outcome gradients() {
  Outcome o{3, "64-bit gradient checks", false, {}, 0.0};
  const auto t0 = clk::now();
  const ToyModel m = toy_model();
  const auto cond = dit::embed_text("A red circle", 7, m.cfg);
  Rng rng(303);
  const double t = 0.35;
  std::vector<std::pair<std::string, GradCheckReport>> reps;

  // Base velocity loss through the whole model.
  {
    const auto z0 = rand_uniform<double>({2, 2, 2, 192}, rng);
    const auto z1 = randn<double>({2, 2, 2, 192}, rng);
    auto fn = tape_loss([&](ag::Graph<double>& g, std::map<std::string, ag::Var<double>>& L) {
      const auto out = dit::forward<double>(g, m.cfg, with_buffers(g, L, m), g.constant(flowmatch::interpolate(z0, z1, t)),
                                            t, cond);
      return flowmatch::velocity_loss(out.velocity, g.constant(flowmatch::velocity_target(z0, z1)));
    });
    reps.emplace_back("velocity", grad_check(fn, m.params));
  }

  // Subject stage terms over adapters and projector with the base frozen.
  const auto enc = sura::make_encoder(9, 4, 6, 3, 8);
  const auto image = rand_uniform<double>({1, 8, 8, 3}, rng);
  const auto y_star = sura::encode_patches(enc, image).cast<double>();
  const auto z0s = toyvae::encode(image);
  const auto z1s = randn<double>(z0s.dims(), rng);
  Tensor<double> pix_mask({1, 8, 8});
  for (std::size_t i = 0; i < pix_mask.size(); ++i) pix_mask[i] = (i % 8) < 5 ? 1.0 : 0.0;
  const auto mask = flowmatch::expand_mask(flowmatch::pool_mask_to_latent(pix_mask), z0s.dims());
  ParamStore<double> subj;
  add_lora_params(subj, m, lora::Role::Subject, 41);
  add_projector_params(subj, m, enc.d_enc);
  auto subject_forward = [&](ag::Graph<double>& g, std::map<std::string, ag::Var<double>>& L) {
    const auto bl = lora_from(L);
    return dit::forward<double>(g, m.cfg, with_buffers(g, L, m, &m.params),
                                g.constant(flowmatch::interpolate(z0s, z1s, t)), t, cond, &bl);
  };
  reps.emplace_back("masked velocity", grad_check(tape_loss([&](ag::Graph<double>& g, auto& L) {
                      const auto out = subject_forward(g, L);
                      return flowmatch::masked_velocity_loss(
                          out.velocity, g.constant(flowmatch::velocity_target(z0s, z1s)), g.constant(mask));
                    }),
                                                  subj));
  reps.emplace_back("subject alignment", grad_check(tape_loss([&](ag::Graph<double>& g, auto& L) {
                      return sura::sura_loss(g, y_star, subject_forward(g, L).tap, projector_from(L));
                    }),
                                                    subj));
  reps.emplace_back("relation-aware alignment", grad_check(tape_loss([&](ag::Graph<double>& g, auto& L) {
                      const auto proj = sura::project(subject_forward(g, L).tap, projector_from(L));
                      return sura::raa_loss(g, y_star, sura::raa_fuse(g, proj, y_star).fused);
                    }),
                                                           subj));

  // Motion alignment through the model, decode and the unrolled flow solver.
  {
    mora::FlowConfig fc;
    fc.iters = 5;
    const auto video = rand_uniform<double>({5, 8, 8, 3}, rng);
    const auto z0 = toyvae::encode(video);
    const auto z1 = randn<double>(z0.dims(), rng);
    const auto f_ref = mora::reference_flow_stack(video, fc);
    ParamStore<double> mot;
    add_lora_params(mot, m, lora::Role::Motion, 43);
    auto fn = tape_loss([&](ag::Graph<double>& g, std::map<std::string, ag::Var<double>>& L) {
      const auto bl = lora_from(L);
      const auto zt = g.constant(flowmatch::interpolate(z0, z1, t));
      const auto out = dit::forward<double>(g, m.cfg, with_buffers(g, L, m, &m.params), zt, t, cond, &bl);
      return mora::mora_loss(g.constant(f_ref), mora::denoised_flow_stack(zt, out.velocity, t, fc));
    });
    reps.emplace_back("motion alignment", grad_check(fn, mot));
  }

  o.seconds = since(t0);
  o.pass = o.seconds < 180.0;
  for (const auto& [name, r] : reps) {
    o.pass = o.pass && r.passed;
    o.detail += (o.detail.empty() ? "" : ", ") + name + " " + fmt(r.max_rel_err);
  }
  return o;
}

// ---------------------------------------------------------------- 4. LoRA

inline Outcome lora_composition() {
  Outcome o{4, "LoRA neutrality and composition", false, {}, 0.0};
  const auto t0 = clk::now();
  dit::ModelConfig cfg;
  cfg.d_model = 16;
  cfg.n_blocks = 2;
  cfg.n_heads = 2;
  cfg.d_ffn = 32;
  const auto base = dit::init_params(cfg, 3);
  const auto cond = dit::embed_text("A picture of V* circle", 7, cfg);
  const auto z = randn<float>({2, 4, 4, 192}, 4);
  const auto plain = dit::forward_values<float>(cfg, base, z, 0.4f, cond);
  auto zs = lora::attach<float>(lora::Role::Subject, cfg, 4, 5);
  auto zm = lora::attach<float>(lora::Role::Motion, cfg, 4, 6);
  const auto ctx0 = lora::merge<float>(&zs, &zm, 20);
  const auto with0 = dit::forward_values<float>(cfg, base, z, 0.4f, cond,
                                                [&](ag::Graph<float>& g) { return lora::bind<float>(g, ctx0, cfg); });
  const bool neutral = bit_equal(plain.velocity, with0.velocity) && bit_equal(plain.tap, with0.tap);

  // Shared layers: both sets target every layer type.
  auto s = lora::attach<double>(lora::Role::Subject, cfg, 3, 7, lora::all_types(), 0.2);
  auto mo = lora::attach<double>(lora::Role::Motion, cfg, 5, 8, lora::all_types(), 0.2);
  const flowmatch::SamplerConfig defaults;
  s.schedule = defaults.subject_schedule;
  mo.schedule = defaults.motion_schedule;
  Rng rng(9);
  for (auto* set : {&s, &mo})
    for (auto& [_, a] : *set->adapters) a.B = randn<double>(a.B.dims(), rng, 0.2);
  double worst = 0.0;
  for (int step : {1, 14, 15, 16, 50}) {
    const auto ctx = lora::merge<double>(&s, &mo, step);
    const double ss = step < 15 ? 0.5 : 1.0;
    for (const auto& [name, a] : *s.adapters) {
      const auto& b = mo.adapters->at(name);
      const auto d = ctx.layer_delta(name);
      const std::size_t rows = a.B.dim(0), cols = a.A.dim(1);
      for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j) {
          double want = 0;
          for (std::size_t r = 0; r < a.rank; ++r) want += ss * a.B[i * a.rank + r] * a.A[r * cols + j];
          for (std::size_t r = 0; r < b.rank; ++r) want += b.B[i * b.rank + r] * b.A[r * cols + j];
          worst = std::max(worst, std::abs(d[i * cols + j] - want));
        }
    }
  }
  bool sched_ok = true;
  for (int step = 1; step <= 50; ++step)
    sched_ok = sched_ok && lora::schedule_scale(defaults.subject_schedule, step) == (step < 15 ? 0.5 : 1.0) &&
               lora::schedule_scale(defaults.motion_schedule, step) == 1.0;
  o.seconds = since(t0);
  o.pass = neutral && worst <= 1e-6 && sched_ok && o.seconds < 10.0;
  o.detail = std::string(neutral ? "zero-B forward identical" : "zero-B forward differs") + ", merge err " +
             fmt(worst) + (sched_ok ? ", schedule 0.5 -> 1.0 at step 15" : ", schedule wrong");
  return o;
}

// ---------------------------------------------------------------- 5. flow estimator

inline Outcome flow_sanity() {
  Outcome o{5, "flow estimator sanity", false, {}, 0.0};
  const auto t0 = clk::now();
  const mora::FlowConfig fc;
  const std::size_t H = 32, W = 32;
  double zero_max = 0.0, worst = 0.0;
  for (int seed = 0; seed < 5; ++seed) {
    Rng rng(static_cast<std::uint64_t>(500 + seed));
    std::uniform_real_distribution<double> ph(0, 2 * std::numbers::pi);
    std::uniform_int_distribution<int> fq(1, 3);
    struct Wave {
      int kx, ky;
      double px, py;
    };
    std::vector<Wave> ws;
    for (int i = 0; i < 3; ++i) ws.push_back({fq(rng), fq(rng), ph(rng), ph(rng)});
    auto tex = [&](double x, double y) {
      double v = 0.5;
      for (const auto& w : ws)
        v += 0.1 * std::sin(2 * std::numbers::pi * w.kx * x / W + w.px) * std::sin(2 * std::numbers::pi * w.ky * y / H + w.py);
      return v;
    };
    Tensor<double> a({H, W, 3}), b({H, W, 3});
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x)
        for (std::size_t c = 0; c < 3; ++c) {
          a[(y * W + x) * 3 + c] = tex(static_cast<double>(x), static_cast<double>(y));
          b[(y * W + x) * 3 + c] = tex(static_cast<double>((x + W - 1) % W), static_cast<double>(y));
        }
    const auto still = mora::flow(a, a, fc);
    for (double v : still.vec()) zero_max = std::max(zero_max, std::abs(v));
    const auto mf = mora::mean_flow(mora::flow(a, b, fc));
    worst = std::max(worst, std::hypot(mf[0] - 1.0, mf[1]));
  }
  o.seconds = since(t0);
  o.pass = zero_max == 0.0 && worst <= 0.3 && o.seconds < 30.0;
  o.detail = "identical-frame flow max " + fmt(zero_max) + ", worst 1-px shift error " + fmt(worst) + " px";
  return o;
}

// ---------------------------------------------------------------- end to end

inline double mean(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

inline std::string join(const std::vector<double>& v) {
  std::string s;
  for (double x : v) s += (s.empty() ? "" : " ") + fmt(x);
  return s;
}

struct EndToEnd {
  cli::CliConfig cfg;
  fs::path dir;
  ParamStore<float> base;
  double pretrain_seconds = 0.0;
  std::vector<lora::LoraSet<float>> subjects;  // trained subject sets per seed
  std::vector<data::Sample> subject_samples;
};

inline cli::CliConfig seeded(const cli::CliConfig& c, std::uint64_t seed) {
  auto s = c;
  s.seed = seed;
  return s;
}

inline cli::Invocation invocation(const std::string& cmd, const cli::CliConfig& c, const fs::path& out,
                                  std::map<std::string, fs::path> inputs = {}) {
  cli::Invocation inv;
  inv.command = cmd;
  inv.config = c;
  inv.out = out;
  inv.inputs = std::move(inputs);
  return inv;
}

inline Outcome subject_stage(EndToEnd& e, std::size_t seeds) {
  Outcome o{6, "end-to-end subject stage", false, {}, 0.0};
  const auto t0 = clk::now();
  std::vector<double> trained, untrained, no_align;
  double worst_train = 0.0;
  for (std::size_t k = 0; k < seeds; ++k) {
    const auto c = seeded(e.cfg, k);
    const auto sample = data::gen_subject(c.data.subject, c.data.height, c.data.width,
                                          derive_seed(c.stage_seed("data"), "subject"));
    const auto ctx = c.eval_context(e.base);
    const auto tc = c.train(pipeline::Stage::Subject);
    const auto ts = clk::now();
    auto r = pipeline::train_subject(c.model, tc, e.base, {sample}, ctx.encoder, c.table_seed());
    worst_train = std::max(worst_train, since(ts));
    trained.push_back(eval::score_set(ctx, &r.lora, nullptr, {sample}, eval::MetricId::Subject));
    const auto init = pipeline::initial_set(c.model, tc, e.base, lora::Role::Subject);
    untrained.push_back(eval::score_set(ctx, &init, nullptr, {sample}, eval::MetricId::Subject));
    auto t0c = tc;
    t0c.lambda = 0.0;
    const auto r0 = pipeline::train_subject(c.model, t0c, e.base, {sample}, ctx.encoder, c.table_seed());
    no_align.push_back(eval::score_set(ctx, &r0.lora, nullptr, {sample}, eval::MetricId::Subject));
    e.subjects.push_back(std::move(r.lora));
    e.subject_samples.push_back(sample);
  }
  o.seconds = since(t0);
  const double mt = mean(trained), mu = mean(untrained), m0 = mean(no_align);
  o.pass = mt > mu && e.pretrain_seconds <= 300.0 && worst_train <= 120.0;
  o.detail = "trained " + fmt(mt) + " [" + join(trained) + "] vs untrained " + fmt(mu) + " [" + join(untrained) +
             "]; lambda=0 " + fmt(m0) + (m0 <= mt ? " (<= lambda=0.05)" : " (> lambda=0.05)") + "; pretrain " +
             fmt(e.pretrain_seconds) + "s, slowest subject training " + fmt(worst_train) + "s";
  return o;
}

inline Outcome motion_stage(EndToEnd& e, std::size_t seeds) {
  Outcome o{7, "end-to-end motion stage", false, {}, 0.0};
  const auto t0 = clk::now();
  std::vector<double> trained, baseline, no_mora;
  for (std::size_t k = 0; k < seeds; ++k) {
    const auto c = seeded(e.cfg, k);
    auto ms = c.data.motion;
    ms.frames = c.data.frames;
    ms = data::fit_motion(ms, c.data.subject, c.data.height, c.data.width);
    const auto sample = data::gen_motion(ms, c.data.subject, c.data.height, c.data.width,
                                         derive_seed(c.stage_seed("data"), "motion"));
    const auto ctx = c.eval_context(e.base);
    const auto tc = c.train(pipeline::Stage::Motion);
    const auto r = pipeline::train_motion(c.model, tc, c.flow, e.base, {sample}, c.table_seed());
    trained.push_back(eval::score_set(ctx, nullptr, &r.lora, {sample}, eval::MetricId::Motion));
    baseline.push_back(eval::score_set(ctx, nullptr, nullptr, {sample}, eval::MetricId::Motion));
    auto t0c = tc;
    t0c.alpha_w = 0.0;
    const auto r0 = pipeline::train_motion(c.model, t0c, c.flow, e.base, {sample}, c.table_seed());
    no_mora.push_back(eval::score_set(ctx, nullptr, &r0.lora, {sample}, eval::MetricId::Motion));
  }
  o.seconds = since(t0);
  const double mt = mean(trained), mb = mean(baseline), m0 = mean(no_mora);
  o.pass = mt > mb;
  o.detail = "trained " + fmt(mt) + " [" + join(trained) + "] vs no adapter " + fmt(mb) + " [" + join(baseline) +
             "]; alpha=0 " + fmt(m0) + (m0 <= mt ? " (<= alpha=1)" : " (> alpha=1)");
  return o;
}

inline Outcome attribution(EndToEnd& e) {
  Outcome o{8, "attribution harness", false, {}, 0.0};
  const auto t0 = clk::now();
  std::vector<std::string> problems;

  // Layer sweep through the command layer.
  auto sweep_cfg = e.cfg;
  sweep_cfg.eval.metric = eval::MetricId::Subject;
  cli::execute(invocation("sweep-layers", sweep_cfg, e.dir / "sweep",
                          {{"base", e.dir / "pretrain" / "checkpoint"}, {"data", e.dir / "data" / "subject"}}));
  const auto sweep = json::parse(io::read_file(e.dir / "sweep" / "sweep.json"));
  const auto& rows = sweep.at("rows");
  double full = -1, lo = 1e300;
  for (const auto& r : rows) {
    const double v = r.at("normalized").get<double>();
    lo = std::min(lo, v);
    if (r.at("layer") == "full") full = v;
  }
  if (rows.size() != dit::kLayerTypes.size() + 1) problems.push_back("sweep has " + std::to_string(rows.size()) + " rows");
  if (full != 100.0) problems.push_back("full row " + fmt(full));
  if (lo != 0.0) problems.push_back("minimum row " + fmt(lo));

  // Combination ablation.
  cli::execute(invocation("ablate-combos", e.cfg, e.dir / "ablation",
                          {{"base", e.dir / "pretrain" / "checkpoint"},
                           {"subject-ref", e.dir / "data" / "subject"},
                           {"motion-ref", e.dir / "data" / "motion"}}));
  const auto abl = json::parse(io::read_file(e.dir / "ablation" / "ablation.json"));
  std::size_t complete = 0;
  for (const auto& c : abl.at("combos")) {
    const auto& r = c.at("report");
    if (!r.at("subject_similarity").is_null() && !r.at("motion_fidelity").is_null() &&
        !r.at("temporal_consistency").is_null())
      ++complete;
  }
  if (complete != 4) problems.push_back(std::to_string(complete) + "/4 combos complete");

  // Timing probe on the trained subject sets.
  std::vector<double> rho;
  std::size_t positive = 0;
  for (std::size_t k = 0; k < e.subjects.size(); ++k) {
    const auto c = seeded(e.cfg, k);
    const auto& s = e.subject_samples[k];
    const auto r = eval::timing_probe(c.eval_context(e.base), &e.subjects[k], nullptr, s.caption, s.video);
    rho.push_back(r.spearman_tail);
    if (r.tail != 25) problems.push_back("probe tail " + std::to_string(r.tail));
    if (r.spearman_tail > 0) ++positive;
  }
  if (positive < 2) problems.push_back("probe positive in " + std::to_string(positive) + " seeds");

  o.seconds = since(t0);
  o.pass = problems.empty();
  std::string extra;
  for (const auto& p : problems) extra += "; " + p;
  o.detail = "sweep rows " + std::to_string(rows.size()) + " full " + fmt(full) + " min " + fmt(lo) + ", combos " +
             std::to_string(complete) + "/4, probe spearman [" + join(rho) + "]" + extra;
  return o;
}

/// Small configuration that runs every command in seconds.
inline cli::CliConfig tiny_config() {
  auto c = cli::parse_config(json::object(), false);
  c.seed = 3;
  c.model.d_model = 16;
  c.model.n_blocks = 1;
  c.model.n_heads = 2;
  c.model.d_ffn = 32;
  c.data.height = c.data.width = 16;
  c.data.frames = c.infer.frames = c.data.motion.frames = 5;
  c.data.n_subjects = 2;
  c.pretrain.steps = 20;
  c.subject.steps = 8;
  c.motion.steps = 8;
  c.sampler.steps = 4;
  c.eval.samples_per_item = 1;
  c.encoder.d_enc = 8;
  c.encoder.d_hidden = 16;
  return c;
}

inline Outcome determinism(const fs::path& dir) {
  Outcome o{9, "manifest determinism", false, {}, 0.0};
  const auto t0 = clk::now();
  const auto c = tiny_config();
  const fs::path a = dir / "runs", b = dir / "replays";
  fs::remove_all(a);
  fs::remove_all(b);
  const fs::path ckpt = a / "pretrain" / "checkpoint";
  const std::vector<cli::Invocation> runs{
      invocation("gen-data", c, a / "gen-data"),
      invocation("pretrain", c, a / "pretrain", {{"data", a / "gen-data" / "corpus"}}),
      invocation("train-subject", c, a / "train-subject", {{"base", ckpt}, {"data", a / "gen-data" / "subject"}}),
      invocation("train-motion", c, a / "train-motion", {{"base", ckpt}, {"data", a / "gen-data" / "motion"}}),
      invocation("infer", c, a / "infer",
                 {{"base", ckpt},
                  {"subject", a / "train-subject" / "lora"},
                  {"motion", a / "train-motion" / "lora"},
                  {"subject-ref", a / "gen-data" / "subject"},
                  {"motion-ref", a / "gen-data" / "motion"}}),
      invocation("eval", c, a / "eval",
                 {{"video", a / "infer" / "video.stns"}, {"motion-ref", a / "gen-data" / "motion"}}),
      invocation("sweep-layers", c, a / "sweep-layers", {{"base", ckpt}, {"data", a / "gen-data" / "subject"}}),
      invocation("probe-timing", c, a / "probe-timing",
                 {{"base", ckpt}, {"subject", a / "train-subject" / "lora"}, {"data", a / "gen-data" / "subject"}}),
      invocation("ablate-combos", c, a / "ablate-combos",
                 {{"base", ckpt}, {"subject-ref", a / "gen-data" / "subject"}, {"motion-ref", a / "gen-data" / "motion"}}),
  };
  std::size_t same = 0;
  std::vector<std::string> differ;
  for (const auto& inv : runs) {
    const auto first = cli::execute(inv);
    auto replay = cli::invocation_from_manifest(json::parse(io::read_file(inv.out / "manifest.json")));
    replay.out = b / inv.command;
    const auto second = cli::execute(replay);
    if (first.outputs == second.outputs && !first.outputs.empty())
      ++same;
    else
      differ.push_back(inv.command);
  }
  o.seconds = since(t0);
  o.pass = differ.empty();
  o.detail = std::to_string(same) + "/" + std::to_string(runs.size()) + " commands replay bit-exactly";
  for (const auto& d : differ) o.detail += "; " + d + " differs";
  return o;
}

template <class F>
Outcome guarded(int id, const std::string& name, F&& f) {
  const auto t0 = clk::now();
  try {
    return f();
  } catch (const std::exception& ex) {
    return {id, name, false, std::string("threw ") + ex.what(), since(t0)};
  }
}

}  // namespace detail

/// Runs the criteria in order, reporting each as it completes.
inline std::vector<Outcome> run(const Options& opt, const Reporter& report = {}) {
  std::vector<Outcome> out;
  auto add = [&](Outcome o) {
    if (report) report(o);
    out.push_back(std::move(o));
  };
  add(detail::guarded(1, "codec exactness", detail::codec));
  add(detail::guarded(2, "flow-matching algebra", detail::flow_matching));
  add(detail::guarded(3, "64-bit gradient checks", detail::gradients));
  add(detail::guarded(4, "LoRA neutrality and composition", detail::lora_composition));
  add(detail::guarded(5, "flow estimator sanity", detail::flow_sanity));
  if (opt.quick) return out;

  detail::EndToEnd e;
  e.dir = opt.work / "desk";
  const auto setup = [&]() -> std::optional<std::string> {
    try {
      e.cfg = cli::parse_config(json::object(), false);
      fs::remove_all(e.dir);
      cli::execute(detail::invocation("gen-data", e.cfg, e.dir / "data"));
      const auto t0 = detail::clk::now();
      cli::execute(detail::invocation("pretrain", e.cfg, e.dir / "pretrain", {{"data", e.dir / "data" / "corpus"}}));
      e.pretrain_seconds = detail::since(t0);
      e.base = pipeline::load_params(e.dir / "pretrain" / "checkpoint");
      return std::nullopt;
    } catch (const std::exception& ex) {
      return std::string("setup threw ") + ex.what();
    }
  }();
  if (setup) {
    add({6, "end-to-end subject stage", false, *setup, 0.0});
    add({7, "end-to-end motion stage", false, *setup, 0.0});
    add({8, "attribution harness", false, *setup, 0.0});
  } else {
    add(detail::guarded(6, "end-to-end subject stage", [&] { return detail::subject_stage(e, opt.seeds); }));
    add(detail::guarded(7, "end-to-end motion stage", [&] { return detail::motion_stage(e, opt.seeds); }));
    add(detail::guarded(8, "attribution harness", [&] { return detail::attribution(e); }));
  }
  add(detail::guarded(9, "manifest determinism", [&] { return detail::determinism(opt.work / "determinism"); }));
  return out;
}

}  // namespace smra::acceptance
