// Copyright (c) 2026 The smrabooth authors
// SPDX-License-Identifier: Apache-2.0
//
// Attribution experiments over trained adapters: the per-layer-type sweep,
// the denoising-time probe, and layer-combination ablations.

#pragma once

#include "smra/metrics.hpp"
#include "smra/pipeline.hpp"

namespace smra::eval {

enum class MetricId { Subject, Motion, Temporal };

inline std::string to_string(MetricId m) {
  switch (m) {
    case MetricId::Subject: return "subject";
    case MetricId::Motion: return "motion";
    default: return "temporal";
  }
}

inline MetricId parse_metric(std::string_view s) {
  if (s == "subject") return MetricId::Subject;
  if (s == "motion") return MetricId::Motion;
  if (s == "temporal") return MetricId::Temporal;
  throw Error(ErrorCode::BadConfig, "unknown metric '" + std::string(s) + "'");
}

/// Everything needed to generate from the base model and score the result.
struct EvalContext {
  dit::ModelConfig model;
  const ParamStore<float>* base = nullptr;
  std::uint64_t table_seed = 0;
  sura::PatchEncoder encoder;
  mora::FlowConfig flow;
  flowmatch::SamplerConfig sampler;
  std::size_t samples_per_item = 1;  // sampler seeds per eval item
};

/// Generates from `prompt` with `frames` frames and scores it against `ref`.
/// Subject scores compare every frame with frame 0 of `ref`.
inline double score_generation(const EvalContext& ctx, const lora::LoraSet<float>* subject,
                               const lora::LoraSet<float>* motion, const std::string& prompt,
                               const Tensor<float>& ref, std::size_t frames, MetricId metric, std::uint64_t seed) {
  pipeline::InferRequest rq{prompt, frames, ref.dim(1), ref.dim(2), ctx.sampler};
  rq.sampler.seed = seed;
  const auto out = pipeline::infer(ctx.model, *ctx.base, subject, motion, rq, ctx.table_seed);
  switch (metric) {
    case MetricId::Subject: {
      const auto f0 = toyvae::frame(ref, 0);
      return subject_similarity(out.video, f0.reshaped({1, f0.dim(0), f0.dim(1), f0.dim(2)}), ctx.encoder);
    }
    case MetricId::Motion: return motion_fidelity(out.video, ref, ctx.flow);
    default: return temporal_consistency(out.video, ctx.encoder);
  }
}

/// Mean score over the eval set, each item generated with its own caption and
/// frame count, `samples_per_item` sampler seeds per item.
inline double score_set(const EvalContext& ctx, const lora::LoraSet<float>* subject, const lora::LoraSet<float>* motion,
                        const std::vector<data::Sample>& items, MetricId metric) {
  if (items.empty()) throw Error(ErrorCode::EmptyEvalSet, "empty eval set");
  double s = 0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < items.size(); ++i)
    for (std::size_t k = 0; k < ctx.samples_per_item; ++k, ++n)
      s += score_generation(ctx, subject, motion, items[i].caption, items[i].video, items[i].video.dim(0), metric,
                            derive_seed(ctx.sampler.seed, "eval." + std::to_string(i) + "." + std::to_string(k)));
  return s / static_cast<double>(n);
}

// ---------------------------------------------------------------- layer sweep

/// Scores the set restricted to each layer type in turn, then unrestricted,
/// and normalizes full = 100, worst = 0.
inline SweepTable layer_sweep(const EvalContext& ctx, const lora::LoraSet<float>& trained,
                              const std::vector<data::Sample>& eval_set, MetricId metric) {
  if (eval_set.empty()) throw Error(ErrorCode::EmptyEvalSet, "empty eval set");
  if (trained.targeted_types().size() != dit::kLayerTypes.size())
    throw Error(ErrorCode::BadConfig, "layer sweep needs a set trained on all layer types");
  auto run = [&](const lora::LoraSet<float>& s) {
    const bool subj = s.role == lora::Role::Subject;
    return score_set(ctx, subj ? &s : nullptr, subj ? nullptr : &s, eval_set, metric);
  };
  std::vector<std::pair<std::string, double>> rows;
  for (const auto& t : dit::kLayerTypes) rows.emplace_back(t, run(lora::sweep_mask(trained, t)));
  return normalize_sweep(rows, run(trained));
}

// ---------------------------------------------------------------- timing probe

struct ProbePoint {
  int step;
  double t;
  double subject_similarity;

  nlohmann::json to_json() const { return {{"step", step}, {"t", t}, {"subject_similarity", subject_similarity}}; }
};

struct ProbeResult {
  std::vector<ProbePoint> curve;
  double spearman_tail = 0.0;  // rank correlation of (step, score) over the final half
  std::size_t tail = 0;

  std::string to_jsonl() const {
    std::string s;
    for (const auto& p : curve) s += p.to_json().dump() + "\n";
    return s;
  }
};

/// Rank correlation over the last `window` points of a curve.
inline double tail_spearman(const std::vector<ProbePoint>& curve, std::size_t window) {
  window = std::min(window, curve.size());
  std::vector<double> x, y;
  for (std::size_t i = curve.size() - window; i < curve.size(); ++i) {
    x.push_back(curve[i].step);
    y.push_back(curve[i].subject_similarity);
  }
  return spearman(x, y);
}

/// Scores the one-step recovered clean frames against `ref_image` at every
/// sampler step.
inline ProbeResult timing_probe(const EvalContext& ctx, const lora::LoraSet<float>* subject,
                                const lora::LoraSet<float>* motion, const std::string& prompt,
                                const Tensor<float>& ref_image, std::size_t frames = 1) {
  ProbeResult res;
  pipeline::InferRequest rq{prompt, frames, ref_image.dim(1), ref_image.dim(2), ctx.sampler};
  auto obs = [&](const flowmatch::StepState<float>& s) {
    const auto z0 = flowmatch::recover_z0(s.z, s.u, s.t);
    const auto v = toyvae::make_video(toyvae::decode(z0));
    res.curve.push_back({s.step, static_cast<double>(s.t), subject_similarity(v, ref_image, ctx.encoder)});
  };
  pipeline::infer(ctx.model, *ctx.base, subject, motion, rq, ctx.table_seed, obs);
  res.tail = std::max<std::size_t>(2, res.curve.size() / 2);
  if (res.curve.size() >= 2) res.spearman_tail = tail_spearman(res.curve, res.tail);
  return res;
}

// ---------------------------------------------------------------- combination ablation

struct Combo {
  std::string name;
  std::vector<std::string> subject_types;
  std::vector<std::string> motion_types;
};

inline std::vector<Combo> default_combos() {
  const auto all = lora::all_types();
  return {{"combo1", all, all},
          {"combo2", {"q", "k"}, {"v", "o", "ffn.0", "ffn.2"}},
          {"combo3", {"q", "k", "ffn.0"}, {"v", "o", "ffn.2"}},
          {"ours", lora::default_types(lora::Role::Subject), lora::default_types(lora::Role::Motion)}};
}

struct AblationSetup {
  pipeline::TrainConfig subject;
  pipeline::TrainConfig motion;
  data::Sample subject_sample;  // reference image with mask
  data::Sample motion_sample;   // reference video
  std::string prompt;           // joint prompt naming both V* and S*
  std::vector<std::uint64_t> seeds{0};
};

struct ComboResult {
  Combo combo;
  MetricReport report;

  nlohmann::json to_json() const {
    return {{"name", combo.name},
            {"subject_types", combo.subject_types},
            {"motion_types", combo.motion_types},
            {"report", report.to_json()}};
  }
};

/// Trains both adapter sets per combo and seed, samples the joint prompt, and
/// reports all three proxy metrics.
inline std::vector<ComboResult> combination_ablation(const EvalContext& ctx, const std::vector<Combo>& combos,
                                                     const AblationSetup& setup) {
  for (const auto& c : combos) {
    lora::validate_types(c.subject_types);
    lora::validate_types(c.motion_types);
  }
  if (setup.seeds.empty()) throw Error(ErrorCode::EmptyEvalSet, "no ablation seeds");
  const auto& ref_video = setup.motion_sample.video;
  std::vector<ComboResult> out;
  for (const auto& c : combos) {
    ComboResult r{c, {}};
    for (auto seed : setup.seeds) {
      auto st = setup.subject;
      st.stage = pipeline::Stage::Subject;
      st.seed = seed;
      st.layer_types = c.subject_types;
      auto mt = setup.motion;
      mt.stage = pipeline::Stage::Motion;
      mt.seed = seed;
      mt.layer_types = c.motion_types;
      const auto sr = pipeline::train_subject(ctx.model, st, *ctx.base, {setup.subject_sample}, ctx.encoder, ctx.table_seed);
      const auto mr = pipeline::train_motion(ctx.model, mt, ctx.flow, *ctx.base, {setup.motion_sample}, ctx.table_seed);
      pipeline::InferRequest rq{setup.prompt, ref_video.dim(0), ref_video.dim(1), ref_video.dim(2), ctx.sampler};
      rq.sampler.seed = derive_seed(seed, "ablation.sample");
      const auto gen = pipeline::infer(ctx.model, *ctx.base, &sr.lora, &mr.lora, rq, ctx.table_seed).video;
      r.report.subject_similarity.add(subject_similarity(gen, setup.subject_sample.video, ctx.encoder));
      r.report.motion_fidelity.add(motion_fidelity(gen, ref_video, ctx.flow));
      r.report.temporal_consistency.add(temporal_consistency(gen, ctx.encoder));
    }
    r.report.validate();
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace smra::eval
