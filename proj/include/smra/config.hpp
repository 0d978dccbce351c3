// Copyright (c) 2026 The smrabooth authors
// SPDX-License-Identifier: Apache-2.0
//
// Run configuration: one JSON document covering model, data, training,
// sampling, flow and evaluation settings. A preset supplies every default;
// user documents may only override keys the preset defines.

#pragma once

#include <cstdlib>

#include <nlohmann/json.hpp>

#include "smra/eval.hpp"

namespace smra::cli {

using nlohmann::json;

struct DataConfig {
  std::size_t height = 32, width = 32, frames = 17, n_subjects = 8;
  data::SubjectSpec subject{data::Shape::Circle, {0.9, 0.5, 0.2}, 11, 0.35, "orange"};
  data::MotionSpec motion{data::Linear{1.0, 0.0}, 17, ""};
};

struct EncoderConfig {
  std::size_t patch_size = 4, d_enc = 32, d_hidden = 64;
};

struct EvalConfig {
  std::size_t samples_per_item = 3;
  eval::MetricId metric = eval::MetricId::Subject;
  std::size_t ablation_seeds = 1;
};

struct InferConfig {
  std::string prompt = "A V* circle S* moving-right";
  std::size_t frames = 17;
};

struct CliConfig {
  std::string preset = "desk";
  std::uint64_t seed = 0;
  dit::ModelConfig model;
  DataConfig data;
  pipeline::TrainConfig pretrain, subject, motion;
  flowmatch::SamplerConfig sampler;
  mora::FlowConfig flow;
  EncoderConfig encoder;
  EvalConfig eval;
  InferConfig infer;

  // Derived seeds; every stochastic component draws from one of these.
  std::uint64_t stage_seed(std::string_view what) const { return derive_seed(seed, std::string("run.") + std::string(what)); }
  std::uint64_t table_seed() const { return stage_seed("text"); }

  json seeds() const {
    json j{{"seed", seed}};
    for (const char* k : {"text", "data", "pretrain", "subject", "motion", "sampler", "encoder"}) j[k] = stage_seed(k);
    return j;
  }

  pipeline::TrainConfig train(pipeline::Stage s) const {
    auto t = s == pipeline::Stage::Pretrain ? pretrain : s == pipeline::Stage::Subject ? subject : motion;
    t.stage = s;
    t.seed = stage_seed(pipeline::to_string(s));
    return t;
  }

  flowmatch::SamplerConfig sampling() const {
    auto c = sampler;
    c.seed = stage_seed("sampler");
    return c;
  }

  sura::PatchEncoder make_encoder() const {
    return sura::make_encoder(stage_seed("encoder"), encoder.patch_size, encoder.d_enc, 3, encoder.d_hidden);
  }

  eval::EvalContext eval_context(const ParamStore<float>& base) const {
    return {model, &base, table_seed(), make_encoder(), flow, sampling(), eval.samples_per_item};
  }

  void validate() const {
    model.validate();
    for (const auto* t : {&pretrain, &subject, &motion}) t->validate();
    sampler.validate();
    flow.validate();
    data.subject.validate();
    data::check_resolution(data.height, data.width);
    data::MotionSpec m = data.motion;
    m.frames = data.frames;
    m.validate();
    if (encoder.patch_size == 0 || encoder.d_enc == 0 || encoder.d_hidden == 0)
      throw Error(ErrorCode::BadConfig, "encoder dimensions must be positive");
    if (eval.samples_per_item < 1 || eval.ablation_seeds < 1)
      throw Error(ErrorCode::BadConfig, "eval counts must be >= 1");
    if (infer.frames < 1 || (infer.frames - 1) % toyvae::kTime != 0)
      throw Error(ErrorCode::BadFrameCount, "infer.frames must be 1 (mod 4)");
    if (dit::tokenize(infer.prompt).empty()) throw Error(ErrorCode::EmptyPrompt, "infer.prompt is empty");
  }
};

// ---------------------------------------------------------------- json mapping

inline std::string prediction_name(dit::Prediction p) {
  switch (p) {
    case dit::Prediction::Velocity: return "velocity";
    case dit::Prediction::Clean: return "clean";
    default: return "preconditioned";
  }
}

inline dit::Prediction parse_prediction(std::string_view s) {
  if (s == "velocity") return dit::Prediction::Velocity;
  if (s == "clean") return dit::Prediction::Clean;
  if (s == "preconditioned") return dit::Prediction::Preconditioned;
  throw Error(ErrorCode::BadConfig, "unknown prediction '" + std::string(s) + "'");
}

namespace detail {

inline json schedule_json(const lora::ScaleSchedule& s) {
  return {{"t_point", s.t_point}, {"s_low", s.s_low}, {"s_high", s.s_high}};
}

inline lora::ScaleSchedule schedule_from(const json& j) {
  return {j.at("t_point").get<int>(), j.at("s_low").get<double>(), j.at("s_high").get<double>()};
}

inline json train_json(const pipeline::TrainConfig& t) {
  json j{{"lr", t.lr},
         {"steps", t.steps},
         {"batch", t.batch},
         {"lambda", t.lambda},
         {"alpha_w", t.alpha_w},
         {"rank", t.rank},
         {"cond_dropout", t.cond_dropout},
         {"mora_every", t.mora_every},
         {"optimizer", pipeline::to_string(t.optimizer)},
         {"train_tokens", t.train_tokens},
         {"windowed", t.windowed},
         {"layer_types", nullptr}};
  if (t.layer_types) j["layer_types"] = *t.layer_types;
  return j;
}

inline pipeline::TrainConfig train_from(const json& j) {
  pipeline::TrainConfig t;
  t.lr = j.at("lr").get<double>();
  t.steps = j.at("steps").get<int>();
  t.batch = j.at("batch").get<std::size_t>();
  t.lambda = j.at("lambda").get<double>();
  t.alpha_w = j.at("alpha_w").get<double>();
  t.rank = j.at("rank").get<std::size_t>();
  t.cond_dropout = j.at("cond_dropout").get<double>();
  t.mora_every = j.at("mora_every").get<int>();
  t.optimizer = pipeline::parse_optimizer(j.at("optimizer").get<std::string>());
  t.train_tokens = j.at("train_tokens").get<bool>();
  t.windowed = j.at("windowed").get<bool>();
  if (!j.at("layer_types").is_null()) t.layer_types = j.at("layer_types").get<std::vector<std::string>>();
  return t;
}

inline json motion_json(const data::MotionSpec& m) {
  json j = json::object();
  std::visit(
      [&](const auto& t) {
        using V = std::decay_t<decltype(t)>;
        if constexpr (std::is_same_v<V, data::Linear>)
          j = {{"type", "linear"}, {"vx", t.vx}, {"vy", t.vy}, {"radius", 0.0}, {"angular_rate", 0.0}};
        else if constexpr (std::is_same_v<V, data::Circular>)
          j = {{"type", "circular"}, {"vx", 0.0}, {"vy", 0.0}, {"radius", t.radius}, {"angular_rate", t.angular_rate}};
        else
          j = {{"type", "rotation"}, {"vx", 0.0}, {"vy", 0.0}, {"radius", 0.0}, {"angular_rate", t.angular_rate}};
      },
      m.trajectory);
  j["name"] = m.name;
  return j;
}

inline data::MotionSpec motion_from(const json& j, std::size_t frames) {
  data::MotionSpec m;
  m.frames = frames;
  m.name = j.at("name").get<std::string>();
  const auto type = j.at("type").get<std::string>();
  if (type == "linear")
    m.trajectory = data::Linear{j.at("vx").get<double>(), j.at("vy").get<double>()};
  else if (type == "circular")
    m.trajectory = data::Circular{j.at("radius").get<double>(), j.at("angular_rate").get<double>()};
  else if (type == "rotation")
    m.trajectory = data::Rotation{j.at("angular_rate").get<double>()};
  else
    throw Error(ErrorCode::BadConfig, "unknown trajectory type '" + type + "'");
  return m;
}

/// Rejects keys of `user` absent from `ref`, recursively through objects.
inline void check_keys(const json& user, const json& ref, const std::string& path) {
  if (!user.is_object()) return;
  if (!ref.is_object()) throw Error(ErrorCode::BadConfig, "'" + path + "' is not an object");
  for (const auto& [k, v] : user.items()) {
    const std::string p = path.empty() ? k : path + "." + k;
    if (!ref.contains(k)) throw Error(ErrorCode::BadConfig, "unknown config key '" + p + "'");
    if (v.is_object()) check_keys(v, ref.at(k), p);
  }
}

}  // namespace detail

inline json to_json(const CliConfig& c) {
  const auto& m = c.model;
  const auto& s = c.data.subject;
  return {
      {"preset", c.preset},
      {"seed", c.seed},
      {"model",
       {{"d_model", m.d_model},
        {"n_blocks", m.n_blocks},
        {"n_heads", m.n_heads},
        {"d_ffn", m.d_ffn},
        {"max_text_tokens", m.max_text_tokens},
        {"text_buckets", m.text_buckets},
        {"cross_attn_targetable", m.cross_attn_targetable},
        {"tap", m.tap == dit::TapMode::PostResidual ? "post_residual" : "normalized"},
        {"prediction", prediction_name(m.prediction)},
        {"t_min", m.t_min},
        {"data_mean", m.data_mean},
        {"data_std", m.data_std}}},
      {"data",
       {{"height", c.data.height},
        {"width", c.data.width},
        {"frames", c.data.frames},
        {"n_subjects", c.data.n_subjects},
        {"subject",
         {{"shape", data::to_string(s.shape)},
          {"fill_color", s.fill_color},
          {"texture_seed", s.texture_seed},
          {"size", s.size},
          {"color_name", s.color_name}}},
        {"motion", detail::motion_json(c.data.motion)}}},
      {"pretrain", detail::train_json(c.pretrain)},
      {"subject", detail::train_json(c.subject)},
      {"motion", detail::train_json(c.motion)},
      {"sampler",
       {{"steps", c.sampler.steps},
        {"cfg_scale", c.sampler.cfg_scale},
        {"subject_schedule", detail::schedule_json(c.sampler.subject_schedule)},
        {"motion_schedule", detail::schedule_json(c.sampler.motion_schedule)}}},
      {"flow",
       {{"alpha", c.flow.alpha},
        {"iters", c.flow.iters},
        {"grayscale", c.flow.grayscale},
        {"intensity_scale", c.flow.intensity_scale}}},
      {"encoder", {{"patch_size", c.encoder.patch_size}, {"d_enc", c.encoder.d_enc}, {"d_hidden", c.encoder.d_hidden}}},
      {"eval",
       {{"samples_per_item", c.eval.samples_per_item},
        {"metric", eval::to_string(c.eval.metric)},
        {"ablation_seeds", c.eval.ablation_seeds}}},
      {"infer", {{"prompt", c.infer.prompt}, {"frames", c.infer.frames}}},
  };
}

/// Parses a fully populated document (every key present).
inline CliConfig from_full_json(const json& j) {
  CliConfig c;
  c.preset = j.at("preset").get<std::string>();
  c.seed = j.at("seed").get<std::uint64_t>();
  const auto& m = j.at("model");
  c.model.d_model = m.at("d_model").get<std::size_t>();
  c.model.n_blocks = m.at("n_blocks").get<std::size_t>();
  c.model.n_heads = m.at("n_heads").get<std::size_t>();
  c.model.d_ffn = m.at("d_ffn").get<std::size_t>();
  c.model.max_text_tokens = m.at("max_text_tokens").get<std::size_t>();
  c.model.text_buckets = m.at("text_buckets").get<std::size_t>();
  c.model.cross_attn_targetable = m.at("cross_attn_targetable").get<bool>();
  const auto tap = m.at("tap").get<std::string>();
  if (tap != "post_residual" && tap != "normalized") throw Error(ErrorCode::BadConfig, "unknown tap '" + tap + "'");
  c.model.tap = tap == "post_residual" ? dit::TapMode::PostResidual : dit::TapMode::Normalized;
  c.model.prediction = parse_prediction(m.at("prediction").get<std::string>());
  c.model.t_min = m.at("t_min").get<double>();
  c.model.data_mean = m.at("data_mean").get<double>();
  c.model.data_std = m.at("data_std").get<double>();

  const auto& d = j.at("data");
  c.data.height = d.at("height").get<std::size_t>();
  c.data.width = d.at("width").get<std::size_t>();
  c.data.frames = d.at("frames").get<std::size_t>();
  c.data.n_subjects = d.at("n_subjects").get<std::size_t>();
  const auto& s = d.at("subject");
  c.data.subject = {data::parse_shape(s.at("shape").get<std::string>()), s.at("fill_color").get<data::Rgb>(),
                    s.at("texture_seed").get<std::uint64_t>(), s.at("size").get<double>(),
                    s.at("color_name").get<std::string>()};
  c.data.motion = detail::motion_from(d.at("motion"), c.data.frames);

  c.pretrain = detail::train_from(j.at("pretrain"));
  c.subject = detail::train_from(j.at("subject"));
  c.motion = detail::train_from(j.at("motion"));

  const auto& sm = j.at("sampler");
  c.sampler.steps = sm.at("steps").get<int>();
  c.sampler.cfg_scale = sm.at("cfg_scale").get<double>();
  c.sampler.subject_schedule = detail::schedule_from(sm.at("subject_schedule"));
  c.sampler.motion_schedule = detail::schedule_from(sm.at("motion_schedule"));

  const auto& f = j.at("flow");
  c.flow.alpha = f.at("alpha").get<double>();
  c.flow.iters = f.at("iters").get<int>();
  c.flow.grayscale = f.at("grayscale").get<std::array<double, 3>>();
  c.flow.intensity_scale = f.at("intensity_scale").get<double>();

  const auto& e = j.at("encoder");
  c.encoder = {e.at("patch_size").get<std::size_t>(), e.at("d_enc").get<std::size_t>(),
               e.at("d_hidden").get<std::size_t>()};

  const auto& ev = j.at("eval");
  c.eval.samples_per_item = ev.at("samples_per_item").get<std::size_t>();
  c.eval.metric = eval::parse_metric(ev.at("metric").get<std::string>());
  c.eval.ablation_seeds = ev.at("ablation_seeds").get<std::size_t>();
  const auto& in = j.at("infer");
  c.infer.prompt = in.at("prompt").get<std::string>();
  c.infer.frames = in.at("frames").get<std::size_t>();
  return c;
}

// ---------------------------------------------------------------- presets

inline std::vector<std::string> preset_names() { return {"desk", "paper-scale"}; }

/// Complete default configuration of a preset.
inline CliConfig preset(std::string_view name) {
  CliConfig c;
  c.preset = std::string(name);
  c.pretrain.stage = pipeline::Stage::Pretrain;
  c.subject.stage = pipeline::Stage::Subject;
  c.motion.stage = pipeline::Stage::Motion;
  c.pretrain.cond_dropout = 0.1;
  c.subject.cond_dropout = c.motion.cond_dropout = 0.0;
  if (name == "desk") {
    c.model.n_blocks = 2;
    c.data.frames = 9;
    c.infer.frames = 9;
    c.pretrain.steps = 2000;
    c.pretrain.batch = 2;
    c.pretrain.lr = 1e-3;
    c.subject.steps = 300;
    c.subject.lr = 5e-3;
    c.subject.rank = 8;
    c.motion.steps = 400;
    c.motion.lr = 5e-3;
    c.motion.rank = 16;
  } else if (name == "paper-scale") {
    c.pretrain.steps = 2000;
    c.pretrain.lr = 1e-4;
    c.subject.steps = 300;
    c.subject.lr = 1e-4;
    c.subject.rank = 32;
    c.motion.steps = 400;
    c.motion.lr = 1e-4;
    c.motion.rank = 64;
  } else {
    throw Error(ErrorCode::BadConfig, "unknown preset '" + std::string(name) + "'");
  }
  c.data.motion.frames = c.data.frames;
  return c;
}

/// Deep-merges `patch` into `base`; objects merge, everything else replaces.
inline void merge_into(json& base, const json& patch) {
  for (const auto& [k, v] : patch.items()) {
    if (v.is_object() && base.contains(k) && base[k].is_object())
      merge_into(base[k], v);
    else
      base[k] = v;
  }
}

/// Resolves a user document against its preset (default "desk"). Unknown keys
/// are rejected. SMRA_SEED, when set, replaces the top-level seed.
inline CliConfig parse_config(const json& user, bool apply_env = true) {
  if (!user.is_object()) throw Error(ErrorCode::BadConfig, "config must be a JSON object");
  const std::string name = user.value("preset", std::string("desk"));
  json full = to_json(preset(name));
  detail::check_keys(user, full, "");
  merge_into(full, user);
  if (apply_env) {
    if (const char* env = std::getenv("SMRA_SEED"); env && *env) {
      char* end = nullptr;
      const auto v = std::strtoull(env, &end, 10);
      if (*end != '\0') throw Error(ErrorCode::BadConfig, "SMRA_SEED is not an unsigned integer");
      full["seed"] = v;
    }
  }
  CliConfig c;
  try {
    c = from_full_json(full);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::BadConfig, std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

}  // namespace smra::cli
