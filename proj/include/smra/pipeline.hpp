// Copyright (c) 2026 The smrabooth authors
// SPDX-License-Identifier: Apache-2.0
//
// Training stages and inference: base pretraining on captioned videos, the
// subject stage (masked velocity loss plus subject alignment on the block-1
// tap), the motion stage (velocity loss plus flow alignment of the one-step
// recovered video), and joint sampling with both adapter sets.

#pragma once

#include <filesystem>

#include <nlohmann/json.hpp>

#include "smra/data.hpp"
#include "smra/flowmatch.hpp"
#include "smra/lora.hpp"
#include "smra/metrics.hpp"
#include "smra/mora.hpp"
#include "smra/sura.hpp"
#include "smra/toyvae.hpp"

namespace smra::pipeline {

enum class Stage { Pretrain, Subject, Motion };

inline std::string to_string(Stage s) {
  switch (s) {
    case Stage::Pretrain: return "pretrain";
    case Stage::Subject: return "subject";
    default: return "motion";
  }
}

enum class OptimizerKind { Sgd, Adam };

inline std::string to_string(OptimizerKind k) { return k == OptimizerKind::Sgd ? "sgd" : "adam"; }

inline OptimizerKind parse_optimizer(std::string_view s) {
  if (s == "sgd") return OptimizerKind::Sgd;
  if (s == "adam") return OptimizerKind::Adam;
  throw Error(ErrorCode::BadConfig, "unknown optimizer '" + std::string(s) + "'");
}

struct TrainConfig {
  Stage stage = Stage::Pretrain;
  double lr = 1e-4;
  int steps = 1;
  std::size_t batch = 1;
  double lambda = 0.05;
  double alpha_w = 1.0;
  std::size_t rank = 8;
  std::uint64_t seed = 0;
  double cond_dropout = 0.1;
  int mora_every = 1;  // 0 disables the flow loss
  OptimizerKind optimizer = OptimizerKind::Adam;
  bool train_tokens = true;
  bool windowed = false;
  std::optional<std::vector<std::string>> layer_types;

  void validate() const {
    if (!(lr > 0.0)) throw Error(ErrorCode::BadConfig, "lr must be > 0");
    if (steps < 1) throw Error(ErrorCode::BadConfig, "steps must be >= 1");
    if (batch < 1) throw Error(ErrorCode::BadConfig, "batch must be >= 1");
    if (lambda < 0 || alpha_w < 0) throw Error(ErrorCode::BadConfig, "loss weights must be >= 0");
    if (cond_dropout < 0 || cond_dropout > 1) throw Error(ErrorCode::BadConfig, "cond_dropout must lie in [0,1]");
    if (mora_every < 0) throw Error(ErrorCode::BadConfig, "mora_every must be >= 0");
    if (rank < 1) throw Error(ErrorCode::BadConfig, "rank must be >= 1");
    if (layer_types) lora::validate_types(*layer_types);
  }
};

// ---------------------------------------------------------------- optimizer

/// Plain gradient descent or Adam (beta 0.9 / 0.999, eps 1e-8) over named
/// tensors; state is keyed by name and starts at zero.
class Optimizer {
 public:
  Optimizer(OptimizerKind kind, double lr) : kind_(kind), lr_(lr) {}

  void step(const std::map<std::string, Tensor<float>*>& params, const std::map<std::string, Tensor<float>>& grads) {
    ++t_;
    for (const auto& [name, p] : params) {
      auto git = grads.find(name);
      if (git == grads.end()) continue;
      const Tensor<float>& g = git->second;
      if (kind_ == OptimizerKind::Sgd) {
        for (std::size_t i = 0; i < p->size(); ++i) (*p)[i] -= static_cast<float>(lr_) * g[i];
        continue;
      }
      auto& m = m_.try_emplace(name, p->dims()).first->second;
      auto& v = v_.try_emplace(name, p->dims()).first->second;
      const double c1 = 1.0 - std::pow(kBeta1, t_), c2 = 1.0 - std::pow(kBeta2, t_);
      for (std::size_t i = 0; i < p->size(); ++i) {
        m[i] = static_cast<float>(kBeta1 * m[i] + (1 - kBeta1) * g[i]);
        v[i] = static_cast<float>(kBeta2 * v[i] + (1 - kBeta2) * g[i] * g[i]);
        const double mh = m[i] / c1, vh = v[i] / c2;
        (*p)[i] -= static_cast<float>(lr_ * mh / (std::sqrt(vh) + kEps));
      }
    }
  }

 private:
  static constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
  OptimizerKind kind_;
  double lr_;
  int t_ = 0;
  std::map<std::string, Tensor<float>> m_, v_;
};

// ---------------------------------------------------------------- shared helpers

struct TextCache {
  const dit::ModelConfig& cfg;
  std::uint64_t table_seed;
  std::map<std::string, dit::CondTokens> cache;

  const dit::CondTokens& operator()(const std::string& prompt) {
    auto it = cache.find(prompt);
    if (it == cache.end()) it = cache.emplace(prompt, dit::embed_text(prompt, table_seed, cfg)).first;
    return it->second;
  }
};

inline void check_finite_loss(double v, int step) {
  if (!std::isfinite(v)) throw Error(ErrorCode::TrainingDiverged, "loss is not finite at step " + std::to_string(step));
}

template <class Map>
std::map<std::string, Tensor<float>> collect_grads(ag::Graph<float>& g, const Map& leaves) {
  std::map<std::string, Tensor<float>> out;
  for (const auto& [name, v] : leaves) out.emplace(name, g.grad(v));
  return out;
}

inline double uniform01(Rng& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

inline std::size_t pick(Rng& rng, std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng); }

// ---------------------------------------------------------------- pretraining

struct PretrainResult {
  ParamStore<float> params;
  std::vector<double> losses;
  std::size_t null_uses = 0;  // conditioning dropped to the null token
};

inline PretrainResult pretrain(const dit::ModelConfig& mcfg, const TrainConfig& tcfg,
                               const std::vector<data::CorpusItem>& corpus, std::uint64_t table_seed,
                               const std::function<void(int, double)>& on_step = {}) {
  tcfg.validate();
  if (corpus.empty()) throw Error(ErrorCode::EmptyEvalSet, "empty training corpus");
  PretrainResult res{dit::init_params(mcfg, derive_seed(tcfg.seed, "pretrain.init")), {}, 0};
  Rng rng(derive_seed(tcfg.seed, "pretrain.loop"));
  Optimizer opt(tcfg.optimizer, tcfg.lr);
  TextCache text{mcfg, table_seed, {}};
  std::vector<Tensor<float>> latents;
  for (const auto& it : corpus) latents.push_back(toyvae::encode(it.sample.video));
  if (mcfg.prediction == dit::Prediction::Preconditioned) dit::fit_prior(res.params, mcfg, latents);
  const dit::CondTokens null = dit::null_cond(mcfg);

  for (int step = 0; step < tcfg.steps; ++step) {
    ag::Graph<float> g;
    const auto p = dit::bind<float>(g, res.params, true);
    std::optional<ag::Var<float>> total;
    for (std::size_t b = 0; b < tcfg.batch; ++b) {
      const std::size_t i = pick(rng, corpus.size());
      const float t = static_cast<float>(uniform01(rng));
      const bool drop = uniform01(rng) < tcfg.cond_dropout;
      const auto& z0 = latents[i];
      const Tensor<float> z1 = randn<float>(z0.dims(), rng);
      const auto zt = flowmatch::interpolate(z0, z1, t);
      if (drop) ++res.null_uses;
      const auto out = dit::forward(g, mcfg, p, g.constant(zt), t, drop ? null : text(corpus[i].sample.caption));
      auto l = flowmatch::velocity_loss(out.velocity, g.constant(flowmatch::velocity_target(z0, z1)));
      total = total ? ag::add(*total, l) : l;
    }
    auto loss = ag::scale(*total, 1.0f / static_cast<float>(tcfg.batch));
    const double lv = loss.value()[0];
    check_finite_loss(lv, step);
    g.backward(loss);
    std::map<std::string, Tensor<float>*> targets;
    std::map<std::string, Tensor<float>> grads;
    for (auto& [k, t] : res.params.tensors) {
      if (dit::is_buffer(k)) continue;
      targets.emplace(k, &t);
      grads.emplace(k, g.grad(p.at(k)));
    }
    opt.step(targets, grads);
    res.losses.push_back(lv);
    if (on_step) on_step(step, lv);
  }
  return res;
}

// ---------------------------------------------------------------- adapter stages

/// The untrained adapter set a stage starts from: zero deltas plus the base
/// model's row for the stage token when tokens are trained.
inline lora::LoraSet<float> initial_set(const dit::ModelConfig& mcfg, const TrainConfig& tcfg,
                                        const ParamStore<float>& base, lora::Role role) {
  const bool subj = role == lora::Role::Subject;
  auto set = lora::attach<float>(role, mcfg, tcfg.rank, derive_seed(tcfg.seed, subj ? "subject.lora" : "motion.lora"),
                                 tcfg.layer_types);
  if (tcfg.train_tokens)
    set.token_rows.emplace(std::string(subj ? dit::kSubjectToken : dit::kMotionToken),
                           base.at(subj ? "text.vstar" : "text.sstar"));
  return set;
}

// ---------------------------------------------------------------- subject stage

struct SubjectResult {
  lora::LoraSet<float> lora;
  ParamStore<float> projector;
  std::vector<double> losses, region_losses, sura_losses;
  double max_base_grad = 0.0;  // largest |grad| reaching base parameters
};

inline SubjectResult train_subject(const dit::ModelConfig& mcfg, const TrainConfig& tcfg,
                                   const ParamStore<float>& base, const std::vector<data::Sample>& samples,
                                   const sura::PatchEncoder& enc, std::uint64_t table_seed,
                                   const std::function<void(int, double)>& on_step = {}) {
  tcfg.validate();
  if (samples.empty()) throw Error(ErrorCode::EmptyEvalSet, "no subject samples");
  for (const auto& s : samples) {
    if (s.mask.empty()) throw Error(ErrorCode::MissingMask, "subject sample without mask");
    if (s.video.rank() != 4 || s.video.dim(0) != 1) throw Error(ErrorCode::ShapeError, "subject samples are single images");
  }
  SubjectResult res{initial_set(mcfg, tcfg, base, lora::Role::Subject),
                    sura::make_projector(mcfg.d_model, enc.d_enc, derive_seed(tcfg.seed, "subject.projector")),
                    {}, {}, {}, 0.0};

  struct Prepared {
    Tensor<float> z0, mask, y_star;
    dit::CondTokens cond;
  };
  std::vector<Prepared> prep;
  for (const auto& s : samples) {
    const Tensor<float> z0 = toyvae::encode(s.video);
    prep.push_back({z0, flowmatch::expand_mask(flowmatch::pool_mask_to_latent(s.mask), z0.dims()),
                    sura::encode_patches(enc, s.video), dit::embed_text(s.caption, table_seed, mcfg)});
  }
  Rng rng(derive_seed(tcfg.seed, "subject.loop"));
  Optimizer opt(tcfg.optimizer, tcfg.lr);

  for (int step = 0; step < tcfg.steps; ++step) {
    ag::Graph<float> g;
    const auto p = dit::bind<float>(g, base, false);
    auto tb = lora::bind_trainable(g, res.lora, mcfg);
    std::map<std::string, ag::Var<float>> proj_leaves;
    for (const auto& [k, t] : res.projector.tensors) proj_leaves.emplace(k, g.leaf(t, true));
    const auto pv = sura::projector_vars<float>(proj_leaves);
    std::optional<ag::Var<float>> total, region_sum, sura_sum;
    for (std::size_t b = 0; b < tcfg.batch; ++b) {
      const auto& s = prep[pick(rng, prep.size())];
      const float t = static_cast<float>(uniform01(rng));
      const Tensor<float> z1 = randn<float>(s.z0.dims(), rng);
      const auto out =
          dit::forward(g, mcfg, p, g.constant(flowmatch::interpolate(s.z0, z1, t)), t, s.cond, &tb.lora);
      auto region = flowmatch::masked_velocity_loss(out.velocity, g.constant(flowmatch::velocity_target(s.z0, z1)),
                                                    g.constant(s.mask));
      auto align = sura::sura_loss(g, s.y_star, out.tap, pv);
      auto l = sura::total_subject_loss(region, align, static_cast<float>(tcfg.lambda));
      total = total ? ag::add(*total, l) : l;
      region_sum = region_sum ? ag::add(*region_sum, region) : region;
      sura_sum = sura_sum ? ag::add(*sura_sum, align) : align;
    }
    const float inv = 1.0f / static_cast<float>(tcfg.batch);
    auto loss = ag::scale(*total, inv);
    const double lv = loss.value()[0];
    check_finite_loss(lv, step);
    g.backward(loss);
    for (const auto& [k, v] : p) {
      (void)k;
      if (g.requires_grad(v.id)) res.max_base_grad = std::max(res.max_base_grad, max_abs_diff(g.grad(v), Tensor<float>(v.dims())));
    }
    auto targets = lora::trainable_tensors(res.lora);
    auto grads = collect_grads(g, tb.leaves);
    for (auto& [k, t] : res.projector.tensors) targets.emplace("proj:" + k, &t);
    for (const auto& [k, v] : proj_leaves) grads.emplace("proj:" + k, g.grad(v));
    opt.step(targets, grads);
    res.losses.push_back(lv);
    res.region_losses.push_back(region_sum->value()[0] * inv);
    res.sura_losses.push_back(sura_sum->value()[0] * inv);
    if (on_step) on_step(step, lv);
  }
  return res;
}

// ---------------------------------------------------------------- motion stage

struct MotionResult {
  lora::LoraSet<float> lora;
  std::vector<double> losses, temporal_losses, mora_losses;
};

inline MotionResult train_motion(const dit::ModelConfig& mcfg, const TrainConfig& tcfg, const mora::FlowConfig& fcfg,
                                 const ParamStore<float>& base, const std::vector<data::Sample>& samples,
                                 std::uint64_t table_seed, const std::function<void(int, double)>& on_step = {}) {
  tcfg.validate();
  fcfg.validate();
  if (samples.empty()) throw Error(ErrorCode::EmptyEvalSet, "no motion samples");
  MotionResult res{initial_set(mcfg, tcfg, base, lora::Role::Motion), {}, {}, {}};

  struct Prepared {
    Tensor<float> z0, flows;
    dit::CondTokens cond;
  };
  std::vector<Prepared> prep;
  for (const auto& s : samples) {
    if (s.video.rank() != 4 || s.video.dim(0) < 2) throw Error(ErrorCode::TooFewFrames, "motion samples are videos");
    prep.push_back({toyvae::encode(s.video), mora::reference_flow_stack(s.video, fcfg, tcfg.windowed),
                    dit::embed_text(s.caption, table_seed, mcfg)});
  }
  Rng rng(derive_seed(tcfg.seed, "motion.loop"));
  Optimizer opt(tcfg.optimizer, tcfg.lr);
  const bool use_mora = tcfg.mora_every > 0 && tcfg.alpha_w > 0;

  for (int step = 0; step < tcfg.steps; ++step) {
    ag::Graph<float> g;
    const auto p = dit::bind<float>(g, base, false);
    auto tb = lora::bind_trainable(g, res.lora, mcfg);
    const bool mora_now = use_mora && step % tcfg.mora_every == 0;
    std::optional<ag::Var<float>> total, temporal_sum, mora_sum;
    for (std::size_t b = 0; b < tcfg.batch; ++b) {
      const auto& s = prep[pick(rng, prep.size())];
      const float t = static_cast<float>(uniform01(rng));
      const Tensor<float> z1 = randn<float>(s.z0.dims(), rng);
      const auto zt = g.constant(flowmatch::interpolate(s.z0, z1, t));
      const auto out = dit::forward(g, mcfg, p, zt, t, s.cond, &tb.lora);
      auto temporal = flowmatch::velocity_loss(out.velocity, g.constant(flowmatch::velocity_target(s.z0, z1)));
      auto l = temporal;
      if (mora_now) {
        auto fgen = mora::denoised_flow_stack(zt, out.velocity, t, fcfg, tcfg.windowed);
        auto m = mora::mora_loss(g.constant(s.flows), fgen);
        l = mora::total_motion_loss(temporal, m, static_cast<float>(tcfg.alpha_w));
        mora_sum = mora_sum ? ag::add(*mora_sum, m) : m;
      }
      total = total ? ag::add(*total, l) : l;
      temporal_sum = temporal_sum ? ag::add(*temporal_sum, temporal) : temporal;
    }
    const float inv = 1.0f / static_cast<float>(tcfg.batch);
    auto loss = ag::scale(*total, inv);
    const double lv = loss.value()[0];
    check_finite_loss(lv, step);
    g.backward(loss);
    opt.step(lora::trainable_tensors(res.lora), collect_grads(g, tb.leaves));
    res.losses.push_back(lv);
    res.temporal_losses.push_back(temporal_sum->value()[0] * inv);
    res.mora_losses.push_back(mora_sum ? mora_sum->value()[0] * inv : std::nan(""));
    if (on_step) on_step(step, lv);
  }
  return res;
}

// ---------------------------------------------------------------- inference

struct InferRequest {
  std::string prompt;
  std::size_t frames = 17, height = 32, width = 32;
  flowmatch::SamplerConfig sampler;
};

struct InferResult {
  Tensor<float> latent;
  Tensor<float> video;  // decoded and clipped to [0,1]
  std::vector<std::string> trace;
};

inline Dims latent_dims(std::size_t frames, std::size_t h, std::size_t w, std::size_t channels = 3) {
  return toyvae::latent_shape(toyvae::video_shape({frames, h, w, channels})).dims();
}

inline InferResult infer(const dit::ModelConfig& mcfg, const ParamStore<float>& base,
                         const lora::LoraSet<float>* subject, const lora::LoraSet<float>* motion,
                         const InferRequest& req, std::uint64_t table_seed,
                         const flowmatch::StepObserver<float>& observer = {}) {
  InferResult res;
  const auto cond = dit::embed_text(req.prompt, table_seed, mcfg);
  auto obs = [&](const flowmatch::StepState<float>& s) {
    res.trace.push_back(flowmatch::trace_line(s));
    if (observer) observer(s);
  };
  res.latent = flowmatch::sample<float>(base, mcfg, cond, dit::null_cond(mcfg), req.sampler, subject, motion,
                                        latent_dims(req.frames, req.height, req.width), obs);
  res.video = toyvae::make_video(toyvae::decode(res.latent));
  return res;
}

// ---------------------------------------------------------------- persistence

inline nlohmann::json save_params(const ParamStore<float>& p, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json m{{"rng_seed", p.rng_seed}, {"checksum", p.checksum()}, {"tensors", nlohmann::json::object()}};
  for (const auto& [name, t] : p.tensors) {
    const std::string f = lora::file_stem(name) + ".stns";
    const std::string bytes = io::encode_stns(t);
    io::write_file(dir / f, bytes);
    m["tensors"][name] = {{"file", f}, {"hash", io::content_hash(bytes)}};
  }
  io::write_file(dir / "params.json", m.dump(2));
  return m;
}

inline ParamStore<float> load_params(const std::filesystem::path& dir) {
  const auto m = nlohmann::json::parse(io::read_file(dir / "params.json"));
  ParamStore<float> p;
  p.rng_seed = m.at("rng_seed").get<std::uint64_t>();
  for (const auto& [name, e] : m.at("tensors").items())
    p.tensors.emplace(name, io::load_stns<float>(dir / e.at("file").get<std::string>()));
  if (p.checksum() != m.at("checksum").get<std::string>())
    throw Error(ErrorCode::IoError, "checkpoint checksum mismatch in " + dir.string());
  return p;
}

/// Content hashes of every regular file under dir (relative paths), excluding
/// the manifest itself.
inline std::map<std::string, std::string> hash_tree(const std::filesystem::path& dir) {
  std::map<std::string, std::string> out;
  if (!std::filesystem::exists(dir)) return out;
  for (const auto& e : std::filesystem::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const auto rel = std::filesystem::relative(e.path(), dir).generic_string();
    if (rel == "manifest.json") continue;
    out.emplace(rel, io::file_hash(e.path()));
  }
  return out;
}

struct RunManifest {
  std::string command;
  nlohmann::json config;  // full resolved configuration
  nlohmann::json seeds;
  nlohmann::json inputs;  // input name -> content hash
  std::map<std::string, std::string> outputs;

  nlohmann::json to_json() const {
    return {{"command", command}, {"config", config}, {"seeds", seeds}, {"inputs", inputs}, {"outputs", outputs}};
  }

  static RunManifest from_json(const nlohmann::json& j) {
    RunManifest m;
    m.command = j.at("command").get<std::string>();
    m.config = j.at("config");
    m.seeds = j.value("seeds", nlohmann::json::object());
    m.inputs = j.value("inputs", nlohmann::json::object());
    m.outputs = j.value("outputs", std::map<std::string, std::string>{});
    return m;
  }

  std::string hash() const { return io::content_hash(to_json().dump()); }

  void write(const std::filesystem::path& dir) const { io::write_file(dir / "manifest.json", to_json().dump(2)); }
};

}  // namespace smra::pipeline
