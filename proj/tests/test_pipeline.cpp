// Copyright (c) 2026 The smrabooth authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "smra/pipeline.hpp"

namespace smra::pipeline {
namespace {

namespace fs = std::filesystem;

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::IoError;
}

dit::ModelConfig tiny() {
  dit::ModelConfig c;
  c.d_model = 16;
  c.n_blocks = 1;
  c.n_heads = 2;
  c.d_ffn = 32;
  c.text_buckets = 64;
  return c;
}

fs::path scratch(const std::string& name) {
  const auto d = fs::temp_directory_path() / ("smra_pipeline_" + name);
  fs::remove_all(d);
  return d;
}

const std::vector<data::CorpusItem>& corpus() {
  static const auto c = data::gen_corpus(16, 16, 5, 3, 2);
  return c;
}

const ParamStore<float>& base() {
  static const ParamStore<float> p = [] {
    TrainConfig t;
    t.steps = 3;
    t.lr = 1e-3;
    t.seed = 4;
    return pretrain(tiny(), t, corpus(), 9).params;
  }();
  return p;
}

std::vector<data::Sample> subject_samples() {
  data::SubjectSpec s;
  return {data::gen_subject(s, 16, 16, 1), data::gen_subject(s, 16, 16, 2)};
}

std::vector<data::Sample> motion_samples() {
  data::SubjectSpec s;
  data::MotionSpec m{data::Linear{1.0, 0.0}, 5, ""};
  return {data::gen_motion(m, s, 16, 16, 1)};
}

TEST(Pipeline, StageAndOptimizerNames) {
  EXPECT_EQ(to_string(Stage::Pretrain), "pretrain");
  EXPECT_EQ(to_string(Stage::Subject), "subject");
  EXPECT_EQ(to_string(Stage::Motion), "motion");
  EXPECT_EQ(parse_optimizer("sgd"), OptimizerKind::Sgd);
  EXPECT_EQ(parse_optimizer("adam"), OptimizerKind::Adam);
  EXPECT_EQ(code_of([] { parse_optimizer("rmsprop"); }), ErrorCode::BadConfig);
}

TEST(Pipeline, TrainConfigValidation) {
  const std::function<void(TrainConfig&)> bad[] = {
      [](TrainConfig& t) { t.lr = 0; },           [](TrainConfig& t) { t.steps = 0; },
      [](TrainConfig& t) { t.batch = 0; },        [](TrainConfig& t) { t.lambda = -1; },
      [](TrainConfig& t) { t.alpha_w = -1; },     [](TrainConfig& t) { t.cond_dropout = 1.5; },
      [](TrainConfig& t) { t.mora_every = -1; },  [](TrainConfig& t) { t.rank = 0; },
  };
  for (const auto& f : bad) {
    TrainConfig t;
    f(t);
    EXPECT_EQ(code_of([&] { t.validate(); }), ErrorCode::BadConfig);
  }
  TrainConfig t;
  t.layer_types = std::vector<std::string>{"q", "nope"};
  EXPECT_EQ(code_of([&] { t.validate(); }), ErrorCode::BadLayerType);
  EXPECT_NO_THROW(TrainConfig{}.validate());
}

TEST(Optimizer, SgdStepIsExact) {
  Tensor<float> p({3}, {1.f, 2.f, 3.f});
  Optimizer opt(OptimizerKind::Sgd, 0.5);
  opt.step({{"p", &p}}, {{"p", Tensor<float>({3}, {2.f, -2.f, 0.f})}});
  EXPECT_FLOAT_EQ(p[0], 0.f);
  EXPECT_FLOAT_EQ(p[1], 3.f);
  EXPECT_FLOAT_EQ(p[2], 3.f);
}

TEST(Optimizer, AdamFirstStepMovesByLrTimesSign) {
  Tensor<float> p({3}, {0.f, 0.f, 0.f});
  Optimizer opt(OptimizerKind::Adam, 0.01);
  opt.step({{"p", &p}}, {{"p", Tensor<float>({3}, {5.f, -0.001f, 0.f})}});
  EXPECT_NEAR(p[0], -0.01, 1e-6);
  EXPECT_NEAR(p[1], 0.01, 1e-5);
  EXPECT_FLOAT_EQ(p[2], 0.f);
}

TEST(Optimizer, MissingGradientLeavesParameter) {
  Tensor<float> p({1}, {4.f});
  Optimizer opt(OptimizerKind::Adam, 0.1);
  opt.step({{"p", &p}}, {});
  EXPECT_FLOAT_EQ(p[0], 4.f);
}

TEST(Pretrain, DeterministicForASeed) {
  TrainConfig t;
  t.steps = 2;
  t.seed = 11;
  const auto a = pretrain(tiny(), t, corpus(), 9);
  const auto b = pretrain(tiny(), t, corpus(), 9);
  EXPECT_EQ(a.params.checksum(), b.params.checksum());
  EXPECT_EQ(a.losses, b.losses);
  t.seed = 12;
  EXPECT_NE(pretrain(tiny(), t, corpus(), 9).params.checksum(), a.params.checksum());
}

TEST(Pretrain, ConditioningDropoutExtremes) {
  TrainConfig t;
  t.steps = 2;
  t.batch = 3;
  t.cond_dropout = 0.0;
  EXPECT_EQ(pretrain(tiny(), t, corpus(), 9).null_uses, 0u);
  t.cond_dropout = 1.0;
  EXPECT_EQ(pretrain(tiny(), t, corpus(), 9).null_uses, 6u);
}

TEST(Pretrain, LossDecreases) {
  TrainConfig t;
  t.steps = 60;
  t.batch = 4;
  t.lr = 3e-3;
  t.seed = 2;
  const auto r = pretrain(tiny(), t, corpus(), 9);
  ASSERT_EQ(r.losses.size(), 60u);
  double head = 0, tail = 0;
  for (int i = 0; i < 10; ++i) {
    head += r.losses[i];
    tail += r.losses[50 + i];
  }
  EXPECT_LT(tail, head);
}

TEST(Pretrain, StepCallbackAndBuffersUntouched) {
  TrainConfig t;
  t.steps = 2;
  const auto init = dit::init_params(tiny(), derive_seed(t.seed, "pretrain.init"));
  int calls = 0;
  const auto r = pretrain(tiny(), t, corpus(), 9, [&](int step, double) { EXPECT_EQ(step, calls++); });
  EXPECT_EQ(calls, 2);
  EXPECT_EQ(r.params.size(), init.size());
  EXPECT_EQ(code_of([&] { pretrain(tiny(), t, {}, 9); }), ErrorCode::EmptyEvalSet);
}

TEST(Adapters, InitialSetCopiesTokenRows) {
  TrainConfig t;
  t.rank = 4;
  const auto s = initial_set(tiny(), t, base(), lora::Role::Subject);
  EXPECT_EQ(s.role, lora::Role::Subject);
  EXPECT_EQ(s.rank(), 4u);
  ASSERT_EQ(s.token_rows.size(), 1u);
  EXPECT_EQ(max_abs_diff(s.token_rows.at("V*"), base().at("text.vstar")), 0.0);
  for (const auto& [_, a] : *s.adapters)
    for (auto v : a.B.vec()) ASSERT_EQ(v, 0.f);
  const auto m = initial_set(tiny(), t, base(), lora::Role::Motion);
  EXPECT_EQ(max_abs_diff(m.token_rows.at("S*"), base().at("text.sstar")), 0.0);
  t.train_tokens = false;
  EXPECT_TRUE(initial_set(tiny(), t, base(), lora::Role::Subject).token_rows.empty());
}

TEST(SubjectStage, BaseStaysFrozenAndRunIsDeterministic) {
  TrainConfig t;
  t.stage = Stage::Subject;
  t.steps = 3;
  t.lr = 1e-3;
  const auto enc = sura::make_encoder(1);
  const std::string before = base().checksum();
  const auto a = train_subject(tiny(), t, base(), subject_samples(), enc, 9);
  EXPECT_EQ(base().checksum(), before);
  EXPECT_EQ(a.max_base_grad, 0.0);
  ASSERT_EQ(a.losses.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_TRUE(std::isfinite(a.losses[i]));
    EXPECT_NEAR(a.losses[i], a.region_losses[i] + t.lambda * a.sura_losses[i], 1e-4 * std::abs(a.losses[i]) + 1e-6);
  }
  double moved = 0;
  for (const auto& [_, ad] : *a.lora.adapters) moved = std::max(moved, max_abs_diff(ad.B, Tensor<float>(ad.B.dims())));
  EXPECT_GT(moved, 0.0);
  const auto b = train_subject(tiny(), t, base(), subject_samples(), enc, 9);
  EXPECT_EQ(a.losses, b.losses);
}

TEST(SubjectStage, InputErrors) {
  TrainConfig t;
  const auto enc = sura::make_encoder(1);
  EXPECT_EQ(code_of([&] { train_subject(tiny(), t, base(), {}, enc, 9); }), ErrorCode::EmptyEvalSet);
  auto s = subject_samples();
  s[0].mask = Tensor<float>();
  EXPECT_EQ(code_of([&] { train_subject(tiny(), t, base(), s, enc, 9); }), ErrorCode::MissingMask);
  EXPECT_EQ(code_of([&] { train_subject(tiny(), t, base(), motion_samples(), enc, 9); }), ErrorCode::ShapeError);
}

TEST(MotionStage, TrainsOnlyMotionAdapters) {
  TrainConfig t;
  t.stage = Stage::Motion;
  t.steps = 2;
  mora::FlowConfig f;
  f.iters = 3;
  const std::string before = base().checksum();
  const auto r = train_motion(tiny(), t, f, base(), motion_samples(), 9);
  EXPECT_EQ(base().checksum(), before);
  EXPECT_EQ(r.lora.role, lora::Role::Motion);
  ASSERT_EQ(r.losses.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    ASSERT_TRUE(std::isfinite(r.mora_losses[i]));
    EXPECT_NEAR(r.losses[i], r.temporal_losses[i] + t.alpha_w * r.mora_losses[i], 1e-4 * r.losses[i] + 1e-6);
  }
}

TEST(MotionStage, FlowLossCadence) {
  TrainConfig t;
  t.steps = 3;
  t.mora_every = 2;
  mora::FlowConfig f;
  f.iters = 2;
  auto r = train_motion(tiny(), t, f, base(), motion_samples(), 9);
  EXPECT_TRUE(std::isfinite(r.mora_losses[0]));
  EXPECT_TRUE(std::isnan(r.mora_losses[1]));
  EXPECT_TRUE(std::isfinite(r.mora_losses[2]));
  EXPECT_EQ(r.losses[1], r.temporal_losses[1]);
  t.mora_every = 0;
  r = train_motion(tiny(), t, f, base(), motion_samples(), 9);
  for (double v : r.mora_losses) EXPECT_TRUE(std::isnan(v));
}

TEST(MotionStage, InputErrors) {
  TrainConfig t;
  mora::FlowConfig f;
  EXPECT_EQ(code_of([&] { train_motion(tiny(), t, f, base(), {}, 9); }), ErrorCode::EmptyEvalSet);
  EXPECT_EQ(code_of([&] { train_motion(tiny(), t, f, base(), subject_samples(), 9); }), ErrorCode::TooFewFrames);
  f.iters = 0;
  EXPECT_EQ(code_of([&] { train_motion(tiny(), t, f, base(), motion_samples(), 9); }), ErrorCode::BadConfig);
}

TEST(Infer, ShapesTraceAndRange) {
  InferRequest rq;
  rq.prompt = "A V* circle S*";
  rq.frames = 5;
  rq.height = 16;
  rq.width = 16;
  rq.sampler.steps = 4;
  int seen = 0;
  const auto r = infer(tiny(), base(), nullptr, nullptr, rq, 9, [&](const auto&) { ++seen; });
  EXPECT_EQ(r.latent.dims(), latent_dims(5, 16, 16));
  EXPECT_EQ(r.video.dims(), (Dims{5, 16, 16, 3}));
  EXPECT_EQ(r.trace.size(), 4u);
  EXPECT_EQ(seen, 4);
  for (auto v : r.video.vec()) {
    ASSERT_GE(v, 0.f);
    ASSERT_LE(v, 1.f);
  }
  const auto again = infer(tiny(), base(), nullptr, nullptr, rq, 9);
  EXPECT_EQ(max_abs_diff(r.latent, again.latent), 0.0);
}

TEST(Infer, NeutralAdaptersDoNotChangeTheSample) {
  InferRequest rq;
  rq.prompt = "A red circle";
  rq.frames = 1;
  rq.height = 16;
  rq.width = 16;
  rq.sampler.steps = 3;
  TrainConfig t;
  t.train_tokens = false;
  const auto s = initial_set(tiny(), t, base(), lora::Role::Subject);
  const auto m = initial_set(tiny(), t, base(), lora::Role::Motion);
  const auto plain = infer(tiny(), base(), nullptr, nullptr, rq, 9);
  const auto with = infer(tiny(), base(), &s, &m, rq, 9);
  EXPECT_EQ(max_abs_diff(plain.latent, with.latent), 0.0);
}

TEST(Persistence, ParamsRoundTrip) {
  const auto dir = scratch("params");
  const auto m = save_params(base(), dir);
  EXPECT_EQ(m.at("checksum"), base().checksum());
  const auto back = load_params(dir);
  EXPECT_EQ(back.checksum(), base().checksum());
  EXPECT_EQ(back.rng_seed, base().rng_seed);
  auto j = nlohmann::json::parse(io::read_file(dir / "params.json"));
  j["checksum"] = "0000";
  io::write_file(dir / "params.json", j.dump());
  EXPECT_EQ(code_of([&] { load_params(dir); }), ErrorCode::IoError);
  fs::remove_all(dir);
}

TEST(Persistence, HashTreeSkipsManifest) {
  const auto dir = scratch("tree");
  EXPECT_TRUE(hash_tree(dir).empty());
  io::write_file(dir / "a.txt", "alpha");
  io::write_file(dir / "sub" / "b.txt", "beta");
  io::write_file(dir / "manifest.json", "{}");
  const auto h = hash_tree(dir);
  ASSERT_EQ(h.size(), 2u);
  EXPECT_EQ(h.at("a.txt"), io::content_hash("alpha"));
  EXPECT_EQ(h.at("sub/b.txt"), io::content_hash("beta"));
  fs::remove_all(dir);
}

TEST(Persistence, ManifestRoundTrip) {
  RunManifest m;
  m.command = "train";
  m.config = {{"lr", 0.001}};
  m.seeds = {{"seed", 3}};
  m.inputs = {{"data", "abc"}};
  m.outputs = {{"x.stns", "def"}};
  const auto back = RunManifest::from_json(m.to_json());
  EXPECT_EQ(back.to_json(), m.to_json());
  EXPECT_EQ(back.hash(), m.hash());
  m.config["lr"] = 0.002;
  EXPECT_NE(back.hash(), m.hash());
  const auto dir = scratch("manifest");
  fs::create_directories(dir);
  back.write(dir);
  EXPECT_EQ(RunManifest::from_json(nlohmann::json::parse(io::read_file(dir / "manifest.json"))).hash(), back.hash());
  fs::remove_all(dir);
}

}  // namespace
}  // namespace smra::pipeline
