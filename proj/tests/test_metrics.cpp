// Copyright (c) 2026 The smrabooth authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include "smra/eval.hpp"

namespace smra::eval {
namespace {

TEST(Sweep, NormalizesFullTo100AndWorstTo0) {
  const auto t = normalize_sweep({{"q", 0.2}, {"k", 0.5}, {"v", 0.8}, {"o", 0.4}, {"ffn.0", 0.6}, {"ffn.2", 0.3}}, 0.7);
  ASSERT_EQ(t.rows.size(), 7u);
  EXPECT_EQ(t.rows.back(), "full");
  EXPECT_EQ(t.normalized.at("full"), 100.0);
  EXPECT_EQ(t.normalized.at("q"), 0.0);
  EXPECT_NEAR(t.normalized.at("k"), 60.0, 1e-12);
  EXPECT_NEAR(t.normalized.at("v"), 120.0, 1e-12);  // a single type may beat the full set
  EXPECT_EQ(t.floor, 0.2);
  EXPECT_EQ(t.reference, 0.7);
}

// Full and floor coincide, so the 0-100 rule has no span; every row reads 100.
TEST(Sweep, FullAtTheFloorIsDegenerate) {
  const auto t = normalize_sweep({{"q", 0.9}, {"k", 0.8}}, 0.5);
  EXPECT_EQ(t.floor, 0.5);
  for (const auto& r : t.rows) EXPECT_EQ(t.normalized.at(r), 100.0);
}

TEST(Sweep, AffineAndOrderPreserving) {
  Rng rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::pair<std::string, double>> rows;
    for (const auto& t : dit::kLayerTypes) rows.emplace_back(t, u(rng));
    double lo = 1.0;
    for (const auto& [_, v] : rows) lo = std::min(lo, v);
    const double full = lo + 0.1 + u(rng);
    const auto t = normalize_sweep(rows, full);
    EXPECT_EQ(t.normalized.at("full"), 100.0);
    double mn = 1e9;
    for (const auto& [k, v] : rows) {
      mn = std::min(mn, t.normalized.at(k));
      EXPECT_NEAR(t.normalized.at(k), (v - lo) / (full - lo) * 100.0, 1e-9);
      for (const auto& [k2, v2] : rows)
        if (v < v2) {
          EXPECT_LT(t.normalized.at(k), t.normalized.at(k2));
        }
    }
    EXPECT_EQ(mn, 0.0);
  }
}

TEST(Sweep, AllEqualScoresNormalizeTo100) {
  const auto t = normalize_sweep({{"q", 0.4}, {"k", 0.4}}, 0.4);
  for (const auto& r : t.rows) EXPECT_EQ(t.normalized.at(r), 100.0);
}

TEST(Sweep, SerializesRowsInOrder) {
  const auto t = normalize_sweep({{"q", 0.0}, {"k", 1.0}}, 2.0);
  const auto j = t.to_json();
  ASSERT_EQ(j.at("rows").size(), 3u);
  EXPECT_EQ(j["rows"][0]["layer"], "q");
  EXPECT_EQ(j["rows"][2]["normalized"], 100.0);
  const auto csv = t.to_csv();
  EXPECT_EQ(csv.substr(0, 21), "layer,raw,normalized\n");
  EXPECT_NE(csv.find("k,1,50\n"), std::string::npos);
}

TEST(Ranks, AverageTies) {
  EXPECT_EQ(ranks({10, 20, 20, 5}), (std::vector<double>{2, 3.5, 3.5, 1}));
}

TEST(Spearman, KnownValues) {
  EXPECT_DOUBLE_EQ(spearman({1, 2, 3, 4}, {10, 20, 30, 40}), 1.0);
  EXPECT_DOUBLE_EQ(spearman({1, 2, 3, 4}, {4, 3, 2, 1}), -1.0);
  EXPECT_DOUBLE_EQ(spearman({1, 2, 3, 4}, {1, 8, 27, 64}), 1.0);  // monotone, not linear
  EXPECT_EQ(spearman({1, 2, 3}, {5, 5, 5}), 0.0);
  // Without ties: 1 - 6 sum d^2 / (n (n^2 - 1)).
  const std::vector<double> x{1, 2, 3, 4, 5}, y{2, 1, 4, 3, 5};
  EXPECT_NEAR(spearman(x, y), 1.0 - 6.0 * 4.0 / (5.0 * 24.0), 1e-12);
  EXPECT_THROW(spearman({1}, {1}), Error);
  EXPECT_THROW(spearman({1, 2}, {1, 2, 3}), Error);
}

TEST(Probe, TailUsesTheLastWindow) {
  std::vector<ProbePoint> c;
  for (int s = 1; s <= 10; ++s) c.push_back({s, 1.0 - 0.1 * (s - 1), s <= 5 ? -double(s) : double(s)});
  EXPECT_DOUBLE_EQ(tail_spearman(c, 5), 1.0);
  EXPECT_LT(tail_spearman(c, 10), 1.0);
  EXPECT_DOUBLE_EQ(tail_spearman(c, 50), tail_spearman(c, 10));
  ProbeResult r{c, 0.0, 5};
  const auto jl = r.to_jsonl();
  EXPECT_EQ(std::count(jl.begin(), jl.end(), '\n'), 10);
}

TEST(Metrics, SubjectSimilarity) {
  const auto enc = sura::make_encoder(1);
  Rng rng(2);
  const auto img = rand_uniform<float>({1, 8, 8, 3}, rng);
  Tensor<float> video({3, 8, 8, 3});
  for (std::size_t k = 0; k < 3; ++k) std::copy(img.vec().begin(), img.vec().end(), video.data() + k * img.size());
  EXPECT_NEAR(subject_similarity(video, img, enc), 1.0, 1e-9);
  EXPECT_THROW(subject_similarity(video, video, enc), Error);
  EXPECT_THROW(subject_similarity(video, Tensor<float>({1, 4, 8, 3}), enc), Error);
}

TEST(Metrics, FlowCosine) {
  Tensor<double> a({2, 2}, std::vector<double>{1, 0, 0, 0}), b({2, 2}, std::vector<double>{0, 1, 0, 0});
  EXPECT_DOUBLE_EQ(flow_cosine_mean(a, a), 1.0);
  EXPECT_DOUBLE_EQ(flow_cosine_mean(a, b), 0.5);  // second slice is zero in both -> 1
  Tensor<double> na = a;
  na[0] = -1;
  EXPECT_DOUBLE_EQ(flow_cosine_mean(a, na), 0.0);
}

TEST(Metrics, MotionFidelityAndTemporalConsistency) {
  const auto enc = sura::make_encoder(1);
  data::SubjectSpec s;
  const auto smp = data::gen_motion({data::Linear{1, 0}, 5, ""}, s, 16, 16, 1);
  EXPECT_NEAR(motion_fidelity(smp.video, smp.video, mora::FlowConfig{}), 1.0, 1e-9);
  const double tc = temporal_consistency(smp.video, enc);
  EXPECT_GT(tc, 0.5);
  EXPECT_LE(tc, 1.0 + 1e-9);
  EXPECT_THROW(temporal_consistency(toyvae::make_video(Tensor<float>({1, 16, 16, 3})), enc), Error);
  Tensor<float> still({5, 16, 16, 3});
  for (std::size_t k = 0; k < 5; ++k)
    std::copy(smp.video.vec().begin(), smp.video.vec().begin() + 16 * 16 * 3, still.data() + k * 16 * 16 * 3);
  EXPECT_NEAR(temporal_consistency(still, enc), 1.0, 1e-9);
  EXPECT_LT(motion_fidelity(still, smp.video, mora::FlowConfig{}), 0.9);
}

TEST(Report, JsonAndValidation) {
  MetricReport r;
  r.subject_similarity.add(0.5);
  r.subject_similarity.add(1.0);
  r.provenance = "abc";
  const auto j = r.to_json();
  EXPECT_DOUBLE_EQ(j["subject_similarity"]["mean"].get<double>(), 0.75);
  EXPECT_TRUE(j["motion_fidelity"].is_null());
  EXPECT_EQ(j["provenance"], "abc");
  EXPECT_NO_THROW(r.validate());
  r.temporal_consistency.add(std::nan(""));
  EXPECT_THROW(r.validate(), Error);
}

TEST(Eval, MetricNamesAndCombos) {
  for (auto m : {MetricId::Subject, MetricId::Motion, MetricId::Temporal}) EXPECT_EQ(parse_metric(to_string(m)), m);
  EXPECT_THROW(parse_metric("fid"), Error);
  const auto c = default_combos();
  ASSERT_EQ(c.size(), 4u);
  EXPECT_EQ(c[3].subject_types, lora::default_types(lora::Role::Subject));
  EXPECT_EQ(c[0].subject_types.size(), 6u);
}

TEST(Eval, EmptySetsAreRejected) {
  EvalContext ctx;
  try {
    score_set(ctx, nullptr, nullptr, {}, MetricId::Subject);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyEvalSet);
  }
  const auto set = lora::attach(lora::Role::Subject, ctx.model, 2, 1, lora::all_types());
  EXPECT_THROW(layer_sweep(ctx, set, {}, MetricId::Subject), Error);
}

}  // namespace
}  // namespace smra::eval
