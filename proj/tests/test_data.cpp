// Copyright (c) 2026 The smrabooth authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include "smra/data.hpp"

namespace smra::data {
namespace {

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::IoError;
}

double mask_area(const Tensor<float>& m, std::size_t f) {
  const std::size_t per = m.dim(1) * m.dim(2);
  double s = 0;
  for (std::size_t i = 0; i < per; ++i) s += m[f * per + i];
  return s;
}

TEST(Data, ShapeNames) {
  for (auto s : {Shape::Circle, Shape::Square, Shape::Triangle}) EXPECT_EQ(parse_shape(to_string(s)), s);
  EXPECT_EQ(code_of([] { parse_shape("hexagon"); }), ErrorCode::BadSpec);
}

TEST(Data, SubjectStillIsCenteredWithExpectedArea) {
  const std::size_t h = 64, w = 64;
  SubjectSpec s;
  s.size = 0.4;
  const double r = 0.4 * 64 / 2;
  const std::pair<Shape, double> cases[] = {{Shape::Circle, std::numbers::pi * r * r},
                                            {Shape::Square, 2 * r * r},
                                            {Shape::Triangle, 3 * std::sqrt(3.0) / 4 * r * r}};
  for (const auto& [shape, area] : cases) {
    s.shape = shape;
    const auto smp = gen_subject(s, h, w, 1);
    EXPECT_EQ(smp.video.dims(), (Dims{1, h, w, 3}));
    EXPECT_EQ(smp.caption, "A picture of V* " + to_string(shape));
    EXPECT_NEAR(mask_area(smp.mask, 0), area, 0.06 * area) << to_string(shape);
    const auto c = mask_centroid(smp.mask, 0);
    EXPECT_NEAR(c[0], 32.0, 0.5);
    if (shape != Shape::Triangle) {
      EXPECT_NEAR(c[1], 32.0, 0.5);
    }
    for (auto v : smp.video.vec()) {
      ASSERT_GE(v, 0.f);
      ASSERT_LE(v, 1.f);
    }
  }
}

TEST(Data, LinearMotionMovesTheCentroid) {
  SubjectSpec s;
  MotionSpec m{Linear{1.5, 0.0}, 9, ""};
  const auto smp = gen_motion(m, s, 32, 48, 2);
  EXPECT_EQ(smp.caption, "A circle S* moving-right");
  ASSERT_EQ(smp.trajectory.size(), 9u);
  for (std::size_t f = 1; f < 9; ++f) {
    const auto a = mask_centroid(smp.mask, f - 1), b = mask_centroid(smp.mask, f);
    EXPECT_NEAR(b[0] - a[0], 1.5, 0.35);
    EXPECT_NEAR(b[1] - a[1], 0.0, 0.2);
    EXPECT_NEAR(smp.trajectory[f].cx - smp.trajectory[f - 1].cx, 1.5, 1e-12);
  }
  EXPECT_NEAR(smp.trajectory[4].cx, 24.0, 1e-12);  // centered on the middle frame
  EXPECT_EQ(smp.ground_truth.at("motion").at("type"), "linear");
}

TEST(Data, RotationKeepsCentroidAndAreaButChangesPixels) {
  SubjectSpec s;
  s.shape = Shape::Square;
  const auto smp = gen_motion(MotionSpec{Rotation{}, 5, ""}, s, 64, 64, 3);
  EXPECT_EQ(motion_name(MotionSpec{Rotation{}, 5, ""}), "spinning");
  const auto c0 = mask_centroid(smp.mask, 0), c2 = mask_centroid(smp.mask, 2);
  EXPECT_NEAR(c0[0], c2[0], 0.3);
  // Pixel-center sampling misclassifies at most about half the boundary pixels.
  const double r = s.size * 64 / 2, side = r * std::sqrt(2.0);
  for (std::size_t f : {0, 1, 2, 3, 4}) EXPECT_NEAR(mask_area(smp.mask, f), 2 * r * r, 2 * side) << f;
  EXPECT_NE(toyvae::frame(smp.video, 0), toyvae::frame(smp.video, 2));
}

TEST(Data, CircularPathReturnsToStart) {
  const MotionSpec m{Circular{4.0, 0.0}, 17, ""};
  const auto p = trajectory_poses(m, 32, 32);
  EXPECT_NEAR(p.front().cx, p.back().cx, 1e-9);
  EXPECT_NEAR(p.front().cy, p.back().cy, 1e-9);
  EXPECT_NEAR(std::hypot(p[5].cx - 16, p[5].cy - 16), 4.0, 1e-9);
}

TEST(Data, MotionNames) {
  EXPECT_EQ(motion_name({Linear{-1, 0.2}, 5, ""}), "moving-left");
  EXPECT_EQ(motion_name({Linear{0, -1}, 5, ""}), "moving-up");
  EXPECT_EQ(motion_name({Linear{0, 0}, 5, ""}), "still");
  EXPECT_EQ(motion_name({Circular{}, 5, ""}), "circling");
  EXPECT_EQ(motion_name({Linear{}, 5, "zig"}), "zig");
}

TEST(Data, Validation) {
  SubjectSpec s;
  EXPECT_EQ(code_of([&] { gen_subject(s, 30, 32, 1); }), ErrorCode::BadResolution);
  EXPECT_EQ(code_of([&] { gen_motion({Linear{}, 6, ""}, s, 32, 32, 1); }), ErrorCode::BadFrameCount);
  EXPECT_EQ(code_of([&] { gen_motion({Linear{5, 0}, 17, ""}, s, 32, 32, 1); }), ErrorCode::BadSpec);
  s.size = 0.8;
  EXPECT_EQ(code_of([&] { gen_subject(s, 32, 32, 1); }), ErrorCode::BadSpec);
  s.size = 0.3;
  s.fill_color = {1.2, 0, 0};
  EXPECT_EQ(code_of([&] { gen_subject(s, 32, 32, 1); }), ErrorCode::BadSpec);
}

TEST(Data, FitMotionKeepsThePathInFrame) {
  SubjectSpec s;
  const auto m = fit_motion({Linear{3, 0}, 17, ""}, s, 32, 32);
  EXPECT_NO_THROW(gen_motion(m, s, 32, 32, 1));
  const auto& l = std::get<Linear>(m.trajectory);
  EXPECT_LT(l.vx, 3.0);
  EXPECT_EQ(std::get<Linear>(fit_motion({Linear{0.5, 0}, 5, ""}, s, 32, 32).trajectory).vx, 0.5);
}

TEST(Data, GenerationIsSeeded) {
  SubjectSpec s;
  EXPECT_EQ(gen_subject(s, 32, 32, 4).video, gen_subject(s, 32, 32, 4).video);
  EXPECT_NE(gen_subject(s, 32, 32, 4).video, gen_subject(s, 32, 32, 5).video);
}

TEST(Data, CorpusLayoutAndRoundTrip) {
  const auto items = gen_corpus(16, 16, 5, 7, 3);
  ASSERT_EQ(items.size(), 3u * 7u);
  EXPECT_EQ(items[0].id, "s0_m0");
  EXPECT_EQ(items[0].sample.caption, "A red circle moving-right");
  EXPECT_EQ(items[6].sample.caption, "A picture of a red circle");
  EXPECT_EQ(items[7].sample.caption.substr(0, 13), "A blue square");
  EXPECT_EQ(corpus_subjects(7, 3)[2].shape, Shape::Triangle);

  const auto dir = std::filesystem::temp_directory_path() / "smra_test_corpus";
  std::filesystem::remove_all(dir);
  const auto h = save_corpus(items, dir);
  EXPECT_EQ(h, corpus_hash(items));
  const auto back = load_corpus(dir);
  ASSERT_EQ(back.size(), items.size());
  EXPECT_EQ(corpus_hash(back), h);
  EXPECT_EQ(back[3].sample.ground_truth, items[3].sample.ground_truth);
  EXPECT_EQ(back[3].sample.trajectory.size(), items[3].sample.trajectory.size());
  EXPECT_EQ(back[3].sample.trajectory[2].cx, items[3].sample.trajectory[2].cx);
  std::filesystem::remove_all(dir);
}

}  // namespace
}  // namespace smra::data
