// Copyright (c) 2026 The smrabooth authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <numbers>

#include "smra/mora.hpp"
#include "smra/numerics.hpp"

namespace smra::mora {
namespace {

// Plain-loop Horn-Schunck with central differences averaged over both frames,
// the 1/6-1/12 neighbour average, replicate borders and zero initial flow.
std::vector<double> hs_oracle(const std::vector<double>& a, const std::vector<double>& b, int h, int w,
                              double alpha, int iters) {
  auto at = [&](const std::vector<double>& img, int y, int x) {
    y = std::clamp(y, 0, h - 1);
    x = std::clamp(x, 0, w - 1);
    return img[y * w + x];
  };
  std::vector<double> ix(h * w), iy(h * w), it(h * w), u(h * w, 0.0), v(h * w, 0.0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      ix[y * w + x] = 0.25 * (at(a, y, x + 1) - at(a, y, x - 1) + at(b, y, x + 1) - at(b, y, x - 1));
      iy[y * w + x] = 0.25 * (at(a, y + 1, x) - at(a, y - 1, x) + at(b, y + 1, x) - at(b, y - 1, x));
      it[y * w + x] = b[y * w + x] - a[y * w + x];
    }
  auto avg = [&](const std::vector<double>& f, int y, int x) {
    return (at(f, y - 1, x) + at(f, y + 1, x) + at(f, y, x - 1) + at(f, y, x + 1)) / 6.0 +
           (at(f, y - 1, x - 1) + at(f, y - 1, x + 1) + at(f, y + 1, x - 1) + at(f, y + 1, x + 1)) / 12.0;
  };
  for (int k = 0; k < iters; ++k) {
    std::vector<double> nu(h * w), nv(h * w);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const int i = y * w + x;
        const double ub = avg(u, y, x), vb = avg(v, y, x);
        const double r = (ix[i] * ub + iy[i] * vb + it[i]) / (alpha * alpha + ix[i] * ix[i] + iy[i] * iy[i]);
        nu[i] = ub - ix[i] * r;
        nv[i] = vb - iy[i] * r;
      }
    u = nu;
    v = nv;
  }
  std::vector<double> out;
  for (int i = 0; i < h * w; ++i) {
    out.push_back(u[i]);
    out.push_back(v[i]);
  }
  return out;
}

Tensor<double> texture(std::size_t h, std::size_t w, double shift_x, double fx, double fy) {
  Tensor<double> img({h, w, 3});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const double v = 0.5 + 0.2 * std::sin(2 * std::numbers::pi * fx * (double(x) - shift_x) / double(w)) *
                                 std::cos(2 * std::numbers::pi * fy * double(y) / double(h));
      for (std::size_t c = 0; c < 3; ++c) img.at({y, x, c}) = v;
    }
  return img;
}

TEST(Flow, MatchesHornSchunckOracle) {
  FlowConfig fc;
  fc.iters = 7;
  Rng rng(1);
  const auto a = rand_uniform<double>({6, 7, 3}, rng), b = rand_uniform<double>({6, 7, 3}, rng);
  std::vector<double> la, lb;
  for (std::size_t i = 0; i < 42; ++i) {
    double ya = 0, yb = 0;
    for (std::size_t c = 0; c < 3; ++c) {
      ya += fc.grayscale[c] * fc.intensity_scale * a[i * 3 + c];
      yb += fc.grayscale[c] * fc.intensity_scale * b[i * 3 + c];
    }
    la.push_back(ya);
    lb.push_back(yb);
  }
  const auto ref = hs_oracle(la, lb, 6, 7, fc.alpha, fc.iters);
  const auto f = flow(a, b, fc);
  ASSERT_EQ(f.dims(), (Dims{6, 7, 2}));
  for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(f[i], ref[i], 1e-9);
}

TEST(Flow, IdenticalFramesGiveZeroFlow) {
  Rng rng(2);
  const auto a = rand_uniform<double>({8, 8, 3}, rng);
  const auto f = flow(a, a, FlowConfig{});
  for (auto v : f.vec()) EXPECT_EQ(v, 0.0);
}

TEST(Flow, OnePixelShiftIsRecovered) {
  FlowConfig fc;
  fc.iters = 200;
  const auto a = texture(32, 32, 0.0, 2, 1), b = texture(32, 32, 1.0, 2, 1);
  const auto f = flow(a, b, fc);
  Tensor<double> mask({32, 32});
  for (std::size_t y = 4; y < 28; ++y)
    for (std::size_t x = 4; x < 28; ++x) mask.at({y, x}) = 1;
  const auto m = mean_flow(f, &mask);
  EXPECT_NEAR(m[0], 1.0, 0.3);
  EXPECT_NEAR(m[1], 0.0, 0.3);
}

TEST(Flow, StackShapesAndErrors) {
  Rng rng(3);
  const auto v = rand_uniform<double>({5, 8, 8, 3}, rng);
  const auto fs = flow_stack(v, FlowConfig{});
  EXPECT_EQ(fs.dims(), (Dims{4, 8, 8, 2}));
  const auto f12 = flow(toyvae::frame(v, 1), toyvae::frame(v, 2), FlowConfig{});
  for (std::size_t i = 0; i < f12.size(); ++i) EXPECT_NEAR(fs[f12.size() + i], f12[i], 1e-12);
  try {
    flow_stack(rand_uniform<double>({1, 8, 8, 3}, rng), FlowConfig{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::TooFewFrames);
  }
  FlowConfig bad;
  bad.iters = 0;
  EXPECT_THROW(bad.validate(), Error);
}

TEST(Flow, FrameBlocks) {
  const auto one = frame_blocks(3, false);
  ASSERT_EQ(one.size(), 1u);
  EXPECT_EQ(one[0].end, 9u);
  const auto w = frame_blocks(8, true);
  EXPECT_EQ(w.front().begin, 0u);
  EXPECT_EQ(w.back().end, toyvae::video_frames(8));
  EXPECT_THROW(frame_blocks(4, true), Error);
}

TEST(Flow, DenoisedStackWithTrueVelocityEqualsReference) {
  Rng rng(4);
  FlowConfig fc;
  fc.iters = 5;
  for (bool windowed : {false, true}) {
    const std::size_t frames = windowed ? 25 : 9;
    const auto video = rand_uniform<double>({frames, 8, 8, 3}, rng);
    const auto z0 = toyvae::encode(video);
    const auto z1 = randn<double>(z0.dims(), rng);
    const double t = 0.6;
    const auto zt = flowmatch::interpolate(z0, z1, t);
    const auto gen = denoised_flow_stack(zt, flowmatch::velocity_target(z0, z1), t, fc, windowed);
    const auto ref = reference_flow_stack(video, fc, windowed);
    EXPECT_LT(max_abs_diff(gen, ref), 1e-9) << windowed;
    EXPECT_LT(mora_loss(ref, gen), 1e-9);
  }
}

TEST(Flow, Losses) {
  Tensor<double> a({2, 2}, std::vector<double>{1, -2, 3, 0}), b({2, 2});
  EXPECT_DOUBLE_EQ(mora_loss(a, b), 1.5);
  ag::Graph<double> g;
  EXPECT_DOUBLE_EQ(mora_loss(g.constant(a), g.constant(b)).value()[0], 1.5);
  EXPECT_DOUBLE_EQ(total_motion_loss(1.0, 2.0, 0.5), 2.0);
  EXPECT_THROW(total_motion_loss(1.0, 2.0, -0.5), Error);
}

TEST(Flow, GradientsThroughUnrolledSolver) {
  FlowConfig fc;
  fc.iters = 3;
  Rng rng(5);
  ParamStore<double> p;
  p["a"] = rand_uniform<double>({5, 6, 3}, rng);
  p["b"] = rand_uniform<double>({5, 6, 3}, rng);
  const auto ref = randn<double>({5, 6, 2}, 6);
  const auto rep = grad_check(tape_loss([&](ag::Graph<double>& g, std::map<std::string, ag::Var<double>>& l) {
                                return mora_loss(g.constant(ref), flow(l.at("a"), l.at("b"), fc));
                              }),
                              p);
  EXPECT_TRUE(rep.passed) << rep.worst_param << " " << rep.max_rel_err;
}

TEST(Flow, MeanFlowAndVisualize) {
  Tensor<double> f({2, 2, 2}, std::vector<double>{1, 0, 3, 0, 0, 2, 0, 4});
  Tensor<double> mask({2, 2}, std::vector<double>{1, 0, 0, 1});
  const auto all = mean_flow(f), masked = mean_flow(f, &mask);
  EXPECT_DOUBLE_EQ(all[0], 1.0);
  EXPECT_DOUBLE_EQ(all[1], 1.5);
  EXPECT_DOUBLE_EQ(masked[0], 0.5);
  EXPECT_DOUBLE_EQ(masked[1], 2.0);
  const auto img = visualize(f);
  EXPECT_EQ(img.dims(), (Dims{2, 2, 3}));
  for (auto v : img.vec()) {
    EXPECT_GE(v, 0.f);
    EXPECT_LE(v, 1.f);
  }
  EXPECT_FLOAT_EQ(std::max({img[9], img[10], img[11]}), 1.f);  // largest vector at full brightness
}

}  // namespace
}  // namespace smra::mora
