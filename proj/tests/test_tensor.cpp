// Copyright (c) 2026 The smrabooth authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <filesystem>

#include "smra/param_store.hpp"

namespace smra {
namespace {

TEST(Tensor, RejectsZeroDimAndLengthMismatch) {
  EXPECT_THROW(Tensor<float>({2, 0}), Error);
  EXPECT_THROW(Tensor<float>({2, 2}, std::vector<float>{1, 2, 3}), Error);
  try {
    Tensor<float>({3}).reshaped({2, 2});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ShapeError);
  }
}

TEST(Tensor, RowMajorIndexing) {
  Tensor<int> t({2, 3, 4});
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<int>(i);
  EXPECT_EQ(t.at({1, 2, 3}), 23);
  EXPECT_EQ(t.at({0, 1, 0}), 4);
  EXPECT_THROW(t.at({0, 3, 0}), Error);
}

TEST(Tensor, MatmulMatchesNaiveTripleLoop) {
  auto a = randn<double>({5, 7}, 1);
  auto b = randn<double>({7, 3}, 2);
  auto c = matmul(a, b);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      double s = 0;
      for (std::size_t k = 0; k < 7; ++k) s += a.at({i, k}) * b.at({k, j});
      EXPECT_NEAR(c.at({i, j}), s, 1e-12);
    }
  EXPECT_THROW(matmul(a, a), Error);
}

TEST(Tensor, TransposeIsInvolution) {
  auto a = randn<float>({4, 6}, 3);
  EXPECT_EQ(transpose2d(transpose2d(a)), a);
  EXPECT_EQ(transpose2d(a).at({5, 1}), a.at({1, 5}));
}

TEST(Seeds, DerivedStreamsAreStableAndDistinct) {
  EXPECT_EQ(derive_seed(7, "a"), derive_seed(7, "a"));
  EXPECT_NE(derive_seed(7, "a"), derive_seed(7, "b"));
  EXPECT_NE(derive_seed(7, "a"), derive_seed(8, "a"));
  EXPECT_NE(derive_seed(7, std::uint64_t{0}), derive_seed(7, std::uint64_t{1}));
  EXPECT_EQ(randn<float>({8}, 11), randn<float>({8}, 11));
}

TEST(Fnv, KnownVectors) {
  EXPECT_EQ(fnv1a(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(fnv1a("a"), 0xaf63dc4c8601ec8cULL);
  EXPECT_EQ(fnv1a("foobar"), 0x85944171f73967e8ULL);
}

TEST(Stns, HeaderLayout) {
  Tensor<float> t({2, 3}, std::vector<float>{1, 2, 3, 4, 5, 6});
  const std::string b = io::encode_stns(t);
  ASSERT_EQ(b.size(), 4u + 2u + 2u * 4u + 6u * 4u);
  EXPECT_EQ(b.substr(0, 4), "STNS");
  EXPECT_EQ(static_cast<unsigned char>(b[4]), 1);
  EXPECT_EQ(static_cast<unsigned char>(b[5]), 2);
  EXPECT_EQ(static_cast<unsigned char>(b[6]), 2);
  EXPECT_EQ(static_cast<unsigned char>(b[10]), 3);
  // 1.0f little-endian
  EXPECT_EQ(static_cast<unsigned char>(b[14]), 0x00);
  EXPECT_EQ(static_cast<unsigned char>(b[17]), 0x3F);
}

TEST(Stns, RoundTripIsBitExact) {
  for (std::uint64_t s = 0; s < 10; ++s) {
    Rng rng(s);
    Dims d;
    const std::size_t r = 1 + rng() % 4;
    for (std::size_t i = 0; i < r; ++i) d.push_back(1 + rng() % 5);
    auto t = randn<float>(d, rng, 3.0);
    EXPECT_EQ(io::decode_stns<float>(io::encode_stns(t)), t);
  }
}

TEST(Stns, RejectsCorruptStreams) {
  const std::string good = io::encode_stns(Tensor<float>({3}, 1.f));
  EXPECT_THROW(io::decode_stns<float>("XXXX"), Error);
  std::string bad_version = good;
  bad_version[4] = 2;
  EXPECT_THROW(io::decode_stns<float>(bad_version), Error);
  EXPECT_THROW(io::decode_stns<float>(good.substr(0, good.size() - 1)), Error);
  try {
    io::decode_stns<float>(good + "x");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::IoError);
  }
}

TEST(Stns, FileRoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "smra_test_tensor";
  auto t = randn<float>({3, 4, 5}, 9);
  io::save_stns(dir / "a" / "t.stns", t);
  EXPECT_EQ(io::load_stns<float>(dir / "a" / "t.stns"), t);
  EXPECT_THROW(io::load_stns<float>(dir / "missing.stns"), Error);
  std::filesystem::remove_all(dir);
}

TEST(Ppm, HeaderAndClamping) {
  Tensor<float> f({1, 2, 3}, std::vector<float>{0.f, 0.5f, 1.f, -1.f, 2.f, 0.25f});
  const std::string p = io::encode_ppm(f);
  const std::string head = "P6\n2 1\n255\n";
  ASSERT_EQ(p.substr(0, head.size()), head);
  const auto* px = reinterpret_cast<const unsigned char*>(p.data() + head.size());
  EXPECT_EQ(px[0], 0);
  EXPECT_EQ(px[1], 128);
  EXPECT_EQ(px[2], 255);
  EXPECT_EQ(px[3], 0);
  EXPECT_EQ(px[4], 255);
  EXPECT_EQ(px[5], 64);
}

TEST(ParamStore, ChecksumTracksContent) {
  ParamStore<float> a;
  a["x"] = randn<float>({4}, 1);
  a["y"] = randn<float>({2, 2}, 2);
  ParamStore<float> b = a;
  EXPECT_EQ(a.checksum(), b.checksum());
  b["y"][3] += 1.f;
  EXPECT_NE(a.checksum(), b.checksum());
  EXPECT_EQ(a.num_scalars(), 8u);
  EXPECT_THROW(a.at("z"), Error);
}

}  // namespace
}  // namespace smra
