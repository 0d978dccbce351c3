// Copyright (c) 2026 The smrabooth authors
// SPDX-License-Identifier: Apache-2.0
//
// STNS binary tensor files and PPM frame dumps.
//
// STNS layout: "STNS" magic, u8 version (1), u8 ndim, ndim x u32 LE dims,
// then product(dims) x f32 LE row-major payload.

#pragma once

#include <array>
#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include "smra/tensor.hpp"

namespace smra::io {

inline constexpr std::array<std::uint8_t, 4> kStnsMagic{0x53, 0x54, 0x4E, 0x53};
inline constexpr std::uint8_t kStnsVersion = 1;

namespace detail {
inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
inline std::uint32_t get_u32(const unsigned char* p) {
  return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) | (std::uint32_t(p[2]) << 16) |
         (std::uint32_t(p[3]) << 24);
}
}  // namespace detail

template <class T>
std::string encode_stns(const Tensor<T>& t) {
  if (t.rank() > 255) throw Error(ErrorCode::ShapeError, "STNS supports at most 255 dims");
  std::string out(kStnsMagic.begin(), kStnsMagic.end());
  out.push_back(static_cast<char>(kStnsVersion));
  out.push_back(static_cast<char>(t.rank()));
  for (auto d : t.dims()) {
    if (d > std::numeric_limits<std::uint32_t>::max())
      throw Error(ErrorCode::ShapeError, "dimension exceeds u32");
    detail::put_u32(out, static_cast<std::uint32_t>(d));
  }
  for (std::size_t i = 0; i < t.size(); ++i) {
    const float f = static_cast<float>(t[i]);
    detail::put_u32(out, std::bit_cast<std::uint32_t>(f));
  }
  return out;
}

template <class T = float>
Tensor<T> decode_stns(std::string_view bytes) {
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  if (bytes.size() < 6 || std::memcmp(p, kStnsMagic.data(), 4) != 0)
    throw Error(ErrorCode::IoError, "not an STNS stream");
  if (p[4] != kStnsVersion) throw Error(ErrorCode::IoError, "unsupported STNS version");
  const std::size_t ndim = p[5];
  std::size_t off = 6;
  if (bytes.size() < off + 4 * ndim) throw Error(ErrorCode::IoError, "truncated STNS header");
  Dims dims(ndim);
  for (std::size_t i = 0; i < ndim; ++i, off += 4) dims[i] = detail::get_u32(p + off);
  const std::size_t n = numel(dims);
  if (bytes.size() != off + 4 * n) throw Error(ErrorCode::IoError, "STNS payload size mismatch");
  std::vector<T> data(n);
  for (std::size_t i = 0; i < n; ++i, off += 4)
    data[i] = static_cast<T>(std::bit_cast<float>(detail::get_u32(p + off)));
  return Tensor<T>(std::move(dims), std::move(data));
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

template <class T>
void save_stns(const std::filesystem::path& path, const Tensor<T>& t) {
  write_file(path, encode_stns(t));
}

template <class T = float>
Tensor<T> load_stns(const std::filesystem::path& path) {
  return decode_stns<T>(read_file(path));
}

inline std::string hex64(std::uint64_t h) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

inline std::string content_hash(std::string_view bytes) { return hex64(fnv1a(bytes)); }

inline std::string file_hash(const std::filesystem::path& path) { return content_hash(read_file(path)); }

// Binary P6 dump of an [H, W, 3] frame in [0, 1].
template <class T>
std::string encode_ppm(const Tensor<T>& frame) {
  if (frame.rank() != 3 || frame.dim(2) != 3)
    throw Error(ErrorCode::ShapeError, "PPM needs an [H,W,3] frame, got " + dims_str(frame.dims()));
  std::string out = "P6\n" + std::to_string(frame.dim(1)) + " " + std::to_string(frame.dim(0)) + "\n255\n";
  for (std::size_t i = 0; i < frame.size(); ++i) {
    const double v = std::clamp(static_cast<double>(frame[i]), 0.0, 1.0);
    out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(255.0 * v))));
  }
  return out;
}

}  // namespace smra::io
