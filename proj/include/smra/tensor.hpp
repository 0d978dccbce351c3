// Copyright (c) 2026 The smrabooth authors
// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major tensor, error type, and seeded random helpers shared by
// every module.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace smra {

enum class ErrorCode {
  ShapeError,
  NonFiniteProbe,
  NonFiniteActivation,
  BadFrameCount,
  BadResolution,
  BadChannelCount,
  WindowTooLarge,
  EmptyPrompt,
  TooManyTokens,
  BadRole,
  BadLayerType,
  IncompatibleSets,
  BadMask,
  TokenCountMismatch,
  TooFewFrames,
  BadSpec,
  EmptyEvalSet,
  TrainingDiverged,
  MissingMask,
  BadConfig,
  IoError,
};

inline const char* to_string(ErrorCode c) {
  switch (c) {
    case ErrorCode::ShapeError: return "ShapeError";
    case ErrorCode::NonFiniteProbe: return "NonFiniteProbe";
    case ErrorCode::NonFiniteActivation: return "NonFiniteActivation";
    case ErrorCode::BadFrameCount: return "BadFrameCount";
    case ErrorCode::BadResolution: return "BadResolution";
    case ErrorCode::BadChannelCount: return "BadChannelCount";
    case ErrorCode::WindowTooLarge: return "WindowTooLarge";
    case ErrorCode::EmptyPrompt: return "EmptyPrompt";
    case ErrorCode::TooManyTokens: return "TooManyTokens";
    case ErrorCode::BadRole: return "BadRole";
    case ErrorCode::BadLayerType: return "BadLayerType";
    case ErrorCode::IncompatibleSets: return "IncompatibleSets";
    case ErrorCode::BadMask: return "BadMask";
    case ErrorCode::TokenCountMismatch: return "TokenCountMismatch";
    case ErrorCode::TooFewFrames: return "TooFewFrames";
    case ErrorCode::BadSpec: return "BadSpec";
    case ErrorCode::EmptyEvalSet: return "EmptyEvalSet";
    case ErrorCode::TrainingDiverged: return "TrainingDiverged";
    case ErrorCode::MissingMask: return "MissingMask";
    case ErrorCode::BadConfig: return "BadConfig";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

using Dims = std::vector<std::size_t>;

inline std::size_t numel(const Dims& d) {
  return std::accumulate(d.begin(), d.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string dims_str(const Dims& d) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < d.size(); ++i) os << (i ? "," : "") << d[i];
  os << "]";
  return os.str();
}

template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Dims dims, T fill = T(0)) : dims_(std::move(dims)), data_(numel(dims_), fill) {
    for (auto d : dims_)
      if (d == 0) throw Error(ErrorCode::ShapeError, "zero-sized dimension in " + dims_str(dims_));
  }
  Tensor(Dims dims, std::vector<T> data) : dims_(std::move(dims)), data_(std::move(data)) {
    if (numel(dims_) != data_.size())
      throw Error(ErrorCode::ShapeError,
                  "data length " + std::to_string(data_.size()) + " != product of " + dims_str(dims_));
  }

  static Tensor scalar(T v) { return Tensor({1}, std::vector<T>{v}); }

  const Dims& dims() const noexcept { return dims_; }
  std::size_t rank() const noexcept { return dims_.size(); }
  std::size_t dim(std::size_t i) const { return dims_.at(i); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  std::vector<T>& vec() noexcept { return data_; }
  const std::vector<T>& vec() const noexcept { return data_; }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  T& at(std::initializer_list<std::size_t> idx) { return data_[offset(idx)]; }
  const T& at(std::initializer_list<std::size_t> idx) const { return data_[offset(idx)]; }

  Tensor reshaped(Dims d) const {
    if (numel(d) != data_.size())
      throw Error(ErrorCode::ShapeError, "cannot reshape " + dims_str(dims_) + " to " + dims_str(d));
    return Tensor(std::move(d), data_);
  }

  template <class U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.size());
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
    return Tensor<U>(dims_, std::move(out));
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  bool operator==(const Tensor& o) const { return dims_ == o.dims_ && data_ == o.data_; }

 private:
  std::size_t offset(std::initializer_list<std::size_t> idx) const {
    if (idx.size() != dims_.size()) throw Error(ErrorCode::ShapeError, "index rank mismatch");
    std::size_t off = 0, k = 0;
    for (auto i : idx) {
      if (i >= dims_[k]) throw Error(ErrorCode::ShapeError, "index out of range");
      off = off * dims_[k++] + i;
    }
    return off;
  }

  Dims dims_;
  std::vector<T> data_;
};

template <class T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, std::string_view what) {
  if (a.dims() != b.dims())
    throw Error(ErrorCode::ShapeError,
                std::string(what) + ": " + dims_str(a.dims()) + " vs " + dims_str(b.dims()));
}

template <class T>
void require_finite(const Tensor<T>& t, ErrorCode code, std::string_view what) {
  if (!t.all_finite()) throw Error(code, std::string(what) + " produced a non-finite value");
}

// 64-bit FNV-1a; used for token hashing, seed derivation and content hashes.
inline std::uint64_t fnv1a(const void* bytes, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(bytes);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}
inline std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ULL) {
  return fnv1a(s.data(), s.size(), h);
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Independent stream for a named purpose under a parent seed.
inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag) {
  return splitmix64(seed ^ fnv1a(tag));
}
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
  return splitmix64(seed ^ splitmix64(index + 0x632be59bd9b4e019ULL));
}

using Rng = std::mt19937_64;

template <class T>
Tensor<T> randn(Dims dims, Rng& rng, double stddev = 1.0) {
  Tensor<T> t(std::move(dims));
  std::normal_distribution<double> nd(0.0, stddev);
  for (auto& v : t.vec()) v = static_cast<T>(nd(rng));
  return t;
}

template <class T>
Tensor<T> randn(Dims dims, std::uint64_t seed, double stddev = 1.0) {
  Rng rng(seed);
  return randn<T>(std::move(dims), rng, stddev);
}

template <class T>
Tensor<T> rand_uniform(Dims dims, Rng& rng, double lo = 0.0, double hi = 1.0) {
  Tensor<T> t(std::move(dims));
  std::uniform_real_distribution<double> ud(lo, hi);
  for (auto& v : t.vec()) v = static_cast<T>(ud(rng));
  return t;
}

template <class T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "max_abs_diff");
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  return m;
}

// C[M,N] = A[M,K] * B[K,N]; i-k-j order so the inner loop vectorizes without
// reassociating reductions.
template <class T>
void matmul_kernel(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n,
                   bool accumulate = false) {
  if (!accumulate) std::fill(c, c + m * n, T(0));
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    const T* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = arow[p];
      const T* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <class T>
Tensor<T> transpose2d(const Tensor<T>& a) {
  if (a.rank() != 2) throw Error(ErrorCode::ShapeError, "transpose2d needs rank 2");
  const std::size_t r = a.dim(0), c = a.dim(1);
  Tensor<T> t({c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) t[j * r + i] = a[i * c + j];
  return t;
}

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw Error(ErrorCode::ShapeError, "matmul " + dims_str(a.dims()) + " x " + dims_str(b.dims()));
  Tensor<T> c({a.dim(0), b.dim(1)});
  matmul_kernel(a.data(), b.data(), c.data(), a.dim(0), a.dim(1), b.dim(1));
  return c;
}

}  // namespace smra
