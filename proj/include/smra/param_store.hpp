// Copyright (c) 2026 The smrabooth authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <map>

#include "smra/stns.hpp"

namespace smra {

/// Named parameters, iterated in lexicographic order.
template <class T>
struct ParamStore {
  std::map<std::string, Tensor<T>> tensors;
  std::uint64_t rng_seed = 0;

  Tensor<T>& operator[](const std::string& name) { return tensors[name]; }
  const Tensor<T>& at(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw Error(ErrorCode::ShapeError, "missing parameter '" + name + "'");
    return it->second;
  }
  bool contains(const std::string& name) const { return tensors.count(name) != 0; }
  std::size_t size() const { return tensors.size(); }

  std::size_t num_scalars() const {
    std::size_t n = 0;
    for (const auto& [_, t] : tensors) n += t.size();
    return n;
  }

  template <class U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    out.rng_seed = rng_seed;
    for (const auto& [k, t] : tensors) out.tensors.emplace(k, t.template cast<U>());
    return out;
  }

  // Hash over names and float32 payloads; equal stores hash equal.
  std::string checksum() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& [k, t] : tensors) {
      h = fnv1a(k, h);
      const std::string bytes = io::encode_stns(t);
      h = fnv1a(bytes.data(), bytes.size(), h);
    }
    return io::hex64(h);
  }

  bool operator==(const ParamStore& o) const { return tensors == o.tensors; }
};

}  // namespace smra
