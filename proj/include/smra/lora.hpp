// Copyright (c) 2026 The smrabooth authors
// SPDX-License-Identifier: Apache-2.0
//
// Low-rank adapters over named DiT layers: role-based targeting, the
// denoise-step scale schedule, inference-time merging of subject and motion
// sets, and single-layer-type sweep views.

#pragma once

#include <filesystem>
#include <memory>
#include <set>

#include <nlohmann/json.hpp>

#include "smra/dit.hpp"
#include "smra/stns.hpp"

namespace smra::lora {

enum class Role { Subject, Motion };

inline std::string to_string(Role r) { return r == Role::Subject ? "subject" : "motion"; }

inline Role parse_role(std::string_view s) {
  if (s == "subject") return Role::Subject;
  if (s == "motion") return Role::Motion;
  throw Error(ErrorCode::BadRole, "unknown role '" + std::string(s) + "'");
}

/// Layer types each role targets by default.
inline std::vector<std::string> default_types(Role r) {
  if (r == Role::Subject) return {"q", "k", "ffn.0"};
  return {"v", "o", "ffn.0", "ffn.2"};
}

inline std::vector<std::string> all_types() { return {dit::kLayerTypes.begin(), dit::kLayerTypes.end()}; }

inline void validate_types(const std::vector<std::string>& types) {
  for (const auto& t : types)
    if (!dit::is_layer_type(t)) throw Error(ErrorCode::BadLayerType, "unknown layer type '" + t + "'");
}

struct ScaleSchedule {
  int t_point = 0;
  double s_low = 1.0;
  double s_high = 1.0;

  bool operator==(const ScaleSchedule&) const = default;
};

/// s_low strictly before t_point, s_high from t_point on.
inline double schedule_scale(const ScaleSchedule& s, int step) { return step < s.t_point ? s.s_low : s.s_high; }

template <class T>
struct LoraAdapter {
  std::string layer_name;
  Tensor<T> A;  // [r, D_in]
  Tensor<T> B;  // [D_out, r]
  std::size_t rank = 0;
};

template <class T>
using AdapterMap = std::map<std::string, LoraAdapter<T>>;

template <class T>
struct LoraSet {
  Role role = Role::Subject;
  ScaleSchedule schedule;
  std::shared_ptr<AdapterMap<T>> adapters = std::make_shared<AdapterMap<T>>();
  // Sweep view: when set, adapters of other layer types are inactive.
  std::optional<std::set<std::string>> active_types;
  // Trained rows for the reserved "V*" / "S*" tokens, keyed by token string.
  std::map<std::string, Tensor<T>> token_rows;

  std::size_t rank() const { return adapters->empty() ? 0 : adapters->begin()->second.rank; }

  bool is_active(const std::string& layer_name) const {
    return !active_types || active_types->count(dit::layer_type_of(layer_name)) != 0;
  }

  std::vector<std::string> active_layers() const {
    std::vector<std::string> out;
    for (const auto& [name, _] : *adapters)
      if (is_active(name)) out.push_back(name);
    return out;
  }

  std::set<std::string> targeted_types() const {
    std::set<std::string> out;
    for (const auto& [name, _] : *adapters) out.insert(dit::layer_type_of(name));
    return out;
  }

  /// Deep copy with independent adapter storage.
  LoraSet clone() const {
    LoraSet c = *this;
    c.adapters = std::make_shared<AdapterMap<T>>(*adapters);
    return c;
  }
};

/// Creates a zero-delta adapter set (B = 0, A ~ N(0, init_std^2)) over the
/// given layer types of every block.
template <class T = float>
LoraSet<T> attach(Role role, const dit::ModelConfig& cfg, std::size_t rank, std::uint64_t seed,
                  std::optional<std::vector<std::string>> types = std::nullopt, double init_std = 0.02) {
  if (rank < 1) throw Error(ErrorCode::BadConfig, "LoRA rank must be >= 1");
  const auto chosen = types.value_or(default_types(role));
  validate_types(chosen);
  const std::set<std::string> want(chosen.begin(), chosen.end());
  LoraSet<T> set;
  set.role = role;
  Rng rng(derive_seed(seed, "lora." + to_string(role)));
  for (const auto& l : dit::named_layers(cfg)) {
    if (!l.targetable || !want.count(l.type)) continue;
    LoraAdapter<T> a{l.name, randn<T>({rank, l.d_in}, rng, init_std), Tensor<T>({l.d_out, rank}), rank};
    set.adapters->emplace(l.name, std::move(a));
  }
  return set;
}

template <class T>
Tensor<T> effective_delta(const LoraAdapter<T>& a, T scale) {
  if (a.A.rank() != 2 || a.B.rank() != 2 || a.A.dim(0) != a.B.dim(1))
    throw Error(ErrorCode::ShapeError, "adapter factors " + dims_str(a.B.dims()) + " x " + dims_str(a.A.dims()));
  Tensor<T> d = smra::matmul(a.B, a.A);
  for (auto& v : d.vec()) v *= scale;
  return d;
}

/// Returns a view of `set` where only adapters of `keep_layer_type` are active.
template <class T>
LoraSet<T> sweep_mask(const LoraSet<T>& set, const std::string& keep_layer_type) {
  if (!dit::is_layer_type(keep_layer_type))
    throw Error(ErrorCode::BadLayerType, "unknown layer type '" + keep_layer_type + "'");
  LoraSet<T> view = set;
  view.active_types = std::set<std::string>{keep_layer_type};
  return view;
}

/// Per-step adapter state handed to the model: for each layer the ordered
/// (scale, adapter) terms. Subject terms precede motion terms.
template <class T>
struct LoraContext {
  struct Term {
    std::shared_ptr<const AdapterMap<T>> owner;
    const LoraAdapter<T>* adapter;
    T scale;
    Role role;
  };
  std::map<std::string, std::vector<Term>> layers;
  std::map<std::string, Tensor<T>> token_rows;
  double subject_scale = 0.0;
  double motion_scale = 0.0;

  bool empty() const { return layers.empty() && token_rows.empty(); }

  /// Effective weight delta on one layer: sum of scale * B * A over terms.
  Tensor<T> layer_delta(const std::string& name) const {
    auto it = layers.find(name);
    if (it == layers.end() || it->second.empty()) throw Error(ErrorCode::ShapeError, "no adapter on " + name);
    Tensor<T> total = effective_delta(*it->second[0].adapter, it->second[0].scale);
    for (std::size_t i = 1; i < it->second.size(); ++i) {
      const Tensor<T> d = effective_delta(*it->second[i].adapter, it->second[i].scale);
      for (std::size_t k = 0; k < total.size(); ++k) total[k] += d[k];
    }
    return total;
  }
};

/// Combines subject and motion sets for denoise step `step`. Either may be null.
template <class T>
LoraContext<T> merge(const LoraSet<T>* subject, const LoraSet<T>* motion, int step) {
  LoraContext<T> ctx;
  // Canonical order: subject before motion regardless of argument order.
  std::vector<const LoraSet<T>*> sets;
  for (const LoraSet<T>* s : {subject, motion})
    if (s) sets.push_back(s);
  std::stable_sort(sets.begin(), sets.end(),
                   [](const LoraSet<T>* a, const LoraSet<T>* b) { return a->role < b->role; });
  for (const LoraSet<T>* s : sets) {
    const double sc = schedule_scale(s->schedule, step);
    (s->role == Role::Subject ? ctx.subject_scale : ctx.motion_scale) = sc;
    for (const auto& [name, a] : *s->adapters) {
      if (!s->is_active(name)) continue;
      auto& terms = ctx.layers[name];
      if (!terms.empty()) {
        const auto* other = terms.front().adapter;
        if (other->A.dim(1) != a.A.dim(1) || other->B.dim(0) != a.B.dim(0))
          throw Error(ErrorCode::IncompatibleSets, "layer " + name + " shapes differ between sets");
      }
      terms.push_back({s->adapters, &a, static_cast<T>(sc), s->role});
    }
    for (const auto& [tok, row] : s->token_rows) ctx.token_rows[tok] = row;
  }
  return ctx;
}

/// Binds a merged context into a graph as constants.
template <class G, class T>
dit::BoundLora<G> bind(ag::Graph<G>& g, const LoraContext<T>& ctx, const dit::ModelConfig& cfg) {
  dit::BoundLora<G> out;
  for (const auto& [name, terms] : ctx.layers)
    for (const auto& t : terms)
      out.layers[name].push_back({g.constant(t.adapter->A.template cast<G>()),
                                  g.constant(t.adapter->B.template cast<G>()), static_cast<G>(t.scale)});
  for (const auto& [tok, row] : ctx.token_rows) {
    const std::size_t id = tok == dit::kSubjectToken ? dit::subject_token_id(cfg) : dit::motion_token_id(cfg);
    out.token_rows.emplace(id, g.constant(row.template cast<G>()));
  }
  return out;
}

/// Trainable leaves for one set at scale 1: "<layer>.A", "<layer>.B", and
/// "token.<tok>" for trained token rows.
template <class T>
struct TrainableBinding {
  dit::BoundLora<T> lora;
  std::map<std::string, ag::Var<T>> leaves;
};

template <class T>
TrainableBinding<T> bind_trainable(ag::Graph<T>& g, const LoraSet<T>& set, const dit::ModelConfig& cfg) {
  TrainableBinding<T> out;
  for (const auto& [name, a] : *set.adapters) {
    auto A = g.leaf(a.A, true);
    auto B = g.leaf(a.B, true);
    out.leaves.emplace(name + ".A", A);
    out.leaves.emplace(name + ".B", B);
    if (set.is_active(name)) out.lora.layers[name].push_back({A, B, T(1)});
  }
  for (const auto& [tok, row] : set.token_rows) {
    auto v = g.leaf(row, true);
    out.leaves.emplace("token." + tok, v);
    const std::size_t id = tok == dit::kSubjectToken ? dit::subject_token_id(cfg) : dit::motion_token_id(cfg);
    out.lora.token_rows.emplace(id, v);
  }
  return out;
}

/// Flat view of all trainable tensors of a set, keyed as in bind_trainable.
template <class T>
std::map<std::string, Tensor<T>*> trainable_tensors(LoraSet<T>& set) {
  std::map<std::string, Tensor<T>*> out;
  for (auto& [name, a] : *set.adapters) {
    out.emplace(name + ".A", &a.A);
    out.emplace(name + ".B", &a.B);
  }
  for (auto& [tok, row] : set.token_rows) out.emplace("token." + tok, &row);
  return out;
}

// ---------------------------------------------------------------- persistence

inline std::string file_stem(const std::string& name) {
  std::string s = name;
  for (auto& c : s)
    if (c == '*') c = '_';
  return s;
}

template <class T>
void save(const LoraSet<T>& set, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json m;
  m["role"] = to_string(set.role);
  m["rank"] = set.rank();
  m["schedule"] = {{"t_point", set.schedule.t_point}, {"s_low", set.schedule.s_low}, {"s_high", set.schedule.s_high}};
  nlohmann::json layers = nlohmann::json::object();
  for (const auto& [name, a] : *set.adapters) {
    const std::string fa = name + ".A.stns", fb = name + ".B.stns";
    io::save_stns(dir / fa, a.A);
    io::save_stns(dir / fb, a.B);
    layers[name] = {{"A", fa}, {"B", fb}, {"hash", io::content_hash(io::encode_stns(a.A) + io::encode_stns(a.B))}};
  }
  m["layers"] = layers;
  nlohmann::json toks = nlohmann::json::object();
  for (const auto& [tok, row] : set.token_rows) {
    const std::string f = "token." + file_stem(tok) + ".stns";
    io::save_stns(dir / f, row);
    toks[tok] = f;
  }
  m["tokens"] = toks;
  io::write_file(dir / "lora.json", m.dump(2));
}

template <class T = float>
LoraSet<T> load(const std::filesystem::path& dir) {
  const auto m = nlohmann::json::parse(io::read_file(dir / "lora.json"));
  LoraSet<T> set;
  set.role = parse_role(m.at("role").get<std::string>());
  set.schedule = {m.at("schedule").at("t_point").get<int>(), m.at("schedule").at("s_low").get<double>(),
                  m.at("schedule").at("s_high").get<double>()};
  for (const auto& [name, e] : m.at("layers").items()) {
    LoraAdapter<T> a{name, io::load_stns<T>(dir / e.at("A").template get<std::string>()),
                     io::load_stns<T>(dir / e.at("B").template get<std::string>()), 0};
    a.rank = a.A.dim(0);
    set.adapters->emplace(name, std::move(a));
  }
  for (const auto& [tok, f] : m.at("tokens").items())
    set.token_rows.emplace(tok, io::load_stns<T>(dir / f.template get<std::string>()));
  return set;
}

}  // namespace smra::lora
