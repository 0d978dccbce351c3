// Copyright (c) 2026 The smrabooth authors
// SPDX-License-Identifier: Apache-2.0
//
// Proxy metrics on generated videos, sweep-table normalization, and rank
// correlation.

#pragma once

#include <iomanip>
#include <numeric>

#include <nlohmann/json.hpp>

#include "smra/mora.hpp"
#include "smra/sura.hpp"
#include "smra/toyvae.hpp"

namespace smra::eval {

/// Mean over frames of cos(embed(frame), embed(reference)).
template <class T = float>
double subject_similarity(const Tensor<T>& gen, const Tensor<T>& ref_image, const sura::PatchEncoder& enc) {
  if (gen.rank() != 4 || ref_image.rank() != 4 || ref_image.dim(0) != 1)
    throw Error(ErrorCode::ShapeError, "subject_similarity needs [T,H,W,C] and [1,H,W,C]");
  if (gen.dim(1) != ref_image.dim(1) || gen.dim(2) != ref_image.dim(2) || gen.dim(3) != ref_image.dim(3))
    throw Error(ErrorCode::ShapeError, "resolution mismatch " + dims_str(gen.dims()) + " vs " + dims_str(ref_image.dims()));
  const auto r = sura::embed_frame(enc, ref_image);
  double s = 0;
  for (std::size_t k = 0; k < gen.dim(0); ++k) s += sura::cosine(sura::embed_frame(enc, toyvae::frame(gen, k)), r);
  return s / static_cast<double>(gen.dim(0));
}

/// Per-slice cosine between flattened flow fields; slices where both norms
/// are below 1e-6 score 1.
template <class T>
double flow_cosine_mean(const Tensor<T>& fa, const Tensor<T>& fb) {
  require_same_shape(fa, fb, "flow_cosine_mean");
  const std::size_t n = fa.dim(0), per = fa.size() / n;
  double total = 0;
  for (std::size_t k = 0; k < n; ++k) {
    double dot = 0, na = 0, nb = 0;
    for (std::size_t i = k * per; i < (k + 1) * per; ++i) {
      const double a = fa[i], b = fb[i];
      dot += a * b;
      na += a * a;
      nb += b * b;
    }
    na = std::sqrt(na);
    nb = std::sqrt(nb);
    if (na < 1e-6 && nb < 1e-6) {
      total += 1.0;
      continue;
    }
    total += dot / (std::max(na, 1e-8) * std::max(nb, 1e-8));
  }
  return total / static_cast<double>(n);
}

template <class T = float>
double motion_fidelity(const Tensor<T>& gen, const Tensor<T>& ref, const mora::FlowConfig& cfg) {
  if (gen.rank() != 4 || ref.rank() != 4 || gen.dims() != ref.dims())
    throw Error(ErrorCode::ShapeError, "motion_fidelity " + dims_str(gen.dims()) + " vs " + dims_str(ref.dims()));
  return flow_cosine_mean(mora::flow_stack(gen, cfg), mora::flow_stack(ref, cfg));
}

/// Mean cosine of consecutive-frame embeddings.
template <class T = float>
double temporal_consistency(const Tensor<T>& v, const sura::PatchEncoder& enc) {
  if (v.rank() != 4) throw Error(ErrorCode::ShapeError, "temporal_consistency needs [T,H,W,C]");
  if (v.dim(0) < 2) throw Error(ErrorCode::TooFewFrames, "temporal_consistency needs at least 2 frames");
  std::vector<std::vector<double>> e;
  for (std::size_t k = 0; k < v.dim(0); ++k) e.push_back(sura::embed_frame(enc, toyvae::frame(v, k)));
  double s = 0;
  for (std::size_t k = 0; k + 1 < e.size(); ++k) s += sura::cosine(e[k], e[k + 1]);
  return s / static_cast<double>(e.size() - 1);
}

// ---------------------------------------------------------------- reports

struct MetricValue {
  std::vector<double> per_sample;
  double mean = 0.0;
  bool present = false;

  void add(double v) {
    per_sample.push_back(v);
    double s = 0;
    for (double x : per_sample) s += x;
    mean = s / static_cast<double>(per_sample.size());
    present = true;
  }
};

struct MetricReport {
  MetricValue subject_similarity;
  MetricValue motion_fidelity;
  MetricValue temporal_consistency;
  std::string provenance;  // manifest hash

  nlohmann::json to_json() const {
    auto one = [](const MetricValue& m) -> nlohmann::json {
      if (!m.present) return nullptr;
      return {{"per_sample", m.per_sample}, {"mean", m.mean}};
    };
    return {{"subject_similarity", one(subject_similarity)},
            {"motion_fidelity", one(motion_fidelity)},
            {"temporal_consistency", one(temporal_consistency)},
            {"provenance", provenance}};
  }

  void validate() const {
    for (const MetricValue* m : {&subject_similarity, &motion_fidelity, &temporal_consistency})
      for (double v : m->per_sample)
        if (!std::isfinite(v)) throw Error(ErrorCode::NonFiniteActivation, "non-finite metric value");
  }
};

// ---------------------------------------------------------------- sweep table

struct SweepTable {
  std::vector<std::string> rows;  // layer types, then "full"
  std::map<std::string, double> raw;
  std::map<std::string, double> normalized;
  double reference = 0.0;  // raw full-layer score
  double floor = 0.0;      // lowest raw score

  nlohmann::json to_json() const {
    nlohmann::json j{{"reference", reference}, {"floor", floor}, {"rows", nlohmann::json::array()}};
    for (const auto& r : rows) j["rows"].push_back({{"layer", r}, {"raw", raw.at(r)}, {"normalized", normalized.at(r)}});
    return j;
  }

  std::string to_csv() const {
    std::ostringstream os;
    os << std::setprecision(17) << "layer,raw,normalized\n";
    for (const auto& r : rows) os << r << ',' << raw.at(r) << ',' << normalized.at(r) << '\n';
    return os.str();
  }
};

/// 100 at the full-layer score, 0 at the lowest score, affine in between.
/// When every score is equal all rows normalize to 100.
inline SweepTable normalize_sweep(const std::vector<std::pair<std::string, double>>& per_type, double full) {
  SweepTable t;
  t.reference = full;
  t.floor = full;
  for (const auto& [k, v] : per_type) {
    t.rows.push_back(k);
    t.raw[k] = v;
    t.floor = std::min(t.floor, v);
  }
  t.rows.push_back("full");
  t.raw["full"] = full;
  const double span = full - t.floor;
  for (const auto& [k, v] : t.raw) t.normalized[k] = span == 0.0 ? 100.0 : (v - t.floor) / span * 100.0;
  t.normalized["full"] = 100.0;
  for (const auto& [k, v] : t.raw)
    if (v == t.floor && span != 0.0) t.normalized[k] = 0.0;
  return t;
}

// ---------------------------------------------------------------- rank statistics

inline std::vector<double> ranks(const std::vector<double>& x) {
  std::vector<std::size_t> idx(x.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> r(x.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && x[idx[j + 1]] == x[idx[i]]) ++j;
    const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
    i = j + 1;
  }
  return r;
}

/// Spearman rank correlation with average ranks for ties; 0 when either side is constant.
inline double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw Error(ErrorCode::ShapeError, "spearman needs two equal series of length >= 2");
  const auto rx = ranks(x), ry = ranks(y);
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) mx += rx[i], my += ry[i];
  mx /= n, my /= n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0 || syy == 0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace smra::eval
