// Copyright (c) 2026 The smrabooth authors
// SPDX-License-Identifier: Apache-2.0
//
// Subcommand bodies. Each command reads named inputs, writes artifacts under
// an output directory and returns the run manifest it wrote.

#pragma once

#include <iostream>
#include <optional>

#include "smra/config.hpp"

namespace smra::cli {

namespace fs = std::filesystem;

struct CommandSpec {
  std::string name;
  std::vector<std::string> required;
  std::vector<std::string> optional;
  std::string help;
};

inline const std::vector<CommandSpec>& command_specs() {
  static const std::vector<CommandSpec> specs{
      {"gen-data", {}, {}, "write the synthetic corpus, one subject image and one motion clip"},
      {"pretrain", {"data"}, {}, "train the base model on a corpus directory"},
      {"train-subject", {"base", "data"}, {}, "train a subject adapter on a subject sample"},
      {"train-motion", {"base", "data"}, {}, "train a motion adapter on a motion sample"},
      {"infer", {"base"}, {"subject", "motion", "subject-ref", "motion-ref"}, "generate a video with optional adapters"},
      {"eval", {"video"}, {"subject-ref", "motion-ref"}, "score a video against reference samples"},
      {"sweep-layers", {"base", "data"}, {"lora"}, "per-layer-type attribution sweep"},
      {"probe-timing", {"base", "subject", "data"}, {}, "subject similarity of one-step estimates per sampler step"},
      {"ablate-combos", {"base", "subject-ref", "motion-ref"}, {}, "train and score the layer-combination ablations"},
  };
  return specs;
}

inline const CommandSpec& command_spec(const std::string& name) {
  for (const auto& s : command_specs())
    if (s.name == name) return s;
  throw Error(ErrorCode::BadConfig, "unknown command '" + name + "'");
}

struct Invocation {
  std::string command;
  CliConfig config;
  std::map<std::string, fs::path> inputs;
  std::map<std::string, std::string> expected_hashes;  // set when replaying a manifest
  fs::path out = "out";
  int verbosity = 0;
};

/// Content hash of a file or, for a directory, of its hash tree.
inline std::string input_hash(const fs::path& p) {
  if (fs::is_directory(p)) return io::content_hash(nlohmann::json(pipeline::hash_tree(p)).dump());
  if (!fs::exists(p)) throw Error(ErrorCode::IoError, "missing input " + p.string());
  return io::file_hash(p);
}

/// Recognizes a run manifest by its top-level keys.
inline bool is_manifest(const json& j) {
  return j.is_object() && j.contains("command") && j.contains("config") && j.contains("inputs");
}

/// Reconstructs an invocation from a manifest. The environment seed override
/// is not applied; the manifest seed is authoritative.
inline Invocation invocation_from_manifest(const json& j) {
  Invocation inv;
  const auto m = pipeline::RunManifest::from_json(j);
  inv.command = m.command;
  inv.config = parse_config(m.config, false);
  for (const auto& [name, e] : m.inputs.items()) {
    inv.inputs[name] = e.at("path").get<std::string>();
    inv.expected_hashes[name] = e.at("hash").get<std::string>();
  }
  return inv;
}

namespace detail {

inline void write_json(const fs::path& p, const json& j) { io::write_file(p, j.dump(2)); }

inline std::optional<lora::LoraSet<float>> load_set(const Invocation& inv, const std::string& name, lora::Role role) {
  const auto it = inv.inputs.find(name);
  if (it == inv.inputs.end()) return std::nullopt;
  auto s = lora::load<float>(it->second);
  if (s.role != role)
    throw Error(ErrorCode::BadRole, "--" + name + " holds a " + lora::to_string(s.role) + " adapter set");
  return s;
}

inline std::optional<data::Sample> load_ref(const Invocation& inv, const std::string& name) {
  const auto it = inv.inputs.find(name);
  if (it == inv.inputs.end()) return std::nullopt;
  return data::load_sample(it->second);
}

inline eval::MetricReport score(const CliConfig& c, const Tensor<float>& video, const std::optional<data::Sample>& sref,
                          const std::optional<data::Sample>& mref, const std::string& provenance) {
  eval::MetricReport r;
  const auto enc = c.make_encoder();
  if (sref) {
    const auto f0 = toyvae::frame(sref->video, 0);
    r.subject_similarity.add(eval::subject_similarity(video, f0.reshaped({1, f0.dim(0), f0.dim(1), f0.dim(2)}), enc));
  }
  if (mref) r.motion_fidelity.add(eval::motion_fidelity(video, mref->video, c.flow));
  if (video.dim(0) >= 2) r.temporal_consistency.add(eval::temporal_consistency(video, enc));
  r.provenance = provenance;
  r.validate();
  return r;
}

inline std::function<void(int, double)> progress(const Invocation& inv, const std::string& what, int every) {
  if (inv.verbosity <= 0) return {};
  return [what, every](int step, double loss) {
    if (step % every == 0) std::cerr << what << " step " << step << " loss " << loss << "\n";
  };
}

}  // namespace detail

/// Runs one command and writes outputs plus manifest.json under inv.out.
inline pipeline::RunManifest execute(const Invocation& inv) {
  const auto& spec = command_spec(inv.command);
  const CliConfig& c = inv.config;
  c.validate();
  for (const auto& r : spec.required)
    if (!inv.inputs.count(r)) throw Error(ErrorCode::BadConfig, inv.command + " needs --" + r);
  for (const auto& [name, _] : inv.inputs)
    if (std::find(spec.required.begin(), spec.required.end(), name) == spec.required.end() &&
        std::find(spec.optional.begin(), spec.optional.end(), name) == spec.optional.end())
      throw Error(ErrorCode::BadConfig, inv.command + " does not take --" + name);

  pipeline::RunManifest man;
  man.command = inv.command;
  man.config = to_json(c);
  man.seeds = c.seeds();
  man.inputs = json::object();
  for (const auto& [name, p] : inv.inputs) {
    const auto h = input_hash(p);
    if (const auto it = inv.expected_hashes.find(name); it != inv.expected_hashes.end() && it->second != h)
      throw Error(ErrorCode::IoError, "input --" + name + " changed since the manifest was written");
    man.inputs[name] = {{"path", fs::absolute(p).lexically_normal().string()}, {"hash", h}};
  }
  const std::string provenance = man.hash();
  const fs::path& out = inv.out;
  fs::create_directories(out);
  const auto& H = c.data.height;
  const auto& W = c.data.width;

  if (inv.command == "gen-data") {
    const auto seed = c.stage_seed("data");
    const auto corpus = data::gen_corpus(H, W, c.data.frames, seed, c.data.n_subjects);
    data::save_corpus(corpus, out / "corpus");
    data::save_sample(data::gen_subject(c.data.subject, H, W, derive_seed(seed, "subject")), out / "subject");
    auto m = c.data.motion;
    m.frames = c.data.frames;
    m = data::fit_motion(m, c.data.subject, H, W);
    data::save_sample(data::gen_motion(m, c.data.subject, H, W, derive_seed(seed, "motion")), out / "motion");
  } else if (inv.command == "pretrain") {
    const auto corpus = data::load_corpus(inv.inputs.at("data"));
    const auto r = pipeline::pretrain(c.model, c.train(pipeline::Stage::Pretrain), corpus, c.table_seed(),
                                      detail::progress(inv, "pretrain", 100));
    pipeline::save_params(r.params, out / "checkpoint");
    detail::write_json(out / "losses.json", {{"losses", r.losses}, {"null_uses", r.null_uses}});
  } else if (inv.command == "train-subject") {
    const auto base = pipeline::load_params(inv.inputs.at("base"));
    const auto sample = data::load_sample(inv.inputs.at("data"));
    const auto r = pipeline::train_subject(c.model, c.train(pipeline::Stage::Subject), base, {sample},
                                           c.make_encoder(), c.table_seed());
    lora::save(r.lora, out / "lora");
    pipeline::save_params(r.projector, out / "projector");
    detail::write_json(out / "losses.json", {{"losses", r.losses},
                                             {"region_losses", r.region_losses},
                                             {"sura_losses", r.sura_losses},
                                             {"max_base_grad", r.max_base_grad}});
  } else if (inv.command == "train-motion") {
    const auto base = pipeline::load_params(inv.inputs.at("base"));
    const auto sample = data::load_sample(inv.inputs.at("data"));
    const auto r =
        pipeline::train_motion(c.model, c.train(pipeline::Stage::Motion), c.flow, base, {sample}, c.table_seed());
    lora::save(r.lora, out / "lora");
    detail::write_json(out / "losses.json",
                       {{"losses", r.losses}, {"temporal_losses", r.temporal_losses}, {"mora_losses", r.mora_losses}});
  } else if (inv.command == "infer") {
    const auto base = pipeline::load_params(inv.inputs.at("base"));
    const auto subject = detail::load_set(inv, "subject", lora::Role::Subject);
    const auto motion = detail::load_set(inv, "motion", lora::Role::Motion);
    pipeline::InferRequest rq{c.infer.prompt, c.infer.frames, H, W, c.sampling()};
    const auto r = pipeline::infer(c.model, base, subject ? &*subject : nullptr, motion ? &*motion : nullptr, rq,
                                   c.table_seed());
    io::save_stns(out / "video.stns", r.video);
    toyvae::write_frames(out / "frames", r.video);
    std::string trace;
    for (const auto& l : r.trace) trace += l + "\n";
    io::write_file(out / "trace.jsonl", trace);
    const auto report =
        detail::score(c, r.video, detail::load_ref(inv, "subject-ref"), detail::load_ref(inv, "motion-ref"), provenance);
    detail::write_json(out / "report.json", report.to_json());
  } else if (inv.command == "eval") {
    const auto video = io::load_stns<float>(inv.inputs.at("video"));
    const auto report =
        detail::score(c, video, detail::load_ref(inv, "subject-ref"), detail::load_ref(inv, "motion-ref"), provenance);
    detail::write_json(out / "report.json", report.to_json());
  } else if (inv.command == "sweep-layers") {
    const auto base = pipeline::load_params(inv.inputs.at("base"));
    const auto sample = data::load_sample(inv.inputs.at("data"));
    const auto metric = c.eval.metric;
    const auto role = metric == eval::MetricId::Subject ? lora::Role::Subject : lora::Role::Motion;
    lora::LoraSet<float> set;
    if (auto given = detail::load_set(inv, "lora", role)) {
      set = std::move(*given);
    } else if (role == lora::Role::Subject) {
      auto t = c.train(pipeline::Stage::Subject);
      t.layer_types = lora::all_types();
      set = pipeline::train_subject(c.model, t, base, {sample}, c.make_encoder(), c.table_seed()).lora;
    } else {
      auto t = c.train(pipeline::Stage::Motion);
      t.layer_types = lora::all_types();
      set = pipeline::train_motion(c.model, t, c.flow, base, {sample}, c.table_seed()).lora;
    }
    lora::save(set, out / "lora");
    const auto table = eval::layer_sweep(c.eval_context(base), set, {sample}, metric);
    auto j = table.to_json();
    j["metric"] = eval::to_string(metric);
    j["provenance"] = provenance;
    detail::write_json(out / "sweep.json", j);
    io::write_file(out / "sweep.csv", table.to_csv());
  } else if (inv.command == "probe-timing") {
    const auto base = pipeline::load_params(inv.inputs.at("base"));
    const auto subject = detail::load_set(inv, "subject", lora::Role::Subject);
    const auto sample = data::load_sample(inv.inputs.at("data"));
    const auto f0 = toyvae::frame(sample.video, 0);
    const auto r = eval::timing_probe(c.eval_context(base), &*subject, nullptr, sample.caption,
                                      f0.reshaped({1, f0.dim(0), f0.dim(1), f0.dim(2)}));
    io::write_file(out / "probe.jsonl", r.to_jsonl());
    detail::write_json(out / "probe.json", {{"spearman_tail", r.spearman_tail},
                                            {"tail", r.tail},
                                            {"steps", r.curve.size()},
                                            {"provenance", provenance}});
  } else if (inv.command == "ablate-combos") {
    const auto base = pipeline::load_params(inv.inputs.at("base"));
    eval::AblationSetup setup{c.train(pipeline::Stage::Subject), c.train(pipeline::Stage::Motion),
                              data::load_sample(inv.inputs.at("subject-ref")),
                              data::load_sample(inv.inputs.at("motion-ref")), c.infer.prompt, {}};
    for (std::size_t k = 0; k < c.eval.ablation_seeds; ++k)
      setup.seeds.push_back(c.stage_seed("ablation." + std::to_string(k)));
    const auto results = eval::combination_ablation(c.eval_context(base), eval::default_combos(), setup);
    json j{{"combos", json::array()}, {"provenance", provenance}};
    for (const auto& r : results) j["combos"].push_back(r.to_json());
    detail::write_json(out / "ablation.json", j);
  }

  man.outputs = pipeline::hash_tree(out);
  man.write(out);
  return man;
}

/// Maps an error to the process exit code: 1 for invalid input, 2 otherwise.
inline int exit_code(ErrorCode c) {
  switch (c) {
    case ErrorCode::NonFiniteProbe:
    case ErrorCode::NonFiniteActivation:
    case ErrorCode::TrainingDiverged:
    case ErrorCode::IoError: return 2;
    default: return 1;
  }
}

}  // namespace smra::cli
