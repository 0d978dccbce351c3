// Copyright (c) 2026 The smrabooth authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <sstream>

#include "smra/cli.hpp"

namespace smra::cli {
namespace {

namespace fs = std::filesystem;

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::IoError;
}

struct Run {
  int rc;
  std::string out, err;
};

Run cli(std::vector<std::string> args) {
  args.insert(args.begin(), "smra");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream os, es;
  const int rc = run(static_cast<int>(argv.size()), argv.data(), os, es);
  return {rc, os.str(), es.str()};
}

json tiny_user() {
  return {{"seed", 5},
          {"model", {{"d_model", 16}, {"n_blocks", 1}, {"n_heads", 2}, {"d_ffn", 32}, {"text_buckets", 64}}},
          {"data", {{"height", 16}, {"width", 16}, {"frames", 5}, {"n_subjects", 1}}},
          {"pretrain", {{"steps", 2}}},
          {"subject", {{"steps", 1}, {"rank", 2}}},
          {"motion", {{"steps", 1}, {"rank", 2}}},
          {"flow", {{"iters", 2}}},
          {"sampler", {{"steps", 2}}},
          {"eval", {{"samples_per_item", 1}}},
          {"infer", {{"frames", 5}}}};
}

class SeedEnv {
 public:
  explicit SeedEnv(const char* v) {
    if (const char* old = std::getenv("SMRA_SEED")) saved_ = old;
    if (v)
      ::setenv("SMRA_SEED", v, 1);
    else
      ::unsetenv("SMRA_SEED");
  }
  ~SeedEnv() {
    if (saved_)
      ::setenv("SMRA_SEED", saved_->c_str(), 1);
    else
      ::unsetenv("SMRA_SEED");
  }

 private:
  std::optional<std::string> saved_;
};

TEST(Config, PresetsRoundTripThroughJson) {
  for (const auto& name : preset_names()) {
    const auto c = preset(name);
    EXPECT_NO_THROW(c.validate()) << name;
    EXPECT_EQ(to_json(from_full_json(to_json(c))), to_json(c)) << name;
  }
  EXPECT_EQ(code_of([] { preset("huge"); }), ErrorCode::BadConfig);
}

TEST(Config, DeskPresetValues) {
  SeedEnv env(nullptr);
  const auto c = parse_config(json::object());
  EXPECT_EQ(c.preset, "desk");
  EXPECT_EQ(c.model.n_blocks, 2u);
  EXPECT_EQ(c.data.frames, 9u);
  EXPECT_EQ(c.subject.rank, 8u);
  EXPECT_EQ(c.motion.rank, 16u);
  EXPECT_EQ(c.sampler.steps, 50);
  EXPECT_EQ(c.sampler.cfg_scale, 5.0);
  EXPECT_EQ(c.sampler.subject_schedule, (lora::ScaleSchedule{15, 0.5, 1.0}));
  EXPECT_EQ(c.pretrain.cond_dropout, 0.1);
  EXPECT_EQ(c.subject.cond_dropout, 0.0);
  const auto p = parse_config({{"preset", "paper-scale"}});
  EXPECT_EQ(p.subject.rank, 32u);
  EXPECT_EQ(p.motion.rank, 64u);
  EXPECT_EQ(p.subject.lr, 1e-4);
}

TEST(Config, PartialDocumentsMergeIntoThePreset) {
  SeedEnv env(nullptr);
  const auto c = parse_config({{"subject", {{"lr", 0.02}}}, {"model", {{"d_model", 32}}}});
  EXPECT_EQ(c.subject.lr, 0.02);
  EXPECT_EQ(c.subject.steps, 300);
  EXPECT_EQ(c.model.d_model, 32u);
  EXPECT_EQ(c.model.n_heads, 4u);
}

TEST(Config, UnknownKeysAreRejected) {
  SeedEnv env(nullptr);
  EXPECT_EQ(code_of([] { parse_config({{"learning_rate", 1}}); }), ErrorCode::BadConfig);
  EXPECT_EQ(code_of([] { parse_config({{"subject", {{"lrr", 1}}}}); }), ErrorCode::BadConfig);
  EXPECT_EQ(code_of([] { parse_config(json::array()); }), ErrorCode::BadConfig);
  EXPECT_EQ(code_of([] { parse_config({{"subject", {{"lr", "fast"}}}}); }), ErrorCode::BadConfig);
}

TEST(Config, ValidationCodes) {
  SeedEnv env(nullptr);
  EXPECT_EQ(code_of([] { parse_config({{"data", {{"frames", 6}}}}); }), ErrorCode::BadFrameCount);
  EXPECT_EQ(code_of([] { parse_config({{"data", {{"height", 18}}}}); }), ErrorCode::BadResolution);
  EXPECT_EQ(code_of([] { parse_config({{"infer", {{"prompt", "  "}}}}); }), ErrorCode::EmptyPrompt);
  EXPECT_EQ(code_of([] { parse_config({{"model", {{"n_heads", 3}}}}); }), ErrorCode::BadConfig);
}

TEST(Config, SeedEnvironmentOverride) {
  {
    SeedEnv env("77");
    EXPECT_EQ(parse_config({{"seed", 3}}).seed, 77u);
    EXPECT_EQ(parse_config({{"seed", 3}}, false).seed, 3u);
  }
  {
    SeedEnv env("x7");
    EXPECT_EQ(code_of([] { parse_config(json::object()); }), ErrorCode::BadConfig);
  }
  SeedEnv env(nullptr);
  EXPECT_EQ(parse_config({{"seed", 3}}).seed, 3u);
}

TEST(Config, DerivedSeedsDifferPerStage) {
  SeedEnv env(nullptr);
  const auto c = parse_config({{"seed", 1}});
  const auto s = c.seeds();
  std::set<std::uint64_t> seen;
  for (const auto& [k, v] : s.items())
    if (k != "seed") seen.insert(v.get<std::uint64_t>());
  EXPECT_EQ(seen.size(), s.size() - 1);
  EXPECT_EQ(c.train(pipeline::Stage::Subject).seed, c.stage_seed("subject"));
  EXPECT_EQ(c.train(pipeline::Stage::Subject).stage, pipeline::Stage::Subject);
  EXPECT_EQ(c.sampling().seed, c.stage_seed("sampler"));
  EXPECT_NE(parse_config({{"seed", 2}}).table_seed(), c.table_seed());
}

TEST(Cli, HelpAndParseErrors) {
  EXPECT_EQ(cli({"--help"}).rc, 0);
  EXPECT_EQ(cli({"infer", "--help"}).rc, 0);
  EXPECT_EQ(cli({}).rc, 1);
  EXPECT_EQ(cli({"frobnicate"}).rc, 1);
  EXPECT_EQ(cli({"infer", "--no-such-flag"}).rc, 1);
  EXPECT_EQ(cli({"sweep-layers", "--metric", "speed"}).rc, 1);
}

TEST(Cli, ExitCodes) {
  SeedEnv env(nullptr);
  const auto dir = fs::temp_directory_path() / "smra_cli_codes";
  fs::remove_all(dir);
  fs::create_directories(dir);
  EXPECT_EQ(cli({"pretrain", "--out", (dir / "o").string()}).rc, 1);  // missing --data
  io::write_file(dir / "bad.json", "{\"nope\": 1}");
  EXPECT_EQ(cli({"gen-data", "--config", (dir / "bad.json").string()}).rc, 1);
  io::write_file(dir / "broken.json", "{");
  EXPECT_EQ(cli({"gen-data", "--config", (dir / "broken.json").string()}).rc, 1);
  EXPECT_EQ(cli({"gen-data", "--config", (dir / "absent.json").string()}).rc, 2);
  const auto r = cli({"pretrain", "--data", (dir / "absent").string(), "--out", (dir / "o").string()});
  EXPECT_EQ(r.rc, 2);
  EXPECT_NE(r.err.find("error:"), std::string::npos);
  EXPECT_EQ(exit_code(ErrorCode::TrainingDiverged), 2);
  EXPECT_EQ(exit_code(ErrorCode::BadSpec), 1);
  fs::remove_all(dir);
}

TEST(Cli, EndToEndWithManifestReplay) {
  SeedEnv env(nullptr);
  const auto dir = fs::temp_directory_path() / "smra_cli_e2e";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const auto cfg = (dir / "cfg.json").string();
  io::write_file(cfg, tiny_user().dump());
  const auto p = [&](const char* s) { return (dir / s).string(); };

  ASSERT_EQ(cli({"gen-data", "--config", cfg, "--out", p("data")}).rc, 0);
  EXPECT_TRUE(fs::exists(dir / "data" / "corpus"));
  ASSERT_EQ(cli({"pretrain", "--config", cfg, "--data", p("data/corpus"), "--out", p("base")}).rc, 0);
  ASSERT_EQ(cli({"train-subject", "--config", cfg, "--base", p("base/checkpoint"), "--data", p("data/subject"),
                 "--out", p("subj")})
                .rc,
            0);
  ASSERT_EQ(cli({"train-motion", "--config", cfg, "--base", p("base/checkpoint"), "--data", p("data/motion"),
                 "--out", p("mot")})
                .rc,
            0);
  const auto r = cli({"infer", "--config", cfg, "--base", p("base/checkpoint"), "--subject", p("subj/lora"),
                      "--motion", p("mot/lora"), "--subject-ref", p("data/subject"), "--motion-ref", p("data/motion"),
                      "--out", p("inf")});
  ASSERT_EQ(r.rc, 0) << r.err;
  const auto video = io::load_stns<float>(dir / "inf" / "video.stns");
  EXPECT_EQ(video.dims(), (Dims{5, 16, 16, 3}));
  const auto man = json::parse(io::read_file(dir / "inf" / "manifest.json"));
  EXPECT_EQ(man.at("command"), "infer");
  EXPECT_EQ(man.at("config").at("model").at("d_model"), 16);
  EXPECT_TRUE(man.at("inputs").contains("base"));
  EXPECT_TRUE(man.at("outputs").contains("video.stns"));

  // Replaying the manifest reproduces every output byte for byte.
  ASSERT_EQ(cli({"infer", "--config", p("inf/manifest.json"), "--out", p("replay")}).rc, 0);
  EXPECT_EQ(pipeline::hash_tree(dir / "replay"), pipeline::hash_tree(dir / "inf"));
  {
    SeedEnv other("123");
    ASSERT_EQ(cli({"infer", "--config", p("inf/manifest.json"), "--out", p("replay2")}).rc, 0);
    EXPECT_EQ(io::file_hash(dir / "replay2" / "video.stns"), io::file_hash(dir / "inf" / "video.stns"));
  }
  EXPECT_EQ(cli({"eval", "--config", p("inf/manifest.json"), "--out", p("x")}).rc, 1);

  // A changed input is detected on replay.
  fs::copy(dir / "base", dir / "base2", fs::copy_options::recursive);
  auto m2 = man;
  m2["inputs"]["base"]["path"] = (dir / "base2" / "checkpoint").string();
  io::write_file(dir / "m2.json", m2.dump());
  EXPECT_EQ(cli({"infer", "--config", p("m2.json"), "--out", p("replay3")}).rc, 0);
  io::write_file(dir / "base2" / "checkpoint" / "params.json", "{}");
  EXPECT_EQ(cli({"infer", "--config", p("m2.json"), "--out", p("replay4")}).rc, 2);

  ASSERT_EQ(cli({"eval", "--config", cfg, "--video", p("inf/video.stns"), "--subject-ref", p("data/subject"),
                 "--out", p("ev")})
                .rc,
            0);
  const auto rep = json::parse(io::read_file(dir / "ev" / "report.json"));
  EXPECT_FALSE(rep.empty());
  fs::remove_all(dir);
}

}  // namespace
}  // namespace smra::cli
