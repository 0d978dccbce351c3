// Copyright (c) 2026 The smrabooth authors
// SPDX-License-Identifier: Apache-2.0
//
// Argument parsing for the smra executable. Numerics come from the JSON
// config; flags carry only paths, the sweep metric and verbosity.

#pragma once

#include <CLI11.hpp>

#include "smra/acceptance.hpp"

namespace smra::cli {

namespace detail {

/// Loads --config: a user document resolved against its preset, or a run
/// manifest whose config and inputs are replayed.
inline Invocation load_invocation(const std::string& command, const std::string& path) {
  if (path.empty()) {
    Invocation inv;
    inv.command = command;
    inv.config = parse_config(json::object());
    return inv;
  }
  json doc;
  try {
    doc = json::parse(io::read_file(path));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::BadConfig, path + ": " + e.what());
  }
  if (is_manifest(doc)) {
    auto inv = invocation_from_manifest(doc);
    if (inv.command != command)
      throw Error(ErrorCode::BadConfig, "manifest was written by '" + inv.command + "', not '" + command + "'");
    return inv;
  }
  Invocation inv;
  inv.command = command;
  inv.config = parse_config(doc);
  return inv;
}

inline int selftest(bool quick, const std::string& work, std::ostream& os) {
  acceptance::Options opt;
  opt.quick = quick;
  opt.work = work;
  os << "smra selftest" << (quick ? " (quick)" : "") << "\n";
  bool ok = true;
  acceptance::run(opt, [&](const acceptance::Outcome& o) {
    ok = ok && o.pass;
    os << acceptance::format(o) << std::endl;
  });
  os << (ok ? "all groups passed" : "some groups failed") << "\n";
  return ok ? 0 : 2;
}

}  // namespace detail

/// Entry point; returns the process exit code.
inline int run(int argc, const char* const* argv, std::ostream& os = std::cout, std::ostream& es = std::cerr) {
  CLI::App app{"Subject and motion adapters for a toy video diffusion model", "smra"};
  app.require_subcommand(1);
  app.fallthrough(false);

  struct Sub {
    CLI::App* app;
    std::string config, out = "out";
    std::map<std::string, std::string> paths;
    std::string metric;
    int verbose = 0;
  };
  std::vector<std::unique_ptr<Sub>> subs;
  for (const auto& spec : command_specs()) {
    auto s = std::make_unique<Sub>();
    s->app = app.add_subcommand(spec.name, spec.help);
    s->app->add_option("--config", s->config, "JSON config or a run manifest to replay");
    s->app->add_option("--out", s->out, "output directory")->capture_default_str();
    s->app->add_flag("-v,--verbose", s->verbose, "progress on stderr");
    // Required inputs are checked after --config, since a manifest supplies them.
    for (const auto& n : spec.required) s->app->add_option("--" + n, s->paths[n], "input path (required)");
    for (const auto& n : spec.optional) s->app->add_option("--" + n, s->paths[n], "input path");
    if (spec.name == "sweep-layers")
      s->app->add_option("--metric", s->metric, "subject or motion (overrides eval.metric)")
          ->check(CLI::IsMember({"subject", "motion"}));
    subs.push_back(std::move(s));
  }
  bool quick = false;
  std::string work = "selftest";
  auto* st = app.add_subcommand("selftest", "run the acceptance suite and print a pass/fail table");
  st->add_flag("--quick", quick, "invariant groups only");
  st->add_option("--out", work, "scratch directory")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e, os, es);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (st->parsed()) return detail::selftest(quick, work, os);
    for (auto& s : subs) {
      if (!s->app->parsed()) continue;
      Invocation inv = detail::load_invocation(s->app->get_name(), s->config);
      for (const auto& [name, p] : s->paths)
        if (!p.empty()) {
          inv.inputs[name] = p;
          inv.expected_hashes.erase(name);
        }
      if (!s->metric.empty()) inv.config.eval.metric = eval::parse_metric(s->metric);
      inv.out = s->out;
      inv.verbosity = s->verbose;
      const auto man = execute(inv);
      os << inv.command << ": wrote " << man.outputs.size() << " files to " << inv.out.string() << "\n";
      return 0;
    }
  } catch (const Error& e) {
    es << "error: " << e.what() << "\n";
    return exit_code(e.code());
  } catch (const json::exception& e) {
    es << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    es << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}

}  // namespace smra::cli
