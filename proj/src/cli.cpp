#include "tdmapos/cli.hpp"

#include "tdmapos/analysis.hpp"
#include "tdmapos/errors.hpp"
#include "tdmapos/sim_engine.hpp"

#include "CLI11.hpp"

#include <fmt/format.h>

#include <cmath>
#include <map>

namespace tdmapos {

namespace {

struct RunOptions {
  std::string scenario;
  std::string out_dir;
  std::vector<std::string> overrides;
  std::size_t repeat = 1;
  std::optional<std::uint64_t> seed_base;
};

struct AnalyzeOptions {
  std::string run_dir;
  std::vector<std::string> baselines;
  std::vector<int> receivers;
};

DeviceId parse_id(const std::string& text, const std::string& what) {
  std::size_t used = 0;
  int v = -1;
  try {
    v = std::stoi(text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != text.size() || v < 0 || v > 255) throw ConfigError(what, "'" + text + "' is not a device id");
  return static_cast<DeviceId>(v);
}

void print_run_summary(std::ostream& out, const ScenarioConfig& cfg, const RunResult& result) {
  struct Tally {
    std::size_t epochs = 0, converged = 0, with_truth = 0;
    double sq = 0.0;
  };
  std::map<DeviceId, Tally> tally;
  std::map<std::pair<DeviceId, std::int64_t>, const TruthRecord*> truth;
  for (const auto& t : result.truth) truth[{t.receiver, t.epoch}] = &t;
  for (const auto& s : result.solutions) {
    auto& t = tally[s.receiver];
    ++t.epochs;
    if (!s.converged || s.status != "ok") continue;
    ++t.converged;
    if (auto it = truth.find({s.receiver, s.epoch}); it != truth.end()) {
      t.sq += (s.state.position - it->second->position).squaredNorm();
      ++t.with_truth;
    }
  }
  for (const auto& r : cfg.receivers) {
    const auto& t = tally[r.id];
    const double rate = t.epochs ? 100.0 * static_cast<double>(t.converged) / static_cast<double>(t.epochs) : 0.0;
    const double rms = t.with_truth ? std::sqrt(t.sq / static_cast<double>(t.with_truth)) : std::nan("");
    out << fmt::format("receiver {:>3}: {} epochs, {:.1f}% converged, rms error {:.4f} m\n", r.id, t.epochs, rate, rms);
  }
}

int cmd_run(const RunOptions& opt, std::ostream& out) {
  auto doc = materialize(read_scenario_document(opt.scenario));
  for (const auto& o : opt.overrides) apply_override(doc, o);
  const std::filesystem::path base(opt.out_dir);

  for (std::size_t i = 0; i < opt.repeat; ++i) {
    auto run_doc = doc;
    if (opt.seed_base) run_doc["seed"] = *opt.seed_base + i;
    const ScenarioConfig cfg = parse_scenario(run_doc);
    const auto dir = opt.repeat > 1 ? base / fmt::format("run_{:04d}", i) : base;
    const RunResult result = run(cfg);
    write_run(dir, cfg, result);
    out << fmt::format("{} (seed {}, {} solves)\n", dir.string(), cfg.rng_seed, result.solutions.size());
    print_run_summary(out, cfg, result);
  }
  return kExitOk;
}

int cmd_analyze(const AnalyzeOptions& opt, std::ostream& out) {
  AnalysisRequest req;
  for (int id : opt.receivers) req.receivers.push_back(parse_id(std::to_string(id), "--receiver"));
  for (const auto& pair : opt.baselines) {
    const auto comma = pair.find(',');
    if (comma == std::string::npos) throw ConfigError("--baseline", "expected a,b but got '" + pair + "'");
    req.baselines.emplace_back(parse_id(pair.substr(0, comma), "--baseline"),
                               parse_id(pair.substr(comma + 1), "--baseline"));
  }
  const auto result = analyze_run(opt.run_dir, req);

  out << fmt::format("{:>8} {:>8} {:>10} {:>10} {:>10} {:>10}\n", "receiver", "epochs", "std_x[m]", "std_y[m]",
                     "std_z[m]", "rms[m]");
  for (const auto& r : result.summary["receivers"]) {
    if (r.contains("error")) {
      out << fmt::format("{:>8} {:>8} {}\n", r["id"].get<int>(), r["converged_epochs"].get<std::size_t>(),
                         r["error"].get<std::string>());
      continue;
    }
    out << fmt::format("{:>8} {:>8} {:>10.4f} {:>10.4f} {:>10.4f} {:>10.4f}\n", r["id"].get<int>(),
                       r["converged_epochs"].get<std::size_t>(), r["std_x"].get<double>(), r["std_y"].get<double>(),
                       r["std_z"].get<double>(), r["rms_error"].get<double>());
  }
  for (const auto& b : result.baselines) {
    out << fmt::format("baseline {}-{}: mean {:.4f} m, std {:.4f} m over {} epochs\n", b.a, b.b, b.mean_length,
                       b.std_length, b.series.size());
  }
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"TDMA time-of-arrival positioning simulator"};
  app.require_subcommand(1);

  RunOptions run_opt;
  auto* run_cmd = app.add_subcommand("run", "simulate a scenario and write logs");
  run_cmd->add_option("scenario", run_opt.scenario, "scenario JSON file")->required();
  run_cmd->add_option("--out", run_opt.out_dir, "output directory")->required();
  run_cmd->add_option("--set", run_opt.overrides, "dotted.key=value override (repeatable)");
  run_cmd->add_option("--repeat", run_opt.repeat, "number of independent runs")->check(CLI::PositiveNumber);
  run_cmd->add_option("--seed-base", run_opt.seed_base, "seed of the first run; run i uses seed-base + i");

  AnalyzeOptions an_opt;
  auto* an_cmd = app.add_subcommand("analyze", "compute statistics from a run directory");
  an_cmd->add_option("run_dir", an_opt.run_dir, "directory written by run")->required();
  an_cmd->add_option("--baseline", an_opt.baselines, "receiver pair a,b (repeatable)");
  an_cmd->add_option("--receiver", an_opt.receivers, "restrict to receiver id (repeatable)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (run_cmd->parsed()) return cmd_run(run_opt, out);
    return cmd_analyze(an_opt, out);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const DataError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const PairingError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
}

}  // namespace tdmapos
