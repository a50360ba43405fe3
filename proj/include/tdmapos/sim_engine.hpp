#pragma once

#include "tdmapos/run_log.hpp"
#include "tdmapos/scenario.hpp"

#include "json.hpp"

#include <filesystem>
#include <span>
#include <vector>

namespace tdmapos {

/// Bookkeeping the engine keeps about itself; used by tests to assert the
/// causality and message-conservation invariants.
struct RunStats {
  std::size_t events = 0;
  std::size_t transmissions = 0;
  std::size_t deliveries = 0;
  std::size_t dropped_deliveries = 0;  // suppressed by drop_link faults
  std::size_t corrupted = 0;
  double max_causality_error = 0.0;  // s, |receive - transmit - flight| over all deliveries
};

struct RunResult {
  std::vector<MeasurementRecord> measurements;
  std::vector<SolutionRecord> solutions;
  std::vector<TruthRecord> truth;
  RunStats stats;
};

/// Runs the scenario from t = 0 to cfg.duration. Output is a pure function of
/// the config (including its seed and fault list).
RunResult run(const ScenarioConfig& cfg);

/// Runs the scenario with extra faults appended to the config's own list.
RunResult inject_fault(const ScenarioConfig& cfg, std::span<const Fault> faults);

/// Writes the three CSV logs plus manifest.json into `dir` (created if needed).
void write_run(const std::filesystem::path& dir, const ScenarioConfig& cfg, const RunResult& result);

/// Reproducibility manifest: canonical config, its hash, seed and code version.
nlohmann::json make_manifest(const ScenarioConfig& cfg, const RunResult& result);

/// FNV-1a over the canonical JSON text of the config.
std::string config_hash(const ScenarioConfig& cfg);

std::string_view code_version();

}  // namespace tdmapos
