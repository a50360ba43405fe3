#pragma once

#include "oracles.hpp"

#include "tdmapos/nav_solver.hpp"
#include "tdmapos/random.hpp"
#include "tdmapos/scenario.hpp"

#include "json.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace fixtures {

std::filesystem::path source_path(const std::string& relative);
std::filesystem::path cli_path();

/// Materialized document of a shipped scenario ("paper-static", ...).
nlohmann::json scenario_doc(const std::string& name);
tdmapos::ScenarioConfig scenario(const std::string& name);

/// Zeroes every noise source in a materialized document.
void silence(nlohmann::json& doc);

/// Fresh empty directory under the system temp dir.
std::filesystem::path scratch_dir(const std::string& name);

std::string read_file(const std::filesystem::path& file);

/// Measurement set built with the oracle forward model: one beacon per slot
/// for `superframes` superframes of cfg's schedule, the first one as
/// reference. Cross offsets come from the stations' initial clock offsets.
struct SyntheticSet {
  tdmapos::MeasurementSet set;
  tdmapos::StationTable stations;
  tdmapos::NavState truth;
  double rx_delay = 0.0;
  std::vector<oracle::Observation> observations;
};

SyntheticSet synthetic_set(const tdmapos::ScenarioConfig& cfg, const tdmapos::NavState& truth, int superframes,
                           double range_sigma, tdmapos::RandomStream& rng);

oracle::State to_oracle(const tdmapos::NavState& s);
tdmapos::NavState from_oracle(const oracle::State& s);
oracle::Vec3 to_oracle(const tdmapos::Vec3& v);

}  // namespace fixtures
