#pragma once

#include "tdmapos/timebase.hpp"
#include "tdmapos/units.hpp"

#include "json.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace tdmapos {

using DeviceId = std::uint8_t;

struct StationConfig {
  DeviceId id = 0;
  Vec3 position = Vec3::Zero();
  double tx_delay = 0.0;  // s
  double rx_delay = 0.0;  // s
  ClockModel clock;
};

/// Receiver path. Circular motion stays in the horizontal plane through `center`.
struct Trajectory {
  enum class Kind { kStatic, kCircular };
  Kind kind = Kind::kStatic;
  Vec3 position = Vec3::Zero();  // static
  Vec3 center = Vec3::Zero();    // circular
  double radius = 0.0;           // m
  double angular_rate = 0.0;     // rad/s
  double initial_phase = 0.0;    // rad

  static Trajectory fixed(const Vec3& p);
  static Trajectory circular(const Vec3& center, double radius, double angular_rate, double initial_phase);
};

Vec3 position_at(const Trajectory& traj, double t);
Vec3 velocity_at(const Trajectory& traj, double t);

struct ReceiverConfig {
  DeviceId id = 0;
  Trajectory trajectory;
  double rx_delay = 0.0;
  ClockModel clock;
};

/// Station-side offset tracking knobs.
struct TrackingConfig {
  std::size_t window = 8;                  // samples per peer line fit
  double max_offset_age_superframes = 1.5; // older extrapolations are left out of beacons
};

enum class SolveMode { kDynamic, kStatic };

/// Receiver-side solve policy.
struct SolverConfig {
  SolveMode mode = SolveMode::kDynamic;
  double window_superframes = 2.0;
  int max_iterations = 20;
  double step_tolerance = 1e-6;   // m
  bool gating = true;
  double gate_threshold = 3.0;    // standardized-residual multiples
  double range_sigma = 0.0;       // m, a-priori ranging noise for gating; 0 = estimate from residuals
};

struct CorruptPseudorange {
  DeviceId receiver = 0;
  std::int64_t slot = 0;  // slot index of the beacon whose pseudorange is biased
  double bias_m = 0.0;
};

/// Both directions of the link between two devices are silent for
/// transmissions departing in [start, end) true seconds.
struct DropLink {
  DeviceId a = 0;
  DeviceId b = 0;
  double start = 0.0;
  double end = 0.0;
};

using Fault = std::variant<CorruptPseudorange, DropLink>;

struct ScenarioConfig {
  std::vector<StationConfig> stations;
  std::vector<ReceiverConfig> receivers;
  double slot_duration = 1e-3;
  std::vector<DeviceId> superframe;
  double guard_fraction = 0.1;
  double duration = 10.0;
  double range_noise_std = 0.0;        // m
  double station_toa_noise_std = 0.0;  // m
  std::uint64_t rng_seed = 0;
  TrackingConfig tracking;
  SolverConfig solver;
  std::vector<Fault> faults;

  double superframe_duration() const { return slot_duration * static_cast<double>(superframe.size()); }
  const StationConfig& station(DeviceId id) const;
  const ReceiverConfig& receiver(DeviceId id) const;
  bool has_station(DeviceId id) const;
  bool has_receiver(DeviceId id) const;
};

/// Full document with every optional key filled in with its default.
nlohmann::json materialize(const nlohmann::json& doc);

/// Sets `dotted.key=value` on a materialized document. Array elements are
/// addressed by index (`stations.0.tx_delay`). The value is parsed as JSON
/// when possible, otherwise taken as a string. Unknown keys raise ConfigError.
void apply_override(nlohmann::json& doc, std::string_view assignment);

/// Parses and validates a scenario document.
ScenarioConfig parse_scenario(const nlohmann::json& doc);
ScenarioConfig load_scenario(std::string_view text);
nlohmann::json read_scenario_document(const std::filesystem::path& path);

/// Re-validates an in-memory config (used after programmatic edits).
void validate(const ScenarioConfig& cfg);

nlohmann::json to_json(const ScenarioConfig& cfg);

}  // namespace tdmapos
