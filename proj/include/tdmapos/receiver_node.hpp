#pragma once

#include "tdmapos/tdma_protocol.hpp"

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace tdmapos {

/// Receiver time-of-arrival measurement. `rho` is c times the interval
/// between the local reception time and the beacon's transmit time; it
/// still contains range, clock offset and both hardware delays.
struct Pseudorange {
  Timestamp rx_time_local;
  DeviceId sender = 0;
  double rho = 0.0;  // m
  std::vector<OffsetEntry> payload_offsets;
  std::int64_t slot_index = 0;
};

struct DroppedMeasurement {
  Pseudorange measurement;
  std::string reason;
};

inline constexpr const char* kOffsetUnavailable = "offset unavailable";

/// Measurements rebased onto one reference station and epoch.
/// `cross_offsets[k]` is the clock of measurement k's sender minus the clock
/// of the reference station (zero for the reference station itself).
struct MeasurementSet {
  std::vector<Pseudorange> measurements;
  std::vector<double> cross_offsets;  // s
  DeviceId reference_station = 0;
  Timestamp reference_epoch;
  std::vector<DroppedMeasurement> dropped;

  std::size_t distinct_stations() const;
};

struct Reference {
  DeviceId station = 0;
  Timestamp epoch;
};

/// Which slice of the buffer feeds one solve: the newest `count`
/// measurements, or those received less than `duration` (receiver clock)
/// before the newest one.
struct SolveWindow {
  enum class Kind { kCount, kDuration };
  Kind kind = Kind::kDuration;
  std::size_t count = 0;
  double duration = 0.0;

  static SolveWindow last(std::size_t n) { return {Kind::kCount, n, 0.0}; }
  static SolveWindow span(double seconds) { return {Kind::kDuration, 0, seconds}; }
};

Pseudorange form_pseudorange(Timestamp rx_time_local, const Beacon& beacon);

/// Picks the measurement carrying the largest offset table; ties go to the
/// earliest reception, then the lowest sender id.
Reference select_reference(std::span<const Pseudorange> buffer);

/// Clock of m's sender minus clock of `reference_station`, read from m's own
/// payload. std::nullopt when the payload has no entry for the reference.
std::optional<double> resolve_cross_offset(const Pseudorange& m, DeviceId reference_station);

/// Window selection, reference choice and offset resolution, without the
/// diversity check. Unresolvable measurements land in `dropped`.
MeasurementSet collect_set(std::span<const Pseudorange> buffer, const SolveWindow& window);

/// collect_set plus the diversity requirement. Throws UnderdeterminedSet when
/// fewer than `min_measurements` measurements or `min_stations` stations
/// survive.
MeasurementSet assemble_set(std::span<const Pseudorange> buffer, const SolveWindow& window,
                            std::size_t min_measurements = 8, std::size_t min_stations = 4);

void require_diversity(const MeasurementSet& set, std::size_t min_measurements, std::size_t min_stations);

}  // namespace tdmapos
