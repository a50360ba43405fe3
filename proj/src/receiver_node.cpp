#include "tdmapos/receiver_node.hpp"

#include "tdmapos/errors.hpp"

#include <algorithm>
#include <set>

namespace tdmapos {

std::size_t MeasurementSet::distinct_stations() const {
  std::set<DeviceId> ids;
  for (const auto& m : measurements) ids.insert(m.sender);
  return ids.size();
}

Pseudorange form_pseudorange(Timestamp rx_time_local, const Beacon& beacon) {
  Pseudorange p;
  p.rx_time_local = rx_time_local;
  p.sender = beacon.sender;
  p.rho = kSpeedOfLight * (rx_time_local - Timestamp{beacon.tx_time_local});
  p.payload_offsets = beacon.offsets;
  p.slot_index = beacon.slot_index;
  return p;
}

Reference select_reference(std::span<const Pseudorange> buffer) {
  if (buffer.empty()) throw ContractViolation("select_reference: empty buffer");
  auto better = [](const Pseudorange& a, const Pseudorange& b) {
    if (a.payload_offsets.size() != b.payload_offsets.size())
      return a.payload_offsets.size() > b.payload_offsets.size();
    if (a.rx_time_local != b.rx_time_local) return a.rx_time_local < b.rx_time_local;
    return a.sender < b.sender;
  };
  const Pseudorange* best = &buffer.front();
  for (const auto& m : buffer)
    if (better(m, *best)) best = &m;
  return Reference{best->sender, best->rx_time_local};
}

std::optional<double> resolve_cross_offset(const Pseudorange& m, DeviceId reference_station) {
  if (m.sender == reference_station) throw ContractViolation("resolve_cross_offset: measurement is from the reference");
  // The payload holds sender clock minus peer clock, which is exactly the
  // rebasing term when the peer is the reference station.
  for (const auto& e : m.payload_offsets)
    if (e.peer == reference_station) return e.offset;
  return std::nullopt;
}

MeasurementSet collect_set(std::span<const Pseudorange> buffer, const SolveWindow& window) {
  MeasurementSet set;
  if (buffer.empty()) return set;

  std::size_t first = 0;
  if (window.kind == SolveWindow::Kind::kCount) {
    first = buffer.size() > window.count ? buffer.size() - window.count : 0;
  } else {
    const Timestamp newest = buffer.back().rx_time_local;
    first = buffer.size();
    while (first > 0 && newest - buffer[first - 1].rx_time_local < window.duration) --first;
  }
  const auto recent = buffer.subspan(first);
  if (recent.empty()) return set;

  const auto ref = select_reference(recent);
  set.reference_station = ref.station;
  set.reference_epoch = ref.epoch;
  for (const auto& m : recent) {
    if (m.sender == ref.station) {
      set.measurements.push_back(m);
      set.cross_offsets.push_back(0.0);
      continue;
    }
    if (auto beta = resolve_cross_offset(m, ref.station)) {
      set.measurements.push_back(m);
      set.cross_offsets.push_back(*beta);
    } else {
      set.dropped.push_back(DroppedMeasurement{m, kOffsetUnavailable});
    }
  }
  return set;
}

void require_diversity(const MeasurementSet& set, std::size_t min_measurements, std::size_t min_stations) {
  const auto n = set.measurements.size();
  const auto k = set.distinct_stations();
  if (n < min_measurements || k < min_stations) {
    throw UnderdeterminedSet("underdetermined set: " + std::to_string(n) + " measurements from " +
                             std::to_string(k) + " stations (need " + std::to_string(min_measurements) +
                             " from " + std::to_string(min_stations) + ")");
  }
}

MeasurementSet assemble_set(std::span<const Pseudorange> buffer, const SolveWindow& window,
                            std::size_t min_measurements, std::size_t min_stations) {
  auto set = collect_set(buffer, window);
  require_diversity(set, min_measurements, min_stations);
  return set;
}

}  // namespace tdmapos
