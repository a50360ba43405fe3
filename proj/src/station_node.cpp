#include "tdmapos/station_node.hpp"

#include "tdmapos/errors.hpp"

#include <cmath>
#include <string>

namespace tdmapos {

OffsetSample measure_offset(Timestamp rx_time_local, const Beacon& beacon, const StationConfig& self,
                            const StationConfig& peer) {
  if (peer.id != beacon.sender) throw ContractViolation("measure_offset: beacon was not sent by this peer");
  if (!std::isfinite(rx_time_local.to_double()) || !std::isfinite(beacon.tx_time_local) ||
      !self.position.allFinite() || !peer.position.allFinite()) {
    throw ContractViolation("measure_offset: non-finite input");
  }
  const double flight = (self.position - peer.position).norm() / kSpeedOfLight;
  // One rounding at the end keeps b(a->b) = -b(b->a) exact for frozen clocks.
  const double value =
      (rx_time_local - flight - peer.tx_delay - self.rx_delay) - Timestamp{beacon.tx_time_local};
  return OffsetSample{peer.id, rx_time_local, value};
}

namespace {

OffsetLine fit_line(const std::deque<OffsetSample>& window) {
  // Centre the abscissa on the window mean; absolute local times are large.
  const Timestamp first = window.front().measured_at_local;
  double dt_sum = 0.0;
  for (const auto& s : window) dt_sum += s.measured_at_local - first;
  const Timestamp reference = first + dt_sum / static_cast<double>(window.size());

  double y_mean = 0.0;
  for (const auto& s : window) y_mean += s.value;
  y_mean /= static_cast<double>(window.size());

  double sxx = 0.0;
  double sxy = 0.0;
  for (const auto& s : window) {
    const double x = s.measured_at_local - reference;
    sxx += x * x;
    sxy += x * (s.value - y_mean);
  }
  return OffsetLine{reference, y_mean, sxy / sxx};
}

}  // namespace

OffsetTrack update_track(OffsetTrack track, const OffsetSample& sample) {
  if (sample.peer != track.peer) throw ContractViolation("update_track: sample belongs to another peer");
  if (!std::isfinite(sample.value)) throw ContractViolation("update_track: non-finite offset sample");
  if (!track.window.empty() && !(sample.measured_at_local > track.window.back().measured_at_local)) {
    throw StalenessError("offset sample for peer " + std::to_string(sample.peer) + " is not newer than the track");
  }
  track.window.push_back(sample);
  while (track.window.size() > track.capacity) track.window.pop_front();
  if (track.window.size() >= 2) {
    track.fit = fit_line(track.window);
  } else {
    track.fit.reset();
  }
  return track;
}

Extrapolation extrapolate_offset(const OffsetTrack& track, Timestamp target_local) {
  if (track.window.size() < 2 || !track.fit) {
    throw InsufficientHistory("offset track for peer " + std::to_string(track.peer) + " has fewer than 2 samples");
  }
  return Extrapolation{track.fit->at(target_local), target_local - track.window.back().measured_at_local};
}

Beacon build_beacon(const StationConfig& self, const SlotSchedule& schedule, std::int64_t slot_index,
                    const std::map<DeviceId, OffsetTrack>& tracks, double max_age) {
  if (slot_index < 0 || schedule.owner(slot_index) != self.id) {
    throw SchedulingError("slot " + std::to_string(slot_index) + " is not owned by station " +
                          std::to_string(self.id));
  }
  Beacon b;
  b.sender = self.id;
  b.slot_index = static_cast<std::uint32_t>(slot_index);
  b.tx_time_local = schedule.planned_tx_local(slot_index);
  const Timestamp tx{b.tx_time_local};
  for (const auto& [peer, track] : tracks) {
    if (peer == self.id || track.window.size() < 2) continue;
    const auto e = extrapolate_offset(track, tx);
    if (e.age < 0.0 || e.age > max_age) continue;
    b.offsets.push_back(OffsetEntry{peer, e.value, e.age});
  }
  return b;
}

StationNode::StationNode(StationConfig self, std::size_t track_window, double max_offset_age)
    : self_(std::move(self)), track_window_(track_window), max_offset_age_(max_offset_age) {}

OffsetSample StationNode::on_receive(Timestamp rx_time_local, const Beacon& beacon, const StationConfig& peer) {
  const auto sample = measure_offset(rx_time_local, beacon, self_, peer);
  auto it = tracks_.find(peer.id);
  if (it == tracks_.end()) {
    it = tracks_.emplace(peer.id, OffsetTrack{peer.id, track_window_, {}, std::nullopt}).first;
  }
  it->second = update_track(std::move(it->second), sample);
  return sample;
}

Beacon StationNode::make_beacon(const SlotSchedule& schedule, std::int64_t slot_index) const {
  return build_beacon(self_, schedule, slot_index, tracks_, max_offset_age_);
}

}  // namespace tdmapos
