#pragma once

#include "tdmapos/scenario.hpp"
#include "tdmapos/tdma_protocol.hpp"

#include <deque>
#include <limits>
#include <map>
#include <optional>

namespace tdmapos {

/// One inter-station offset measurement: this station's clock minus the
/// peer's clock, observed at `measured_at_local` on this station's clock.
struct OffsetSample {
  DeviceId peer = 0;
  Timestamp measured_at_local;
  double value = 0.0;  // s
};

/// Least-squares line through a track's window, anchored at `reference`.
struct OffsetLine {
  Timestamp reference;
  double offset_at_reference = 0.0;  // s
  double drift = 0.0;                // s/s

  double at(Timestamp t) const { return offset_at_reference + drift * (t - reference); }
};

struct OffsetTrack {
  DeviceId peer = 0;
  std::size_t capacity = 8;
  std::deque<OffsetSample> window;
  std::optional<OffsetLine> fit;  // present once the window holds two samples
};

/// Solves the reception model for the offset between two stations:
///   value = T_rx - T_tx - |p_self - p_peer| / c - d_tx(peer) - d_rx(self).
OffsetSample measure_offset(Timestamp rx_time_local, const Beacon& beacon, const StationConfig& self,
                            const StationConfig& peer);

/// Appends a sample, evicting the oldest beyond capacity, and refits the line.
/// Throws StalenessError unless the sample is strictly newer than the window.
OffsetTrack update_track(OffsetTrack track, const OffsetSample& sample);

struct Extrapolation {
  double value = 0.0;  // s
  double age = 0.0;    // s, target minus newest sample time
};

/// Evaluates the fitted line at `target_local`. Throws InsufficientHistory
/// for tracks with fewer than two samples.
Extrapolation extrapolate_offset(const OffsetTrack& track, Timestamp target_local);

/// Assembles the beacon for `slot_index`. Every peer track that can be
/// extrapolated, and whose newest sample is at most `max_age` old at the
/// transmit instant, contributes one entry. Throws SchedulingError when the
/// slot belongs to another station.
Beacon build_beacon(const StationConfig& self, const SlotSchedule& schedule, std::int64_t slot_index,
                    const std::map<DeviceId, OffsetTrack>& tracks,
                    double max_age = std::numeric_limits<double>::infinity());

/// Base-station state machine: owns the per-peer offset tracks.
class StationNode {
 public:
  StationNode(StationConfig self, std::size_t track_window, double max_offset_age);

  const StationConfig& config() const { return self_; }
  const std::map<DeviceId, OffsetTrack>& tracks() const { return tracks_; }

  /// Handles a beacon heard from `peer`, timestamped locally at `rx_time_local`.
  OffsetSample on_receive(Timestamp rx_time_local, const Beacon& beacon, const StationConfig& peer);

  Beacon make_beacon(const SlotSchedule& schedule, std::int64_t slot_index) const;

 private:
  StationConfig self_;
  std::size_t track_window_;
  double max_offset_age_;
  std::map<DeviceId, OffsetTrack> tracks_;
};

}  // namespace tdmapos
