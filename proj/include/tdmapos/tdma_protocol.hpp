#pragma once

#include "tdmapos/scenario.hpp"

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace tdmapos {

/// One superframe of exclusive slots, repeated forever from t = 0.
struct SlotSchedule {
  double slot_duration = 1e-3;
  std::vector<DeviceId> assignment;
  double guard_fraction = 0.1;

  double superframe_duration() const { return slot_duration * static_cast<double>(assignment.size()); }
  DeviceId owner(std::int64_t slot_index) const;
  /// Planned transmit instant of a slot, on the owner's local clock.
  double planned_tx_local(std::int64_t slot_index) const;
};

SlotSchedule make_schedule(const ScenarioConfig& cfg);

struct SlotInfo {
  DeviceId station = 0;
  std::int64_t slot_index = 0;
  double slot_start = 0.0;
};

/// Which station owns the slot containing `time` (time >= 0).
SlotInfo transmitter_of(const SlotSchedule& schedule, double time);

/// One entry of a beacon's offset table: sender clock minus peer clock,
/// extrapolated to the beacon's transmit instant, and how old the newest
/// underlying measurement was at that instant.
struct OffsetEntry {
  DeviceId peer = 0;
  double offset = 0.0;  // s
  double age = 0.0;     // s

  friend bool operator==(const OffsetEntry&, const OffsetEntry&) = default;
};

struct Beacon {
  DeviceId sender = 0;
  std::uint32_t slot_index = 0;
  double tx_time_local = 0.0;  // sender clock
  std::vector<OffsetEntry> offsets;

  friend bool operator==(const Beacon&, const Beacon&) = default;
  const OffsetEntry* find(DeviceId peer) const;
};

inline constexpr std::uint8_t kBeaconVersion = 1;
inline constexpr std::size_t kBeaconHeaderSize = 15;
inline constexpr std::size_t kBeaconRecordSize = 17;

/// Little-endian wire image:
///   u8 version | u8 sender | u32 slot | f64 tx_time | u8 count
///   count x ( u8 peer | f64 offset | f64 age )
std::vector<std::uint8_t> encode_beacon(const Beacon& beacon);

/// Inverse of encode_beacon. Throws FramingError on truncation, trailing
/// bytes, unknown version, non-finite numbers, negative ages, duplicate peers
/// or a self entry.
Beacon decode_beacon(std::span<const std::uint8_t> bytes);

/// Bit-level equality (distinguishes -0.0 from 0.0).
bool identical(const Beacon& a, const Beacon& b);

}  // namespace tdmapos
