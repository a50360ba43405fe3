#include "tdmapos/tdma_protocol.hpp"

#include "tdmapos/errors.hpp"

#include <bit>
#include <cmath>
#include <set>
#include <string>

namespace tdmapos {

DeviceId SlotSchedule::owner(std::int64_t slot_index) const {
  const auto n = static_cast<std::int64_t>(assignment.size());
  return assignment[static_cast<std::size_t>(((slot_index % n) + n) % n)];
}

double SlotSchedule::planned_tx_local(std::int64_t slot_index) const {
  return static_cast<double>(slot_index) * slot_duration + guard_fraction * slot_duration;
}

SlotSchedule make_schedule(const ScenarioConfig& cfg) {
  return SlotSchedule{cfg.slot_duration, cfg.superframe, cfg.guard_fraction};
}

SlotInfo transmitter_of(const SlotSchedule& schedule, double time) {
  if (!(time >= 0.0)) throw ContractViolation("transmitter_of: time must be >= 0");
  auto slot = static_cast<std::int64_t>(std::floor(time / schedule.slot_duration));
  double start = static_cast<double>(slot) * schedule.slot_duration;
  // floor(t / d) can land one slot off when t sits within an ulp of a boundary.
  if (start > time) {
    --slot;
    start = static_cast<double>(slot) * schedule.slot_duration;
  } else if (start + schedule.slot_duration <= time) {
    ++slot;
    start = static_cast<double>(slot) * schedule.slot_duration;
  }
  return SlotInfo{schedule.owner(slot), slot, start};
}

const OffsetEntry* Beacon::find(DeviceId peer) const {
  for (const auto& e : offsets)
    if (e.peer == peer) return &e;
  return nullptr;
}

namespace {

void put_u8(std::vector<std::uint8_t>& out, std::uint8_t v) { out.push_back(v); }

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f64(std::vector<std::uint8_t>& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint8_t u8() {
    need(1);
    return bytes_[pos_++];
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_++]) << (8 * i);
    return v;
  }
  double f64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_++]) << (8 * i);
    return std::bit_cast<double>(v);
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (remaining() < n) throw FramingError("beacon truncated at byte " + std::to_string(pos_));
  }
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

void check_offsets(const Beacon& b) {
  std::set<DeviceId> seen;
  for (const auto& e : b.offsets) {
    if (e.peer == b.sender) throw FramingError("beacon offset table contains the sender");
    if (!seen.insert(e.peer).second) throw FramingError("beacon offset table repeats peer " + std::to_string(e.peer));
    if (!std::isfinite(e.offset) || !std::isfinite(e.age)) throw FramingError("beacon offset entry is not finite");
    if (e.age < 0.0) throw FramingError("beacon offset age is negative");
  }
}

}  // namespace

std::vector<std::uint8_t> encode_beacon(const Beacon& beacon) {
  if (beacon.offsets.size() > 255) throw ContractViolation("beacon offset table exceeds 255 entries");
  std::vector<std::uint8_t> out;
  out.reserve(kBeaconHeaderSize + kBeaconRecordSize * beacon.offsets.size());
  put_u8(out, kBeaconVersion);
  put_u8(out, beacon.sender);
  put_u32(out, beacon.slot_index);
  put_f64(out, beacon.tx_time_local);
  put_u8(out, static_cast<std::uint8_t>(beacon.offsets.size()));
  for (const auto& e : beacon.offsets) {
    put_u8(out, e.peer);
    put_f64(out, e.offset);
    put_f64(out, e.age);
  }
  return out;
}

Beacon decode_beacon(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  const auto version = r.u8();
  if (version != kBeaconVersion) throw FramingError("unsupported beacon version " + std::to_string(version));
  Beacon b;
  b.sender = r.u8();
  b.slot_index = r.u32();
  b.tx_time_local = r.f64();
  if (!std::isfinite(b.tx_time_local)) throw FramingError("beacon transmit time is not finite");
  const auto count = r.u8();
  if (r.remaining() != static_cast<std::size_t>(count) * kBeaconRecordSize) {
    throw FramingError(r.remaining() < static_cast<std::size_t>(count) * kBeaconRecordSize
                           ? "beacon truncated in offset table"
                           : "trailing bytes after beacon");
  }
  b.offsets.reserve(count);
  for (std::uint8_t i = 0; i < count; ++i) {
    OffsetEntry e;
    e.peer = r.u8();
    e.offset = r.f64();
    e.age = r.f64();
    b.offsets.push_back(e);
  }
  check_offsets(b);
  return b;
}

bool identical(const Beacon& a, const Beacon& b) {
  auto same = [](double x, double y) { return std::bit_cast<std::uint64_t>(x) == std::bit_cast<std::uint64_t>(y); };
  if (a.sender != b.sender || a.slot_index != b.slot_index || !same(a.tx_time_local, b.tx_time_local) ||
      a.offsets.size() != b.offsets.size())
    return false;
  for (std::size_t i = 0; i < a.offsets.size(); ++i) {
    const auto& x = a.offsets[i];
    const auto& y = b.offsets[i];
    if (x.peer != y.peer || !same(x.offset, y.offset) || !same(x.age, y.age)) return false;
  }
  return true;
}

}  // namespace tdmapos
