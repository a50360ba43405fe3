#include "tdmapos/sim_engine.hpp"

#include "tdmapos/errors.hpp"
#include "tdmapos/nav_solver.hpp"
#include "tdmapos/random.hpp"
#include "tdmapos/receiver_node.hpp"
#include "tdmapos/station_node.hpp"
#include "tdmapos/tdma_protocol.hpp"
#include "tdmapos/timebase.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <memory>
#include <queue>

namespace tdmapos {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

enum class EventKind : int { kSlotStart = 0, kTransmit = 1, kReceive = 2 };

// Purpose tags for per-device random streams.
constexpr std::uint32_t kClockStream = 1;
constexpr std::uint32_t kToaStream = 2;

struct Event {
  Timestamp time;
  EventKind kind = EventKind::kSlotStart;
  std::int64_t slot = 0;
  DeviceId sender = 0;
  DeviceId target = 0;
  std::uint64_t seq = 0;
  Timestamp departure;  // receive events: when the signal left the sender's antenna
  Timestamp arrival;    // receive events: when it reached the target's antenna
  std::shared_ptr<const std::vector<std::uint8_t>> bytes;
};

struct Later {
  bool operator()(const Event& a, const Event& b) const {
    if (a.time != b.time) return a.time > b.time;
    if (a.kind != b.kind) return a.kind > b.kind;
    if (a.sender != b.sender) return a.sender > b.sender;
    if (a.target != b.target) return a.target > b.target;
    return a.seq > b.seq;
  }
};

struct Device {
  DeviceId id = 0;
  bool is_station = false;
  ClockModel model;
  ClockState clock;
  RandomStream clock_rng;
  RandomStream toa_rng;
  double rx_delay = 0.0;
  double toa_noise_s = 0.0;

  Device(DeviceId id_, bool station, const ClockModel& m, double rx, double toa_std_m, std::uint64_t seed)
      : id(id_),
        is_station(station),
        model(m),
        clock(initial_state(m)),
        clock_rng(seed, {id_, kClockStream}),
        toa_rng(seed, {id_, kToaStream}),
        rx_delay(rx),
        toa_noise_s(toa_std_m / kSpeedOfLight) {}

  void advance_to(Timestamp t) { clock = advance(clock, model, t - clock.true_time, clock_rng); }
};

// Truth captured when a receiver timestamps a beacon.
struct ReceptionTruth {
  double time = 0.0;  // timestamp instant
  Vec3 position = Vec3::Zero();
  Vec3 velocity = Vec3::Zero();
  double receiver_offset = 0.0;
  double receiver_drift = 0.0;
  double sender_offset = 0.0;
  double sender_drift = 0.0;
  bool corrupted = false;
};

struct ReceiverSlot {
  const ReceiverConfig* config = nullptr;
  std::vector<Pseudorange> buffer;
  std::vector<ReceptionTruth> truth;
  std::optional<NavState> last;
  std::int64_t epoch = 0;
};

class Engine {
 public:
  explicit Engine(const ScenarioConfig& cfg)
      : cfg_(cfg), schedule_(make_schedule(cfg)), stations_(cfg.stations) {
    for (const auto& s : cfg.stations) {
      add_device(Device(s.id, true, s.clock, s.rx_delay, cfg.station_toa_noise_std, cfg.rng_seed));
      station_nodes_.emplace(s.id, StationNode(s, cfg.tracking.window,
                                               cfg.tracking.max_offset_age_superframes * cfg.superframe_duration()));
      centroid_ += s.position;
    }
    centroid_ /= static_cast<double>(cfg.stations.size());
    for (const auto& r : cfg.receivers) {
      add_device(Device(r.id, false, r.clock, r.rx_delay, cfg.range_noise_std, cfg.rng_seed));
      receivers_[r.id].config = &r;
    }
    for (const auto& f : cfg.faults) {
      if (const auto* c = std::get_if<CorruptPseudorange>(&f)) corruptions_.push_back(*c);
      if (const auto* d = std::get_if<DropLink>(&f)) drops_.push_back(*d);
    }
    options_.mode = cfg.solver.mode;
    options_.max_iterations = cfg.solver.max_iterations;
    options_.step_tolerance = cfg.solver.step_tolerance;
    options_.range_sigma = cfg.solver.range_sigma;
    window_ = SolveWindow::span(cfg.solver.window_superframes * cfg.superframe_duration() - 0.5 * cfg.slot_duration);
  }

  RunResult run() {
    push(Event{Timestamp{0.0}, EventKind::kSlotStart, 0, 0, 0, 0, {}, {}, nullptr});
    while (!queue_.empty()) {
      Event ev = queue_.top();
      queue_.pop();
      ++result_.stats.events;
      switch (ev.kind) {
        case EventKind::kSlotStart:
          on_slot_start(ev);
          break;
        case EventKind::kTransmit:
          on_transmit(ev);
          break;
        case EventKind::kReceive:
          on_receive(ev);
          break;
      }
    }
    return std::move(result_);
  }

 private:
  void add_device(Device d) {
    if (device_index_[d.id] >= 0) throw ContractViolation("duplicate device id");
    device_index_[d.id] = static_cast<int>(devices_.size());
    devices_.push_back(std::move(d));
  }

  Device& device(DeviceId id) { return devices_[static_cast<std::size_t>(device_index_[id])]; }

  void push(Event ev) {
    ev.seq = next_seq_++;
    queue_.push(std::move(ev));
  }

  bool link_dropped(DeviceId a, DeviceId b, Timestamp departure) const {
    const double t = departure.to_double();
    for (const auto& d : drops_) {
      const bool pair = (d.a == a && d.b == b) || (d.a == b && d.b == a);
      if (pair && t >= d.start && t < d.end) return true;
    }
    return false;
  }

  void on_slot_start(const Event& ev) {
    const std::int64_t slot = ev.slot;
    const DeviceId owner = schedule_.owner(slot);
    Device& dev = device(owner);
    const Timestamp planned{schedule_.planned_tx_local(slot)};
    const double wait = time_until_local(dev.clock, planned);
    if (!(wait >= 0.0)) throw ContractViolation("station clock passed its planned transmit instant");
    push(Event{dev.clock.true_time + wait, EventKind::kTransmit, slot, owner, owner, 0, {}, {}, nullptr});

    const std::int64_t next = slot + 1;
    const Timestamp next_start{static_cast<double>(next) * cfg_.slot_duration};
    if (next_start.to_double() < cfg_.duration) {
      push(Event{next_start, EventKind::kSlotStart, next, 0, 0, 0, {}, {}, nullptr});
    }
  }

  void on_transmit(const Event& ev) {
    Device& tx = device(ev.sender);
    tx.advance_to(ev.time);
    const auto& node = station_nodes_.at(ev.sender);
    const Beacon beacon = node.make_beacon(schedule_, ev.slot);
    auto bytes = std::make_shared<const std::vector<std::uint8_t>>(encode_beacon(beacon));
    ++result_.stats.transmissions;

    const StationConfig& st = node.config();
    const Timestamp departure = ev.time + st.tx_delay;
    for (const auto& rx : devices_) {
      if (rx.id == ev.sender) continue;
      if (link_dropped(ev.sender, rx.id, departure)) {
        ++result_.stats.dropped_deliveries;
        continue;
      }
      const Timestamp arrival = departure + flight_time(st.position, rx, departure);
      push(Event{arrival + rx.rx_delay, EventKind::kReceive, ev.slot, ev.sender, rx.id, 0, departure, arrival, bytes});
    }
  }

  // Exact light time to a device, including receiver motion during flight.
  double flight_time(const Vec3& from, const Device& to, Timestamp departure) const {
    if (to.is_station) return (stations_.at(to.id).position - from).norm() / kSpeedOfLight;
    const auto& traj = receivers_.at(to.id).config->trajectory;
    double flight = 0.0;
    for (int i = 0; i < 4; ++i) {
      const Vec3 p = position_at(traj, (departure + flight).to_double());
      flight = (p - from).norm() / kSpeedOfLight;
    }
    return flight;
  }

  void on_receive(const Event& ev) {
    Device& rx = device(ev.target);
    const Device& tx = device(ev.sender);

    // Causality: arrival is departure plus the geometric flight time.
    const Vec3 tx_pos = stations_.at(ev.sender).position;
    const Vec3 rx_pos = rx.is_station ? stations_.at(rx.id).position
                                      : position_at(receivers_.at(rx.id).config->trajectory, ev.arrival.to_double());
    const double flight = (rx_pos - tx_pos).norm() / kSpeedOfLight;
    const double causality = std::abs((ev.arrival - ev.departure) - flight);
    result_.stats.max_causality_error = std::max(result_.stats.max_causality_error, causality);
    ++result_.stats.deliveries;

    rx.advance_to(ev.time);
    const Timestamp local = read_local(rx.clock, rx.model, rx.clock_rng) + rx.toa_rng.normal(rx.toa_noise_s);
    const Beacon beacon = decode_beacon(*ev.bytes);

    if (rx.is_station) {
      station_nodes_.at(rx.id).on_receive(local, beacon, stations_.at(ev.sender));
      return;
    }

    auto& slot = receivers_.at(rx.id);
    Pseudorange pr = form_pseudorange(local, beacon);
    ReceptionTruth truth;
    truth.time = ev.time.to_double();
    truth.position = rx_pos;
    truth.velocity = velocity_at(slot.config->trajectory, ev.arrival.to_double());
    truth.receiver_offset = rx.clock.offset;
    truth.receiver_drift = rx.clock.drift;
    truth.sender_offset = project_offset(tx.clock, ev.time);
    truth.sender_drift = tx.clock.drift;
    for (const auto& c : corruptions_) {
      if (c.receiver == rx.id && c.slot == ev.slot) {
        pr.rho += c.bias_m;
        truth.corrupted = true;
        ++result_.stats.corrupted;
      }
    }
    slot.buffer.push_back(std::move(pr));
    slot.truth.push_back(truth);

    const auto n = static_cast<std::int64_t>(schedule_.assignment.size());
    if ((ev.slot + 1) % n == 0) solve_epoch(slot, ev.time);
    trim(slot);
  }

  void trim(ReceiverSlot& slot) const {
    // Keep a generous margin beyond the solve window.
    const std::size_t keep = 4 * static_cast<std::size_t>(std::ceil(cfg_.solver.window_superframes)) *
                                 schedule_.assignment.size() + 8;
    if (slot.buffer.size() > 2 * keep) {
      const auto cut = static_cast<std::ptrdiff_t>(slot.buffer.size() - keep);
      slot.buffer.erase(slot.buffer.begin(), slot.buffer.begin() + cut);
      slot.truth.erase(slot.truth.begin(), slot.truth.begin() + cut);
    }
  }

  const ReceptionTruth* truth_of(const ReceiverSlot& slot, const Pseudorange& m) const {
    for (std::size_t i = slot.buffer.size(); i-- > 0;) {
      if (slot.buffer[i].rx_time_local == m.rx_time_local && slot.buffer[i].sender == m.sender) return &slot.truth[i];
    }
    return nullptr;
  }

  void log_measurement(const ReceiverSlot& slot, const Pseudorange& m, double beta, const std::string& reason) {
    const auto* t = truth_of(slot, m);
    MeasurementRecord row;
    row.receiver = slot.config->id;
    row.epoch = slot.epoch;
    row.true_time = t ? t->time : kNaN;
    row.rx_time_local = m.rx_time_local;
    row.sender = m.sender;
    row.slot = m.slot_index;
    row.rho_m = m.rho;
    row.n_payload_offsets = m.payload_offsets.size();
    row.resolved_beta_s = beta;
    row.dropped_reason = reason;
    row.fault = t && t->corrupted;
    result_.measurements.push_back(std::move(row));
  }

  void solve_epoch(ReceiverSlot& slot, Timestamp now) {
    const ReceiverConfig& rc = *slot.config;
    SolutionRecord sol;
    sol.true_time = now.to_double();
    sol.receiver = rc.id;
    sol.epoch = slot.epoch;
    sol.sigma.fill(kNaN);
    sol.state.position = Vec3::Constant(kNaN);
    sol.state.velocity = Vec3::Constant(kNaN);
    sol.state.clock_bias = kNaN;
    sol.state.clock_drift = kNaN;
    sol.gdop = sol.hdop = sol.vdop = sol.sigma0 = kNaN;
    sol.ref_true_time = kNaN;

    MeasurementSet set = collect_set(slot.buffer, window_);
    sol.ref_station = set.reference_station;
    for (const auto& m : set.measurements)
      if (const auto* t = truth_of(slot, m); t && t->corrupted) sol.fault = true;

    std::optional<SolveReport> report;
    try {
      require_diversity(set, min_measurements(options_.mode), kMinStations);
      NavState initial;
      if (slot.last) {
        initial = *slot.last;
      } else {
        initial.position = centroid_;
      }
      report = solve(set, stations_, rc.rx_delay, initial, options_);
      if (cfg_.solver.gating) {
        auto gated = gate_outliers(set, *report, stations_, rc.rx_delay, cfg_.solver.gate_threshold, options_);
        if (gated.flagged) sol.gated = 2;
        if (gated.removed) {
          sol.gated = 1;
          set = std::move(gated.set);
          report = std::move(gated.report);
        }
      }
      sol.status = report->converged ? "ok" : "nonconverged";
    } catch (const UnderdeterminedSet&) {
      sol.status = "underdetermined";
    } catch (const SingularGeometry&) {
      sol.status = "singular";
    }

    for (std::size_t k = 0; k < set.measurements.size(); ++k)
      log_measurement(slot, set.measurements[k], set.cross_offsets[k], "");
    for (const auto& d : set.dropped) log_measurement(slot, d.measurement, kNaN, d.reason);

    sol.n_meas = set.measurements.size();
    sol.n_dropped = set.dropped.size();

    const ReceptionTruth* ref_truth = nullptr;
    if (!set.measurements.empty() || !set.dropped.empty()) {
      for (std::size_t i = slot.buffer.size(); i-- > 0;) {
        if (slot.buffer[i].rx_time_local == set.reference_epoch && slot.buffer[i].sender == set.reference_station) {
          ref_truth = &slot.truth[i];
          break;
        }
      }
    }
    if (ref_truth) sol.ref_true_time = ref_truth->time;

    if (report) {
      sol.state = report->state;
      sol.converged = report->converged;
      sol.iterations = report->iterations;
      sol.gdop = report->dop.gdop;
      sol.hdop = report->dop.hdop;
      sol.vdop = report->dop.vdop;
      sol.sigma0 = report->sigma0;
      for (Eigen::Index k = 0; k < report->covariance.rows(); ++k)
        sol.sigma[static_cast<std::size_t>(k)] = std::sqrt(report->covariance(k, k));
      if (report->converged) slot.last = report->state;
    }
    result_.solutions.push_back(sol);

    if (ref_truth) {
      TruthRecord tr;
      tr.true_time = sol.true_time;
      tr.receiver = rc.id;
      tr.epoch = slot.epoch;
      tr.ref_true_time = ref_truth->time;
      tr.position = ref_truth->position;
      tr.velocity = ref_truth->velocity;
      tr.clock_bias_m = kSpeedOfLight * (ref_truth->receiver_offset - ref_truth->sender_offset);
      tr.clock_drift_mps = kSpeedOfLight * (ref_truth->receiver_drift - ref_truth->sender_drift);
      tr.receiver_offset_s = ref_truth->receiver_offset;
      tr.receiver_drift = ref_truth->receiver_drift;
      tr.ref_station = set.reference_station;
      tr.ref_station_offset_s = ref_truth->sender_offset;
      tr.ref_station_drift = ref_truth->sender_drift;
      result_.truth.push_back(tr);
    }
    ++slot.epoch;
  }

  const ScenarioConfig& cfg_;
  SlotSchedule schedule_;
  StationTable stations_;
  std::vector<Device> devices_;
  std::array<int, 256> device_index_ = make_index();
  std::map<DeviceId, StationNode> station_nodes_;
  std::map<DeviceId, ReceiverSlot> receivers_;
  std::vector<CorruptPseudorange> corruptions_;
  std::vector<DropLink> drops_;
  SolveOptions options_;
  SolveWindow window_;
  Vec3 centroid_ = Vec3::Zero();
  std::priority_queue<Event, std::vector<Event>, Later> queue_;
  std::uint64_t next_seq_ = 0;
  RunResult result_;

  static std::array<int, 256> make_index() {
    std::array<int, 256> a{};
    a.fill(-1);
    return a;
  }
};

}  // namespace

RunResult run(const ScenarioConfig& cfg) {
  validate(cfg);
  return Engine(cfg).run();
}

RunResult inject_fault(const ScenarioConfig& cfg, std::span<const Fault> faults) {
  ScenarioConfig modified = cfg;
  modified.faults.insert(modified.faults.end(), faults.begin(), faults.end());
  return run(modified);
}

std::string_view code_version() { return "tdmapos 1.0.0"; }

std::string config_hash(const ScenarioConfig& cfg) {
  const std::string text = to_json(cfg).dump();
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

nlohmann::json make_manifest(const ScenarioConfig& cfg, const RunResult& result) {
  return {{"code_version", code_version()},
          {"config_hash", config_hash(cfg)},
          {"seed", cfg.rng_seed},
          {"superframe_duration", cfg.superframe_duration()},
          {"logs", {{"measurements", kMeasurementLog}, {"solutions", kSolutionLog}, {"truth", kTruthLog}}},
          {"counts",
           {{"events", result.stats.events},
            {"transmissions", result.stats.transmissions},
            {"deliveries", result.stats.deliveries},
            {"dropped_deliveries", result.stats.dropped_deliveries},
            {"solutions", result.solutions.size()}}},
          {"scenario", to_json(cfg)}};
}

void write_run(const std::filesystem::path& dir, const ScenarioConfig& cfg, const RunResult& result) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw DataError("cannot create " + dir.string() + ": " + ec.message());
  write_measurements(dir / kMeasurementLog, result.measurements);
  write_solutions(dir / kSolutionLog, result.solutions);
  write_truth(dir / kTruthLog, result.truth);
  std::ofstream out(dir / kManifest, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + (dir / kManifest).string());
  out << make_manifest(cfg, result).dump(2) << '\n';
}

}  // namespace tdmapos
