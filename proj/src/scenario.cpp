#include "tdmapos/scenario.hpp"

#include "tdmapos/errors.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace tdmapos {

using nlohmann::json;

Trajectory Trajectory::fixed(const Vec3& p) {
  Trajectory t;
  t.kind = Kind::kStatic;
  t.position = p;
  return t;
}

Trajectory Trajectory::circular(const Vec3& center, double radius, double angular_rate,
                                double initial_phase) {
  Trajectory t;
  t.kind = Kind::kCircular;
  t.center = center;
  t.radius = radius;
  t.angular_rate = angular_rate;
  t.initial_phase = initial_phase;
  return t;
}

Vec3 position_at(const Trajectory& traj, double t) {
  if (traj.kind == Trajectory::Kind::kStatic) return traj.position;
  const double a = traj.angular_rate * t + traj.initial_phase;
  return traj.center + Vec3(traj.radius * std::cos(a), traj.radius * std::sin(a), 0.0);
}

Vec3 velocity_at(const Trajectory& traj, double t) {
  if (traj.kind == Trajectory::Kind::kStatic) return Vec3::Zero();
  const double a = traj.angular_rate * t + traj.initial_phase;
  const double s = traj.radius * traj.angular_rate;
  return Vec3(-s * std::sin(a), s * std::cos(a), 0.0);
}

const StationConfig& ScenarioConfig::station(DeviceId id) const {
  for (const auto& s : stations)
    if (s.id == id) return s;
  throw ConfigError("stations", "no station with id " + std::to_string(id));
}

const ReceiverConfig& ScenarioConfig::receiver(DeviceId id) const {
  for (const auto& r : receivers)
    if (r.id == id) return r;
  throw ConfigError("receivers", "no receiver with id " + std::to_string(id));
}

bool ScenarioConfig::has_station(DeviceId id) const {
  return std::any_of(stations.begin(), stations.end(), [id](const auto& s) { return s.id == id; });
}

bool ScenarioConfig::has_receiver(DeviceId id) const {
  return std::any_of(receivers.begin(), receivers.end(), [id](const auto& r) { return r.id == id; });
}

namespace {

json clock_defaults() {
  return {{"initial_offset", 0.0},
          {"initial_drift", 0.0},
          {"drift_random_walk_psd", 0.0},
          {"white_phase_noise_std", 0.0}};
}

// Fills `target` with entries of `defaults` it does not already have.
void fill_defaults(json& target, const json& defaults) {
  if (!target.is_object()) return;
  for (auto it = defaults.begin(); it != defaults.end(); ++it) {
    if (!target.contains(it.key())) {
      target[it.key()] = it.value();
    } else if (it.value().is_object()) {
      fill_defaults(target[it.key()], it.value());
    }
  }
}

std::string at(const std::string& parent, const std::string& key) {
  return parent.empty() ? key : parent + "." + key;
}

std::string at(const std::string& parent, std::size_t index) {
  return parent + "[" + std::to_string(index) + "]";
}

const json& require(const json& obj, const std::string& parent, const std::string& key) {
  if (!obj.is_object()) throw ConfigError(parent, "expected an object");
  auto it = obj.find(key);
  if (it == obj.end()) throw ConfigError(at(parent, key), "missing");
  return *it;
}

double number(const json& obj, const std::string& parent, const std::string& key) {
  const json& v = require(obj, parent, key);
  if (!v.is_number()) throw ConfigError(at(parent, key), "expected a number");
  const double x = v.get<double>();
  if (!std::isfinite(x)) throw ConfigError(at(parent, key), "must be finite");
  return x;
}

double non_negative(const json& obj, const std::string& parent, const std::string& key) {
  const double x = number(obj, parent, key);
  if (x < 0.0) throw ConfigError(at(parent, key), "must be >= 0");
  return x;
}

double positive(const json& obj, const std::string& parent, const std::string& key) {
  const double x = number(obj, parent, key);
  if (!(x > 0.0)) throw ConfigError(at(parent, key), "must be > 0");
  return x;
}

std::int64_t integer(const json& obj, const std::string& parent, const std::string& key) {
  const json& v = require(obj, parent, key);
  if (!v.is_number_integer()) throw ConfigError(at(parent, key), "expected an integer");
  return v.get<std::int64_t>();
}

DeviceId device_id(const json& obj, const std::string& parent, const std::string& key) {
  const auto id = integer(obj, parent, key);
  if (id < 0 || id > 255) throw ConfigError(at(parent, key), "ids must be in 0..255");
  return static_cast<DeviceId>(id);
}

Vec3 vec3(const json& obj, const std::string& parent, const std::string& key) {
  const json& v = require(obj, parent, key);
  const std::string path = at(parent, key);
  if (!v.is_array() || v.size() != 3) throw ConfigError(path, "expected [x, y, z]");
  Vec3 out;
  for (std::size_t i = 0; i < 3; ++i) {
    if (!v[i].is_number()) throw ConfigError(path, "expected numbers");
    out[static_cast<Eigen::Index>(i)] = v[i].get<double>();
    if (!std::isfinite(out[static_cast<Eigen::Index>(i)])) throw ConfigError(path, "must be finite");
  }
  return out;
}

ClockModel parse_clock(const json& obj, const std::string& path) {
  ClockModel c;
  c.initial_offset = number(obj, path, "initial_offset");
  c.initial_drift = number(obj, path, "initial_drift");
  c.drift_random_walk_psd = non_negative(obj, path, "drift_random_walk_psd");
  c.white_phase_noise_std = non_negative(obj, path, "white_phase_noise_std");
  return c;
}

Trajectory parse_trajectory(const json& obj, const std::string& path) {
  const json& kind = require(obj, path, "kind");
  if (kind == "static") return Trajectory::fixed(vec3(obj, path, "position"));
  if (kind == "circular") {
    const Vec3 center = vec3(obj, path, "center");
    const double radius = positive(obj, path, "radius");
    const double rate = number(obj, path, "angular_rate");
    const double phase = obj.contains("initial_phase") ? number(obj, path, "initial_phase") : 0.0;
    return Trajectory::circular(center, radius, rate, phase);
  }
  throw ConfigError(at(path, "kind"), "expected \"static\" or \"circular\"");
}

Fault parse_fault(const json& obj, const std::string& path) {
  const json& kind = require(obj, path, "kind");
  if (kind == "corrupt_pseudorange") {
    CorruptPseudorange f;
    f.receiver = device_id(obj, path, "receiver");
    f.slot = integer(obj, path, "slot");
    f.bias_m = number(obj, path, "bias_m");
    if (f.slot < 0) throw ConfigError(at(path, "slot"), "must be >= 0");
    return f;
  }
  if (kind == "drop_link") {
    DropLink f;
    f.a = device_id(obj, path, "a");
    f.b = device_id(obj, path, "b");
    f.start = number(obj, path, "start");
    f.end = number(obj, path, "end");
    if (!(f.end > f.start)) throw ConfigError(at(path, "end"), "must be after start");
    return f;
  }
  throw ConfigError(at(path, "kind"), "expected \"corrupt_pseudorange\" or \"drop_link\"");
}

json clock_to_json(const ClockModel& c) {
  return {{"initial_offset", c.initial_offset},
          {"initial_drift", c.initial_drift},
          {"drift_random_walk_psd", c.drift_random_walk_psd},
          {"white_phase_noise_std", c.white_phase_noise_std}};
}

json vec_to_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

}  // namespace

json materialize(const json& doc) {
  if (!doc.is_object()) throw ConfigError("<document>", "expected a JSON object");
  json out = doc;
  const json top = {
      {"version", 1},
      {"schedule", {{"slot_duration", 1e-3}, {"guard_fraction", 0.1}}},
      {"noise", {{"range_noise_std", 0.0}, {"station_toa_noise_std", 0.0}}},
      {"tracking", {{"window", 8}, {"max_offset_age_superframes", 1.5}}},
      {"solver",
       {{"mode", "dynamic"},
        {"window_superframes", 2.0},
        {"max_iterations", 20},
        {"step_tolerance", 1e-6},
        {"gating", true},
        {"gate_threshold", 3.0},
        {"range_sigma", 0.0}}},
      {"faults", json::array()}};
  fill_defaults(out, top);

  const json device = {{"rx_delay", 0.0}, {"clock", clock_defaults()}};
  if (out.contains("stations") && out["stations"].is_array()) {
    for (auto& s : out["stations"]) {
      fill_defaults(s, device);
      fill_defaults(s, json{{"tx_delay", 0.0}});
    }
    // Default schedule: one round-robin pass in listed order.
    if (out["schedule"].is_object() && !out["schedule"].contains("superframe")) {
      json order = json::array();
      for (const auto& s : out["stations"])
        if (s.is_object() && s.contains("id")) order.push_back(s["id"]);
      out["schedule"]["superframe"] = order;
    }
  }
  if (out.contains("receivers") && out["receivers"].is_array()) {
    for (auto& r : out["receivers"]) {
      fill_defaults(r, device);
      if (r.is_object() && r.contains("trajectory") && r["trajectory"].is_object() &&
          r["trajectory"].value("kind", "") == "circular")
        fill_defaults(r["trajectory"], json{{"initial_phase", 0.0}});
    }
  }
  return out;
}

void apply_override(json& doc, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0) {
    throw ConfigError(std::string(assignment), "override must look like key=value");
  }
  const std::string key(assignment.substr(0, eq));
  const std::string text(assignment.substr(eq + 1));

  json* node = &doc;
  std::stringstream parts(key);
  std::string part;
  while (std::getline(parts, part, '.')) {
    if (node->is_object()) {
      auto it = node->find(part);
      if (it == node->end()) throw ConfigError(key, "unknown key");
      node = &*it;
    } else if (node->is_array()) {
      std::size_t idx = 0;
      try {
        std::size_t used = 0;
        idx = std::stoul(part, &used);
        if (used != part.size()) throw std::invalid_argument(part);
      } catch (const std::exception&) {
        throw ConfigError(key, "unknown key");
      }
      if (idx >= node->size()) throw ConfigError(key, "unknown key");
      node = &(*node)[idx];
    } else {
      throw ConfigError(key, "unknown key");
    }
  }
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  *node = value;
}

ScenarioConfig parse_scenario(const json& raw) {
  const json doc = materialize(raw);
  ScenarioConfig cfg;

  const json& stations = require(doc, "", "stations");
  if (!stations.is_array()) throw ConfigError("stations", "expected an array");
  for (std::size_t i = 0; i < stations.size(); ++i) {
    const std::string path = at("stations", i);
    const json& s = stations[i];
    StationConfig st;
    st.id = device_id(s, path, "id");
    st.position = vec3(s, path, "position");
    st.tx_delay = non_negative(s, path, "tx_delay");
    st.rx_delay = non_negative(s, path, "rx_delay");
    st.clock = parse_clock(require(s, path, "clock"), at(path, "clock"));
    cfg.stations.push_back(st);
  }

  const json& receivers = require(doc, "", "receivers");
  if (!receivers.is_array()) throw ConfigError("receivers", "expected an array");
  for (std::size_t i = 0; i < receivers.size(); ++i) {
    const std::string path = at("receivers", i);
    const json& r = receivers[i];
    ReceiverConfig rc;
    rc.id = device_id(r, path, "id");
    rc.trajectory = parse_trajectory(require(r, path, "trajectory"), at(path, "trajectory"));
    rc.rx_delay = non_negative(r, path, "rx_delay");
    rc.clock = parse_clock(require(r, path, "clock"), at(path, "clock"));
    cfg.receivers.push_back(rc);
  }

  const json& sched = require(doc, "", "schedule");
  cfg.slot_duration = positive(sched, "schedule", "slot_duration");
  cfg.guard_fraction = positive(sched, "schedule", "guard_fraction");
  const json& sf = require(sched, "schedule", "superframe");
  if (!sf.is_array()) throw ConfigError("schedule.superframe", "expected an array of station ids");
  for (std::size_t i = 0; i < sf.size(); ++i) {
    if (!sf[i].is_number_integer() || sf[i].get<std::int64_t>() < 0 || sf[i].get<std::int64_t>() > 255)
      throw ConfigError(at("schedule.superframe", i), "expected a station id");
    cfg.superframe.push_back(static_cast<DeviceId>(sf[i].get<int>()));
  }

  const json& noise = require(doc, "", "noise");
  cfg.range_noise_std = non_negative(noise, "noise", "range_noise_std");
  cfg.station_toa_noise_std = non_negative(noise, "noise", "station_toa_noise_std");

  const auto seed = integer(doc, "", "seed");
  if (seed < 0) throw ConfigError("seed", "must be >= 0");
  cfg.rng_seed = static_cast<std::uint64_t>(seed);
  cfg.duration = positive(doc, "", "duration");

  const json& tracking = require(doc, "", "tracking");
  const auto window = integer(tracking, "tracking", "window");
  if (window < 2) throw ConfigError("tracking.window", "must be >= 2");
  cfg.tracking.window = static_cast<std::size_t>(window);
  cfg.tracking.max_offset_age_superframes = positive(tracking, "tracking", "max_offset_age_superframes");

  const json& solver = require(doc, "", "solver");
  const json& mode = require(solver, "solver", "mode");
  if (mode == "dynamic") {
    cfg.solver.mode = SolveMode::kDynamic;
  } else if (mode == "static") {
    cfg.solver.mode = SolveMode::kStatic;
  } else {
    throw ConfigError("solver.mode", "expected \"dynamic\" or \"static\"");
  }
  cfg.solver.window_superframes = positive(solver, "solver", "window_superframes");
  const auto iters = integer(solver, "solver", "max_iterations");
  if (iters < 1) throw ConfigError("solver.max_iterations", "must be >= 1");
  cfg.solver.max_iterations = static_cast<int>(iters);
  cfg.solver.step_tolerance = positive(solver, "solver", "step_tolerance");
  const json& gating = require(solver, "solver", "gating");
  if (!gating.is_boolean()) throw ConfigError("solver.gating", "expected true or false");
  cfg.solver.gating = gating.get<bool>();
  cfg.solver.gate_threshold = positive(solver, "solver", "gate_threshold");
  cfg.solver.range_sigma = non_negative(solver, "solver", "range_sigma");

  const json& faults = require(doc, "", "faults");
  if (!faults.is_array()) throw ConfigError("faults", "expected an array");
  for (std::size_t i = 0; i < faults.size(); ++i) cfg.faults.push_back(parse_fault(faults[i], at("faults", i)));

  validate(cfg);
  return cfg;
}

void validate(const ScenarioConfig& cfg) {
  if (cfg.stations.empty()) throw ConfigError("stations", "at least one station is required");
  if (!(cfg.slot_duration > 0.0)) throw ConfigError("schedule.slot_duration", "must be > 0");
  if (!(cfg.guard_fraction > 0.0 && cfg.guard_fraction < 1.0))
    throw ConfigError("schedule.guard_fraction", "must be in (0, 1)");
  if (!(cfg.duration > 0.0)) throw ConfigError("duration", "must be > 0");
  if (cfg.range_noise_std < 0.0) throw ConfigError("noise.range_noise_std", "must be >= 0");
  if (cfg.station_toa_noise_std < 0.0) throw ConfigError("noise.station_toa_noise_std", "must be >= 0");

  std::set<DeviceId> station_ids;
  const double guard = cfg.guard_fraction * cfg.slot_duration;
  for (std::size_t i = 0; i < cfg.stations.size(); ++i) {
    const auto& s = cfg.stations[i];
    const std::string path = at("stations", i);
    if (!station_ids.insert(s.id).second) throw ConfigError(at(path, "id"), "duplicate id " + std::to_string(s.id));
    if (s.tx_delay < 0.0) throw ConfigError(at(path, "tx_delay"), "must be >= 0");
    if (s.rx_delay < 0.0) throw ConfigError(at(path, "rx_delay"), "must be >= 0");
    if (s.clock.drift_random_walk_psd < 0.0 || s.clock.white_phase_noise_std < 0.0)
      throw ConfigError(at(path, "clock"), "noise terms must be >= 0");
    // Stations key their slots to their own clocks; keep them inside the guard.
    const double excursion = std::abs(s.clock.initial_offset) + std::abs(s.clock.initial_drift) * cfg.duration;
    if (!(excursion < 0.5 * guard))
      throw ConfigError(at(path, "clock.initial_offset"),
                        "offset plus drift over the run must stay below half the slot guard time");
  }

  std::set<DeviceId> receiver_ids;
  for (std::size_t i = 0; i < cfg.receivers.size(); ++i) {
    const auto& r = cfg.receivers[i];
    const std::string path = at("receivers", i);
    if (station_ids.count(r.id)) throw ConfigError(at(path, "id"), "receiver id collides with a station id");
    if (!receiver_ids.insert(r.id).second) throw ConfigError(at(path, "id"), "duplicate id " + std::to_string(r.id));
    if (r.rx_delay < 0.0) throw ConfigError(at(path, "rx_delay"), "must be >= 0");
    if (r.trajectory.kind == Trajectory::Kind::kCircular &&
        (!(r.trajectory.radius > 0.0) || !std::isfinite(r.trajectory.angular_rate)))
      throw ConfigError(at(path, "trajectory"), "circular motion needs radius > 0 and a finite angular_rate");
  }

  if (cfg.superframe.empty()) throw ConfigError("schedule.superframe", "must not be empty");
  for (std::size_t i = 0; i < cfg.superframe.size(); ++i) {
    if (!station_ids.count(cfg.superframe[i]))
      throw ConfigError(at("schedule.superframe", i), "unknown station id " + std::to_string(cfg.superframe[i]));
  }
  for (const auto& s : cfg.stations) {
    if (std::find(cfg.superframe.begin(), cfg.superframe.end(), s.id) == cfg.superframe.end())
      throw ConfigError("schedule.superframe", "station " + std::to_string(s.id) + " has no slot");
  }

  if (cfg.tracking.window < 2) throw ConfigError("tracking.window", "must be >= 2");
  if (!(cfg.tracking.max_offset_age_superframes > 0.0))
    throw ConfigError("tracking.max_offset_age_superframes", "must be > 0");
  if (!(cfg.solver.window_superframes > 0.0)) throw ConfigError("solver.window_superframes", "must be > 0");

  for (std::size_t i = 0; i < cfg.faults.size(); ++i) {
    const std::string path = at("faults", i);
    if (const auto* c = std::get_if<CorruptPseudorange>(&cfg.faults[i])) {
      if (!receiver_ids.count(c->receiver)) throw ConfigError(at(path, "receiver"), "unknown receiver id");
    } else if (const auto* d = std::get_if<DropLink>(&cfg.faults[i])) {
      auto known = [&](DeviceId id) { return station_ids.count(id) || receiver_ids.count(id); };
      if (!known(d->a)) throw ConfigError(at(path, "a"), "unknown device id");
      if (!known(d->b)) throw ConfigError(at(path, "b"), "unknown device id");
    }
  }
}

ScenarioConfig load_scenario(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError("<document>", std::string("parse error: ") + e.what());
  }
  return parse_scenario(doc);
}

json read_scenario_document(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path.string(), "cannot open scenario file");
  std::stringstream buf;
  buf << in.rdbuf();
  try {
    return json::parse(buf.str());
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string(), std::string("parse error: ") + e.what());
  }
}

json to_json(const ScenarioConfig& cfg) {
  json doc;
  doc["version"] = 1;
  doc["duration"] = cfg.duration;
  doc["seed"] = cfg.rng_seed;
  json sf = json::array();
  for (auto id : cfg.superframe) sf.push_back(id);
  doc["schedule"] = {{"slot_duration", cfg.slot_duration}, {"guard_fraction", cfg.guard_fraction}, {"superframe", sf}};
  doc["noise"] = {{"range_noise_std", cfg.range_noise_std}, {"station_toa_noise_std", cfg.station_toa_noise_std}};
  json stations = json::array();
  for (const auto& s : cfg.stations) {
    stations.push_back({{"id", s.id},
                        {"position", vec_to_json(s.position)},
                        {"tx_delay", s.tx_delay},
                        {"rx_delay", s.rx_delay},
                        {"clock", clock_to_json(s.clock)}});
  }
  doc["stations"] = stations;
  json receivers = json::array();
  for (const auto& r : cfg.receivers) {
    json traj;
    if (r.trajectory.kind == Trajectory::Kind::kStatic) {
      traj = {{"kind", "static"}, {"position", vec_to_json(r.trajectory.position)}};
    } else {
      traj = {{"kind", "circular"},
              {"center", vec_to_json(r.trajectory.center)},
              {"radius", r.trajectory.radius},
              {"angular_rate", r.trajectory.angular_rate},
              {"initial_phase", r.trajectory.initial_phase}};
    }
    receivers.push_back({{"id", r.id}, {"trajectory", traj}, {"rx_delay", r.rx_delay}, {"clock", clock_to_json(r.clock)}});
  }
  doc["receivers"] = receivers;
  doc["tracking"] = {{"window", cfg.tracking.window},
                     {"max_offset_age_superframes", cfg.tracking.max_offset_age_superframes}};
  doc["solver"] = {{"mode", cfg.solver.mode == SolveMode::kDynamic ? "dynamic" : "static"},
                   {"window_superframes", cfg.solver.window_superframes},
                   {"max_iterations", cfg.solver.max_iterations},
                   {"step_tolerance", cfg.solver.step_tolerance},
                   {"gating", cfg.solver.gating},
                   {"gate_threshold", cfg.solver.gate_threshold},
                   {"range_sigma", cfg.solver.range_sigma}};
  json faults = json::array();
  for (const auto& f : cfg.faults) {
    if (const auto* c = std::get_if<CorruptPseudorange>(&f)) {
      faults.push_back({{"kind", "corrupt_pseudorange"}, {"receiver", c->receiver}, {"slot", c->slot}, {"bias_m", c->bias_m}});
    } else if (const auto* d = std::get_if<DropLink>(&f)) {
      faults.push_back({{"kind", "drop_link"}, {"a", d->a}, {"b", d->b}, {"start", d->start}, {"end", d->end}});
    }
  }
  doc["faults"] = faults;
  return doc;
}

}  // namespace tdmapos
