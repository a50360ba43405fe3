#include "fixtures.hpp"

#include <fstream>
#include <sstream>

namespace fixtures {

using namespace tdmapos;

std::filesystem::path source_path(const std::string& relative) {
  return std::filesystem::path(TDMAPOS_SOURCE_DIR) / relative;
}

std::filesystem::path cli_path() { return TDMAPOS_CLI; }

nlohmann::json scenario_doc(const std::string& name) {
  return materialize(read_scenario_document(source_path("scenarios/" + name + ".json")));
}

ScenarioConfig scenario(const std::string& name) { return parse_scenario(scenario_doc(name)); }

void silence(nlohmann::json& doc) {
  doc["noise"]["range_noise_std"] = 0.0;
  doc["noise"]["station_toa_noise_std"] = 0.0;
  for (const char* group : {"stations", "receivers"}) {
    for (auto& d : doc[group]) {
      d["clock"]["drift_random_walk_psd"] = 0.0;
      d["clock"]["white_phase_noise_std"] = 0.0;
    }
  }
}

std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("tdmapos-test-" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

std::string read_file(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

oracle::Vec3 to_oracle(const Vec3& v) { return {v.x(), v.y(), v.z()}; }

oracle::State to_oracle(const NavState& s) {
  return {s.position.x(), s.position.y(), s.position.z(), s.clock_bias,
          s.velocity.x(), s.velocity.y(), s.velocity.z(), s.clock_drift};
}

NavState from_oracle(const oracle::State& s) {
  NavState n;
  n.position = Vec3(s[0], s[1], s[2]);
  n.clock_bias = s[3];
  n.velocity = Vec3(s[4], s[5], s[6]);
  n.clock_drift = s[7];
  return n;
}

SyntheticSet synthetic_set(const ScenarioConfig& cfg, const NavState& truth, int superframes, double range_sigma,
                           RandomStream& rng) {
  SyntheticSet out;
  out.stations = StationTable(cfg.stations);
  out.truth = truth;
  out.rx_delay = cfg.receivers.empty() ? 0.0 : cfg.receivers.front().rx_delay;

  const DeviceId ref = cfg.superframe.front();
  const double ref_offset = cfg.station(ref).clock.initial_offset;
  const Timestamp epoch(2.0);
  out.set.reference_station = ref;
  out.set.reference_epoch = epoch;
  const oracle::State x = to_oracle(truth);

  const std::size_t slots = cfg.superframe.size() * static_cast<std::size_t>(superframes);
  for (std::size_t k = 0; k < slots; ++k) {
    const auto& st = cfg.station(cfg.superframe[k % cfg.superframe.size()]);
    const double beta = st.clock.initial_offset - ref_offset;
    // Reception lands a little after the guard time, varying with geometry.
    const double dt = static_cast<double>(k) * cfg.slot_duration + 1e-8 * static_cast<double>(k % 7);
    oracle::Observation o{to_oracle(st.position), dt, beta, st.tx_delay + out.rx_delay};

    Pseudorange m;
    m.rx_time_local = epoch + dt;
    m.sender = st.id;
    m.slot_index = static_cast<std::int64_t>(k);
    m.rho = oracle::pseudorange(x, o) + rng.normal(range_sigma);
    for (const auto& peer : cfg.stations) {
      if (peer.id == st.id) continue;
      m.payload_offsets.push_back({peer.id, st.clock.initial_offset - peer.clock.initial_offset, 1e-3});
    }
    out.set.measurements.push_back(m);
    out.set.cross_offsets.push_back(beta);
    out.observations.push_back(o);
  }
  return out;
}

}  // namespace fixtures
