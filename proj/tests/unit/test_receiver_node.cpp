#include "doctest.h"
#include "fixtures.hpp"

#include "tdmapos/errors.hpp"
#include "tdmapos/receiver_node.hpp"
#include "tdmapos/sim_engine.hpp"

#include <algorithm>
#include <cmath>
#include <set>

using namespace tdmapos;

namespace {

Pseudorange meas(DeviceId sender, double rx_local, std::size_t payload, DeviceId first_peer = 101) {
  Pseudorange p;
  p.sender = sender;
  p.rx_time_local = Timestamp(rx_local);
  p.rho = 10.0;
  for (std::size_t i = 0; i < payload; ++i) {
    const auto peer = static_cast<DeviceId>(first_peer + i);
    if (peer == sender) {
      ++payload;
      continue;
    }
    p.payload_offsets.push_back({peer, 1e-6 * sender - 1e-6 * peer, 0.001});
  }
  return p;
}

/// One superframe after another of the six-station round robin, all tables full.
std::vector<Pseudorange> steady_buffer(std::size_t slots) {
  std::vector<Pseudorange> out;
  for (std::size_t k = 0; k < slots; ++k)
    out.push_back(meas(static_cast<DeviceId>(101 + k % 6), 1.0 + 1e-3 * static_cast<double>(k), 5));
  return out;
}

}  // namespace

TEST_CASE("form_pseudorange scales the interval by c") {
  const double range = 10.0;
  Beacon b{101, 3, 4.0, {{102, 1e-6, 0.002}}};
  const auto plain = form_pseudorange(Timestamp(4.0) + range / kSpeedOfLight, b);
  CHECK(plain.rho == doctest::Approx(10.0).epsilon(1e-12));
  CHECK(plain.payload_offsets == b.offsets);
  CHECK(plain.slot_index == 3);

  const auto ahead = form_pseudorange(Timestamp(4.0) + range / kSpeedOfLight + 100e-9, b);
  CHECK(ahead.rho == doctest::Approx(10.0 + 29.9792458).epsilon(1e-12));
}

TEST_CASE("pseudoranges decompose into range, clocks and delays") {
  auto doc = fixtures::scenario_doc("paper-static");
  for (const char* group : {"stations", "receivers"})
    for (auto& d : doc[group]) {
      d["clock"]["drift_random_walk_psd"] = 0.0;
      d["clock"]["white_phase_noise_std"] = 0.0;
    }
  doc["duration"] = 2.1;
  const auto cfg = parse_scenario(doc);
  const auto result = run(cfg);

  std::set<std::pair<DeviceId, std::int64_t>> seen;
  std::vector<double> residuals;
  for (const auto& m : result.measurements) {
    if (!seen.insert({m.receiver, m.slot}).second) continue;
    const auto& rc = cfg.receiver(m.receiver);
    const auto& st = cfg.station(m.sender);
    const Vec3 p = position_at(rc.trajectory, m.true_time - rc.rx_delay);
    const double d = (p - st.position).norm();
    const double t_tx = m.true_time - d / kSpeedOfLight - st.tx_delay - rc.rx_delay;
    const double o_r = rc.clock.initial_offset + rc.clock.initial_drift * m.true_time;
    const double o_j = st.clock.initial_offset + st.clock.initial_drift * t_tx;
    residuals.push_back(m.rho_m - d - kSpeedOfLight * (o_r - o_j) - kSpeedOfLight * (st.tx_delay + rc.rx_delay));
  }
  REQUIRE(residuals.size() >= 10000);
  const double n = static_cast<double>(residuals.size());
  double mean = 0;
  for (double r : residuals) mean += r / n;
  const double sd = std::sqrt(static_cast<double>(oracle::variance(residuals)));
  CHECK(std::abs(mean) < 4 * cfg.range_noise_std / std::sqrt(n));
  CHECK(std::abs(sd / cfg.range_noise_std - 1.0) < 0.03);
}

TEST_CASE("select_reference") {
  const std::vector<Pseudorange> one{meas(104, 2.0, 0)};
  CHECK(select_reference(one).station == 104);
  CHECK(select_reference(one).epoch == Timestamp(2.0));

  const std::vector<Pseudorange> three{meas(101, 1.0, 3), meas(102, 2.0, 5), meas(103, 3.0, 5)};
  CHECK(select_reference(three).station == 102);
  CHECK(select_reference(three).epoch == Timestamp(2.0));

  const std::vector<Pseudorange> same_time{meas(105, 1.0, 4), meas(103, 1.0, 4)};
  CHECK(select_reference(same_time).station == 103);

  CHECK_THROWS_AS(select_reference(std::vector<Pseudorange>{}), ContractViolation);
}

TEST_CASE("select_reference ignores input order") {
  RandomStream rng(53);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<Pseudorange> buf;
    const auto n = 1 + rng.bits() % 14;
    for (std::uint64_t i = 0; i < n; ++i)
      buf.push_back(meas(static_cast<DeviceId>(101 + rng.bits() % 6), 1.0 + 1e-3 * static_cast<double>(rng.bits() % 5),
                         rng.bits() % 6));
    const auto expected = select_reference(buf);
    for (int shuffle = 0; shuffle < 5; ++shuffle) {
      std::shuffle(buf.begin(), buf.end(), rng.engine());
      const auto got = select_reference(buf);
      REQUIRE(got.station == expected.station);
      REQUIRE(got.epoch == expected.epoch);
    }
  }
}

TEST_CASE("resolve_cross_offset reads the sender's own table") {
  Pseudorange m = meas(103, 1.0, 0);
  CHECK_FALSE(resolve_cross_offset(m, 101));
  m.payload_offsets = {{101, 0.0, 0.001}, {102, 0.0, 0.001}};
  CHECK(*resolve_cross_offset(m, 101) == 0.0);

  const double o_101 = 1.2e-5, o_103 = -7.5e-6;
  m.payload_offsets = {{101, o_103 - o_101, 0.001}};
  CHECK(*resolve_cross_offset(m, 101) == o_103 - o_101);
  CHECK_THROWS_AS(resolve_cross_offset(m, 103), ContractViolation);
}

TEST_CASE("resolved offsets track the true clock difference in simulation") {
  auto doc = fixtures::scenario_doc("paper-static");
  doc["duration"] = 1.0;
  for (auto& d : doc["stations"]) {
    d["clock"]["drift_random_walk_psd"] = 0.0;
    d["clock"]["white_phase_noise_std"] = 0.0;
  }
  const auto cfg = parse_scenario(doc);
  const auto result = run(cfg);
  // Prediction spread of an 8-sample line fit evaluated up to 1.5 sample
  // spacings past its newest sample, from the station TOA noise alone.
  const double sample = cfg.station_toa_noise_std / kSpeedOfLight;
  const double x_mean = 3.5, sxx = 42.0, x_target = 7 + cfg.tracking.max_offset_age_superframes;
  const double sigma = sample * std::sqrt(1.0 / 8 + (x_target - x_mean) * (x_target - x_mean) / sxx);

  std::size_t checked = 0, beyond = 0;
  double worst = 0;
  for (const auto& m : result.measurements) {
    if (!m.dropped_reason.empty() || m.resolved_beta_s == 0.0) continue;
    const auto& sol = *std::find_if(result.solutions.begin(), result.solutions.end(),
                                    [&](const SolutionRecord& s) { return s.receiver == m.receiver && s.epoch == m.epoch; });
    const auto& st = cfg.station(m.sender);
    const auto& ref = cfg.station(sol.ref_station);
    const double truth = (st.clock.initial_offset + st.clock.initial_drift * m.true_time) -
                         (ref.clock.initial_offset + ref.clock.initial_drift * m.true_time);
    const double err = std::abs(m.resolved_beta_s - truth);
    worst = std::max(worst, err);
    beyond += err > 3 * sigma;
    ++checked;
  }
  CHECK(checked > 1000);
  CHECK(static_cast<double>(beyond) / static_cast<double>(checked) < 0.01);
  CHECK(worst < 5 * sigma);
}

TEST_CASE("assemble_set windows") {
  const auto buf = steady_buffer(30);
  const auto last8 = assemble_set(buf, SolveWindow::last(8));
  CHECK(last8.measurements.size() == 8);
  CHECK(last8.dropped.empty());
  CHECK(last8.distinct_stations() == 6);

  const auto one_sf = collect_set(buf, SolveWindow::span(0.006 - 0.0005));
  CHECK(one_sf.measurements.size() == 6);
  CHECK(one_sf.distinct_stations() == 6);

  const auto two_sf = assemble_set(buf, SolveWindow::span(0.012 - 0.0005));
  CHECK(two_sf.measurements.size() == 12);
  const auto ref = std::find_if(two_sf.measurements.begin(), two_sf.measurements.end(),
                                [&](const Pseudorange& p) { return p.rx_time_local == two_sf.reference_epoch; });
  REQUIRE(ref != two_sf.measurements.end());
  CHECK(ref->sender == two_sf.reference_station);
  for (std::size_t k = 0; k < two_sf.measurements.size(); ++k) {
    const auto& m = two_sf.measurements[k];
    if (m.sender == two_sf.reference_station) {
      CHECK(two_sf.cross_offsets[k] == 0.0);
    } else {
      const auto e = std::find_if(m.payload_offsets.begin(), m.payload_offsets.end(),
                                  [&](const OffsetEntry& o) { return o.peer == two_sf.reference_station; });
      REQUIRE(e != m.payload_offsets.end());
      CHECK(two_sf.cross_offsets[k] == e->offset);
    }
  }
}

TEST_CASE("cold start is underdetermined") {
  std::vector<Pseudorange> buf;
  for (int k = 0; k < 12; ++k) buf.push_back(meas(static_cast<DeviceId>(101 + k % 6), 1e-3 * k, 0));
  const auto set = collect_set(buf, SolveWindow::last(12));
  CHECK(set.measurements.size() == 2);
  CHECK(set.dropped.size() == 10);
  for (const auto& d : set.dropped) CHECK(d.reason == kOffsetUnavailable);
  CHECK_THROWS_AS(assemble_set(buf, SolveWindow::last(12)), UnderdeterminedSet);
}

TEST_CASE("steady-state simulation references carry full tables") {
  auto doc = fixtures::scenario_doc("paper-static");
  doc["duration"] = 0.5;
  const auto result = run(parse_scenario(doc));
  std::size_t checked = 0;
  for (const auto& m : result.measurements) {
    if (m.true_time < 0.05) continue;
    const auto& sol = *std::find_if(result.solutions.begin(), result.solutions.end(),
                                    [&](const SolutionRecord& s) { return s.receiver == m.receiver && s.epoch == m.epoch; });
    if (m.sender != sol.ref_station) continue;
    CHECK(m.n_payload_offsets == 5);
    ++checked;
  }
  CHECK(checked > 100);
}
