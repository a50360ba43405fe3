#include "doctest.h"
#include "fixtures.hpp"

#include "tdmapos/errors.hpp"
#include "tdmapos/station_node.hpp"

#include <cmath>

using namespace tdmapos;

namespace {

StationConfig station(DeviceId id, Vec3 p, double tx = 0.0, double rx = 0.0) {
  StationConfig s;
  s.id = id;
  s.position = p;
  s.tx_delay = tx;
  s.rx_delay = rx;
  return s;
}

OffsetTrack track_of(DeviceId peer, std::initializer_list<std::pair<double, double>> samples, std::size_t cap = 8) {
  OffsetTrack t{peer, cap, {}, std::nullopt};
  for (auto [at, v] : samples) t = update_track(t, OffsetSample{peer, Timestamp(at), v});
  return t;
}

/// Affine clock for the mesh below: local(t) = t + offset + drift * t.
struct Affine {
  double offset = 0, drift = 0;
  Timestamp local(Timestamp t) const { return t + offset + drift * t.to_double(); }
  Timestamp true_of(Timestamp local) const {
    const Timestamp t0 = local - offset;
    return t0 - drift * t0.to_double() / (1 + drift);
  }
};

/// Runs the round-robin mesh with noiseless affine clocks for `slots` slots and
/// returns the nodes; `on_beacon` sees every beacon with its true transmit time.
template <class F>
std::vector<StationNode> run_mesh(const ScenarioConfig& cfg, const std::vector<Affine>& clocks, std::int64_t slots,
                                  F&& on_beacon) {
  const auto schedule = make_schedule(cfg);
  std::vector<StationNode> nodes;
  for (const auto& s : cfg.stations) nodes.emplace_back(s, cfg.tracking.window, 1e9);
  auto index_of = [&](DeviceId id) {
    for (std::size_t i = 0; i < cfg.stations.size(); ++i)
      if (cfg.stations[i].id == id) return i;
    throw std::logic_error("unknown station");
  };
  for (std::int64_t k = 0; k < slots; ++k) {
    const auto j = index_of(schedule.owner(k));
    const Beacon b = nodes[j].make_beacon(schedule, k);
    const Timestamp t_tx = clocks[j].true_of(Timestamp(b.tx_time_local));
    on_beacon(b, t_tx, j);
    const Beacon heard = decode_beacon(encode_beacon(b));
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      if (i == j) continue;
      const auto& self = cfg.stations[i];
      const auto& peer = cfg.stations[j];
      const Timestamp t_rx = t_tx + (self.position - peer.position).norm() / kSpeedOfLight + peer.tx_delay + self.rx_delay;
      nodes[i].on_receive(clocks[i].local(t_rx), heard, peer);
    }
  }
  return nodes;
}

}  // namespace

TEST_CASE("measure_offset examples") {
  const auto a = station(1, Vec3(0, 0, 0));
  const auto b = station(2, Vec3(0, 0, 0));
  Beacon beacon{2, 0, 5.0, {}};
  CHECK(measure_offset(Timestamp(5.0), beacon, a, b).value == 0.0);

  const auto far = station(2, Vec3(299.792458, 0, 0));
  beacon.tx_time_local = 0.0;
  CHECK(std::abs(measure_offset(Timestamp(1e-6), beacon, a, far).value) < 1e-21);
}

TEST_CASE("measure_offset inverts the reception model") {
  RandomStream rng(31);
  double worst = 0;
  for (int i = 0; i < 20000; ++i) {
    const auto self = station(1, Vec3(rng.uniform(-50, 50), rng.uniform(-50, 50), rng.uniform(0, 5)), 0,
                              rng.uniform(0, 1e-6));
    const auto peer = station(2, Vec3(rng.uniform(-50, 50), rng.uniform(-50, 50), rng.uniform(0, 5)),
                              rng.uniform(0, 1e-6), 0);
    const double b = rng.uniform(-1e-3, 1e-3);
    const double tx = rng.uniform(0, 100);
    const long double flight = (self.position - peer.position).norm() / kSpeedOfLight;
    // T_rx = T_tx + D + d_tx + d_rx + b(peer->self)
    const Timestamp rx = Timestamp(static_cast<long double>(tx)) + static_cast<double>(flight) + peer.tx_delay +
                         self.rx_delay + b;
    Beacon beacon{2, 0, tx, {}};
    worst = std::max(worst, std::abs(measure_offset(rx, beacon, self, peer).value - b));
  }
  CHECK(worst < 1e-15);
}

TEST_CASE("measure_offset rejects bad input") {
  const auto a = station(1, Vec3::Zero());
  const auto b = station(2, Vec3(1, 0, 0));
  CHECK_THROWS_AS(measure_offset(Timestamp(1.0), Beacon{3, 0, 0.5, {}}, a, b), ContractViolation);
  CHECK_THROWS_AS(measure_offset(Timestamp(1.0), Beacon{2, 0, std::nan(""), {}}, a, b), ContractViolation);
}

TEST_CASE("update_track fits lines") {
  const auto flat = track_of(7, {{0, 2e-6}, {1, 2e-6}});
  REQUIRE(flat.fit);
  CHECK(flat.fit->drift == 0.0);
  CHECK(flat.fit->at(Timestamp(0.0)) == doctest::Approx(2e-6).epsilon(1e-15));

  const auto ramp = track_of(7, {{0, 0}, {1, 1e-9}, {2, 2e-9}});
  CHECK(ramp.fit->drift == doctest::Approx(1e-9).epsilon(1e-12));

  CHECK_FALSE(track_of(7, {{0, 1e-6}}).fit);
}

TEST_CASE("update_track agrees with a normal-equation fit") {
  RandomStream rng(37);
  for (int trial = 0; trial < 200; ++trial) {
    const double b0 = rng.uniform(-1e-4, 1e-4), k = rng.uniform(-1e-7, 1e-7);
    const double start = rng.uniform(0, 1000);
    OffsetTrack t{3, 8, {}, std::nullopt};
    std::vector<long double> ts, ys;
    for (int i = 0; i < 8; ++i) {
      const double at = start + 0.006 * i + rng.uniform(0, 1e-5);
      const double v = b0 + k * at + rng.normal(1e-9);
      t = update_track(t, OffsetSample{3, Timestamp(at), v});
      ts.push_back(at - start);
      ys.push_back(v);
    }
    const auto [intercept, slope] = oracle::line_fit(ts, ys);
    const double ours_at_start = t.fit->at(Timestamp(start));
    REQUIRE(std::abs(t.fit->drift / static_cast<double>(slope) - 1.0) < 1e-12);
    REQUIRE(std::abs(ours_at_start - static_cast<double>(intercept)) <= 1e-12 * std::abs(static_cast<double>(intercept)));
  }
}

TEST_CASE("track window keeps order and capacity") {
  OffsetTrack t{4, 3, {}, std::nullopt};
  for (int i = 0; i < 10; ++i) {
    t = update_track(t, OffsetSample{4, Timestamp(0.1 * i), 1e-6 * i});
    CHECK(t.window.size() == std::min(i + 1, 3));
  }
  CHECK(t.window.front().measured_at_local == Timestamp(0.1 * 7));
  CHECK(t.window.back().measured_at_local == Timestamp(0.1 * 9));
  CHECK_THROWS_AS(update_track(t, OffsetSample{4, Timestamp(0.9), 0.0}), StalenessError);
  CHECK_THROWS_AS(update_track(t, OffsetSample{4, Timestamp(0.5), 0.0}), StalenessError);
}

TEST_CASE("extrapolate_offset") {
  const auto flat = track_of(2, {{0, 2e-6}, {1, 2e-6}});
  CHECK(extrapolate_offset(flat, Timestamp(123.0)).value == doctest::Approx(2e-6).epsilon(1e-15));
  const auto ramp = track_of(2, {{0, 0}, {1, 1e-9}});
  const auto e = extrapolate_offset(ramp, Timestamp(10.0));
  CHECK(e.value == doctest::Approx(1e-8).epsilon(1e-12));
  CHECK(e.age == doctest::Approx(9.0));
  CHECK_THROWS_AS(extrapolate_offset(track_of(2, {{0, 1e-6}}), Timestamp(1.0)), InsufficientHistory);
}

TEST_CASE("extrapolation error one superframe ahead matches a Monte-Carlo prediction") {
  // Pair of clocks with random-walk drift, sampled once per superframe with
  // white timing noise. The oracle simulates the same process with its own
  // arithmetic to get the prediction-error spread.
  const double superframe = 0.006, q = 1e-20, white = 1e-11;
  const int window = 8;

  auto oracle_error = [&](RandomStream& rng) {
    long double offset = 0, drift = 0;
    std::vector<long double> ts, ys;
    const double s = std::sqrt(2 * q * superframe);
    for (int i = 0; i <= window + 40; ++i) {
      const double z1 = rng.normal(), z2 = rng.normal();
      offset += drift * superframe + s * superframe * (0.5 * z1 + z2 / (2 * std::sqrt(3.0)));
      drift += s * z1;
      if (i >= 40) {
        ts.push_back(superframe * (i - 40));
        ys.push_back(offset + rng.normal(white));
      }
    }
    const auto [a, b] = oracle::line_fit(std::span(ts).first(window), std::span(ys).first(window));
    // The last sample is the target instant: predict it from the window before it.
    const long double predicted = a + b * ts.back();
    const long double target_truth = ys.back();
    return static_cast<double>(predicted - target_truth);
  };

  RandomStream orng(41);
  std::vector<double> oracle_errors;
  for (int i = 0; i < 20000; ++i) oracle_errors.push_back(oracle_error(orng));
  const double sigma = std::sqrt(static_cast<double>(oracle::variance(oracle_errors)));

  ClockModel m;
  m.drift_random_walk_psd = q;
  RandomStream crng(43), nrng(47);
  std::vector<double> errors;
  std::size_t beyond = 0;
  for (int trial = 0; trial < 2000; ++trial) {
    ClockState a = initial_state(m), b = initial_state(m);
    OffsetTrack track{2, static_cast<std::size_t>(window), {}, std::nullopt};
    for (int i = 0; i < 40; ++i) {
      a = advance(a, m, superframe, crng);
      b = advance(b, m, superframe, crng);
    }
    for (int i = 0; i <= window; ++i) {
      const double value = (a.offset + a.offset_lo) - (b.offset + b.offset_lo) + nrng.normal(white);
      if (i < window) {
        track = update_track(track, OffsetSample{2, noiseless_local(a), value});
      } else {
        const double err = extrapolate_offset(track, noiseless_local(a)).value - value;
        errors.push_back(err);
        beyond += std::abs(err) > 3 * sigma;
      }
      a = advance(a, m, superframe, crng);
      b = advance(b, m, superframe, crng);
    }
  }
  const double rms = std::sqrt(static_cast<double>(oracle::variance(errors)));
  CHECK(std::abs(rms / sigma - 1.0) < 0.1);
  CHECK(static_cast<double>(beyond) / static_cast<double>(errors.size()) < 0.01);
}

TEST_CASE("build_beacon") {
  SlotSchedule sched;
  sched.assignment = {1, 2, 3};
  const auto s1 = station(1, Vec3::Zero());
  const std::map<DeviceId, OffsetTrack> none;
  const auto cold = build_beacon(s1, sched, 3, none);
  CHECK(cold.offsets.empty());
  CHECK(cold.sender == 1);
  CHECK(cold.tx_time_local == doctest::Approx(0.0031));
  CHECK_THROWS_AS(build_beacon(s1, sched, 4, none), SchedulingError);

  std::map<DeviceId, OffsetTrack> tracks;
  tracks[2] = track_of(2, {{0.0011, 1e-6}, {0.0041, 1.5e-6}});
  tracks[3] = track_of(3, {{0.0021, -2e-6}});
  const auto b = build_beacon(s1, sched, 6, tracks);
  REQUIRE(b.offsets.size() == 1);
  const auto e = extrapolate_offset(tracks[2], Timestamp(b.tx_time_local));
  CHECK(b.offsets[0].peer == 2);
  CHECK(b.offsets[0].offset == e.value);
  CHECK(b.offsets[0].age == e.age);

  CHECK(build_beacon(s1, sched, 6, tracks, 0.001).offsets.empty());
}

TEST_CASE("six-station mesh fills the offset tables") {
  const auto cfg = fixtures::scenario("paper-static");
  std::vector<Affine> clocks;
  for (const auto& s : cfg.stations) clocks.push_back({s.clock.initial_offset, s.clock.initial_drift});
  const std::int64_t n = static_cast<std::int64_t>(cfg.superframe.size());
  std::map<std::int64_t, std::size_t> sizes;
  double worst = 0;
  run_mesh(cfg, clocks, 4 * n, [&](const Beacon& b, Timestamp t_tx, std::size_t j) {
    sizes[b.slot_index] = b.offsets.size();
    for (const auto& o : b.offsets) {
      std::size_t p = 0;
      while (cfg.stations[p].id != o.peer) ++p;
      const double t = t_tx.to_double();
      const double truth = (clocks[j].offset + clocks[j].drift * t) - (clocks[p].offset + clocks[p].drift * t);
      worst = std::max(worst, std::abs(o.offset - truth));
    }
  });
  for (std::int64_t k = 0; k < n; ++k) CHECK(sizes[k] == 0);
  CHECK(sizes[2 * n - 1] == 5);
  for (std::int64_t k = 2 * n; k < 4 * n; ++k) CHECK(sizes[k] == 5);
  CHECK(worst < 1e-12);
}

TEST_CASE("frozen clocks give antisymmetric pairwise offsets") {
  const auto cfg = fixtures::scenario("paper-static");
  std::vector<Affine> clocks;
  for (const auto& s : cfg.stations) clocks.push_back({s.clock.initial_offset, 0});
  const auto nodes = run_mesh(cfg, clocks, 3 * static_cast<std::int64_t>(cfg.superframe.size()),
                              [](const Beacon&, Timestamp, std::size_t) {});
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    for (std::size_t j = 0; j < nodes.size(); ++j) {
      if (i == j) continue;
      const auto& ab = nodes[i].tracks().at(cfg.stations[j].id).window;
      const auto& ba = nodes[j].tracks().at(cfg.stations[i].id).window;
      for (std::size_t k = 0; k < ab.size(); ++k) CHECK(ab[k].value == -ba[k].value);
    }
  }
}
