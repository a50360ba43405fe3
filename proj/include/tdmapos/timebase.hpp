#pragma once

#include "tdmapos/random.hpp"
#include "tdmapos/units.hpp"

namespace tdmapos {

/// Oscillator model of one device: affine clock plus random-walk drift and
/// white phase jitter on readings.
struct ClockModel {
  double initial_offset = 0.0;         // s, local minus true at t = 0
  double initial_drift = 0.0;          // s/s
  double drift_random_walk_psd = 0.0;  // (s/s)^2 per second
  double white_phase_noise_std = 0.0;  // s, per reading
};

/// Clock sampled at one true instant. local = true_time + offset.
struct ClockState {
  Timestamp true_time;
  double offset = 0.0;
  double drift = 0.0;
  // Rounding error of `offset`, so that millions of tiny increments do not
  // accumulate double rounding. offset + offset_lo is the offset.
  double offset_lo = 0.0;
};

ClockState initial_state(const ClockModel& model);

/// Evolves the clock by dt >= 0 seconds of true time. The drift performs a
/// random walk with variance psd*dt; the offset integrates the drift exactly
/// (the integrated-noise term is drawn jointly with the drift increment).
ClockState advance(const ClockState& state, const ClockModel& model, double dt, RandomStream& rng);

/// Local reading at the state's instant, including white phase noise.
Timestamp read_local(const ClockState& state, const ClockModel& model, RandomStream& rng);

/// Noiseless reading at the state's instant.
Timestamp noiseless_local(const ClockState& state);

/// Inverse of the noiseless reading at the sampled instant.
Timestamp local_to_true(const ClockState& state, Timestamp local);

/// True-time interval until the clock would read `target_local`, assuming
/// the current offset and drift hold (no noise).
double time_until_local(const ClockState& state, Timestamp target_local);

/// Offset the clock would have at `t` if it continued affinely from `state`.
/// Used only for ground-truth bookkeeping between events.
double project_offset(const ClockState& state, Timestamp t);

}  // namespace tdmapos
