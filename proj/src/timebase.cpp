#include "tdmapos/timebase.hpp"

#include "tdmapos/errors.hpp"

#include <cmath>
#include <string>

namespace tdmapos {

namespace {

// Error-free sum: a + b == s + err exactly.
void accumulate(double& hi, double& lo, double increment) {
  const double s = hi + increment;
  const double bb = s - hi;
  const double err = (hi - (s - bb)) + (increment - bb);
  const double l = lo + err;
  hi = s + l;
  lo = l - (hi - s);
}

}  // namespace

ClockState initial_state(const ClockModel& model) {
  return ClockState{Timestamp{0.0}, model.initial_offset, model.initial_drift};
}

ClockState advance(const ClockState& state, const ClockModel& model, double dt, RandomStream& rng) {
  if (!(dt >= 0.0) || !std::isfinite(dt)) {
    throw ContractViolation("clock advance: dt must be finite and >= 0, got " + std::to_string(dt));
  }
  ClockState next = state;
  next.true_time += dt;
  double increment = state.drift * dt;

  const double q = model.drift_random_walk_psd;
  if (q > 0.0 && dt > 0.0) {
    // Joint increment of (integrated drift noise, drift noise):
    // var(drift) = q dt, var(offset) = q dt^3 / 3, cov = q dt^2 / 2.
    const double z1 = rng.normal();
    const double z2 = rng.normal();
    const double s = std::sqrt(q * dt);
    next.drift = state.drift + s * z1;
    increment += s * dt * (0.5 * z1 + z2 / (2.0 * std::sqrt(3.0)));
  }
  accumulate(next.offset, next.offset_lo, increment);
  return next;
}

Timestamp read_local(const ClockState& state, const ClockModel& model, RandomStream& rng) {
  return noiseless_local(state) + rng.normal(model.white_phase_noise_std);
}

Timestamp noiseless_local(const ClockState& state) {
  return state.true_time + state.offset + state.offset_lo;
}

Timestamp local_to_true(const ClockState& state, Timestamp local) {
  return local - state.offset - state.offset_lo;
}

double time_until_local(const ClockState& state, Timestamp target_local) {
  return (target_local - noiseless_local(state)) / (1.0 + state.drift);
}

double project_offset(const ClockState& state, Timestamp t) {
  return state.offset + (state.offset_lo + state.drift * (t - state.true_time));
}

}  // namespace tdmapos
