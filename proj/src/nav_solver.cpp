#include "tdmapos/nav_solver.hpp"

#include "tdmapos/errors.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <limits>

namespace tdmapos {

NavState::Vector NavState::to_vector() const {
  Vector v;
  v << position, clock_bias, velocity, clock_drift;
  return v;
}

NavState NavState::from_vector(const Vector& v) {
  NavState s;
  s.position = v.segment<3>(0);
  s.clock_bias = v[3];
  s.velocity = v.segment<3>(4);
  s.clock_drift = v[7];
  return s;
}

namespace {

constexpr double kMinRange = 1e-9;  // m
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr double kStageTolerance = 1e-2;  // m, intermediate bootstrap stages

Vec3 line_of_sight(const NavState& x, const LinkGeometry& link, double dt, double& range) {
  const Vec3 d = link.station_position - (x.position + x.velocity * dt);
  range = d.norm();
  if (!(range > kMinRange)) {
    throw SingularGeometry("receiver coincides with a station", std::numeric_limits<double>::infinity());
  }
  return d / range;
}

}  // namespace

double model_pseudorange(const NavState& x, const LinkGeometry& link, double cross_offset, double dt) {
  double range = 0.0;
  line_of_sight(x, link, dt, range);
  return range + x.clock_bias + x.clock_drift * dt - kSpeedOfLight * cross_offset +
         kSpeedOfLight * (link.station_tx_delay + link.receiver_rx_delay);
}

JacobianRow jacobian_row(const NavState& x, const LinkGeometry& link, double /*cross_offset*/, double dt) {
  double range = 0.0;
  const Vec3 u = line_of_sight(x, link, dt, range);
  JacobianRow row;
  row << -u, 1.0, -u * dt, dt;
  return row;
}

StationTable::StationTable(std::span<const StationConfig> stations) : stations_(stations.begin(), stations.end()) {
  index_.fill(-1);
  for (std::size_t i = 0; i < stations_.size(); ++i) index_[stations_[i].id] = static_cast<int>(i);
}

const StationConfig& StationTable::at(DeviceId id) const {
  if (index_[id] < 0) throw ContractViolation("unknown station id " + std::to_string(id));
  return stations_[static_cast<std::size_t>(index_[id])];
}

std::size_t min_measurements(SolveMode mode) { return mode == SolveMode::kDynamic ? 8 : 4; }

std::vector<PreparedMeasurement> prepare(const MeasurementSet& set, const StationTable& stations,
                                         double receiver_rx_delay) {
  std::vector<PreparedMeasurement> out;
  out.reserve(set.measurements.size());
  for (std::size_t k = 0; k < set.measurements.size(); ++k) {
    const auto& m = set.measurements[k];
    const auto& st = stations.at(m.sender);
    out.push_back(PreparedMeasurement{LinkGeometry{st.position, st.tx_delay, receiver_rx_delay}, m.rho,
                                      set.cross_offsets[k], m.rx_time_local - set.reference_epoch});
  }
  return out;
}

namespace {

struct Linearization {
  Eigen::MatrixXd jacobian;
  Eigen::VectorXd residuals;
};

Linearization linearize(const std::vector<PreparedMeasurement>& ms, const NavState& x, Eigen::Index p) {
  const auto n = static_cast<Eigen::Index>(ms.size());
  Linearization lin{Eigen::MatrixXd(n, p), Eigen::VectorXd(n)};
  for (Eigen::Index k = 0; k < n; ++k) {
    const auto& m = ms[static_cast<std::size_t>(k)];
    lin.residuals[k] = m.rho - model_pseudorange(x, m.link, m.cross_offset, m.dt);
    lin.jacobian.row(k) = jacobian_row(x, m.link, m.cross_offset, m.dt).head(p).transpose();
  }
  return lin;
}

struct NormalInverse {
  Eigen::MatrixXd inverse;
  double condition = 0.0;
};

NormalInverse invert_normal(const Eigen::MatrixXd& jacobian, double max_condition) {
  const Eigen::MatrixXd normal = jacobian.transpose() * jacobian;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(normal);
  const auto& lambda = eig.eigenvalues();  // ascending
  const double lo = lambda[0];
  const double hi = lambda[lambda.size() - 1];
  const double condition = lo > 0.0 ? hi / lo : std::numeric_limits<double>::infinity();
  if (!(condition <= max_condition)) {
    throw SingularGeometry("normal matrix is rank deficient (condition " + std::to_string(condition) + ")",
                           condition);
  }
  const Eigen::MatrixXd& v = eig.eigenvectors();
  return NormalInverse{v * lambda.cwiseInverse().asDiagonal() * v.transpose(), condition};
}

}  // namespace

namespace {

// Bias that best explains the set with everything else held at x: the mean
// residual after removing the current bias.
double fitted_clock_bias(const std::vector<PreparedMeasurement>& ms, const NavState& x) {
  double sum = 0.0;
  for (const auto& m : ms) sum += m.rho - (model_pseudorange(x, m.link, m.cross_offset, m.dt) - x.clock_bias);
  return sum / static_cast<double>(ms.size());
}

struct Iteration {
  NavState state;
  int iterations = 0;
  bool converged = false;
  double first_position_step = 0.0;
};

// Undamped Gauss-Newton over the state components listed in `free`; the
// rest stay at their values in x.
Iteration gauss_newton(const std::vector<PreparedMeasurement>& ms, NavState x, const std::vector<int>& free,
                       int max_iterations, const SolveOptions& options, bool first_pass) {
  Iteration out;
  out.state = x;
  const auto q = static_cast<Eigen::Index>(free.size());
  for (int iter = 1; iter <= max_iterations; ++iter) {
    Eigen::VectorXd step;
    Eigen::MatrixXd jac;
    try {
      const auto lin = linearize(ms, x, 8);
      jac.resize(lin.jacobian.rows(), q);
      for (Eigen::Index j = 0; j < q; ++j) jac.col(j) = lin.jacobian.col(free[static_cast<std::size_t>(j)]);
      const auto ni = invert_normal(jac, options.max_condition);
      step = ni.inverse * (jac.transpose() * lin.residuals);
    } catch (const SingularGeometry&) {
      // Degenerate at the caller's guess is a geometry problem; an iterate
      // that wanders into a degenerate spot is plain non-convergence.
      if (first_pass && iter == 1) throw;
      break;
    }
    NavState::Vector full = NavState::Vector::Zero();
    for (Eigen::Index j = 0; j < q; ++j) full[free[static_cast<std::size_t>(j)]] = step[j];
    if (iter == 1) out.first_position_step = full.head<3>().norm();
    x = NavState::from_vector(x.to_vector() + full);
    out.state = x;
    out.iterations = iter;
    if (!x.to_vector().allFinite()) break;
    if (step.norm() < options.step_tolerance) {
      out.converged = true;
      break;
    }
    if (first_pass && iter == 1 && max_iterations > 1 && out.first_position_step > options.bootstrap_distance) break;
  }
  return out;
}

}  // namespace

SolveReport solve(const MeasurementSet& set, const StationTable& stations, double receiver_rx_delay,
                  const NavState& initial, const SolveOptions& options) {
  if (set.measurements.size() != set.cross_offsets.size()) {
    throw ContractViolation("solve: cross_offsets must match measurements");
  }
  require_diversity(set, min_measurements(options.mode), kMinStations);

  const Eigen::Index p = options.mode == SolveMode::kDynamic ? 8 : 4;
  const auto ms = prepare(set, stations, receiver_rx_delay);

  NavState x = initial;
  if (options.mode == SolveMode::kStatic) {
    x.velocity.setZero();
    x.clock_drift = 0.0;
  }
  if (options.seed_clock_bias) x.clock_bias = fitted_clock_bias(ms, x);

  SolveReport report;
  report.initial = x;
  report.reference_station = set.reference_station;
  report.reference_epoch = set.reference_epoch;

  const std::vector<int> all = p == 8 ? std::vector<int>{0, 1, 2, 3, 4, 5, 6, 7} : std::vector<int>{0, 1, 2, 3};
  auto it = gauss_newton(ms, x, all, options.max_iterations, options, true);
  if (!it.converged && it.iterations == 1 && options.max_iterations > 1 &&
      it.first_position_step > options.bootstrap_distance) {
    // Far from the solution the weakly observed directions (height, and the
    // dt-scaled velocity columns) overshoot into a mirror basin. Settle the
    // horizontal position and bias first, then height, then everything.
    const std::vector<std::vector<int>> stages{{0, 1, 3}, {0, 1, 2, 3}, all};
    NavState y = x;
    y.velocity.setZero();
    y.clock_drift = 0.0;
    int used = 1;
    for (std::size_t k = 0; k < stages.size(); ++k) {
      if (k == 1 && p == 4) continue;
      SolveOptions stage = options;
      if (k + 1 < stages.size()) stage.step_tolerance = std::max(options.step_tolerance, kStageTolerance);
      it = gauss_newton(ms, y, stages[k], options.max_iterations - used, stage, false);
      used += it.iterations;
      y = it.state;
      if (!it.converged) break;
    }
    it.iterations = used;
  }
  x = it.state;
  report.iterations = it.iterations;
  report.converged = it.converged;

  report.state = x;
  const auto n = static_cast<Eigen::Index>(ms.size());
  const auto fail = [&] {
    report.converged = false;
    report.covariance = Eigen::MatrixXd::Constant(p, p, kNaN);
    report.residuals = Eigen::VectorXd::Constant(n, kNaN);
    report.sigma0 = report.condition = kNaN;
    report.dop = Dop{kNaN, kNaN, kNaN, kNaN};
    return report;
  };
  if (!x.to_vector().allFinite()) return fail();

  Linearization lin;
  NormalInverse ni;
  try {
    lin = linearize(ms, x, p);
    ni = invert_normal(lin.jacobian, options.max_condition);
  } catch (const SingularGeometry&) {
    if (report.converged) throw;
    return fail();
  }
  const Eigen::Index dof = n - p;
  const double sigma2 =
      dof > 0 ? lin.residuals.squaredNorm() / static_cast<double>(dof) : options.range_sigma * options.range_sigma;

  report.residuals = lin.residuals;
  report.sigma0 = std::sqrt(sigma2);
  report.covariance = sigma2 * 0.5 * (ni.inverse + ni.inverse.transpose());
  report.condition = ni.condition;
  const auto& q = ni.inverse;
  report.dop.hdop = std::sqrt(q(0, 0) + q(1, 1));
  report.dop.vdop = std::sqrt(q(2, 2));
  report.dop.pdop = std::sqrt(q(0, 0) + q(1, 1) + q(2, 2));
  report.dop.gdop = std::sqrt(q(0, 0) + q(1, 1) + q(2, 2) + q(3, 3));
  return report;
}

Eigen::VectorXd standardized_residuals(const MeasurementSet& set, const StationTable& stations,
                                       double receiver_rx_delay, const SolveReport& report,
                                       const SolveOptions& options) {
  const Eigen::Index p = options.mode == SolveMode::kDynamic ? 8 : 4;
  const auto ms = prepare(set, stations, receiver_rx_delay);
  const auto lin = linearize(ms, report.state, p);
  const auto ni = invert_normal(lin.jacobian, std::numeric_limits<double>::infinity());
  const auto n = lin.residuals.size();
  const Eigen::Index dof = n - p;
  const double rss = lin.residuals.squaredNorm();

  Eigen::VectorXd z = Eigen::VectorXd::Zero(n);
  for (Eigen::Index k = 0; k < n; ++k) {
    const double h = lin.jacobian.row(k) * ni.inverse * lin.jacobian.row(k).transpose();
    const double free = 1.0 - h;
    if (!(free > 1e-12)) continue;  // fully determined by this one measurement
    const double r = lin.residuals[k];
    double sigma = options.range_sigma;
    if (!(sigma > 0.0)) {
      if (dof < 2) continue;
      sigma = std::sqrt(std::max(0.0, rss - r * r / free) / static_cast<double>(dof - 1));
    }
    sigma = std::max(sigma, options.sigma_floor);
    z[k] = r / (sigma * std::sqrt(free));
  }
  return z;
}

GateResult gate_outliers(const MeasurementSet& set, const SolveReport& report, const StationTable& stations,
                         double receiver_rx_delay, double threshold, const SolveOptions& options) {
  GateResult out{set, report, std::nullopt, false};
  if (set.measurements.empty()) return out;
  const auto p = static_cast<std::size_t>(options.mode == SolveMode::kDynamic ? 8 : 4);

  if (report.converged) {
    const auto z = standardized_residuals(set, stations, receiver_rx_delay, report, options);
    if (!(z.cwiseAbs().maxCoeff() > threshold)) return out;
  }

  // Leave each measurement out in turn and keep the removal whose remaining
  // set fits best. For a known noise level and near-linear geometry this is
  // the measurement with the largest standardized residual; unlike that
  // statistic it still works when the blunder has dragged the full fit away
  // or stopped it converging.
  const auto ms = prepare(set, stations, receiver_rx_delay);
  std::optional<std::size_t> best;
  SolveReport best_report;
  double best_rss = std::numeric_limits<double>::infinity();
  bool any_removable = false;
  for (std::size_t k = 0; k < set.measurements.size(); ++k) {
    MeasurementSet reduced = set;
    reduced.measurements.erase(reduced.measurements.begin() + static_cast<std::ptrdiff_t>(k));
    reduced.cross_offsets.erase(reduced.cross_offsets.begin() + static_cast<std::ptrdiff_t>(k));
    // Without redundancy the re-solve fits anything exactly and cannot
    // confirm the removal.
    if (reduced.measurements.size() <= p || reduced.distinct_stations() < kMinStations) continue;
    any_removable = true;
    SolveReport r;
    try {
      r = solve(reduced, stations, receiver_rx_delay, report.initial, options);
    } catch (const SingularGeometry&) {
      continue;
    }
    if (!r.converged) continue;
    const double rss = r.residuals.squaredNorm();
    if (rss < best_rss) {
      best_rss = rss;
      best = k;
      best_report = std::move(r);
    }
  }
  if (!any_removable) {
    out.flagged = true;
    return out;
  }
  if (!best) return out;

  // Standardized prediction error of the left-out measurement against the
  // fit to the rest.
  const auto& m = ms[*best];
  const Eigen::Index q = static_cast<Eigen::Index>(p);
  MeasurementSet reduced = set;
  reduced.measurements.erase(reduced.measurements.begin() + static_cast<std::ptrdiff_t>(*best));
  reduced.cross_offsets.erase(reduced.cross_offsets.begin() + static_cast<std::ptrdiff_t>(*best));
  const auto lin = linearize(prepare(reduced, stations, receiver_rx_delay), best_report.state, q);
  const auto ni = invert_normal(lin.jacobian, std::numeric_limits<double>::infinity());
  const double d = m.rho - model_pseudorange(best_report.state, m.link, m.cross_offset, m.dt);
  const Eigen::VectorXd j = jacobian_row(best_report.state, m.link, m.cross_offset, m.dt).head(q);
  double sigma = options.range_sigma > 0.0 ? options.range_sigma : best_report.sigma0;
  sigma = std::max(sigma, options.sigma_floor);
  const double t = d / (sigma * std::sqrt(1.0 + j.dot(ni.inverse * j)));
  if (!(std::abs(t) > threshold)) return out;

  // The reference epoch stays put even if the reference measurement itself is
  // removed: the state is still defined at that instant.
  reduced.dropped.push_back(DroppedMeasurement{set.measurements[*best], "outlier"});
  out.set = std::move(reduced);
  out.report = std::move(best_report);
  out.removed = best;
  return out;
}

}  // namespace tdmapos
