#pragma once

#include "tdmapos/receiver_node.hpp"
#include "tdmapos/scenario.hpp"

#include <Eigen/Core>

#include <array>
#include <optional>
#include <span>

namespace tdmapos {

/// Receiver state at the reference epoch, ordered
/// [x, y, z, clock_bias, vx, vy, vz, clock_drift]. Clock terms are carried
/// in metres (c times seconds) and metres per second.
struct NavState {
  Vec3 position = Vec3::Zero();
  double clock_bias = 0.0;  // m, c * (receiver clock - reference station clock)
  Vec3 velocity = Vec3::Zero();
  double clock_drift = 0.0;  // m/s, c * relative drift

  using Vector = Eigen::Matrix<double, 8, 1>;
  Vector to_vector() const;
  static NavState from_vector(const Vector& v);
};

using JacobianRow = Eigen::Matrix<double, 8, 1>;

/// Everything about one link that the model needs besides the state.
struct LinkGeometry {
  Vec3 station_position = Vec3::Zero();
  double station_tx_delay = 0.0;   // s
  double receiver_rx_delay = 0.0;  // s
};

/// Predicted pseudorange for a measurement taken dt seconds (receiver clock)
/// after the reference epoch from a station whose clock leads the reference
/// station's by `cross_offset` seconds:
///   |p_j - (r + v dt)| + cb + ck dt - c cross_offset + c (d_tx + d_rx).
/// Throws SingularGeometry when the receiver sits on the station.
double model_pseudorange(const NavState& x, const LinkGeometry& link, double cross_offset, double dt);

/// Analytic gradient of model_pseudorange with respect to the state.
JacobianRow jacobian_row(const NavState& x, const LinkGeometry& link, double cross_offset, double dt);

struct Dop {
  double gdop = 0.0;
  double pdop = 0.0;
  double hdop = 0.0;
  double vdop = 0.0;
};

struct SolveOptions {
  SolveMode mode = SolveMode::kDynamic;
  int max_iterations = 20;
  double step_tolerance = 1e-6;  // m
  double max_condition = 1e12;
  /// A-priori ranging noise (m). Used for gating, and for the covariance
  /// scale when the set has no redundancy. 0 = unknown.
  double range_sigma = 0.0;
  /// Lower bound on the noise scale used when standardizing residuals.
  double sigma_floor = 1e-3;
  /// Dynamic mode: when the first step moves the position further than this
  /// (m), position and bias are solved alone first from the initial guess.
  double bootstrap_distance = 1.0;
  /// Replace the initial clock bias with the mean misfit at the initial
  /// position before iterating.
  bool seed_clock_bias = true;
};

struct SolveReport {
  NavState state;
  NavState initial;  // where the iteration started
  Eigen::MatrixXd covariance;  // 8x8 (dynamic) or 4x4 (static), metres-based units
  Eigen::VectorXd residuals;   // observed minus modelled, m
  int iterations = 0;
  bool converged = false;
  Dop dop;
  double sigma0 = 0.0;  // posterior std of unit weight, m
  double condition = 0.0;
  DeviceId reference_station = 0;
  Timestamp reference_epoch;

  std::size_t state_size() const { return static_cast<std::size_t>(covariance.rows()); }
};

/// Station lookup by id for the solver.
class StationTable {
 public:
  StationTable() { index_.fill(-1); }
  explicit StationTable(std::span<const StationConfig> stations);
  const StationConfig& at(DeviceId id) const;
  bool contains(DeviceId id) const { return index_[id] >= 0; }

 private:
  std::vector<StationConfig> stations_;
  std::array<int, 256> index_{};
};

/// Per-measurement link geometry and time offset from the reference epoch.
struct PreparedMeasurement {
  LinkGeometry link;
  double rho = 0.0;
  double cross_offset = 0.0;
  double dt = 0.0;
};

std::vector<PreparedMeasurement> prepare(const MeasurementSet& set, const StationTable& stations,
                                         double receiver_rx_delay);

/// Gauss-Newton iterative least squares over the set. Throws
/// UnderdeterminedSet, or SingularGeometry when the geometry is degenerate at
/// the initial guess; non-convergence (including an iterate that wanders into
/// a degenerate spot) is reported with converged = false and the last iterate.
SolveReport solve(const MeasurementSet& set, const StationTable& stations, double receiver_rx_delay,
                  const NavState& initial, const SolveOptions& options = {});

/// Standardized residuals r_k / (sigma sqrt(1 - h_kk)). sigma is the
/// a-priori noise when known, otherwise the leave-one-out residual scale;
/// either way floored at options.sigma_floor.
Eigen::VectorXd standardized_residuals(const MeasurementSet& set, const StationTable& stations,
                                       double receiver_rx_delay, const SolveReport& report,
                                       const SolveOptions& options = {});

struct GateResult {
  MeasurementSet set;
  SolveReport report;
  std::optional<std::size_t> removed;  // index into the original set
  bool flagged = false;                // gating was needed but no removal keeps the set redundant
};

/// Single residual-gating step. Runs when the report did not converge or a
/// standardized residual exceeds `threshold`; then removes the measurement
/// whose omission leaves the best-fitting set, provided its standardized
/// prediction error against that fit also exceeds `threshold`. Flags the
/// result instead when no removal would keep the set redundant.
GateResult gate_outliers(const MeasurementSet& set, const SolveReport& report, const StationTable& stations,
                         double receiver_rx_delay, double threshold = 3.0, const SolveOptions& options = {});

std::size_t min_measurements(SolveMode mode);
inline constexpr std::size_t kMinStations = 4;

}  // namespace tdmapos
