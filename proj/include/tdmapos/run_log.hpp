#pragma once

#include "tdmapos/nav_solver.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace tdmapos {

/// One measurement as used (or refused) by one solve.
struct MeasurementRecord {
  DeviceId receiver = 0;
  std::int64_t epoch = 0;  // solve sequence number of this receiver
  double true_time = 0.0;  // reception instant
  Timestamp rx_time_local;
  DeviceId sender = 0;
  std::int64_t slot = 0;
  double rho_m = 0.0;
  std::size_t n_payload_offsets = 0;
  double resolved_beta_s = 0.0;  // NaN when dropped
  std::string dropped_reason;    // empty when used
  bool fault = false;
};

struct SolutionRecord {
  double true_time = 0.0;  // when the solve ran
  DeviceId receiver = 0;
  NavState state;
  bool converged = false;
  int iterations = 0;
  double gdop = 0.0;
  std::size_t n_meas = 0;
  std::size_t n_dropped = 0;
  // Beyond the core columns:
  std::int64_t epoch = 0;
  std::string status;  // ok | nonconverged | underdetermined | singular
  DeviceId ref_station = 0;
  double ref_true_time = 0.0;
  std::array<double, 8> sigma{};  // sqrt of covariance diagonal, NaN when not estimated
  double hdop = 0.0;
  double vdop = 0.0;
  double sigma0 = 0.0;  // m, noise scale behind sigma
  int gated = 0;  // 0 untouched, 1 one measurement removed, 2 gating needed but flagged
  bool fault = false;
};

/// Ground truth at the reference instant of one solve.
struct TruthRecord {
  double true_time = 0.0;  // solve instant, matches SolutionRecord::true_time
  DeviceId receiver = 0;
  std::int64_t epoch = 0;
  double ref_true_time = 0.0;
  Vec3 position = Vec3::Zero();
  Vec3 velocity = Vec3::Zero();
  double clock_bias_m = 0.0;
  double clock_drift_mps = 0.0;
  double receiver_offset_s = 0.0;
  double receiver_drift = 0.0;
  DeviceId ref_station = 0;
  double ref_station_offset_s = 0.0;
  double ref_station_drift = 0.0;
};

inline constexpr const char* kMeasurementLog = "measurements.csv";
inline constexpr const char* kSolutionLog = "solutions.csv";
inline constexpr const char* kTruthLog = "truth.csv";
inline constexpr const char* kManifest = "manifest.json";

void write_measurements(const std::filesystem::path& file, const std::vector<MeasurementRecord>& rows);
void write_solutions(const std::filesystem::path& file, const std::vector<SolutionRecord>& rows);
void write_truth(const std::filesystem::path& file, const std::vector<TruthRecord>& rows);

/// Readers throw DataError on missing files, unknown headers or bad numbers.
std::vector<SolutionRecord> read_solutions(const std::filesystem::path& file);
std::vector<TruthRecord> read_truth(const std::filesystem::path& file);
std::vector<MeasurementRecord> read_measurements(const std::filesystem::path& file);

}  // namespace tdmapos
