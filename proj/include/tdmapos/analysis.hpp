#pragma once

#include "tdmapos/run_log.hpp"

#include "json.hpp"

#include <filesystem>
#include <span>
#include <vector>

namespace tdmapos {

/// Scatter of one receiver's converged solutions. Standard deviations are
/// about the receiver's own mean; errors against truth are reported apart.
struct PositionStats {
  DeviceId receiver = 0;
  std::size_t epochs = 0;
  Vec3 mean = Vec3::Zero();
  double std_x = 0.0;
  double std_y = 0.0;
  double std_z = 0.0;
  double rms_error = 0.0;             // 3-D, against truth at the reference instant
  double rms_horizontal_error = 0.0;  // x-y only
};

inline constexpr std::size_t kMinStatEpochs = 30;

/// Throws InsufficientData when fewer than `min_epochs` converged epochs
/// are available (truth rows are matched by receiver and epoch).
PositionStats position_stats(std::span<const SolutionRecord> solutions, std::span<const TruthRecord> truth,
                             DeviceId receiver, std::size_t min_epochs = kMinStatEpochs);

struct BaselineSample {
  double time = 0.0;  // solve instant of receiver a
  double length = 0.0;
};

struct BaselineStats {
  DeviceId a = 0;
  DeviceId b = 0;
  std::vector<BaselineSample> series;
  double mean_length = 0.0;
  double std_length = 0.0;
};

/// Pairs each converged solution of `a` with the converged solution of `b`
/// nearest in solve time, if within `max_gap` seconds. Throws PairingError
/// when nothing pairs.
BaselineStats baseline_stats(std::span<const SolutionRecord> solutions, DeviceId a, DeviceId b, double max_gap);

struct TraceRow {
  double t = 0.0;        // solve instant
  double t_ref = 0.0;    // instant the state refers to
  Vec3 position = Vec3::Zero();
  Vec3 velocity = Vec3::Zero();
  double speed = 0.0;
  double speed_sigma = 0.0;
};

/// Converged epochs of one receiver in log order.
std::vector<TraceRow> trace_export(std::span<const SolutionRecord> solutions, DeviceId receiver);

struct SpectralPeak {
  double frequency = 0.0;  // Hz
  double bin_width = 0.0;  // Hz
  std::size_t bin = 0;
};

/// Largest non-DC bin of the mean-removed magnitude spectrum of a uniformly
/// sampled series.
SpectralPeak dominant_frequency(std::span<const double> samples, double sample_interval);

/// Sample mean and unbiased standard deviation, two-pass.
struct Moments {
  double mean = 0.0;
  double stddev = 0.0;
};
Moments moments(std::span<const double> values);

struct AnalysisRequest {
  std::vector<DeviceId> receivers;  // empty: every receiver in the log
  std::vector<std::pair<DeviceId, DeviceId>> baselines;
};

struct AnalysisOutput {
  std::vector<PositionStats> positions;
  std::vector<BaselineStats> baselines;
  nlohmann::json summary;
};

/// Reads the logs in `run_dir`, computes the statistics, and writes
/// summary.json, trace_<id>.csv and baseline_<a>_<b>.csv next to them.
AnalysisOutput analyze_run(const std::filesystem::path& run_dir, const AnalysisRequest& request);

}  // namespace tdmapos
