#include "tdmapos/analysis.hpp"

#include "tdmapos/errors.hpp"

#include <fmt/format.h>
#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <cmath>
#include <complex>
#include <fstream>
#include <map>
#include <set>

namespace tdmapos {

namespace {

bool usable(const SolutionRecord& s) { return s.converged && s.status == "ok"; }

void write_text(const std::filesystem::path& file, const std::string& text) {
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + file.string());
  out << text;
}

double median_spacing(const std::vector<double>& t) {
  if (t.size() < 2) return 0.0;
  std::vector<double> d;
  d.reserve(t.size() - 1);
  for (std::size_t i = 1; i < t.size(); ++i) d.push_back(t[i] - t[i - 1]);
  std::nth_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(d.size() / 2), d.end());
  return d[d.size() / 2];
}

}  // namespace

Moments moments(std::span<const double> values) {
  Moments m;
  if (values.empty()) return m;
  double sum = 0.0;
  for (double v : values) sum += v;
  m.mean = sum / static_cast<double>(values.size());
  if (values.size() < 2) return m;
  double ss = 0.0;
  for (double v : values) ss += (v - m.mean) * (v - m.mean);
  m.stddev = std::sqrt(ss / static_cast<double>(values.size() - 1));
  return m;
}

PositionStats position_stats(std::span<const SolutionRecord> solutions, std::span<const TruthRecord> truth,
                             DeviceId receiver, std::size_t min_epochs) {
  std::map<std::int64_t, const TruthRecord*> truth_by_epoch;
  for (const auto& t : truth)
    if (t.receiver == receiver) truth_by_epoch[t.epoch] = &t;

  std::vector<double> xs, ys, zs;
  double sq3 = 0.0, sq2 = 0.0;
  std::size_t with_truth = 0;
  for (const auto& s : solutions) {
    if (s.receiver != receiver || !usable(s)) continue;
    xs.push_back(s.state.position.x());
    ys.push_back(s.state.position.y());
    zs.push_back(s.state.position.z());
    if (auto it = truth_by_epoch.find(s.epoch); it != truth_by_epoch.end()) {
      const Vec3 e = s.state.position - it->second->position;
      sq3 += e.squaredNorm();
      sq2 += e.head<2>().squaredNorm();
      ++with_truth;
    }
  }
  if (xs.size() < min_epochs) {
    throw InsufficientData("receiver " + std::to_string(receiver) + ": " + std::to_string(xs.size()) +
                           " converged epochs, need " + std::to_string(min_epochs));
  }

  PositionStats out;
  out.receiver = receiver;
  out.epochs = xs.size();
  const auto mx = moments(xs), my = moments(ys), mz = moments(zs);
  out.mean = Vec3(mx.mean, my.mean, mz.mean);
  out.std_x = mx.stddev;
  out.std_y = my.stddev;
  out.std_z = mz.stddev;
  const double n = static_cast<double>(std::max<std::size_t>(with_truth, 1));
  out.rms_error = with_truth ? std::sqrt(sq3 / n) : std::numeric_limits<double>::quiet_NaN();
  out.rms_horizontal_error = with_truth ? std::sqrt(sq2 / n) : std::numeric_limits<double>::quiet_NaN();
  return out;
}

BaselineStats baseline_stats(std::span<const SolutionRecord> solutions, DeviceId a, DeviceId b, double max_gap) {
  std::vector<const SolutionRecord*> sa, sb;
  for (const auto& s : solutions) {
    if (!usable(s)) continue;
    if (s.receiver == a) sa.push_back(&s);
    if (s.receiver == b) sb.push_back(&s);
  }
  const auto by_time = [](const SolutionRecord* x, const SolutionRecord* y) { return x->true_time < y->true_time; };
  std::stable_sort(sa.begin(), sa.end(), by_time);
  std::stable_sort(sb.begin(), sb.end(), by_time);

  BaselineStats out;
  out.a = a;
  out.b = b;
  std::size_t j = 0;
  for (const auto* x : sa) {
    while (j + 1 < sb.size() && std::abs(sb[j + 1]->true_time - x->true_time) <= std::abs(sb[j]->true_time - x->true_time))
      ++j;
    if (sb.empty() || !(std::abs(sb[j]->true_time - x->true_time) <= max_gap)) continue;
    out.series.push_back({x->true_time, (x->state.position - sb[j]->state.position).norm()});
  }
  if (out.series.empty()) {
    throw PairingError("receivers " + std::to_string(a) + " and " + std::to_string(b) + " have no epochs within " +
                       fmt::format("{:g}", max_gap) + " s of each other");
  }
  std::vector<double> lengths;
  lengths.reserve(out.series.size());
  for (const auto& p : out.series) lengths.push_back(p.length);
  const auto m = moments(lengths);
  out.mean_length = m.mean;
  out.std_length = m.stddev;
  return out;
}

std::vector<TraceRow> trace_export(std::span<const SolutionRecord> solutions, DeviceId receiver) {
  std::vector<TraceRow> rows;
  for (const auto& s : solutions) {
    if (s.receiver != receiver || !usable(s)) continue;
    TraceRow r;
    r.t = s.true_time;
    r.t_ref = s.ref_true_time;
    r.position = s.state.position;
    r.velocity = s.state.velocity;
    r.speed = r.velocity.norm();
    if (r.speed > 0.0) {
      const Vec3 u = r.velocity / r.speed;
      const Vec3 sv(s.sigma[4], s.sigma[5], s.sigma[6]);
      r.speed_sigma = std::sqrt(u.cwiseProduct(sv).squaredNorm());
    } else {
      r.speed_sigma = Vec3(s.sigma[4], s.sigma[5], s.sigma[6]).norm();
    }
    rows.push_back(r);
  }
  return rows;
}

SpectralPeak dominant_frequency(std::span<const double> samples, double sample_interval) {
  if (samples.size() < 4 || !(sample_interval > 0.0)) throw InsufficientData("spectrum needs at least 4 samples");
  const double mean = moments(samples).mean;
  std::vector<double> centred(samples.begin(), samples.end());
  for (double& v : centred) v -= mean;
  Eigen::FFT<double> fft;
  std::vector<std::complex<double>> spectrum;
  fft.fwd(spectrum, centred);
  const std::size_t half = centred.size() / 2;
  std::size_t best = 1;
  for (std::size_t k = 2; k <= half; ++k)
    if (std::abs(spectrum[k]) > std::abs(spectrum[best])) best = k;
  SpectralPeak peak;
  peak.bin = best;
  peak.bin_width = 1.0 / (static_cast<double>(centred.size()) * sample_interval);
  peak.frequency = static_cast<double>(best) * peak.bin_width;
  return peak;
}

AnalysisOutput analyze_run(const std::filesystem::path& run_dir, const AnalysisRequest& request) {
  const auto solutions = read_solutions(run_dir / kSolutionLog);
  const auto truth = read_truth(run_dir / kTruthLog);
  if (!std::filesystem::exists(run_dir / kMeasurementLog))
    throw DataError("cannot read " + (run_dir / kMeasurementLog).string());

  nlohmann::json manifest;
  if (std::ifstream in(run_dir / kManifest); in) {
    try {
      manifest = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw DataError((run_dir / kManifest).string() + ": " + e.what());
    }
  }

  std::vector<DeviceId> receivers = request.receivers;
  if (receivers.empty()) {
    std::set<DeviceId> seen;
    for (const auto& s : solutions) seen.insert(s.receiver);
    receivers.assign(seen.begin(), seen.end());
  }

  double superframe = 0.0;
  if (manifest.contains("superframe_duration")) superframe = manifest["superframe_duration"].get<double>();
  if (!(superframe > 0.0) && !receivers.empty()) {
    std::vector<double> t;
    for (const auto& s : solutions)
      if (s.receiver == receivers.front()) t.push_back(s.true_time);
    superframe = median_spacing(t);
  }

  AnalysisOutput out;
  nlohmann::json rx_json = nlohmann::json::array();
  for (DeviceId id : receivers) {
    nlohmann::json entry{{"id", id}, {"trace", fmt::format("trace_{}.csv", id)}};
    const auto trace = trace_export(solutions, id);
    std::size_t total = 0;
    for (const auto& s : solutions) total += s.receiver == id;
    entry["solves"] = total;
    entry["converged_epochs"] = trace.size();
    entry["convergence_rate"] = total ? static_cast<double>(trace.size()) / static_cast<double>(total) : 0.0;

    fmt::memory_buffer buf;
    fmt::format_to(std::back_inserter(buf), "t,t_ref,x,y,z,vx,vy,vz,speed,speed_sigma\n");
    for (const auto& r : trace) {
      fmt::format_to(std::back_inserter(buf), "{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g}\n",
                     r.t, r.t_ref, r.position.x(), r.position.y(), r.position.z(), r.velocity.x(), r.velocity.y(),
                     r.velocity.z(), r.speed, r.speed_sigma);
    }
    write_text(run_dir / fmt::format("trace_{}.csv", id), fmt::to_string(buf));

    try {
      const auto ps = position_stats(solutions, truth, id);
      entry["mean"] = {ps.mean.x(), ps.mean.y(), ps.mean.z()};
      entry["std_x"] = ps.std_x;
      entry["std_y"] = ps.std_y;
      entry["std_z"] = ps.std_z;
      entry["rms_error"] = ps.rms_error;
      entry["rms_horizontal_error"] = ps.rms_horizontal_error;
      out.positions.push_back(ps);

      std::vector<double> t, x, y;
      for (const auto& r : trace) {
        t.push_back(r.t);
        x.push_back(r.position.x());
        y.push_back(r.position.y());
      }
      const double dt = median_spacing(t);
      const auto px = dominant_frequency(x, dt);
      const auto py = dominant_frequency(y, dt);
      entry["x_peak_hz"] = px.frequency;
      entry["y_peak_hz"] = py.frequency;
      entry["spectrum_bin_hz"] = px.bin_width;
    } catch (const InsufficientData& e) {
      entry["error"] = e.what();
    }
    rx_json.push_back(entry);
  }

  nlohmann::json bl_json = nlohmann::json::array();
  for (const auto& [a, b] : request.baselines) {
    auto bs = baseline_stats(solutions, a, b, 0.5 * superframe);
    fmt::memory_buffer buf;
    fmt::format_to(std::back_inserter(buf), "t,length\n");
    for (const auto& p : bs.series) fmt::format_to(std::back_inserter(buf), "{:.17g},{:.17g}\n", p.time, p.length);
    const auto name = fmt::format("baseline_{}_{}.csv", a, b);
    write_text(run_dir / name, fmt::to_string(buf));
    bl_json.push_back({{"a", a},
                       {"b", b},
                       {"pairs", bs.series.size()},
                       {"mean_length", bs.mean_length},
                       {"std_length", bs.std_length},
                       {"series", name}});
    out.baselines.push_back(std::move(bs));
  }

  nlohmann::json stations = nlohmann::json::array();
  if (manifest.contains("scenario") && manifest["scenario"].contains("stations")) {
    for (const auto& s : manifest["scenario"]["stations"])
      stations.push_back({{"id", s.at("id")}, {"position", s.at("position")}});
  }

  out.summary = {{"format_version", 1},
                 {"config_hash", manifest.value("config_hash", "")},
                 {"superframe_duration", superframe},
                 {"stations", stations},
                 {"receivers", rx_json},
                 {"baselines", bl_json}};
  write_text(run_dir / "summary.json", out.summary.dump(2) + "\n");
  return out;
}

}  // namespace tdmapos
