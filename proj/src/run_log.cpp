#include "tdmapos/run_log.hpp"

#include "tdmapos/errors.hpp"

#include <fmt/format.h>

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>

namespace tdmapos {

namespace {

constexpr const char* kSolutionHeader =
    "true_time,receiver_id,x,y,z,cb,vx,vy,vz,ck,converged,iterations,gdop,n_meas,n_dropped,"
    "epoch,status,ref_station,ref_true_time,sx,sy,sz,scb,svx,svy,svz,sck,hdop,vdop,sigma0,gated,fault";
constexpr const char* kTruthHeader =
    "true_time,receiver_id,epoch,ref_true_time,x,y,z,vx,vy,vz,cb,ck,receiver_offset_s,receiver_drift,"
    "ref_station,ref_station_offset_s,ref_station_drift";
constexpr const char* kMeasurementHeader =
    "receiver_id,epoch,true_time,rx_time_local,sender,slot,rho_m,n_payload_offsets,resolved_beta_s,"
    "dropped_reason,fault";

std::ofstream open_out(const std::filesystem::path& file) {
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + file.string());
  return out;
}

// Minimal reader for the logs written above: no quoting, header row first.
class CsvTable {
 public:
  explicit CsvTable(const std::filesystem::path& file) : name_(file.string()) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw DataError("cannot read " + name_);
    std::string line;
    if (!std::getline(in, line)) throw DataError(name_ + ": empty file");
    auto header = split(line);
    for (std::size_t i = 0; i < header.size(); ++i) columns_[header[i]] = i;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      auto row = split(line);
      if (row.size() != header.size()) {
        throw DataError(name_ + ": line " + std::to_string(rows_.size() + 2) + " has " +
                        std::to_string(row.size()) + " fields, expected " + std::to_string(header.size()));
      }
      rows_.push_back(std::move(row));
    }
  }

  std::size_t size() const { return rows_.size(); }

  const std::string& text(std::size_t row, const std::string& col) const {
    auto it = columns_.find(col);
    if (it == columns_.end()) throw DataError(name_ + ": missing column " + col);
    return rows_[row][it->second];
  }

  double real(std::size_t row, const std::string& col) const {
    const auto& s = text(row, col);
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (end == s.c_str() || *end != '\0') throw DataError(name_ + ": bad number '" + s + "' in " + col);
    return v;
  }

  long double extended(std::size_t row, const std::string& col) const {
    const auto& s = text(row, col);
    char* end = nullptr;
    const long double v = std::strtold(s.c_str(), &end);
    if (end == s.c_str() || *end != '\0') throw DataError(name_ + ": bad number '" + s + "' in " + col);
    return v;
  }

  std::int64_t integer(std::size_t row, const std::string& col) const {
    const auto& s = text(row, col);
    std::int64_t v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size())
      throw DataError(name_ + ": bad integer '" + s + "' in " + col);
    return v;
  }

 private:
  static std::vector<std::string> split(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::stringstream ss(line);
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
  }

  std::string name_;
  std::map<std::string, std::size_t> columns_;
  std::vector<std::vector<std::string>> rows_;
};

DeviceId as_id(std::int64_t v, const std::string& what) {
  if (v < 0 || v > 255) throw DataError("device id out of range in " + what);
  return static_cast<DeviceId>(v);
}

}  // namespace

void write_measurements(const std::filesystem::path& file, const std::vector<MeasurementRecord>& rows) {
  auto out = open_out(file);
  out << kMeasurementHeader << '\n';
  fmt::memory_buffer buf;
  for (const auto& r : rows) {
    buf.clear();
    fmt::format_to(std::back_inserter(buf), "{},{},{:.17g},{:.21g},{},{},{:.17g},{},{:.17g},{},{}\n", r.receiver,
                   r.epoch, r.true_time, r.rx_time_local.seconds(), r.sender, r.slot, r.rho_m, r.n_payload_offsets,
                   r.resolved_beta_s, r.dropped_reason, r.fault ? 1 : 0);
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  }
}

void write_solutions(const std::filesystem::path& file, const std::vector<SolutionRecord>& rows) {
  auto out = open_out(file);
  out << kSolutionHeader << '\n';
  fmt::memory_buffer buf;
  for (const auto& r : rows) {
    buf.clear();
    const auto& s = r.state;
    fmt::format_to(std::back_inserter(buf),
                   "{:.17g},{},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{},{},{:.17g},{},{},"
                   "{},{},{},{:.17g}",
                   r.true_time, r.receiver, s.position.x(), s.position.y(), s.position.z(), s.clock_bias,
                   s.velocity.x(), s.velocity.y(), s.velocity.z(), s.clock_drift, r.converged ? 1 : 0, r.iterations,
                   r.gdop, r.n_meas, r.n_dropped, r.epoch, r.status, r.ref_station, r.ref_true_time);
    for (double v : r.sigma) fmt::format_to(std::back_inserter(buf), ",{:.17g}", v);
    fmt::format_to(std::back_inserter(buf), ",{:.17g},{:.17g},{:.17g},{},{}\n", r.hdop, r.vdop, r.sigma0, r.gated,
                   r.fault ? 1 : 0);
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  }
}

void write_truth(const std::filesystem::path& file, const std::vector<TruthRecord>& rows) {
  auto out = open_out(file);
  out << kTruthHeader << '\n';
  fmt::memory_buffer buf;
  for (const auto& r : rows) {
    buf.clear();
    fmt::format_to(std::back_inserter(buf),
                   "{:.17g},{},{},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},"
                   "{:.17g},{},{:.17g},{:.17g}\n",
                   r.true_time, r.receiver, r.epoch, r.ref_true_time, r.position.x(), r.position.y(), r.position.z(),
                   r.velocity.x(), r.velocity.y(), r.velocity.z(), r.clock_bias_m, r.clock_drift_mps,
                   r.receiver_offset_s, r.receiver_drift, r.ref_station, r.ref_station_offset_s, r.ref_station_drift);
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  }
}

std::vector<SolutionRecord> read_solutions(const std::filesystem::path& file) {
  CsvTable t(file);
  std::vector<SolutionRecord> rows;
  rows.reserve(t.size());
  static const char* kSigma[] = {"sx", "sy", "sz", "scb", "svx", "svy", "svz", "sck"};
  for (std::size_t i = 0; i < t.size(); ++i) {
    SolutionRecord r;
    r.true_time = t.real(i, "true_time");
    r.receiver = as_id(t.integer(i, "receiver_id"), file.string());
    r.state.position = Vec3(t.real(i, "x"), t.real(i, "y"), t.real(i, "z"));
    r.state.clock_bias = t.real(i, "cb");
    r.state.velocity = Vec3(t.real(i, "vx"), t.real(i, "vy"), t.real(i, "vz"));
    r.state.clock_drift = t.real(i, "ck");
    r.converged = t.integer(i, "converged") != 0;
    r.iterations = static_cast<int>(t.integer(i, "iterations"));
    r.gdop = t.real(i, "gdop");
    r.n_meas = static_cast<std::size_t>(t.integer(i, "n_meas"));
    r.n_dropped = static_cast<std::size_t>(t.integer(i, "n_dropped"));
    r.epoch = t.integer(i, "epoch");
    r.status = t.text(i, "status");
    r.ref_station = as_id(t.integer(i, "ref_station"), file.string());
    r.ref_true_time = t.real(i, "ref_true_time");
    for (std::size_t k = 0; k < 8; ++k) r.sigma[k] = t.real(i, kSigma[k]);
    r.hdop = t.real(i, "hdop");
    r.vdop = t.real(i, "vdop");
    r.sigma0 = t.real(i, "sigma0");
    r.gated = static_cast<int>(t.integer(i, "gated"));
    r.fault = t.integer(i, "fault") != 0;
    rows.push_back(r);
  }
  return rows;
}

std::vector<TruthRecord> read_truth(const std::filesystem::path& file) {
  CsvTable t(file);
  std::vector<TruthRecord> rows;
  rows.reserve(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) {
    TruthRecord r;
    r.true_time = t.real(i, "true_time");
    r.receiver = as_id(t.integer(i, "receiver_id"), file.string());
    r.epoch = t.integer(i, "epoch");
    r.ref_true_time = t.real(i, "ref_true_time");
    r.position = Vec3(t.real(i, "x"), t.real(i, "y"), t.real(i, "z"));
    r.velocity = Vec3(t.real(i, "vx"), t.real(i, "vy"), t.real(i, "vz"));
    r.clock_bias_m = t.real(i, "cb");
    r.clock_drift_mps = t.real(i, "ck");
    r.receiver_offset_s = t.real(i, "receiver_offset_s");
    r.receiver_drift = t.real(i, "receiver_drift");
    r.ref_station = as_id(t.integer(i, "ref_station"), file.string());
    r.ref_station_offset_s = t.real(i, "ref_station_offset_s");
    r.ref_station_drift = t.real(i, "ref_station_drift");
    rows.push_back(r);
  }
  return rows;
}

std::vector<MeasurementRecord> read_measurements(const std::filesystem::path& file) {
  CsvTable t(file);
  std::vector<MeasurementRecord> rows;
  rows.reserve(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) {
    MeasurementRecord r;
    r.receiver = as_id(t.integer(i, "receiver_id"), file.string());
    r.epoch = t.integer(i, "epoch");
    r.true_time = t.real(i, "true_time");
    r.rx_time_local = Timestamp{t.extended(i, "rx_time_local")};
    r.sender = as_id(t.integer(i, "sender"), file.string());
    r.slot = t.integer(i, "slot");
    r.rho_m = t.real(i, "rho_m");
    r.n_payload_offsets = static_cast<std::size_t>(t.integer(i, "n_payload_offsets"));
    r.resolved_beta_s = t.real(i, "resolved_beta_s");
    r.dropped_reason = t.text(i, "dropped_reason");
    r.fault = t.integer(i, "fault") != 0;
    rows.push_back(r);
  }
  return rows;
}

}  // namespace tdmapos
