#pragma once

// CSV output: per-tick trial traces (SI units) and the per-trial summary.

#include <charconv>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "pdt/metrics.hpp"

namespace pdt {

namespace detail {

// Shortest round-trip representation; byte-stable across runs.
inline void put_number(std::string& out, double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  out.append(buf, res.ptr);
}

class CsvRow {
 public:
  CsvRow& operator<<(double v) {
    sep();
    put_number(line_, v);
    return *this;
  }
  CsvRow& operator<<(int v) {
    sep();
    line_ += std::to_string(v);
    return *this;
  }
  CsvRow& operator<<(std::uint64_t v) {
    sep();
    line_ += std::to_string(v);
    return *this;
  }
  CsvRow& operator<<(const std::string& v) {
    sep();
    line_ += v;
    return *this;
  }
  CsvRow& operator<<(const Vec3& v) { return *this << v.x() << v.y() << v.z(); }
  CsvRow& blank() {
    sep();
    return *this;
  }
  std::string str() const { return line_ + '\n'; }

 private:
  void sep() {
    if (!first_) line_ += ',';
    first_ = false;
  }
  std::string line_;
  bool first_{true};
};

inline void join_header(std::string& out, const std::vector<std::string>& cols) {
  for (std::size_t i = 0; i < cols.size(); ++i) out += (i ? "," : "") + cols[i];
  out += '\n';
}

inline void add_xyz(std::vector<std::string>& cols, const std::string& prefix) {
  for (const char* a : {"_x", "_y", "_z"}) cols.push_back(prefix + a);
}

}  // namespace detail

// Column order of trace CSVs. Distances in m, angles in rad, time in s.
inline std::vector<std::string> trace_columns(int n_joints, std::size_t n_patient_points) {
  std::vector<std::string> c{"t", "step"};
  for (int i = 1; i <= n_joints; ++i) c.push_back("q" + std::to_string(i));
  for (const char* p : {"a_base_tx", "a_base_ty", "a_base_tz", "a_base_rx", "a_base_ry", "a_base_rz", "a_needle_tx",
                        "a_needle_ty", "a_needle_tz", "a_needle_rx", "a_needle_ry", "a_needle_rz"})
    c.push_back(p);
  detail::add_xyz(c, "tip_true");
  detail::add_xyz(c, "tip_meas");
  detail::add_xyz(c, "tip_est");
  detail::add_xyz(c, "x_d");
  for (const char* p : {"tip_target_true", "tip_target_est", "guide_dist_true", "guide_dist_est", "guide_angle_true",
                        "guide_angle_est", "plane_dist_true", "plane_dist_est", "midline_dist_true",
                        "midline_angle_true"})
    c.push_back(p);
  for (std::size_t k = 0; k < n_patient_points; ++k) {
    c.push_back("patient_margin_true_" + std::to_string(k + 1));
    c.push_back("patient_margin_est_" + std::to_string(k + 1));
  }
  for (const char* p : {"base_pos_error", "base_rot_error", "needle_pos_error", "needle_rot_error", "lyapunov",
                        "adapt_paused"})
    c.push_back(p);
  return c;
}

// Rows at ticks 0, stride, 2 stride, ... plus the last tick.
inline std::string trace_csv(const TrialRecord& rec, const Scenario& sc, int stride = 1) {
  if (stride < 1) throw InvalidInput("trace stride must be at least 1");
  const double Rp = sc.settings.scenario.patient_radius;
  const std::size_t n_pp = sc.settings.scenario.patient_points.size();
  const int n_joints = rec.trace.empty() ? static_cast<int>(sc.q0.size()) : static_cast<int>(rec.trace.front().q.size());
  std::string out;
  detail::join_header(out, trace_columns(n_joints, n_pp));
  const Vec3 m = sc.nominal_midline.normalized();
  const Vec3 normal = m.cross(sc.nominal_trachea).normalized();
  const auto margin = [&](double D) { return std::sqrt(std::max(D + Rp * Rp, 0.0)) - Rp; };
  for (std::size_t i = 0; i < rec.trace.size(); ++i) {
    if (i % static_cast<std::size_t>(stride) != 0 && i + 1 != rec.trace.size()) continue;
    const TraceRow& r = rec.trace[i];
    detail::CsvRow row;
    row << r.t << r.step;
    for (Eigen::Index j = 0; j < r.q.size(); ++j) row << r.q(j);
    for (int j = 0; j < 12; ++j) row << r.a_hat(j);
    const Vec3 tip = r.y_true.translation();
    row << tip << r.y_meas.translation() << r.y_hat.translation() << r.x_d;
    row << r.tip_target_true << r.tip_target_est << r.truth.guide_radial << r.est.guide_radial << r.truth.angle
        << r.est.angle << r.truth.plane << r.est.plane << normal.dot(tip - sc.target_point)
        << line_angle_f(r.y_true.rotation().rotate(kNeedleLineLocal), m).phi;
    for (std::size_t k = 0; k < n_pp; ++k) row << margin(r.truth.patient[k]) << margin(r.est.patient[k]);
    row << r.base_pos_error << r.base_rot_error << r.needle_pos_error << r.needle_rot_error << r.lyapunov
        << (r.adapt_paused ? 1 : 0);
    out += row.str();
  }
  return out;
}

inline std::vector<std::string> summary_columns() {
  std::vector<std::string> c{"seed", "status", "ticks", "duration_s", "warmup_converged", "warmup_time_s"};
  for (const MetricField& f : metric_fields()) c.push_back(std::string(f.key) + "_" + f.unit);
  for (const char* p : {"max_lyapunov", "adapt_pauses", "min_patient_margin_true_mm", "max_guide_violation_true_mm",
                        "max_cone_violation_true_deg", "min_plane_true_mm", "max_joint_violation_rad"})
    c.push_back(p);
  return c;
}

// One row per trial in batch order; metric cells are empty for trials that
// did not complete and extremes are empty for steps never reached.
inline std::string summary_csv(const std::vector<TrialRecord>& records, const std::vector<Scenario>& scenarios) {
  if (records.size() != scenarios.size()) throw InvalidInput("records and scenarios differ in length");
  std::string out;
  detail::join_header(out, summary_columns());
  const auto extreme = [](detail::CsvRow& row, double v, double scale) {
    if (std::isfinite(v))
      row << scale * v;
    else
      row.blank();
  };
  for (std::size_t i = 0; i < records.size(); ++i) {
    const TrialRecord& r = records[i];
    detail::CsvRow row;
    row << r.seed << std::string(to_string(r.status)) << r.ticks << r.duration << (r.warmup_converged ? 1 : 0)
        << r.warmup_time;
    if (r.status == TrialStatus::completed) {
      const PunctureMetrics m = compute_metrics(r, scenarios[i]);
      for (const MetricField& f : metric_fields()) row << f.scale * (m.*f.member);
    } else {
      for (std::size_t k = 0; k < metric_fields().size(); ++k) row.blank();
    }
    extreme(row, r.max_lyapunov, 1.0);
    row << r.adapt_pauses;
    extreme(row, r.min_patient_margin_true, 1e3);
    extreme(row, r.max_guide_violation_true, 1e3);
    extreme(row, r.max_cone_violation_true, 180.0 / M_PI);
    extreme(row, r.min_plane_true, 1e3);
    row << r.max_joint_violation;
    out += row.str();
  }
  return out;
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write '" + path.string() + "'");
  f << text;
  if (!f) throw std::runtime_error("write failed for '" + path.string() + "'");
}

}  // namespace pdt
