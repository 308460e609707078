#pragma once

// Puncture-quality and measurement-quality variables, summary statistics and
// rank correlation.
//
// Nominal geometry: midline direction m and trachea direction x through the
// true target p. The midline plane contains p, m and x; the trachea
// cross-section plane has normal x.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <boost/math/distributions/students_t.hpp>

#include "pdt/sim.hpp"

namespace pdt {

struct PunctureMetrics {
  double eps_n{0.0};     // true tip to midline plane, m
  double eps_r{0.0};     // true tip to measured target, m
  double eps_m{0.0};     // measured target to midline plane, m
  double delta_n{0.0};   // needle vs nominal midline, rad
  double delta_r{0.0};   // needle vs measured guide line, rad
  double delta_mn{0.0};  // needle vs midline in the cross-section, rad
  double delta_m{0.0};   // measured guide line vs nominal midline, rad
  double delta_mm{0.0};  // measured guide line vs midline in the cross-section, rad
  double delta_x{0.0};   // measured vs nominal trachea direction, rad
  double position_error{0.0};  // true tip to true target, m
  double guide_angle{0.0};     // needle vs true guide line, rad
};

// Final geometry a metric block is computed from.
struct MetricGeometry {
  Vec3 tip{Vec3::Zero()};
  Vec3 needle_dir{Vec3::UnitZ()};
  Vec3 target_true{Vec3::Zero()};
  Vec3 guide_true{Vec3::UnitZ()};
  Vec3 target_measured{Vec3::Zero()};
  Vec3 guide_measured{Vec3::UnitZ()};
  Vec3 trachea_measured{Vec3::UnitX()};
  Vec3 midline{Vec3::UnitZ()};
  Vec3 trachea{Vec3::UnitX()};
};

namespace detail {

inline double angle_between(const Vec3& a, const Vec3& b) { return line_angle_f(a.normalized(), b.normalized()).phi; }

inline Vec3 project_onto_plane(const Vec3& v, const Vec3& normal) {
  const Vec3 p = v - v.dot(normal) * normal;
  if (p.norm() < 1e-12) throw DegenerateInput("direction is orthogonal to the projection plane");
  return p;
}

}  // namespace detail

inline PunctureMetrics compute_metrics(const MetricGeometry& g) {
  const Vec3 m = g.midline.normalized();
  const Vec3 x = (g.trachea - g.trachea.dot(m) * m).normalized();
  const Vec3 plane_normal = m.cross(x);
  PunctureMetrics out;
  out.eps_n = std::abs(plane_normal.dot(g.tip - g.target_true));
  out.eps_m = std::abs(plane_normal.dot(g.target_measured - g.target_true));
  out.eps_r = (g.tip - g.target_measured).norm();
  out.position_error = (g.tip - g.target_true).norm();
  out.delta_n = detail::angle_between(g.needle_dir, m);
  out.delta_r = detail::angle_between(g.needle_dir, g.guide_measured);
  out.delta_m = detail::angle_between(g.guide_measured, m);
  out.delta_mn = detail::angle_between(detail::project_onto_plane(g.needle_dir, x), m);
  out.delta_mm = detail::angle_between(detail::project_onto_plane(g.guide_measured, x), m);
  out.delta_x = detail::angle_between(g.trachea_measured, x);
  out.guide_angle = detail::angle_between(g.needle_dir, g.guide_true);
  return out;
}

// Needle from the final true pose, target and guide from the bronchoscope
// measurement the trial was run against.
inline MetricGeometry metric_geometry(const TrialRecord& rec, const Scenario& sc) {
  MetricGeometry g;
  g.tip = rec.final_true_pose.translation();
  g.needle_dir = rec.final_true_pose.rotation().rotate(kNeedleLineLocal);
  g.target_true = sc.target_point;
  g.guide_true = sc.guide_direction;
  g.target_measured = rec.bronchoscope_measured.translation();
  g.guide_measured = rec.bronchoscope_measured.rotation().rotate(Vec3::UnitZ());
  g.trachea_measured = rec.bronchoscope_measured.rotation().rotate(Vec3::UnitX());
  g.midline = sc.nominal_midline;
  g.trachea = sc.nominal_trachea;
  return g;
}

inline PunctureMetrics compute_metrics(const TrialRecord& rec, const Scenario& sc) {
  if (rec.status != TrialStatus::completed)
    throw MetricUnavailable("trial " + std::to_string(rec.seed) + " did not complete (" +
                            std::string(to_string(rec.status)) + ")");
  return compute_metrics(metric_geometry(rec, sc));
}

struct SummaryStats {
  std::size_t n{0};
  double mean{0.0};
  double sd{0.0};  // sample standard deviation, 0 for a singleton
  double median{0.0};
  double iqr{0.0};
  double min{0.0};
  double max{0.0};
};

// Percentile by linear interpolation between closest ranks: position
// (n - 1) * p in the sorted sample.
inline double percentile_sorted(const std::vector<double>& sorted, double p) {
  if (sorted.empty()) throw InvalidInput("percentile of an empty sample");
  if (!(p >= 0.0 && p <= 1.0)) throw InvalidInput("percentile must lie in [0, 1]");
  const double pos = p * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

inline SummaryStats summarize(const std::vector<double>& xs) {
  if (xs.empty()) throw InvalidInput("cannot summarize an empty sample");
  std::vector<double> s = xs;
  std::sort(s.begin(), s.end());
  SummaryStats out;
  out.n = s.size();
  // shifted by the first value so a constant sample has an exact mean
  double shift = 0.0;
  for (double v : s) shift += v - s.front();
  out.mean = s.front() + shift / static_cast<double>(s.size());
  if (s.size() > 1) {
    double ss = 0.0;
    for (double v : s) ss += (v - out.mean) * (v - out.mean);
    out.sd = std::sqrt(ss / static_cast<double>(s.size() - 1));
  }
  out.median = percentile_sorted(s, 0.5);
  out.iqr = percentile_sorted(s, 0.75) - percentile_sorted(s, 0.25);
  out.min = s.front();
  out.max = s.back();
  return out;
}

// 1-based fractional ranks, ties share the mean of their positions.
inline std::vector<double> fractional_ranks(const std::vector<double>& xs) {
  std::vector<std::size_t> idx(xs.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return xs[a] < xs[b]; });
  std::vector<double> r(xs.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && xs[idx[j + 1]] == xs[idx[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
    i = j + 1;
  }
  return r;
}

struct Correlation {
  double r{0.0};
  double p{1.0};  // two-sided, t approximation with n - 2 degrees of freedom
  std::size_t n{0};
};

inline Correlation spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw InvalidInput("spearman needs samples of equal length");
  if (x.size() < 3) throw InvalidInput("spearman needs at least 3 pairs");
  const std::vector<double> rx = fractional_ranks(x), ry = fractional_ranks(y);
  const double n = static_cast<double>(x.size());
  const double mean = 0.5 * (n + 1.0);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (rx[i] - mean) * (ry[i] - mean);
    sxx += (rx[i] - mean) * (rx[i] - mean);
    syy += (ry[i] - mean) * (ry[i] - mean);
  }
  if (sxx == 0.0 || syy == 0.0) throw InvalidInput("spearman is undefined for a constant sample");
  Correlation c;
  c.n = x.size();
  c.r = std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
  if (std::abs(c.r) == 1.0) {
    c.p = 0.0;
  } else {
    const double t = c.r * std::sqrt((n - 2.0) / (1.0 - c.r * c.r));
    const boost::math::students_t dist(n - 2.0);
    c.p = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t)));
  }
  return c;
}

// Report field: key, unit at the report boundary, scale from SI, accessor.
struct MetricField {
  const char* key;
  const char* unit;
  double scale;
  double PunctureMetrics::*member;
};

inline const std::vector<MetricField>& metric_fields() {
  static const std::vector<MetricField> fields{
      {"position_error", "mm", 1e3, &PunctureMetrics::position_error},
      {"guide_angle", "deg", 180.0 / M_PI, &PunctureMetrics::guide_angle},
      {"eps_n", "mm", 1e3, &PunctureMetrics::eps_n},
      {"eps_r", "mm", 1e3, &PunctureMetrics::eps_r},
      {"eps_m", "mm", 1e3, &PunctureMetrics::eps_m},
      {"delta_n", "deg", 180.0 / M_PI, &PunctureMetrics::delta_n},
      {"delta_r", "deg", 180.0 / M_PI, &PunctureMetrics::delta_r},
      {"delta_mn", "deg", 180.0 / M_PI, &PunctureMetrics::delta_mn},
      {"delta_m", "deg", 180.0 / M_PI, &PunctureMetrics::delta_m},
      {"delta_mm", "deg", 180.0 / M_PI, &PunctureMetrics::delta_mm},
      {"delta_x", "deg", 180.0 / M_PI, &PunctureMetrics::delta_x},
  };
  return fields;
}

struct MetricSummary {
  MetricField field;
  SummaryStats stats;  // in report units
};

struct BatchReport {
  std::size_t n_trials{0};
  std::size_t n_completed{0};
  std::size_t n_infeasible{0};
  std::size_t n_timeout{0};
  double failure_rate{0.0};
  std::vector<PunctureMetrics> per_trial;  // completed trials, batch order
  std::vector<MetricSummary> metrics;
  std::optional<Correlation> eps_mn;    // (eps_m, eps_n)
  std::optional<Correlation> delta_mn;  // (delta_m, delta_n)

  const SummaryStats& stats(const std::string& key) const {
    for (const auto& m : metrics)
      if (key == m.field.key) return m.stats;
    throw InvalidInput("unknown metric " + key);
  }
};

namespace detail {

inline std::optional<Correlation> try_spearman(const std::vector<double>& x, const std::vector<double>& y) {
  try {
    return spearman(x, y);
  } catch (const InvalidInput&) {
    return std::nullopt;
  }
}

}  // namespace detail

inline BatchReport batch_report(const std::vector<TrialRecord>& records, const std::vector<Scenario>& scenarios) {
  if (records.size() != scenarios.size()) throw InvalidInput("records and scenarios differ in length");
  BatchReport rep;
  rep.n_trials = records.size();
  for (std::size_t i = 0; i < records.size(); ++i) {
    switch (records[i].status) {
      case TrialStatus::completed:
        rep.per_trial.push_back(compute_metrics(records[i], scenarios[i]));
        break;
      case TrialStatus::infeasible_stop: ++rep.n_infeasible; break;
      case TrialStatus::timeout: ++rep.n_timeout; break;
    }
  }
  rep.n_completed = rep.per_trial.size();
  rep.failure_rate = rep.n_trials ? static_cast<double>(rep.n_trials - rep.n_completed) / rep.n_trials : 0.0;
  if (rep.per_trial.empty()) return rep;
  for (const MetricField& f : metric_fields()) {
    std::vector<double> xs;
    for (const auto& m : rep.per_trial) xs.push_back(f.scale * (m.*f.member));
    rep.metrics.push_back({f, summarize(xs)});
  }
  std::vector<double> em, en, dm, dn;
  for (const auto& m : rep.per_trial) {
    em.push_back(m.eps_m);
    en.push_back(m.eps_n);
    dm.push_back(m.delta_m);
    dn.push_back(m.delta_n);
  }
  rep.eps_mn = detail::try_spearman(em, en);
  rep.delta_mn = detail::try_spearman(dm, dn);
  return rep;
}

// One row per metric: metric,unit,n,mean,sd,median,iqr,min,max; then the
// correlations and the failure counts as extra rows.
inline std::string report_csv(const BatchReport& rep) {
  std::ostringstream os;
  os.precision(10);
  os << "metric,unit,n,mean,sd,median,iqr,min,max\n";
  for (const auto& m : rep.metrics)
    os << m.field.key << ',' << m.field.unit << ',' << m.stats.n << ',' << m.stats.mean << ',' << m.stats.sd << ','
       << m.stats.median << ',' << m.stats.iqr << ',' << m.stats.min << ',' << m.stats.max << '\n';
  const auto corr = [&](const char* key, const std::optional<Correlation>& c) {
    if (c) os << key << ",r|p," << c->n << ',' << c->r << ',' << c->p << ",,,,\n";
  };
  corr("spearman_eps_m_eps_n", rep.eps_mn);
  corr("spearman_delta_m_delta_n", rep.delta_mn);
  os << "trials,count," << rep.n_trials << ",,,,,,\n";
  os << "completed,count," << rep.n_completed << ",,,,,,\n";
  os << "infeasible_stop,count," << rep.n_infeasible << ",,,,,,\n";
  os << "timeout,count," << rep.n_timeout << ",,,,,,\n";
  return os.str();
}

inline std::string report_text(const BatchReport& rep) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(3);
  os << "trials " << rep.n_trials << ", completed " << rep.n_completed << ", infeasible " << rep.n_infeasible
     << ", timeout " << rep.n_timeout << " (failure rate " << 100.0 * rep.failure_rate << "%)\n";
  for (const auto& m : rep.metrics) {
    os << "  " << m.field.key << " [" << m.field.unit << "]: mean " << m.stats.mean << " +- " << m.stats.sd
       << ", median " << m.stats.median << " (IQR " << m.stats.iqr << "), range [" << m.stats.min << ", "
       << m.stats.max << "]\n";
  }
  const auto corr = [&](const char* label, const std::optional<Correlation>& c) {
    os << "  spearman " << label << ": ";
    if (c)
      os << "r = " << c->r << ", p " << (c->p < 1e-3 ? "< 0.001" : "= " + std::to_string(c->p)) << '\n';
    else
      os << "undefined\n";
  };
  corr("(eps_m, eps_n)", rep.eps_mn);
  corr("(delta_m, delta_n)", rep.delta_mn);
  return os.str();
}

}  // namespace pdt
