#pragma once

// Run configuration (YAML). Values are stored in file units (mm, deg, s) so
// that loading and re-serializing is exact; settings() converts to SI.

#include <array>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <yaml-cpp/yaml.h>

#include "pdt/sim.hpp"

namespace pdt {

// Field-level configuration problem; the message starts with the key path.
struct ConfigError : InvalidInput {
  using InvalidInput::InvalidInput;
};

struct RunConfig {
  std::string robot_model{"panda.yaml"};  // relative paths resolve against source_dir
  std::uint64_t n_trials{100};
  std::uint64_t base_seed{1};
  std::string output_dir{"pdt_out"};

  struct Noise {
    double pos_sigma_mm{1.0};
    double ang_sigma_deg{0.2};
    bool interpret_as_variance{false};  // values are mm^2 and deg^2
  } noise;

  struct Scenario {
    std::array<double, 3> base_translation_m{-0.45, 0.0, 0.25};
    std::array<double, 3> base_rotation_deg{0.0, 0.0, 0.0};
    std::array<double, 3> needle_translation_m{0.0, 0.0, 0.1};
    std::array<double, 3> needle_rotation_deg{0.0, 0.0, 0.0};
    std::array<double, 3> target_center_m{0.0, 0.0, 0.0};
    double target_cube_mm{10.0};
    std::array<double, 2> guide_xy{0.05, 0.4};
    std::array<double, 2> guide_z{0.7, 1.0};
    double base_pos_uncertainty_mm{200.0};
    double base_rot_uncertainty_deg{10.0};
    double needle_pos_uncertainty_mm{10.0};
    double needle_rot_uncertainty_deg{5.0};
    bool perturb_parameters{true};
    double start_distance_mm{300.0};
    double patient_radius_mm{200.0};
    double guide_radius_mm{1.5};
    double cone_half_angle_deg{0.5};
    std::vector<std::string> patient_points{"needle_tip", "end_effector"};
    std::vector<double> q_home_rad{0.0, -M_PI / 4, 0.0, -3 * M_PI / 4, 0.0, M_PI / 2, M_PI / 4};
  } scenario;

  struct Procedure {
    double dt_s{0.01};
    double insertion_time_s{20.0};
    double settle_time_s{1.0};
    double warmup_cap_s{30.0};
    double step1_cap_s{30.0};
    double step2_cap_s{60.0};
    double align_tol_deg{0.25};
    double start_tol_mm{0.5};
  } procedure;

  struct Controller {
    double eta_align{0.5};
    double eta_insert{0.2};
    double lambda{1e-3};
    double eta_adapt{5.0};
    double lambda_adapt{0.01};
    double adapt_tol{1e-10};
    double pos_thresh_mm{1.5};
    double ang_thresh_deg{0.5};
  } controller;

  struct Vfi {
    double eta_patient{1.0};
    double eta_guide{1.0};
    double eta_cone{1.0};
    double eta_plane{5.0};
    double eta_joint{1.0};
  } vfi;

  std::string source_dir{PDT_CONFIG_DIR};  // not serialized

  std::string robot_model_path() const {
    const std::filesystem::path p(robot_model);
    return p.is_absolute() ? p.string() : (std::filesystem::path(source_dir) / p).string();
  }

  TrialSettings settings() const;
  void validate() const;
};

namespace detail {

constexpr double kDeg = M_PI / 180.0;

inline Vec3 vec3(const std::array<double, 3>& a) { return {a[0], a[1], a[2]}; }

inline std::string format_number(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  std::string s(buf, res.ptr);
  if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
  return s;
}

inline PatientPoint parse_patient_point(const std::string& s, const std::string& path) {
  if (s == "needle_tip") return PatientPoint::needle_tip;
  if (s == "end_effector") return PatientPoint::end_effector;
  throw ConfigError(path + ": unknown patient point '" + s + "' (needle_tip | end_effector)");
}

template <class T>
T read_scalar(const YAML::Node& n, const std::string& path, const char* what) {
  if (!n.IsScalar()) throw ConfigError(path + ": expected " + what + where(n));
  try {
    return n.as<T>();
  } catch (const YAML::Exception&) {
    throw ConfigError(path + ": '" + n.Scalar() + "' is not " + what + where(n));
  }
}

inline void read_value(const YAML::Node& n, const std::string& path, double& out) {
  out = read_scalar<double>(n, path, "a number");
}
inline void read_value(const YAML::Node& n, const std::string& path, bool& out) {
  out = read_scalar<bool>(n, path, "a boolean");
}
inline void read_value(const YAML::Node& n, const std::string& path, std::uint64_t& out) {
  if (n.IsScalar() && !n.Scalar().empty() && n.Scalar()[0] == '-')
    throw ConfigError(path + ": must be non-negative" + where(n));
  out = read_scalar<std::uint64_t>(n, path, "an unsigned integer");
}
inline void read_value(const YAML::Node& n, const std::string& path, std::string& out) {
  out = read_scalar<std::string>(n, path, "a string");
}
template <class T>
void read_list(const YAML::Node& n, const std::string& path, std::vector<T>& out) {
  if (!n.IsSequence()) throw ConfigError(path + ": expected a list" + where(n));
  out.clear();
  for (std::size_t i = 0; i < n.size(); ++i) {
    T v{};
    read_value(n[i], path + "[" + std::to_string(i) + "]", v);
    out.push_back(v);
  }
}
inline void read_value(const YAML::Node& n, const std::string& path, std::vector<double>& out) {
  read_list(n, path, out);
}
inline void read_value(const YAML::Node& n, const std::string& path, std::vector<std::string>& out) {
  read_list(n, path, out);
}
template <std::size_t N>
void read_value(const YAML::Node& n, const std::string& path, std::array<double, N>& out) {
  std::vector<double> v;
  read_list(n, path, v);
  if (v.size() != N) throw ConfigError(path + ": expected " + std::to_string(N) + " numbers" + where(n));
  std::copy(v.begin(), v.end(), out.begin());
}

inline std::string write_value(double v) { return format_number(v); }
inline std::string write_value(bool v) { return v ? "true" : "false"; }
inline std::string write_value(std::uint64_t v) { return std::to_string(v); }
inline std::string write_value(const std::string& v) { return YAML::Dump(YAML::Node(v)); }
template <class Seq>
std::string write_seq(const Seq& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? ", " : "") + write_value(s[i]);
  return out + "]";
}
inline std::string write_value(const std::vector<double>& v) { return write_seq(v); }
inline std::string write_value(const std::vector<std::string>& v) { return write_seq(v); }
template <std::size_t N>
std::string write_value(const std::array<double, N>& v) {
  return write_seq(v);
}

using Check = std::function<std::optional<std::string>(double)>;

inline std::optional<std::string> positive(double v) {
  return v > 0.0 ? std::nullopt : std::optional<std::string>("must be positive");
}
inline std::optional<std::string> non_negative(double v) {
  return v >= 0.0 ? std::nullopt : std::optional<std::string>("must be non-negative");
}

struct ConfigField {
  std::string section;  // empty for top-level keys
  std::string key;
  std::string comment;
  std::function<void(RunConfig&, const YAML::Node&, const std::string&)> read;
  std::function<std::string(const RunConfig&)> write;
};

template <class Access>
ConfigField field(std::string section, std::string key, std::string comment, Access access, Check check = {}) {
  ConfigField f;
  f.section = std::move(section);
  f.key = std::move(key);
  f.comment = std::move(comment);
  f.read = [access, check](RunConfig& c, const YAML::Node& n, const std::string& path) {
    auto& ref = access(c);
    read_value(n, path, ref);
    if constexpr (std::is_same_v<std::decay_t<decltype(ref)>, double>) {
      if (check)
        if (const auto msg = check(ref)) throw ConfigError(path + ": " + *msg + where(n));
    }
  };
  f.write = [access](const RunConfig& c) { return write_value(access(const_cast<RunConfig&>(c))); };
  return f;
}

#define PDT_FIELD(section, key, comment, expr, ...) \
  field(section, #key, comment, [](RunConfig& c) -> auto& { return expr; } __VA_OPT__(, ) __VA_ARGS__)

inline const std::vector<ConfigField>& config_fields() {
  static const std::vector<ConfigField> fields{
      PDT_FIELD("", robot_model, "robot model file, relative to this file", c.robot_model),
      PDT_FIELD("", n_trials, "trials per batch", c.n_trials),
      PDT_FIELD("", base_seed, "trial i uses seed base_seed + i", c.base_seed),
      PDT_FIELD("", output_dir, "all outputs go below this directory", c.output_dir),

      PDT_FIELD("noise", pos_sigma_mm, "tip and target sensor position noise per axis", c.noise.pos_sigma_mm,
                non_negative),
      PDT_FIELD("noise", ang_sigma_deg, "sensor orientation noise (angle about a random axis)",
                c.noise.ang_sigma_deg, non_negative),
      PDT_FIELD("noise", interpret_as_variance, "true: the two values above are variances (mm^2, deg^2)",
                c.noise.interpret_as_variance),

      PDT_FIELD("scenario", base_translation_m, "true robot base in the transmitter frame",
                c.scenario.base_translation_m),
      PDT_FIELD("scenario", base_rotation_deg, "true base rotation vector", c.scenario.base_rotation_deg),
      PDT_FIELD("scenario", needle_translation_m, "true needle tip in the flange frame",
                c.scenario.needle_translation_m),
      PDT_FIELD("scenario", needle_rotation_deg, "true needle rotation vector", c.scenario.needle_rotation_deg),
      PDT_FIELD("scenario", target_center_m, "centre of the target sampling cube", c.scenario.target_center_m),
      PDT_FIELD("scenario", target_cube_mm, "edge of the target sampling cube", c.scenario.target_cube_mm,
                non_negative),
      PDT_FIELD("scenario", guide_xy, "range of |x|, |y| of the raw guide direction", c.scenario.guide_xy),
      PDT_FIELD("scenario", guide_z, "range of z of the raw guide direction", c.scenario.guide_z),
      PDT_FIELD("scenario", base_pos_uncertainty_mm, "+- per axis", c.scenario.base_pos_uncertainty_mm,
                non_negative),
      PDT_FIELD("scenario", base_rot_uncertainty_deg, "+- per rotation-vector component",
                c.scenario.base_rot_uncertainty_deg, non_negative),
      PDT_FIELD("scenario", needle_pos_uncertainty_mm, "+- per axis", c.scenario.needle_pos_uncertainty_mm,
                non_negative),
      PDT_FIELD("scenario", needle_rot_uncertainty_deg, "+- per rotation-vector component",
                c.scenario.needle_rot_uncertainty_deg, non_negative),
      PDT_FIELD("scenario", perturb_parameters, "false: the initial estimate equals the truth",
                c.scenario.perturb_parameters),
      PDT_FIELD("scenario", start_distance_mm, "puncture start point above the target",
                c.scenario.start_distance_mm, positive),
      PDT_FIELD("scenario", patient_radius_mm, "patient cylinder", c.scenario.patient_radius_mm, positive),
      PDT_FIELD("scenario", guide_radius_mm, "guiding cylinder", c.scenario.guide_radius_mm, positive),
      PDT_FIELD("scenario", cone_half_angle_deg, "needle cone around the guide line",
                c.scenario.cone_half_angle_deg, positive),
      PDT_FIELD("scenario", patient_points, "robot points kept outside the patient cylinder",
                c.scenario.patient_points),
      PDT_FIELD("scenario", q_home_rad, "initial joint configuration", c.scenario.q_home_rad),

      PDT_FIELD("procedure", dt_s, "control and sensor tick", c.procedure.dt_s, positive),
      PDT_FIELD("procedure", insertion_time_s, "duration of the insertion trajectory",
                c.procedure.insertion_time_s, positive),
      PDT_FIELD("procedure", settle_time_s, "extra time after the trajectory ends", c.procedure.settle_time_s,
                non_negative),
      PDT_FIELD("procedure", warmup_cap_s, "adaptation-only warm-up window", c.procedure.warmup_cap_s,
                non_negative),
      PDT_FIELD("procedure", step1_cap_s, "alignment step time limit", c.procedure.step1_cap_s, positive),
      PDT_FIELD("procedure", step2_cap_s, "approach step time limit", c.procedure.step2_cap_s, positive),
      PDT_FIELD("procedure", align_tol_deg, "needle-to-guide angle ending the alignment step",
                c.procedure.align_tol_deg, positive),
      PDT_FIELD("procedure", start_tol_mm, "tip-to-start distance gating the insertion", c.procedure.start_tol_mm,
                positive),

      PDT_FIELD("controller", eta_align, "task gain in alignment and approach, 1/s", c.controller.eta_align,
                positive),
      PDT_FIELD("controller", eta_insert, "task gain during insertion, 1/s", c.controller.eta_insert, positive),
      PDT_FIELD("controller", lambda, "motion damping", c.controller.lambda, positive),
      PDT_FIELD("controller", eta_adapt, "adaptation gain, 1/s", c.controller.eta_adapt, positive),
      PDT_FIELD("controller", lambda_adapt, "adaptation damping", c.controller.lambda_adapt, positive),
      PDT_FIELD("controller", adapt_tol, "adaptation QP feasibility tolerance", c.controller.adapt_tol, positive),
      PDT_FIELD("controller", pos_thresh_mm, "convergence threshold", c.controller.pos_thresh_mm, positive),
      PDT_FIELD("controller", ang_thresh_deg, "convergence threshold", c.controller.ang_thresh_deg, positive),

      PDT_FIELD("vfi", eta_patient, "patient cylinder, 1/s", c.vfi.eta_patient, positive),
      PDT_FIELD("vfi", eta_guide, "guiding cylinder, 1/s", c.vfi.eta_guide, positive),
      PDT_FIELD("vfi", eta_cone, "needle cone, 1/s", c.vfi.eta_cone, positive),
      PDT_FIELD("vfi", eta_plane, "target plane, 1/s", c.vfi.eta_plane, positive),
      PDT_FIELD("vfi", eta_joint, "joint position limits, 1/s", c.vfi.eta_joint, positive),
  };
  return fields;
}

#undef PDT_FIELD

inline std::string field_path(const ConfigField& f) { return f.section.empty() ? f.key : f.section + "." + f.key; }

}  // namespace detail

inline TrialSettings RunConfig::settings() const {
  using detail::kDeg;
  using detail::vec3;
  TrialSettings st;
  const auto sigma = [&](double v) { return noise.interpret_as_variance ? std::sqrt(v) : v; };
  st.noise.pos_sigma = 1e-3 * sigma(noise.pos_sigma_mm);
  st.noise.ang_sigma = kDeg * sigma(noise.ang_sigma_deg);

  ScenarioConfig& s = st.scenario;
  s.base_translation = vec3(scenario.base_translation_m);
  s.base_rotation = kDeg * vec3(scenario.base_rotation_deg);
  s.needle_translation = vec3(scenario.needle_translation_m);
  s.needle_rotation = kDeg * vec3(scenario.needle_rotation_deg);
  s.target_center = vec3(scenario.target_center_m);
  s.target_cube = 1e-3 * scenario.target_cube_mm;
  s.guide_xy_min = scenario.guide_xy[0];
  s.guide_xy_max = scenario.guide_xy[1];
  s.guide_z_min = scenario.guide_z[0];
  s.guide_z_max = scenario.guide_z[1];
  s.base_pos_uncertainty = 1e-3 * scenario.base_pos_uncertainty_mm;
  s.base_rot_uncertainty = kDeg * scenario.base_rot_uncertainty_deg;
  s.needle_pos_uncertainty = 1e-3 * scenario.needle_pos_uncertainty_mm;
  s.needle_rot_uncertainty = kDeg * scenario.needle_rot_uncertainty_deg;
  s.perturb_parameters = scenario.perturb_parameters;
  s.start_distance = 1e-3 * scenario.start_distance_mm;
  s.patient_radius = 1e-3 * scenario.patient_radius_mm;
  s.guide_radius = 1e-3 * scenario.guide_radius_mm;
  s.cone_half_angle = kDeg * scenario.cone_half_angle_deg;
  s.patient_points.clear();
  for (std::size_t i = 0; i < scenario.patient_points.size(); ++i)
    s.patient_points.push_back(detail::parse_patient_point(scenario.patient_points[i],
                                                           "scenario.patient_points[" + std::to_string(i) + "]"));
  s.q_home = Eigen::Map<const VectorXd>(scenario.q_home_rad.data(), static_cast<Eigen::Index>(scenario.q_home_rad.size()));

  ProcedureConfig& p = st.procedure;
  p.dt = procedure.dt_s;
  p.insertion_time = procedure.insertion_time_s;
  p.settle_time = procedure.settle_time_s;
  p.warmup_cap = procedure.warmup_cap_s;
  p.step1_cap = procedure.step1_cap_s;
  p.step2_cap = procedure.step2_cap_s;
  p.align_tol = kDeg * procedure.align_tol_deg;
  p.start_tol = 1e-3 * procedure.start_tol_mm;

  ControllerGains& g = st.gains;
  g.eta_align = controller.eta_align;
  g.eta_insert = controller.eta_insert;
  g.lambda = controller.lambda;
  g.eta_adapt = controller.eta_adapt;
  g.lambda_adapt = controller.lambda_adapt;
  g.adapt_tol = controller.adapt_tol;
  g.pos_thresh = 1e-3 * controller.pos_thresh_mm;
  g.ang_thresh = kDeg * controller.ang_thresh_deg;

  st.vfi.eta_c = vfi.eta_patient;
  st.vfi.eta_g = vfi.eta_guide;
  st.vfi.eta_o = vfi.eta_cone;
  st.vfi.eta_P = vfi.eta_plane;
  st.vfi.eta_joint = vfi.eta_joint;
  return st;
}

inline void RunConfig::validate() const {
  if (n_trials < 1) throw ConfigError("n_trials: must be at least 1");
  if (output_dir.empty()) throw ConfigError("output_dir: must not be empty");
  if (scenario.patient_points.empty()) throw ConfigError("scenario.patient_points: must not be empty");
  if (scenario.q_home_rad.empty()) throw ConfigError("scenario.q_home_rad: must not be empty");
  try {
    settings().validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const InvalidInput& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

// Keys absent from the document keep their defaults; unknown keys are errors.
// A robot_model given in the document resolves against source_dir, the default
// one against the shipped configuration directory.
inline RunConfig parse_run_config(const YAML::Node& root, const std::string& source_dir = PDT_CONFIG_DIR) {
  RunConfig c;
  if (!root || root.IsNull()) return c;
  if (!root.IsMap()) throw ConfigError("config: top level must be a mapping");
  const auto& fields = detail::config_fields();
  std::set<std::string> sections;
  for (const auto& f : fields)
    if (!f.section.empty()) sections.insert(f.section);

  const auto find = [&](const std::string& section, const std::string& key) -> const detail::ConfigField* {
    for (const auto& f : fields)
      if (f.section == section && f.key == key) return &f;
    return nullptr;
  };
  for (const auto& kv : root) {
    const std::string key = kv.first.as<std::string>();
    if (sections.count(key)) {
      if (kv.second.IsNull()) continue;
      if (!kv.second.IsMap()) throw ConfigError(key + ": expected a mapping" + detail::where(kv.second));
      for (const auto& inner : kv.second) {
        const std::string k = inner.first.as<std::string>();
        const detail::ConfigField* f = find(key, k);
        if (!f) throw ConfigError(key + "." + k + ": unknown key" + detail::where(inner.first));
        f->read(c, inner.second, key + "." + k);
      }
    } else {
      const detail::ConfigField* f = find("", key);
      if (!f) throw ConfigError(key + ": unknown key" + detail::where(kv.first));
      f->read(c, kv.second, key);
      if (key == "robot_model") c.source_dir = source_dir;
    }
  }
  c.validate();
  return c;
}

inline RunConfig load_run_config_string(const std::string& text, const std::string& source_dir = PDT_CONFIG_DIR) {
  try {
    return parse_run_config(YAML::Load(text), source_dir);
  } catch (const YAML::ParserException& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string dir = std::filesystem::absolute(path).parent_path().string();
  try {
    return load_run_config_string(ss.str(), dir);
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

// Canonical YAML with one comment per key.
inline std::string to_yaml(const RunConfig& c) {
  std::ostringstream os;
  std::string section = "";
  for (const auto& f : detail::config_fields()) {
    if (f.section != section) {
      section = f.section;
      os << '\n' << section << ":\n";
    }
    const std::string indent = section.empty() ? "" : "  ";
    os << indent << f.key << ": " << f.write(c) << "  # " << f.comment << '\n';
  }
  return os.str();
}

}  // namespace pdt
