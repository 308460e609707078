// Runs one default trial and prints its timeline, safety extremes and
// puncture metrics. Usage: single_trial [seed]

#include <cstdio>
#include <cstdlib>
#include <string>

#include "pdt/metrics.hpp"

int main(int argc, char** argv) {
  using namespace pdt;
  const std::uint64_t seed = argc > 1 ? std::strtoull(argv[1], nullptr, 10) : 1;
  const SerialManipulator robot = load_robot_model(std::string(PDT_CONFIG_DIR) + "/panda.yaml");
  const Scenario sc = generate_scenario(seed, TrialSettings{});
  const TrialRecord rec = run_trial(robot, sc);

  std::printf("seed %llu: %s after %.2f s (%d ticks)\n", static_cast<unsigned long long>(seed),
              std::string(to_string(rec.status)).c_str(), rec.duration, rec.ticks);
  std::printf("warm-up %s after %.2f s; steps 1/2/3 start at %.2f / %.2f / %.2f s\n",
              rec.warmup_converged ? "converged" : "capped", rec.warmup_time, rec.step_start[1], rec.step_start[2],
              rec.step_start[3]);
  std::printf("estimated geometry: min patient margin %.1f mm, max guide violation %.3f mm, "
              "max cone violation %.5f deg, min plane %.3f mm\n",
              1e3 * rec.min_patient_margin_est, 1e3 * rec.max_guide_violation_est,
              rad2deg(rec.max_cone_violation_est), 1e3 * rec.min_plane_est);
  if (rec.status != TrialStatus::completed) return 1;
  const PunctureMetrics m = compute_metrics(rec, sc);
  for (const MetricField& f : metric_fields()) std::printf("%-16s %10.4f %s\n", f.key, f.scale * (m.*f.member), f.unit);
  return 0;
}
