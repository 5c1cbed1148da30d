#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace mdn {

struct GradCheckOptions {
  uint64_t seed = 0;
  double eps = 1e-3;
  double op_tolerance = 1e-3;
  double network_tolerance = 1e-2;
  double width_multiplier = 0.125;
  int64_t network_input = 64;
  int network_params = 10;
  bool include_network = true;
  // Test hook: perturbs the analytic gradient of the named check.
  std::string corrupt;
};

struct GradCheckResult {
  std::string name;
  double max_rel_error = 0;
  double tolerance = 0;
  int64_t checked = 0;  // number of finite-difference probes
  bool pass = false;
};

// Names of every registered check, in report order.
std::vector<std::string> gradcheck_names(bool include_network = true);

// Central differences against backward(). The error of one check is
// max_i |analytic_i - numeric_i| / max_i max(|analytic_i|, |numeric_i|) over
// its probes.
std::vector<GradCheckResult> run_gradcheck(const GradCheckOptions& opt);

}  // namespace mdn
