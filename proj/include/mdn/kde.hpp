#pragma once

#include <vector>

namespace mdn {

struct KdeConfig {
  int bins = 200;
  double lo = 0.0;
  double hi = 1.0;

  static KdeConfig mse() { return {200, 0.0, 1.2e-3}; }
  static KdeConfig ssim() { return {200, 0.0, 1.0}; }
  void validate() const;
};

struct KdeResult {
  std::vector<double> grid;        // bin centres
  std::vector<double> density;     // integrates to ~1 over the grid
  std::vector<double> normalized;  // density / max(density), or / set max
  double bandwidth = 0;
};

// Values are binned first; the estimate is a Gaussian mixture over bin
// centres weighted by counts, with Scott bandwidth from the raw values.
// Values outside [lo, hi] count towards n but not towards any bin.
KdeResult kde_pdf(const std::vector<double>& values, const KdeConfig& cfg);

// Rescales every curve's `normalized` by the largest density in the set.
void normalize_set(std::vector<KdeResult>& set);

}  // namespace mdn
