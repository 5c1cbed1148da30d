#include "mdn/kde.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "mdn/errors.hpp"

namespace mdn {

void KdeConfig::validate() const {
  if (bins < 2) throw ConfigError("kde: bins must be >= 2");
  if (!(hi > lo)) throw ConfigError("kde: range must be non-degenerate");
}

KdeResult kde_pdf(const std::vector<double>& values, const KdeConfig& cfg) {
  cfg.validate();
  if (values.size() < 2) throw InvalidInput("kde: need at least 2 values");
  const double n = static_cast<double>(values.size());
  const double width = (cfg.hi - cfg.lo) / cfg.bins;

  std::vector<double> counts(static_cast<size_t>(cfg.bins), 0.0);
  double mean = 0;
  for (double v : values) mean += v;
  mean /= n;
  double var = 0;
  for (double v : values) {
    var += (v - mean) * (v - mean);
    if (v < cfg.lo || v > cfg.hi) continue;
    const int b = std::min(cfg.bins - 1, static_cast<int>((v - cfg.lo) / width));
    counts[static_cast<size_t>(b)] += 1;
  }
  const double sd = std::sqrt(var / (n - 1));

  KdeResult r;
  r.bandwidth = sd > 0 ? sd * std::pow(n, -0.2) : width;
  r.grid.resize(counts.size());
  for (int i = 0; i < cfg.bins; ++i) r.grid[i] = cfg.lo + (i + 0.5) * width;
  r.density.assign(counts.size(), 0.0);
  const double norm = 1.0 / (n * r.bandwidth * std::sqrt(2 * std::numbers::pi));
  for (int j = 0; j < cfg.bins; ++j) {
    if (counts[j] == 0) continue;
    for (int i = 0; i < cfg.bins; ++i) {
      const double z = (r.grid[i] - r.grid[j]) / r.bandwidth;
      r.density[i] += counts[j] * std::exp(-0.5 * z * z);
    }
  }
  for (double& d : r.density) d *= norm;
  const double peak = *std::max_element(r.density.begin(), r.density.end());
  r.normalized.resize(r.density.size());
  for (size_t i = 0; i < r.density.size(); ++i) {
    r.normalized[i] = peak > 0 ? r.density[i] / peak : 0.0;
  }
  return r;
}

void normalize_set(std::vector<KdeResult>& set) {
  double peak = 0;
  for (const auto& k : set)
    for (double d : k.density) peak = std::max(peak, d);
  for (auto& k : set)
    for (size_t i = 0; i < k.density.size(); ++i)
      k.normalized[i] = peak > 0 ? k.density[i] / peak : 0.0;
}

}  // namespace mdn
