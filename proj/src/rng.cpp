#include "mdn/rng.hpp"

#include <cmath>
#include <numbers>

#include "mdn/errors.hpp"

namespace mdn {

uint64_t mix64(uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

uint64_t combine_seed(uint64_t seed, uint64_t index) {
  return mix64(seed ^ mix64(index + 0x632BE59BD9B4E019ull));
}

Rng::Rng(uint64_t seed, uint64_t stream) : key_(combine_seed(seed, stream)) {}

Rng Rng::restore(uint64_t key, uint64_t counter) {
  Rng r;
  r.key_ = key;
  r.counter_ = counter;
  return r;
}

Rng::result_type Rng::operator()() {
  const uint64_t c = counter_++;
  return mix64(key_ ^ mix64(c));
}

Rng Rng::split(uint64_t stream) const {
  Rng r;
  r.key_ = combine_seed(key_, stream);
  return r;
}

double Rng::uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

int64_t Rng::uniform_int(int64_t lo, int64_t hi) {
  if (hi < lo) throw InvalidInput("uniform_int: empty range");
  const uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
  if (span == 0) return static_cast<int64_t>((*this)());
  const uint64_t limit = max() - max() % span;
  uint64_t v;
  do {
    v = (*this)();
  } while (v >= limit);
  return lo + static_cast<int64_t>(v % span);
}

double Rng::normal() {
  double u1;
  do {
    u1 = uniform();
  } while (u1 <= 0.0);
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

double Rng::exponential(double mean) {
  // 1 - U lies in (0, 1], so the log is finite.
  return -mean * std::log(1.0 - uniform());
}

int64_t Rng::poisson(double lambda) {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) {
    throw InvalidInput("poisson: lambda must be finite and >= 0");
  }
  if (lambda == 0.0) return 0;
  if (lambda < 30.0) {
    const double u = uniform();
    double p = std::exp(-lambda);
    double cdf = p;
    int64_t k = 0;
    while (u >= cdf) {
      ++k;
      p *= lambda / static_cast<double>(k);
      cdf += p;
      if (p <= 0.0 && cdf < u) break;  // tail underflow; u sits in the last ulps
    }
    return k;
  }
  const double slam = std::sqrt(lambda);
  const double loglam = std::log(lambda);
  const double b = 0.931 + 2.53 * slam;
  const double a = -0.059 + 0.02483 * b;
  const double inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
  const double vr = 0.9277 - 3.6224 / (b - 2.0);
  while (true) {
    const double u = uniform() - 0.5;
    const double v = uniform();
    const double us = 0.5 - std::fabs(u);
    const auto k = static_cast<int64_t>(std::floor((2.0 * a / us + b) * u + lambda + 0.43));
    if (us >= 0.07 && v <= vr) return k;
    if (k < 0 || (us < 0.013 && v > us)) continue;
    const double kd = static_cast<double>(k);
    if (std::log(v) + std::log(inv_alpha) - std::log(a / (us * us) + b) <=
        -lambda + kd * loglam - std::lgamma(kd + 1.0)) {
      return k;
    }
  }
}

}  // namespace mdn
