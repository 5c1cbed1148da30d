#include "mdn/optimizer.hpp"

#include <charconv>
#include <cmath>
#include <sstream>

#include "mdn/config.hpp"
#include "mdn/errors.hpp"

namespace mdn {

void OptimizerConfig::validate() const {
  if (!(beta1 > 0 && beta1 < 1)) throw ConfigError("optimizer: beta1 must be in (0, 1)");
  if (!(beta2 > 0 && beta2 < 1)) throw ConfigError("optimizer: beta2 must be in (0, 1)");
  if (!(rms_decay > 0 && rms_decay < 1)) throw ConfigError("optimizer: rms_decay must be in (0, 1)");
  if (!(eps > 0)) throw ConfigError("optimizer: eps must be > 0");
  if (schedule.empty()) throw ConfigError("optimizer: empty learning-rate schedule");
  for (size_t i = 0; i < schedule.size(); ++i) {
    if (!(schedule[i].learning_rate > 0)) throw ConfigError("optimizer: learning rates must be > 0");
    if (i > 0 && schedule[i].until_batch <= schedule[i - 1].until_batch) {
      throw ConfigError("optimizer: schedule boundaries must be strictly increasing");
    }
  }
  if (bn_freeze_batch < 0) throw ConfigError("optimizer: bn_freeze_batch must be >= 0");
}

std::vector<ScheduleEntry> parse_schedule(const std::string& text) {
  std::vector<ScheduleEntry> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto colon = item.find(':');
    if (colon == std::string::npos) {
      throw ConfigError("schedule entry '" + item + "' is not until:rate");
    }
    const std::string u = item.substr(0, colon), r = item.substr(colon + 1);
    ScheduleEntry e;
    if (u == "inf") {
      e.until_batch = INT64_MAX;
    } else {
      auto [p, ec] = std::from_chars(u.data(), u.data() + u.size(), e.until_batch);
      if (ec != std::errc() || p != u.data() + u.size()) {
        throw ConfigError("schedule boundary '" + u + "' is not an integer");
      }
    }
    try {
      size_t used = 0;
      e.learning_rate = std::stod(r, &used);
      if (used != r.size()) throw std::invalid_argument(r);
    } catch (const std::exception&) {
      throw ConfigError("schedule rate '" + r + "' is not a number");
    }
    if (!out.empty() && e.until_batch <= out.back().until_batch) {
      throw ConfigError("schedule boundaries must be strictly increasing: '" + text + "'");
    }
    out.push_back(e);
  }
  if (out.empty()) throw ConfigError("empty learning-rate schedule");
  return out;
}

std::string format_schedule(const std::vector<ScheduleEntry>& schedule) {
  std::string s;
  for (size_t i = 0; i < schedule.size(); ++i) {
    if (i) s += ',';
    s += schedule[i].until_batch == INT64_MAX ? "inf" : std::to_string(schedule[i].until_batch);
    s += ':' + format_double(schedule[i].learning_rate);
  }
  return s;
}

double lr_at(const std::vector<ScheduleEntry>& schedule, int64_t step) {
  if (schedule.empty()) throw ConfigError("lr_at: empty schedule");
  for (const auto& e : schedule) {
    if (step < e.until_batch) return e.learning_rate;
  }
  return schedule.back().learning_rate;
}

namespace {
void ensure_moments(Parameter& p, bool first) {
  if (first && p.m.empty()) p.m = Tensor(p.value->shape());
  if (p.v.empty()) p.v = Tensor(p.value->shape());
}
}  // namespace

void adam_step(Parameter& p, const Tensor& grad, const OptimizerConfig& cfg, int64_t t,
               double lr) {
  require_same_shape(*p.value, grad, "adam_step");
  if (t < 1) throw InvalidInput("adam_step: t must be >= 1");
  ensure_moments(p, true);
  const double b1 = cfg.beta1, b2 = cfg.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t));
  Tensor& w = *p.value;
  for (int64_t i = 0; i < w.numel(); ++i) {
    const double g = grad[i];
    const double m = b1 * p.m[i] + (1 - b1) * g;
    const double v = b2 * p.v[i] + (1 - b2) * g * g;
    p.m[i] = static_cast<float>(m);
    p.v[i] = static_cast<float>(v);
    w[i] = static_cast<float>(w[i] - lr * (m / c1) / (std::sqrt(v / c2) + cfg.eps));
  }
}

void rmsprop_step(Parameter& p, const Tensor& grad, const OptimizerConfig& cfg, double lr) {
  require_same_shape(*p.value, grad, "rmsprop_step");
  ensure_moments(p, false);
  const double rho = cfg.rms_decay;
  Tensor& w = *p.value;
  for (int64_t i = 0; i < w.numel(); ++i) {
    const double g = grad[i];
    const double v = rho * p.v[i] + (1 - rho) * g * g;
    p.v[i] = static_cast<float>(v);
    w[i] = static_cast<float>(w[i] - lr * g / (std::sqrt(v) + cfg.eps));
  }
}

void apply_update(Parameter& p, const Tensor& grad, const OptimizerConfig& cfg, int64_t t,
                  double lr) {
  if (cfg.kind == OptimizerKind::Adam) {
    adam_step(p, grad, cfg, t, lr);
  } else {
    rmsprop_step(p, grad, cfg, lr);
  }
}

}  // namespace mdn
