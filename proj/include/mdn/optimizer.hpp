#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mdn/network.hpp"

namespace mdn {

struct ScheduleEntry {
  int64_t until_batch = 0;  // exclusive
  double learning_rate = 0;
};

enum class OptimizerKind { Adam, RmsProp };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::Adam;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double rms_decay = 0.9;
  double eps = 1e-8;
  std::vector<ScheduleEntry> schedule{{134108, 1e-3}, {151821, 2.5e-4}, {INT64_MAX, 1e-4}};
  int64_t bn_freeze_batch = 134108;

  void validate() const;
};

// "until:rate,until:rate,..." where the last `until` may be "inf".
std::vector<ScheduleEntry> parse_schedule(const std::string& text);
std::string format_schedule(const std::vector<ScheduleEntry>& schedule);

// Rate for 0-based batch index `step`: the first entry with step < until_batch,
// or the last entry's rate beyond every boundary.
double lr_at(const std::vector<ScheduleEntry>& schedule, int64_t step);

// t is the 1-based update count used for bias correction. Moment buffers are
// allocated on first use.
void adam_step(Parameter& p, const Tensor& grad, const OptimizerConfig& cfg, int64_t t,
               double lr);
void rmsprop_step(Parameter& p, const Tensor& grad, const OptimizerConfig& cfg, double lr);
void apply_update(Parameter& p, const Tensor& grad, const OptimizerConfig& cfg, int64_t t,
                  double lr);

}  // namespace mdn
