#pragma once

#include <map>
#include <string>

#include "mdn/autodiff.hpp"
#include "mdn/network.hpp"

namespace mdn {

enum class L2Scope { All, Weights };

struct LossConfig {
  double mse_scale = 1000.0;
  double huber_threshold = 1.0;  // in scaled units
  double ssim_weight = 0.0;
  bool clip_in_loss = false;
  double l2_rate = 5e-5;
  L2Scope l2_scope = L2Scope::All;

  void validate() const;
};

// s if s < t, else sqrt(t * s): continuous at s = t.
double huberize(double s, double threshold);
// d huberize / d s; at s == t the linear branch's slope (1) is used.
double huberize_slope(double s, double threshold);
// Loss of a given MSE (no SSIM or L2 terms).
double scaled_loss(double mse, const LossConfig& cfg);

// factor * sum((pred - target)^2), accumulated in double.
Var sse(const Var& pred, const Tensor& target, double factor);
// factor * sum over images of (1 - SSIM(pred_n, target_n)).
Var ssim_distance(const Var& pred, const Tensor& target, double factor);
// Scalar map through huberize; the gradient uses huberize_slope.
Var huberize(const Var& s, double threshold);

struct LossValue {
  Var total;
  double scaled_mse = 0;  // s
  double data = 0;        // huberize(s)
  double ssim_term = 0;
  double l2 = 0;
};

// Full objective for one batch: optional clip, huberised scaled MSE, optional
// SSIM distance and the L2 penalty over the given parameter leaves.
LossValue compute_loss(const Var& pred, const Tensor& target, const LossConfig& cfg,
                       const std::map<std::string, Var>* leaves = nullptr,
                       const ParamStore* params = nullptr);

bool l2_applies(ParamKind kind, L2Scope scope);
// l2_rate * sum p^2 over learnable parameters in scope (double accumulation).
double l2_penalty(const ParamStore& params, const LossConfig& cfg);
Var l2_penalty(const std::map<std::string, Var>& leaves, const ParamStore& params,
               const LossConfig& cfg);

}  // namespace mdn
