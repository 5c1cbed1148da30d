#include "mdn/loss.hpp"

#include <cmath>

#include "mdn/errors.hpp"
#include "mdn/image.hpp"
#include "mdn/metrics.hpp"
#include "mdn/ops.hpp"

namespace mdn {

void LossConfig::validate() const {
  if (!(mse_scale > 0)) throw ConfigError("loss: mse_scale must be > 0");
  if (!(huber_threshold > 0)) throw ConfigError("loss: huber_threshold must be > 0");
  if (ssim_weight < 0) throw ConfigError("loss: ssim_weight must be >= 0");
  if (l2_rate < 0) throw ConfigError("loss: l2_rate must be >= 0");
}

double huberize(double s, double t) { return s < t ? s : std::sqrt(t * s); }

double huberize_slope(double s, double t) { return s <= t ? 1.0 : 0.5 * std::sqrt(t / s); }

double scaled_loss(double mse_value, const LossConfig& cfg) {
  return huberize(cfg.mse_scale * mse_value, cfg.huber_threshold);
}

Var sse(const Var& pred, const Tensor& target, double factor) {
  require_same_shape(pred.value(), target, "loss");
  const Tensor& p = pred.value();
  double acc = 0;
  for (int64_t i = 0; i < p.numel(); ++i) {
    const double d = static_cast<double>(p[i]) - target[i];
    acc += d * d;
  }
  return make_op(Tensor::scalar(static_cast<float>(factor * acc)), {pred},
                 [pred, target, factor](const Tensor& gy) {
                   Tensor& g = pred.node()->grad_buffer();
                   const Tensor& p = pred.value();
                   const double k = 2.0 * factor * gy[0];
                   for (int64_t i = 0; i < g.numel(); ++i) {
                     g[i] += static_cast<float>(k * (static_cast<double>(p[i]) - target[i]));
                   }
                 });
}

Var ssim_distance(const Var& pred, const Tensor& target, double factor) {
  require_same_shape(pred.value(), target, "ssim loss");
  const Shape s = pred.shape();
  if (s.c != 1) throw InvalidInput("ssim loss: single-channel input expected");
  double acc = 0;
  std::vector<Image> grads;
  for (int64_t n = 0; n < s.n; ++n) {
    SsimGradient r = ssim_with_gradient(from_tensor(pred.value(), n), from_tensor(target, n));
    acc += 1.0 - r.value;
    grads.push_back(std::move(r.d_a));
  }
  return make_op(Tensor::scalar(static_cast<float>(factor * acc)), {pred},
                 [pred, grads = std::move(grads), factor](const Tensor& gy) {
                   Tensor& g = pred.node()->grad_buffer();
                   const double k = -factor * gy[0];
                   const int64_t plane = pred.shape().plane();
                   for (size_t n = 0; n < grads.size(); ++n) {
                     float* dst = g.plane(static_cast<int64_t>(n), 0);
                     for (int64_t i = 0; i < plane; ++i) {
                       dst[i] += static_cast<float>(k * grads[n].px[static_cast<size_t>(i)]);
                     }
                   }
                 });
}

Var huberize(const Var& s, double t) {
  if (s.value().numel() != 1) throw InvalidInput("huberize: scalar expected");
  const double v = s.value()[0];
  const double slope = huberize_slope(v, t);
  return make_op(Tensor::scalar(static_cast<float>(huberize(v, t))), {s},
                 [s, slope](const Tensor& gy) {
                   s.node()->grad_buffer()[0] += static_cast<float>(slope * gy[0]);
                 });
}

bool l2_applies(ParamKind kind, L2Scope scope) {
  if (scope == L2Scope::All) return true;
  return kind == ParamKind::Weight || kind == ParamKind::BnGamma;
}

double l2_penalty(const ParamStore& params, const LossConfig& cfg) {
  double acc = 0;
  for (const auto& [name, p] : params.params()) {
    if (!l2_applies(p.kind, cfg.l2_scope)) continue;
    for (float v : p.value->values()) acc += static_cast<double>(v) * v;
  }
  return cfg.l2_rate * acc;
}

Var l2_penalty(const std::map<std::string, Var>& leaves, const ParamStore& params,
               const LossConfig& cfg) {
  std::vector<Var> inputs;
  double acc = 0;
  for (const auto& [name, v] : leaves) {
    if (!l2_applies(params.get(name).kind, cfg.l2_scope)) continue;
    for (float x : v.value().values()) acc += static_cast<double>(x) * x;
    inputs.push_back(v);
  }
  const double rate = cfg.l2_rate;
  return make_op(Tensor::scalar(static_cast<float>(rate * acc)), inputs,
                 [inputs, rate](const Tensor& gy) {
                   const float k = static_cast<float>(2.0 * rate * gy[0]);
                   for (const Var& v : inputs) {
                     if (!v.requires_grad()) continue;
                     Tensor& g = v.node()->grad_buffer();
                     const Tensor& x = v.value();
                     for (int64_t i = 0; i < g.numel(); ++i) g[i] += k * x[i];
                   }
                 });
}

LossValue compute_loss(const Var& pred, const Tensor& target, const LossConfig& cfg,
                       const std::map<std::string, Var>* leaves, const ParamStore* params) {
  cfg.validate();
  LossValue r;
  const Var p = cfg.clip_in_loss ? clip01(pred) : pred;
  const double n = static_cast<double>(target.numel());
  const Var s = sse(p, target, cfg.mse_scale / n);
  r.scaled_mse = s.value()[0];
  {
    // Recompute in double for reporting; the Var holds a float.
    double acc = 0;
    for (int64_t i = 0; i < target.numel(); ++i) {
      const double d = static_cast<double>(p.value()[i]) - target[i];
      acc += d * d;
    }
    r.scaled_mse = cfg.mse_scale * acc / n;
  }
  r.data = huberize(r.scaled_mse, cfg.huber_threshold);
  r.total = huberize(s, cfg.huber_threshold);
  if (cfg.ssim_weight > 0) {
    const Var d = ssim_distance(p, target, cfg.ssim_weight / static_cast<double>(target.shape().n));
    r.ssim_term = d.value()[0];
    r.total = add(r.total, d);
  }
  if (leaves && params && cfg.l2_rate > 0) {
    const Var l2 = l2_penalty(*leaves, *params, cfg);
    r.l2 = l2.value()[0];
    r.total = add(r.total, l2);
  }
  return r;
}

}  // namespace mdn
