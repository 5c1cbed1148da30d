#include "mdn/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include "mdn/errors.hpp"
#include "mdn/loss.hpp"
#include "mdn/network.hpp"
#include "mdn/ops.hpp"
#include "mdn/rng.hpp"

namespace mdn {

namespace {

using OpFn = std::function<Var(const std::vector<Var>&)>;

struct Check {
  std::string name;
  std::vector<Tensor> inputs;
  OpFn fn;
  // Inputs that are not differentiated (e.g. index-like tensors); empty means all.
  std::vector<bool> differentiate;
};

Tensor random_tensor(const Shape& s, Rng& rng, double scale = 1.0) {
  Tensor t(s);
  for (auto& v : t.values()) v = static_cast<float>(scale * rng.normal());
  return t;
}

// Uniform values in [lo, hi] kept at least `margin` away from each kink.
Tensor away_from(const Shape& s, Rng& rng, double lo, double hi, std::vector<double> kinks,
                 double margin) {
  Tensor t(s);
  for (auto& v : t.values()) {
    double x;
    do {
      x = rng.uniform(lo, hi);
    } while (std::any_of(kinks.begin(), kinks.end(),
                         [&](double k) { return std::abs(x - k) < margin; }));
    v = static_cast<float>(x);
  }
  return t;
}

double weighted(const Tensor& y, const Tensor& w) {
  double s = 0;
  for (int64_t i = 0; i < y.numel(); ++i) s += static_cast<double>(w[i]) * y[i];
  return s;
}

double rel_error(const std::vector<double>& a, const std::vector<double>& n) {
  double diff = 0, mag = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    diff = std::max(diff, std::abs(a[i] - n[i]));
    mag = std::max({mag, std::abs(a[i]), std::abs(n[i])});
  }
  return mag > 0 ? diff / mag : 0.0;
}

GradCheckResult run_check(const Check& c, const GradCheckOptions& opt, Rng& rng) {
  // Analytic pass.
  std::vector<Var> leaves;
  for (size_t i = 0; i < c.inputs.size(); ++i) {
    const bool d = c.differentiate.empty() || c.differentiate[i];
    leaves.push_back(Var::leaf(c.inputs[i], d));
  }
  const Var y = c.fn(leaves);
  const Tensor w = y.value().numel() == 1 ? Tensor::scalar(1.0f)
                                          : random_tensor(y.shape(), rng);
  backward(weighted_sum(y, w));

  std::vector<double> analytic, numeric;
  std::vector<Tensor> probe = c.inputs;
  auto eval = [&] {
    std::vector<Var> in;
    for (const auto& t : probe) in.push_back(Var::leaf(t, false));
    return weighted(c.fn(in).value(), w);
  };
  for (size_t i = 0; i < c.inputs.size(); ++i) {
    if (!(c.differentiate.empty() || c.differentiate[i])) continue;
    const Tensor& g = leaves[i].grad();
    const int64_t n = c.inputs[i].numel();
    // Every element for small tensors, a random subset of 48 otherwise.
    std::vector<int64_t> idx;
    if (n <= 48) {
      for (int64_t j = 0; j < n; ++j) idx.push_back(j);
    } else {
      for (int k = 0; k < 48; ++k) idx.push_back(rng.uniform_int(0, n - 1));
    }
    for (int64_t j : idx) {
      const float orig = probe[i][j];
      probe[i][j] = static_cast<float>(orig + opt.eps);
      const double lp = eval();
      probe[i][j] = static_cast<float>(orig - opt.eps);
      const double lm = eval();
      probe[i][j] = orig;
      const double h = static_cast<double>(static_cast<float>(orig + opt.eps)) -
                       static_cast<double>(static_cast<float>(orig - opt.eps));
      numeric.push_back((lp - lm) / h);
      analytic.push_back(g.empty() ? 0.0 : static_cast<double>(g[j]));
    }
  }
  if (c.name == opt.corrupt && !analytic.empty()) {
    double mag = 0;
    for (double v : analytic) mag = std::max(mag, std::abs(v));
    analytic[0] += 0.5 * (mag > 0 ? mag : 1.0);
  }
  GradCheckResult r;
  r.name = c.name;
  r.max_rel_error = rel_error(analytic, numeric);
  r.tolerance = opt.op_tolerance;
  r.checked = static_cast<int64_t>(analytic.size());
  r.pass = r.max_rel_error < r.tolerance;
  return r;
}

std::vector<Check> build_checks(Rng& rng) {
  std::vector<Check> cs;
  const Shape x8{1, 3, 8, 8};
  auto conv = [&](const std::string& name, int64_t stride, int64_t dilation, Padding pad) {
    cs.push_back({name,
                  {random_tensor(x8, rng), random_tensor({4, 3, 3, 3}, rng, 0.5),
                   random_tensor({1, 4, 1, 1}, rng, 0.5)},
                  [=](const std::vector<Var>& v) { return conv2d(v[0], v[1], v[2], stride, dilation, pad); },
                  {}});
  };
  conv("conv2d", 1, 1, Padding::Same);
  conv("conv2d_stride2", 2, 1, Padding::Same);
  conv("conv2d_dilation2", 1, 2, Padding::Same);
  conv("conv2d_valid", 1, 1, Padding::Valid);
  cs.push_back({"conv2d_1x1",
                {random_tensor(x8, rng), random_tensor({5, 3, 1, 1}, rng, 0.5), Tensor()},
                [](const std::vector<Var>& v) { return conv2d(v[0], v[1], Var{}, 1, 1); },
                {true, true, false}});
  cs.push_back({"depthwise_conv2d",
                {random_tensor(x8, rng), random_tensor({3, 1, 3, 3}, rng, 0.5)},
                [](const std::vector<Var>& v) { return depthwise_conv2d(v[0], v[1], 1, 2); },
                {}});
  cs.push_back({"depthwise_conv2d_stride2",
                {random_tensor(x8, rng), random_tensor({3, 1, 3, 3}, rng, 0.5)},
                [](const std::vector<Var>& v) { return depthwise_conv2d(v[0], v[1], 2, 1); },
                {}});
  cs.push_back({"depthwise_separable_conv",
                {random_tensor({2, 3, 6, 6}, rng), random_tensor({3, 1, 3, 3}, rng, 0.5),
                 away_from({1, 3, 1, 1}, rng, 0.5, 1.5, {}, 0),
                 random_tensor({1, 3, 1, 1}, rng, 0.2), random_tensor({4, 3, 1, 1}, rng, 0.5)},
                [](const std::vector<Var>& v) {
                  BatchNormStats st(3);
                  return depthwise_separable_conv(v[0], v[1], v[2], v[3], st, v[4], 1, 1,
                                                  BnMode::Training, nullptr);
                },
                {}});
  cs.push_back({"transposed_conv2d",
                {random_tensor({1, 3, 4, 4}, rng), random_tensor({3, 2, 3, 3}, rng, 0.5)},
                [](const std::vector<Var>& v) { return transposed_conv2d(v[0], v[1], 2); },
                {}});
  cs.push_back({"bilinear_upsample",
                {random_tensor({1, 2, 3, 5}, rng)},
                [](const std::vector<Var>& v) { return bilinear_upsample(v[0], 7, 11); },
                {}});
  cs.push_back({"batch_norm_training",
                {random_tensor({2, 3, 4, 4}, rng), away_from({1, 3, 1, 1}, rng, 0.5, 1.5, {}, 0),
                 random_tensor({1, 3, 1, 1}, rng, 0.2)},
                [](const std::vector<Var>& v) {
                  BatchNormStats st(3);
                  return batch_norm(v[0], v[1], v[2], st, BnMode::Training);
                },
                {}});
  cs.push_back({"batch_norm_frozen",
                {random_tensor({2, 3, 4, 4}, rng), away_from({1, 3, 1, 1}, rng, 0.5, 1.5, {}, 0),
                 random_tensor({1, 3, 1, 1}, rng, 0.2)},
                [](const std::vector<Var>& v) {
                  BatchNormStats st(3);
                  st.running_mean = {0.1f, -0.2f, 0.3f};
                  st.running_var = {0.5f, 1.5f, 2.0f};
                  return batch_norm(v[0], v[1], v[2], st, BnMode::Frozen);
                },
                {}});
  cs.push_back({"relu6", {away_from({1, 2, 4, 4}, rng, -2, 8, {0, 6}, 0.01)},
                [](const std::vector<Var>& v) { return relu6(v[0]); }, {}});
  cs.push_back({"clip01", {away_from({1, 2, 4, 4}, rng, -0.5, 1.5, {0, 1}, 0.01)},
                [](const std::vector<Var>& v) { return clip01(v[0]); }, {}});
  cs.push_back({"add", {random_tensor({1, 2, 3, 3}, rng), random_tensor({1, 2, 3, 3}, rng)},
                [](const std::vector<Var>& v) { return add(v[0], v[1]); }, {}});
  cs.push_back({"concat_channels",
                {random_tensor({1, 2, 3, 3}, rng), random_tensor({1, 3, 3, 3}, rng)},
                [](const std::vector<Var>& v) { return concat_channels({v[0], v[1]}); }, {}});
  cs.push_back({"slice_channels", {random_tensor({1, 5, 3, 3}, rng)},
                [](const std::vector<Var>& v) { return slice_channels(v[0], 1, 3); }, {}});
  cs.push_back({"global_avg_pool", {random_tensor({2, 3, 4, 4}, rng)},
                [](const std::vector<Var>& v) { return global_avg_pool(v[0]); }, {}});
  cs.push_back({"broadcast_spatial", {random_tensor({2, 3, 1, 1}, rng)},
                [](const std::vector<Var>& v) { return broadcast_spatial(v[0], 3, 4); }, {}});
  cs.push_back({"scale", {random_tensor({1, 2, 3, 3}, rng)},
                [](const std::vector<Var>& v) { return scale(v[0], 2.5f); }, {}});
  cs.push_back({"sum", {random_tensor({1, 2, 3, 3}, rng)},
                [](const std::vector<Var>& v) { return sum(v[0]); }, {}});

  // Loss branches: 1000 * MSE near 0.5 and near 4.
  auto huber_case = [&](const std::string& name, double target_s) {
    const Shape s{1, 1, 6, 6};
    Tensor target = away_from(s, rng, 0.2, 0.8, {}, 0);
    Tensor pred = target;
    const double delta = std::sqrt(target_s / 1000.0);
    for (int64_t i = 0; i < pred.numel(); ++i) {
      pred[i] += static_cast<float>((rng.uniform() < 0.5 ? -1 : 1) * delta * rng.uniform(0.8, 1.2));
    }
    cs.push_back({name, {pred, target},
                  [](const std::vector<Var>& v) {
                    LossConfig lc;
                    lc.l2_rate = 0;
                    return compute_loss(v[0], v[1].value(), lc).total;
                  },
                  {true, false}});
  };
  huber_case("loss_linear_branch", 0.5);
  huber_case("loss_sqrt_branch", 4.0);
  {
    const Shape s{2, 1, 16, 16};
    Tensor target = away_from(s, rng, 0.1, 0.9, {}, 0);
    Tensor pred = target;
    for (auto& v : pred.values()) v += static_cast<float>(0.05 * rng.normal());
    cs.push_back({"ssim_distance", {pred, target},
                  [](const std::vector<Var>& v) { return ssim_distance(v[0], v[1].value(), 1.0); },
                  {true, false}});
  }
  return cs;
}

struct TraceGuard {
  explicit TraceGuard(KinkTrace& t) { set_kink_trace(&t); }
  ~TraceGuard() { set_kink_trace(nullptr); }
  TraceGuard(const TraceGuard&) = delete;
  TraceGuard& operator=(const TraceGuard&) = delete;
};

GradCheckResult network_check(const GradCheckOptions& opt, Rng& rng) {
  NetworkConfig cfg;
  cfg.input_size = opt.network_input;
  cfg.width_multiplier = opt.width_multiplier;
  Network net(cfg, opt.seed);
  const Tensor x = away_from({2, 1, cfg.input_size, cfg.input_size}, rng, 0, 1, {}, 0);

  // relu6 is piecewise linear and a deep net has ~1e5 activations, so nearly
  // every perturbation of size eps pushes hundreds of them across a kink, where
  // the derivative does not exist. The perturbed passes therefore replay the
  // activation pieces of the unperturbed pass: that is the function backward
  // differentiates, and it is smooth in every parameter.
  KinkTrace trace;
  ForwardContext ctx(ForwardMode::Training);
  Var y;
  {
    const TraceGuard guard(trace);
    y = net.forward(x, ctx);
  }
  const Tensor w = random_tensor(y.shape(), rng);
  backward(weighted_sum(y, w));

  trace.mode = KinkTrace::Mode::Replay;
  auto eval = [&] {
    trace.cursor = 0;
    const TraceGuard guard(trace);
    ForwardContext c(ForwardMode::Training);
    return weighted(net.forward(x, c).value(), w);
  };

  // Only entries whose gradient is at least a tenth of the largest are probed,
  // so float32 round-off in the forward pass stays well below the tolerance.
  std::vector<std::pair<std::string, int64_t>> candidates;
  double gmax = 0;
  for (const auto& [name, leaf] : ctx.leaves) {
    if (!leaf.has_grad()) continue;
    for (float g : leaf.grad().values()) gmax = std::max(gmax, static_cast<double>(std::abs(g)));
  }
  for (const auto& [name, leaf] : ctx.leaves) {
    if (!leaf.has_grad()) continue;
    const Tensor& g = leaf.grad();
    for (int64_t i = 0; i < g.numel(); ++i) {
      if (std::abs(g[i]) > 0.1 * gmax) candidates.emplace_back(name, i);
    }
  }
  if (candidates.empty()) throw NumericError("network gradient check: no nonzero gradients");

  std::vector<double> analytic, numeric;
  ParamStore& ps = net.params();
  for (int k = 0; k < opt.network_params; ++k) {
    const auto& [name, i] =
        candidates[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(candidates.size()) - 1))];
    Tensor& p = *ps.get(name).value;
    const float orig = p[i];
    p[i] = static_cast<float>(orig + opt.eps);
    const double lp = eval();
    p[i] = static_cast<float>(orig - opt.eps);
    const double lm = eval();
    p[i] = orig;
    const double h = static_cast<double>(static_cast<float>(orig + opt.eps)) -
                     static_cast<double>(static_cast<float>(orig - opt.eps));
    numeric.push_back((lp - lm) / h);
    analytic.push_back(ctx.leaves.at(name).grad()[i]);
  }
  if (opt.corrupt == "network") analytic[0] *= 1.5;
  GradCheckResult r;
  r.name = "network";
  r.tolerance = opt.network_tolerance;
  r.checked = static_cast<int64_t>(analytic.size());
  // Per-probe relative error here: each probe is a different parameter.
  r.max_rel_error = 0;
  for (size_t j = 0; j < analytic.size(); ++j) {
    const double m = std::max(std::abs(analytic[j]), std::abs(numeric[j]));
    if (m > 0) r.max_rel_error = std::max(r.max_rel_error, std::abs(analytic[j] - numeric[j]) / m);
  }
  r.pass = r.max_rel_error < r.tolerance;
  return r;
}

}  // namespace

std::vector<std::string> gradcheck_names(bool include_network) {
  Rng rng(0);
  std::vector<std::string> names;
  for (const auto& c : build_checks(rng)) names.push_back(c.name);
  if (include_network) names.emplace_back("network");
  return names;
}

std::vector<GradCheckResult> run_gradcheck(const GradCheckOptions& opt) {
  Rng rng(opt.seed, 0x6772);
  std::vector<GradCheckResult> out;
  for (const auto& c : build_checks(rng)) out.push_back(run_check(c, opt, rng));
  if (opt.include_network) out.push_back(network_check(opt, rng));
  return out;
}

}  // namespace mdn
