#include "mdn/network.hpp"

#include <cmath>

#include "mdn/errors.hpp"
#include "mdn/rng.hpp"

namespace mdn {
namespace {

// Base (width 1) channel counts.
constexpr int64_t kStem = 64;
constexpr int64_t kEntry1 = 128;
constexpr int64_t kEntry2 = 256;
constexpr int64_t kEntry3 = 728;
constexpr int64_t kDecoder = 256;
constexpr int64_t kUp1 = 128;
constexpr int64_t kUp2 = 64;
constexpr int64_t kHead = 32;

uint64_t fnv1a(const std::string& s) {
  uint64_t h = 0xCBF29CE484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ull;
  }
  return h;
}

// Glorot/Xavier uniform with fans taken over the receptive field.
Tensor xavier(const Shape& s, int64_t fan_in, int64_t fan_out, Rng rng) {
  Tensor t(s);
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (auto& v : t.values()) v = static_cast<float>(rng.uniform(-a, a));
  return t;
}

}  // namespace

void NetworkConfig::validate() const {
  if (input_size <= 0 || input_size % 16 != 0) {
    throw ConfigError("input_size must be a positive multiple of 16, got " +
                      std::to_string(input_size));
  }
  if (!(width_multiplier > 0.0 && width_multiplier <= 1.0)) {
    throw ConfigError("width_multiplier must be in (0, 1]");
  }
  if (middle_repeats < 0) throw ConfigError("middle_repeats must be >= 0");
  if (aspp_rates.empty()) throw ConfigError("aspp_rates must not be empty");
  for (auto r : aspp_rates) {
    if (r < 1) throw ConfigError("aspp rates must be >= 1");
  }
  if (aspp_out_channels < 1) throw ConfigError("aspp_out_channels must be >= 1");
  if (channels(aspp_out_channels) <= channels(kEntry1)) {
    throw ConfigError("aspp_out_channels too small to balance the low-level decoder inputs");
  }
  if (!(bn_decay > 0.0f && bn_decay < 1.0f)) throw ConfigError("bn_decay must be in (0, 1)");
}

int64_t NetworkConfig::channels(int64_t base) const {
  // Subtract a hair before ceil so that e.g. 728 * 0.125 = 91 stays 91.
  return std::max<int64_t>(
      1, static_cast<int64_t>(std::ceil(static_cast<double>(base) * width_multiplier - 1e-9)));
}

const char* to_string(ForwardMode mode) {
  switch (mode) {
    case ForwardMode::Training: return "training";
    case ForwardMode::FrozenBn: return "frozen";
    case ForwardMode::Inference: return "inference";
  }
  return "?";
}

// ---- ParamStore ----

Parameter& ParamStore::add(const std::string& name, Tensor value, ParamKind kind) {
  auto [it, inserted] = params_.try_emplace(name);
  if (!inserted) throw ConfigError("duplicate parameter name: " + name);
  it->second.value = std::make_shared<Tensor>(std::move(value));
  it->second.kind = kind;
  return it->second;
}

BatchNormStats& ParamStore::add_bn(const std::string& name, int64_t channels, float decay) {
  auto [it, inserted] = bn_.try_emplace(name, channels, decay);
  if (!inserted) throw ConfigError("duplicate batch-norm name: " + name);
  return it->second;
}

Parameter& ParamStore::get(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw ConfigError("unknown parameter: " + name);
  return it->second;
}

const Parameter& ParamStore::get(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw ConfigError("unknown parameter: " + name);
  return it->second;
}

BatchNormStats& ParamStore::bn(const std::string& name) {
  auto it = bn_.find(name);
  if (it == bn_.end()) throw ConfigError("unknown batch-norm: " + name);
  return it->second;
}

const BatchNormStats& ParamStore::bn(const std::string& name) const {
  auto it = bn_.find(name);
  if (it == bn_.end()) throw ConfigError("unknown batch-norm: " + name);
  return it->second;
}

int64_t ParamStore::scalar_count() const {
  int64_t n = 0;
  for (const auto& [name, p] : params_) n += p.value->numel();
  return n;
}

ParamStore ParamStore::clone() const {
  ParamStore out;
  for (const auto& [name, p] : params_) {
    Parameter& q = out.add(name, *p.value, p.kind);
    q.m = p.m;
    q.v = p.v;
  }
  out.bn_ = bn_;
  return out;
}

// ---- Network ----

Network::Network(const NetworkConfig& cfg, uint64_t seed) : cfg_(cfg), seed_(seed) {
  cfg_.validate();
  building_ = true;
  ForwardContext ctx(ForwardMode::Inference);
  forward_unchecked(Var::leaf(Tensor({1, 1, 16, 16})), ctx);
  building_ = false;
}

Network::Network(const NetworkConfig& cfg, ParamStore params)
    : cfg_(cfg), params_(std::move(params)) {
  cfg_.validate();
  ForwardContext ctx(ForwardMode::Inference);
  forward_unchecked(Var::leaf(Tensor({1, 1, 16, 16})), ctx);
  if (ctx.leaves.size() != params_.params().size()) {
    throw ConfigError("parameter store has " + std::to_string(params_.params().size()) +
                      " tensors, architecture expects " + std::to_string(ctx.leaves.size()));
  }
}

int64_t Network::low_level_a_channels() const { return cfg_.channels(kEntry1); }
int64_t Network::low_level_b_channels() const {
  return cfg_.channels(cfg_.aspp_out_channels) - low_level_a_channels();
}

Var Network::param(const std::string& name, const Shape& shape, ParamKind kind,
                   ForwardContext& ctx) {
  if (!params_.contains(name)) {
    if (!building_) throw ConfigError("parameter store is missing '" + name + "'");
    Rng rng = Rng(seed_).split(fnv1a(name));
    Tensor init(shape);
    switch (kind) {
      case ParamKind::Weight: {
        const int64_t rf = shape.h * shape.w;
        // Depthwise kernels (C x 1 x k x k) act per channel.
        const int64_t fan_in = shape.c * rf;
        const int64_t fan_out = shape.c == 1 ? rf : shape.n * rf;
        init = xavier(shape, fan_in, fan_out, rng);
        break;
      }
      case ParamKind::BnGamma: init.fill(1.0f); break;
      case ParamKind::Bias:
      case ParamKind::BnBeta: break;
    }
    params_.add(name, std::move(init), kind);
  }
  const Parameter& p = params_.get(name);
  if (p.value->shape() != shape) {
    throw ConfigError("parameter '" + name + "' has shape " + p.value->shape().str() +
                      ", expected " + shape.str());
  }
  if (ctx.leaves.count(name)) throw ConfigError("parameter used twice: " + name);
  Var v = Var::leaf(std::shared_ptr<const Tensor>(p.value), ctx.tracks_grad());
  ctx.leaves.emplace(name, v);
  return v;
}

Var Network::bn(const Var& x, const std::string& name, ForwardContext& ctx) {
  const int64_t c = x.shape().c;
  Var gamma = param(name + "/gamma", {1, c, 1, 1}, ParamKind::BnGamma, ctx);
  Var beta = param(name + "/beta", {1, c, 1, 1}, ParamKind::BnBeta, ctx);
  if (!params_.bn_stats().count(name)) {
    if (!building_) throw ConfigError("parameter store is missing batch-norm '" + name + "'");
    params_.add_bn(name, c, cfg_.bn_decay);
  }
  BatchNormStats& stats = params_.bn(name);
  if (stats.channels() != c) throw ConfigError("batch-norm '" + name + "' channel mismatch");
  return batch_norm(x, gamma, beta, stats, ctx.bn_mode(),
                    ctx.mode == ForwardMode::Training ? &ctx.bn_updates : nullptr);
}

Var Network::conv(const Var& x, const std::string& name, int64_t cout, int64_t k, int64_t stride,
                  int64_t dilation, ForwardContext& ctx, bool with_bias) {
  Var w = param(name + "/kernel", {cout, x.shape().c, k, k}, ParamKind::Weight, ctx);
  Var b = with_bias ? param(name + "/bias", {1, cout, 1, 1}, ParamKind::Bias, ctx) : Var{};
  return conv2d(x, w, b, stride, dilation, Padding::Same);
}

// Depthwise 3x3 -> BN -> pointwise 1x1 -> BN. No activation.
Var Network::separable(const Var& x, const std::string& name, int64_t cout, int64_t stride,
                       int64_t dilation, ForwardContext& ctx) {
  const int64_t cin = x.shape().c;
  Var wd = param(name + "/depthwise", {cin, 1, 3, 3}, ParamKind::Weight, ctx);
  Var g = param(name + "/depthwise_bn/gamma", {1, cin, 1, 1}, ParamKind::BnGamma, ctx);
  Var b = param(name + "/depthwise_bn/beta", {1, cin, 1, 1}, ParamKind::BnBeta, ctx);
  const std::string bn_name = name + "/depthwise_bn";
  if (!params_.bn_stats().count(bn_name)) {
    if (!building_) throw ConfigError("parameter store is missing batch-norm '" + bn_name + "'");
    params_.add_bn(bn_name, cin, cfg_.bn_decay);
  }
  Var wp = param(name + "/pointwise", {cout, cin, 1, 1}, ParamKind::Weight, ctx);
  Var y = depthwise_separable_conv(x, wd, g, b, params_.bn(bn_name), wp, stride, dilation,
                                   ctx.bn_mode(),
                                   ctx.mode == ForwardMode::Training ? &ctx.bn_updates : nullptr);
  return bn(y, name + "/bn", ctx);
}

// Xception entry block: three separable convs (last one strided) with a
// strided 1x1 projection on the skip path. Output is pre-activation.
Var Network::entry_block(const Var& x, const std::string& name, int64_t cout,
                         ForwardContext& ctx) {
  Var h = separable(relu6(x), name + "/sep1", cout, 1, 1, ctx);
  h = separable(relu6(h), name + "/sep2", cout, 1, 1, ctx);
  h = separable(relu6(h), name + "/sep3", cout, 2, 1, ctx);
  Var skip = bn(conv(x, name + "/skip", cout, 1, 2, 1, ctx), name + "/skip_bn", ctx);
  return add(h, skip);
}

EntryFeatures Network::entry_flow(const Var& x, ForwardContext& ctx) {
  const int64_t c_stem = cfg_.channels(kStem);
  // Residual downsampling stem replacing Xception's first two convs.
  Var h = relu6(bn(conv(x, "entry/stem/conv1", c_stem, 3, 2, 1, ctx), "entry/stem/bn1", ctx));
  h = bn(conv(h, "entry/stem/conv2", c_stem, 3, 1, 1, ctx), "entry/stem/bn2", ctx);
  Var skip = bn(conv(x, "entry/stem/skip", c_stem, 1, 2, 1, ctx), "entry/stem/skip_bn", ctx);
  Var stem = add(h, skip);
  ctx.taps["entry/stem"] = stem.shape();

  Var e1 = entry_block(stem, "entry/block1", cfg_.channels(kEntry1), ctx);
  ctx.taps["entry/block1"] = e1.shape();
  EntryFeatures f;
  f.low_level_a = relu6(e1);
  f.low_level_b =
      relu6(separable(f.low_level_a, "entry/low_level_b", low_level_b_channels(), 1, 1, ctx));
  ctx.taps["entry/low_level_a"] = f.low_level_a.shape();
  ctx.taps["entry/low_level_b"] = f.low_level_b.shape();

  Var e2 = entry_block(e1, "entry/block2", cfg_.channels(kEntry2), ctx);
  ctx.taps["entry/block2"] = e2.shape();
  f.deep = entry_block(e2, "entry/block3", cfg_.channels(kEntry3), ctx);
  ctx.taps["entry/block3"] = f.deep.shape();
  return f;
}

Var Network::middle_flow(const Var& deep, ForwardContext& ctx) {
  const int64_t c = cfg_.channels(kEntry3);
  Var x = deep;
  for (int64_t i = 0; i < cfg_.middle_repeats; ++i) {
    const std::string name = "middle/block" + std::to_string(i + 1);
    Var h = x;
    for (int j = 1; j <= 3; ++j) {
      h = separable(relu6(h), name + "/sep" + std::to_string(j), c, 1, 1, ctx);
    }
    x = add(x, h);
    ctx.taps[name] = x.shape();
  }
  return x;
}

Var Network::aspp(const Var& deep, ForwardContext& ctx) {
  const int64_t c = cfg_.channels(kEntry3);
  const Var a = relu6(deep);
  std::vector<Var> branches;
  branches.push_back(
      relu6(bn(conv(a, "aspp/conv1x1", c, 1, 1, 1, ctx), "aspp/conv1x1_bn", ctx)));
  for (int64_t rate : cfg_.aspp_rates) {
    const std::string name = "aspp/atrous" + std::to_string(rate);
    branches.push_back(relu6(bn(conv(a, name, c, 3, 1, rate, ctx), name + "_bn", ctx)));
  }
  // Image-level features: pooled and broadcast, no pre-pooling 1x1 conv.
  branches.push_back(broadcast_spatial(global_avg_pool(a), a.shape().h, a.shape().w));
  Var cat = concat_channels(branches);
  ctx.taps["aspp/concat"] = cat.shape();
  Var out = relu6(bn(conv(cat, "aspp/bottleneck", cfg_.channels(cfg_.aspp_out_channels), 1, 1, 1,
                          ctx),
                     "aspp/bottleneck_bn", ctx));
  ctx.taps["aspp/out"] = out.shape();
  return out;
}

Var Network::decoder(const Var& aspp_out, const Var& low_level_a, const Var& low_level_b,
                     int64_t out_h, int64_t out_w, ForwardContext& ctx) {
  const Shape low = low_level_a.shape();
  Var up = bilinear_upsample(aspp_out, low.h, low.w);
  ctx.taps["decoder/upsample"] = up.shape();
  Var cat1 = concat_channels({up, low_level_b});
  ctx.taps["decoder/concat1"] = cat1.shape();
  Var h = relu6(separable(cat1, "decoder/resolve1", cfg_.channels(kDecoder), 1, 1, ctx));
  Var cat2 = concat_channels({h, low_level_a});
  ctx.taps["decoder/concat2"] = cat2.shape();
  h = relu6(separable(cat2, "decoder/resolve2", cfg_.channels(kDecoder), 1, 1, ctx));

  const int64_t c1 = cfg_.channels(kUp1);
  Var w1 = param("decoder/up1/kernel", {h.shape().c, c1, 3, 3}, ParamKind::Weight, ctx);
  h = relu6(bn(transposed_conv2d(h, w1, 2), "decoder/up1_bn", ctx));
  ctx.taps["decoder/up1"] = h.shape();
  const int64_t c2 = cfg_.channels(kUp2);
  Var w2 = param("decoder/up2/kernel", {c1, c2, 3, 3}, ParamKind::Weight, ctx);
  h = relu6(bn(transposed_conv2d(h, w2, 2), "decoder/up2_bn", ctx));
  ctx.taps["decoder/up2"] = h.shape();
  if (h.shape().h != out_h || h.shape().w != out_w) {
    throw InvalidInput("decoder: resolution mismatch " + h.shape().str());
  }

  h = relu6(bn(conv(h, "decoder/head1", cfg_.channels(kHead), 3, 1, 1, ctx), "decoder/head1_bn",
               ctx));
  // Final layer is linear: targets span [0, 1] and training is unclipped.
  Var out = conv(h, "decoder/head2", 1, 3, 1, 1, ctx, /*with_bias=*/true);
  ctx.taps["output"] = out.shape();
  return out;
}

Var Network::forward_unchecked(const Var& x, ForwardContext& ctx) {
  EntryFeatures f = entry_flow(x, ctx);
  Var mid = middle_flow(f.deep, ctx);
  Var a = aspp(mid, ctx);
  Var out = decoder(a, f.low_level_a, f.low_level_b, x.shape().h, x.shape().w, ctx);
  if (ctx.mode == ForwardMode::Inference && ctx.clip_output) out = clip01(out);
  return out;
}

Var Network::forward(const Tensor& x, ForwardContext& ctx) {
  const Shape s = x.shape();
  if (s.c != 1 || s.h != cfg_.input_size || s.w != cfg_.input_size || s.n < 1) {
    throw InvalidInput("network expects N x 1 x " + std::to_string(cfg_.input_size) + " x " +
                       std::to_string(cfg_.input_size) + " input, got " + s.str());
  }
  return forward_unchecked(Var::leaf(x), ctx);
}

int64_t param_count(const NetworkConfig& cfg) { return Network(cfg, 0).params().scalar_count(); }

}  // namespace mdn
