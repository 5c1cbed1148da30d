#include <doctest.h>

#include "mdn/errors.hpp"
#include "mdn/network.hpp"
#include "support.hpp"

using namespace mdn;
using mdn::test::max_abs_diff;
using mdn::test::random_tensor;

namespace {

NetworkConfig small(int64_t input = 64, double width = 0.125) {
  NetworkConfig c;
  c.input_size = input;
  c.width_multiplier = width;
  return c;
}

}  // namespace

TEST_CASE("config validation") {
  NetworkConfig c = small();
  CHECK_NOTHROW(c.validate());
  c.input_size = 72;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = small();
  c.width_multiplier = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.width_multiplier = 1.5;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = small();
  c.middle_repeats = -1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  // Ceiling rounding keeps every branch non-empty.
  CHECK(small(64, 0.125).channels(728) == 91);
  CHECK(small(64, 0.01).channels(64) == 1);
}

TEST_CASE("forward shape equals input shape") {
  Rng rng(1);
  for (int64_t s : {64, 128}) {
    for (double w : {0.125, 0.25}) {
      Network net(small(s, w), 3);
      ForwardContext ctx(ForwardMode::Training);
      const Var y = net.forward(random_tensor({2, 1, s, s}, rng, 0, 1), ctx);
      CHECK(y.shape() == Shape{2, 1, s, s});
      CHECK(y.value().all_finite());
    }
  }
  Network net(small(64), 0);
  ForwardContext ctx(ForwardMode::Inference);
  CHECK_THROWS_AS(net.forward(Tensor({1, 1, 32, 32}), ctx), InvalidInput);
  CHECK_THROWS_AS(net.forward(Tensor({1, 2, 64, 64}), ctx), InvalidInput);
}

TEST_CASE("feature map plan at reduced width") {
  const NetworkConfig cfg = small(128);
  Network net(cfg, 0);
  ForwardContext ctx(ForwardMode::Inference);
  net.forward(Tensor({1, 1, 128, 128}, 0.5f), ctx);
  const auto& t = ctx.taps;
  const int64_t c728 = cfg.channels(728);
  // Exactly four 2x reductions from input to the deep map.
  CHECK(t.at("entry/block3") == Shape{1, c728, 8, 8});
  CHECK(t.at("middle/block12") == Shape{1, c728, 8, 8});
  CHECK(t.at("aspp/concat").c == 5 * c728);
  CHECK(t.at("aspp/out") == Shape{1, cfg.channels(256), 8, 8});
  CHECK(t.at("decoder/upsample") == Shape{1, cfg.channels(256), 32, 32});
  CHECK(t.at("entry/low_level_a").h == 32);
  CHECK(t.at("entry/low_level_a").c + t.at("entry/low_level_b").c == cfg.channels(256));
  CHECK(t.at("decoder/concat1").c == cfg.channels(256) + t.at("entry/low_level_b").c);
  CHECK(t.at("decoder/up1").h == 64);
  CHECK(t.at("decoder/up2").h == 128);
  CHECK(t.at("output") == Shape{1, 1, 128, 128});
}

TEST_CASE("inference clipping and determinism") {
  Rng rng(2);
  Network net(small(), 5);
  const Tensor x = random_tensor({2, 1, 64, 64}, rng, 0, 1);
  ForwardContext a(ForwardMode::Inference, true), b(ForwardMode::Inference, true);
  const Tensor ya = net.forward(x, a).value();
  for (float v : ya.values()) CHECK((v >= 0.0f && v <= 1.0f));
  CHECK(net.forward(x, b).value() == ya);

  ForwardContext f1(ForwardMode::FrozenBn), f2(ForwardMode::FrozenBn);
  CHECK(net.forward(x, f1).value() == net.forward(x, f2).value());
}

TEST_CASE("frozen forward does not depend on batch composition") {
  Rng rng(3);
  Network net(small(), 6);
  const Tensor x = random_tensor({3, 1, 64, 64}, rng, 0, 1);
  ForwardContext all(ForwardMode::FrozenBn);
  const Tensor batched = net.forward(x, all).value();
  for (int64_t n = 0; n < 3; ++n) {
    Tensor one({1, 1, 64, 64});
    std::copy(x.plane(n, 0), x.plane(n, 0) + 64 * 64, one.data());
    ForwardContext c(ForwardMode::FrozenBn);
    const Tensor y = net.forward(one, c).value();
    double m = 0;
    for (int64_t i = 0; i < 64 * 64; ++i) m = std::max(m, std::abs(double(y[i]) - batched.plane(n, 0)[i]));
    CHECK(m < 1e-6);
  }
}

TEST_CASE("training forward records BN updates, frozen does not") {
  Rng rng(4);
  Network net(small(), 7);
  const Tensor x = random_tensor({2, 1, 64, 64}, rng, 0, 1);
  ForwardContext t(ForwardMode::Training), f(ForwardMode::FrozenBn);
  net.forward(x, t);
  net.forward(x, f);
  CHECK(t.bn_updates.size() == net.params().bn_stats().size());
  CHECK(f.bn_updates.empty());
}

TEST_CASE("every parameter tensor receives a gradient") {
  Rng rng(5);
  Network net(small(), 8);
  // Frozen BN: with batch statistics a shift feeding straight into the next
  // normalisation is removed exactly, so those betas legitimately get zero.
  ForwardContext ctx(ForwardMode::FrozenBn);
  const Var y = net.forward(random_tensor({2, 1, 64, 64}, rng, 0, 1), ctx);
  backward(weighted_sum(y, random_tensor(y.shape(), rng)));
  REQUIRE(ctx.leaves.size() == net.params().params().size());
  for (const auto& [name, leaf] : ctx.leaves) {
    INFO(name);
    REQUIRE(leaf.has_grad());
    double m = 0;
    for (float g : leaf.grad().values()) m = std::max(m, double(std::abs(g)));
    CHECK(m > 0);
  }
}

TEST_CASE("middle block with zero kernels is a pure skip") {
  Rng rng(6);
  NetworkConfig cfg = small();
  cfg.middle_repeats = 2;
  Network net(cfg, 9);
  for (auto& [name, p] : net.params().params()) {
    if (name.rfind("middle/", 0) == 0 && name.find("pointwise") != std::string::npos) p.value->fill(0);
  }
  const Tensor deep = random_tensor({1, cfg.channels(728), 4, 4}, rng);
  ForwardContext ctx(ForwardMode::FrozenBn);
  const Var out = net.middle_flow(Var::leaf(deep), ctx);
  CHECK(out.value() == deep);
}

TEST_CASE("ASPP maps a constant map to per-channel constants") {
  // On a 4x4 grid every atrous tap except the centre falls in the zero padding.
  Network net(small(), 10);
  const int64_t c = net.config().channels(728);
  ForwardContext ctx(ForwardMode::FrozenBn);
  const Tensor out = net.aspp(Var::leaf(Tensor({1, c, 4, 4}, 0.3f)), ctx).value();
  for (int64_t ch = 0; ch < out.shape().c; ++ch) {
    const float* p = out.plane(0, ch);
    for (int64_t i = 1; i < 16; ++i) CHECK(p[i] == p[0]);
  }
}

TEST_CASE("rate-18 atrous tap offsets") {
  Tensor x({1, 1, 40, 40});
  x.at(0, 0, 20, 20) = 1.0f;
  Tensor w({1, 1, 3, 3});
  for (int i = 0; i < 9; ++i) w[i] = float(i + 1);
  const Tensor y = conv2d(Var::leaf(x), Var::leaf(w), Var(), 1, 18).value();
  // Output (i, j) reads input (i + 18(ky-1), j + 18(kx-1)).
  for (int ky = 0; ky < 3; ++ky)
    for (int kx = 0; kx < 3; ++kx) CHECK(y.at(0, 0, 20 - 18 * (ky - 1), 20 - 18 * (kx - 1)) == w.at(0, 0, ky, kx));
  CHECK(y.sum() == doctest::Approx(45.0));
}

TEST_CASE("parameter count") {
  NetworkConfig c8 = small(64, 0.125), c2 = small(64, 0.5), c1 = small(64, 1.0);
  CHECK(param_count(c1) > param_count(c2));
  CHECK(param_count(c2) > param_count(c8));
  CHECK(param_count(c8) == param_count(c8));
  CHECK(param_count(c8) == Network(c8, 99).params().scalar_count());

  NetworkConfig r12 = c8, r13 = c8, r24 = c8;
  r13.middle_repeats = 13;
  r24.middle_repeats = 24;
  const int64_t per_block = param_count(r13) - param_count(r12);
  CHECK(per_block > 0);
  CHECK(param_count(r24) - param_count(r12) == 12 * per_block);
}

TEST_CASE("parameters are Xavier-initialised with zero biases") {
  Network net(small(), 11);
  for (const auto& [name, p] : net.params().params()) {
    INFO(name);
    if (p.kind == ParamKind::Bias || p.kind == ParamKind::BnBeta) {
      for (float v : p.value->values()) CHECK(v == 0.0f);
    } else if (p.kind == ParamKind::BnGamma) {
      for (float v : p.value->values()) CHECK(v == 1.0f);
    } else {
      const Shape s = p.value->shape();
      const double rf = double(s.h * s.w);
      const double fan_in = s.c * rf, fan_out = (s.c == 1 ? 1 : s.n) * rf;
      const double limit = std::sqrt(6.0 / (fan_in + fan_out));
      for (float v : p.value->values()) CHECK(std::abs(v) <= limit + 1e-6);
    }
  }
  // Same seed, same parameters.
  Network again(small(), 11);
  for (const auto& [name, p] : net.params().params()) CHECK(*p.value == *again.params().get(name).value);
}

TEST_CASE("adopting a foreign parameter store is checked") {
  Network a(small(64, 0.125), 1);
  CHECK_NOTHROW(Network(small(64, 0.125), a.params().clone()));
  CHECK_THROWS_AS(Network(small(64, 0.25), a.params().clone()), ConfigError);
}
