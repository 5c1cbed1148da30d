#include <doctest.h>

#include <fstream>
#include <sstream>

#include "mdn/checkpoint.hpp"
#include "mdn/errors.hpp"
#include "mdn/trainer.hpp"
#include "support.hpp"

using namespace mdn;
using mdn::test::random_tensor;
using mdn::test::scratch_dir;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string l;
  while (std::getline(ss, l)) out.push_back(l);
  return out;
}

TrainConfig tiny_config() {
  TrainConfig c;
  c.net.input_size = 64;
  c.net.width_multiplier = 0.125;
  c.batch_size = 1;
  c.steps = 12;
  c.seed = 3;
  c.train_corpus = "phantom:2:128";
  c.val_corpus = "phantom:1:128:9";
  return c;
}

Trainer make_trainer(const TrainConfig& c) {
  return Trainer(c, load_corpus(c.train_corpus), load_corpus(c.val_corpus));
}

Parameter scalar_param(float v) {
  Parameter p;
  p.value = std::make_shared<Tensor>(Shape{1, 1, 1, 1}, v);
  return p;
}

std::map<std::string, Tensor> snapshot(const Network& net) {
  std::map<std::string, Tensor> s;
  for (const auto& [name, p] : net.params().params()) s.emplace(name, *p.value);
  return s;
}

// Largest per-tensor ||d1 - d2|| / ||d1|| over parameter deltas from `before`.
double relative_delta_gap(const std::map<std::string, Tensor>& before, const Network& a,
                          const Network& b) {
  double worst = 0;
  for (const auto& [name, p0] : before) {
    const Tensor& pa = *a.params().get(name).value;
    const Tensor& pb = *b.params().get(name).value;
    double num = 0, den = 0;
    for (int64_t i = 0; i < p0.numel(); ++i) {
      const double da = double(pa[i]) - p0[i], db = double(pb[i]) - p0[i];
      num += (da - db) * (da - db);
      den += da * da;
    }
    if (den > 0) worst = std::max(worst, std::sqrt(num / den));
  }
  return worst;
}

Batch random_batch(int64_t n, Rng& rng) {
  return {random_tensor({n, 1, 64, 64}, rng, 0, 1), random_tensor({n, 1, 64, 64}, rng, 0, 1)};
}

Batch slice_batch(const Batch& b, int64_t from, int64_t count) {
  const int64_t plane = 64 * 64;
  Batch out{Tensor({count, 1, 64, 64}), Tensor({count, 1, 64, 64})};
  std::copy(b.noisy.data() + from * plane, b.noisy.data() + (from + count) * plane, out.noisy.data());
  std::copy(b.truth.data() + from * plane, b.truth.data() + (from + count) * plane, out.truth.data());
  return out;
}

}  // namespace

TEST_CASE("huberised loss") {
  CHECK(huberize(0.0, 1.0) == 0.0);
  CHECK(huberize(1.0, 1.0) == 1.0);
  CHECK(huberize(1.0 - 1e-12, 1.0) == doctest::Approx(1.0));
  CHECK(huberize(4.0, 1.0) == 2.0);
  LossConfig cfg;
  CHECK(scaled_loss(1e-3, cfg) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(scaled_loss(4e-3, cfg) == doctest::Approx(2.0).epsilon(1e-12));
  double prev = -1;
  for (int i = 0; i <= 1000; ++i) {
    const double l = scaled_loss(1e-5 * i, cfg);
    CHECK(l >= prev);
    prev = l;
  }
  CHECK(huberize_slope(0.5, 1.0) == 1.0);
  CHECK(huberize_slope(1.0, 1.0) == 1.0);
  CHECK(huberize_slope(4.0, 1.0) == doctest::Approx(0.25));
}

TEST_CASE("loss gradient on both branches") {
  Rng rng(1);
  const Tensor target = random_tensor({1, 1, 8, 8}, rng, 0, 1);
  LossConfig cfg;
  cfg.l2_rate = 0;
  for (double s_goal : {0.5, 4.0}) {
    INFO("s " << s_goal);
    // Uniform offset d gives s = 1000 d^2.
    const float d = float(std::sqrt(s_goal / 1000.0));
    Tensor pred = target;
    for (int64_t i = 0; i < pred.numel(); ++i) pred[i] += (i % 2 ? d : -d);
    const Var leaf = Var::leaf(pred, true);
    const LossValue lv = compute_loss(leaf, target, cfg);
    CHECK(lv.scaled_mse == doctest::Approx(s_goal).epsilon(1e-5));
    backward(lv.total);
    const double slope = s_goal < 1 ? 1.0 : 0.5 / std::sqrt(s_goal);
    for (int64_t i = 0; i < pred.numel(); ++i) {
      const double want = slope * 1000.0 * 2.0 * (double(pred[i]) - target[i]) / 64.0;
      CHECK(leaf.grad()[i] == doctest::Approx(want).epsilon(1e-4));
    }
    // Central differences on a few entries.
    for (int64_t i : {0, 17, 63}) {
      const double h = 1e-3;
      Tensor up = pred, dn = pred;
      up[i] += float(h);
      dn[i] -= float(h);
      const double hu = double(up[i]) - pred[i], hd = double(pred[i]) - dn[i];
      const double fd = (compute_loss(Var::leaf(up), target, cfg).data -
                         compute_loss(Var::leaf(dn), target, cfg).data) / (hu + hd);
      CHECK(leaf.grad()[i] == doctest::Approx(fd).epsilon(2e-3));
    }
  }
}

TEST_CASE("L2 penalty") {
  Network net(tiny_config().net, 4);
  LossConfig all;
  double want = 0, want_w = 0;
  for (const auto& [name, p] : net.params().params()) {
    double s = 0;
    for (float v : p.value->values()) s += double(v) * v;
    want += s;
    if (p.kind == ParamKind::Weight || p.kind == ParamKind::BnGamma) want_w += s;
  }
  CHECK(l2_penalty(net.params(), all) == doctest::Approx(5e-5 * want).epsilon(1e-12));
  LossConfig weights = all;
  weights.l2_scope = L2Scope::Weights;
  CHECK(l2_penalty(net.params(), weights) == doctest::Approx(5e-5 * want_w).epsilon(1e-12));
  CHECK(!l2_applies(ParamKind::Bias, L2Scope::Weights));
  CHECK(l2_applies(ParamKind::BnBeta, L2Scope::All));

  SUBCASE("with no data gradient the norm decays every step") {
    Parameter p = scalar_param(0.0f);
    *p.value = Tensor({1, 1, 2, 2}, {0.5f, -0.3f, 0.2f, 0.9f});
    OptimizerConfig opt;
    double prev = 1e9;
    for (int t = 1; t <= 50; ++t) {
      Tensor g = *p.value;
      for (auto& v : g.values()) v *= float(2 * 5e-5);
      apply_update(p, g, opt, t, 1e-3);
      double n = 0;
      for (float v : p.value->values()) n += double(v) * v;
      CHECK(n < prev);
      prev = n;
    }
  }
}

TEST_CASE("adam") {
  OptimizerConfig opt;
  SUBCASE("zero gradient leaves parameters and decays moments") {
    Parameter p = scalar_param(1.0f);
    adam_step(p, Tensor({1, 1, 1, 1}, 2.0f), opt, 1, 1e-3);
    const float after = (*p.value)[0], m = p.m[0], v = p.v[0];
    adam_step(p, Tensor({1, 1, 1, 1}, 0.0f), opt, 2, 1e-3);
    CHECK(p.m[0] == doctest::Approx(0.5 * m));
    CHECK(p.v[0] == doctest::Approx(0.999 * v));
    // Momentum still moves the parameter, so check a fresh one instead.
    Parameter q = scalar_param(1.0f);
    adam_step(q, Tensor({1, 1, 1, 1}, 0.0f), opt, 1, 1e-3);
    CHECK((*q.value)[0] == 1.0f);
    CHECK(after < 1.0f);
  }
  SUBCASE("first step has magnitude lr") {
    for (float g : {3.0f, -0.02f, 250.0f}) {
      Parameter p = scalar_param(0.0f);
      adam_step(p, Tensor({1, 1, 1, 1}, g), opt, 1, 1e-3);
      CHECK(std::abs((*p.value)[0]) == doctest::Approx(1e-3).epsilon(1e-4));
      CHECK(((*p.value)[0] < 0) == (g > 0));
    }
  }
  SUBCASE("beta1 0.5 first moment") {
    Parameter p = scalar_param(0.0f);
    adam_step(p, Tensor({1, 1, 1, 1}, 2.0f), opt, 1, 1e-3);
    adam_step(p, Tensor({1, 1, 1, 1}, 2.0f), opt, 2, 1e-3);
    CHECK(p.m[0] == doctest::Approx(0.75 * 2.0));
  }
}

TEST_CASE("rmsprop") {
  OptimizerConfig opt;
  opt.kind = OptimizerKind::RmsProp;
  Parameter p = scalar_param(1.0f);
  rmsprop_step(p, Tensor({1, 1, 1, 1}, 0.0f), opt, 1e-3);
  CHECK((*p.value)[0] == 1.0f);
  float prev = (*p.value)[0];
  double last = 0;
  for (int i = 0; i < 200; ++i) {
    apply_update(p, Tensor({1, 1, 1, 1}, 0.7f), opt, i + 1, 1e-3);
    last = prev - (*p.value)[0];
    prev = (*p.value)[0];
  }
  CHECK(last == doctest::Approx(1e-3).epsilon(1e-3));
}

TEST_CASE("learning-rate schedule") {
  const OptimizerConfig opt;
  CHECK(lr_at(opt.schedule, 0) == 1e-3);
  CHECK(lr_at(opt.schedule, 134107) == 1e-3);
  CHECK(lr_at(opt.schedule, 134108) == 2.5e-4);
  CHECK(lr_at(opt.schedule, 151821) == 1e-4);
  CHECK(lr_at(opt.schedule, int64_t{1} << 40) == 1e-4);
  CHECK(lr_at({{5, 0.1}}, 1000) == 0.1);
  CHECK_THROWS_AS(lr_at({}, 0), ConfigError);
  const auto s = parse_schedule("100:0.01,inf:0.001");
  REQUIRE(s.size() == 2);
  CHECK(s[1].until_batch == INT64_MAX);
  CHECK(parse_schedule(format_schedule(opt.schedule)).size() == 3);
  CHECK_THROWS_AS(parse_schedule("100:0.1,50:0.01"), ConfigError);
}

TEST_CASE("synchronous replicas") {
  const NetworkConfig nc = tiny_config().net;
  LossConfig loss;
  OptimizerConfig opt;
  Rng rng(5);
  const Batch whole = random_batch(4, rng);

  SUBCASE("identical shards equal a single shard") {
    Network a(nc, 1), b(nc, 1);
    const Batch half = slice_batch(whole, 0, 2);
    const auto before = snapshot(a);
    sync_replica_step(a, {half}, loss, opt, 0, ForwardMode::FrozenBn, 1);
    sync_replica_step(b, {half, half}, loss, opt, 0, ForwardMode::FrozenBn, 2);
    CHECK(relative_delta_gap(before, a, b) < 1e-5);
  }
  SUBCASE("two replicas match one on the same total batch") {
    Network a(nc, 1), b(nc, 1);
    const auto before = snapshot(a);
    for (int64_t step = 0; step < 3; ++step) {
      sync_replica_step(a, {whole}, loss, opt, step, ForwardMode::FrozenBn, 1);
      sync_replica_step(b, {slice_batch(whole, 0, 2), slice_batch(whole, 2, 2)}, loss, opt, step,
                        ForwardMode::FrozenBn, 2);
    }
    CHECK(relative_delta_gap(before, a, b) < 1e-5);
  }
  SUBCASE("thread count does not change the result") {
    Network a(nc, 1), b(nc, 1);
    const std::vector<Batch> shards{slice_batch(whole, 0, 1), slice_batch(whole, 1, 3)};
    sync_replica_step(a, shards, loss, opt, 0, ForwardMode::Training, 1);
    sync_replica_step(b, shards, loss, opt, 0, ForwardMode::Training, 2);
    for (const auto& [name, p] : a.params().params()) CHECK(*p.value == *b.params().get(name).value);
    for (const auto& [name, s] : a.params().bn_stats())
      CHECK(s.running_mean == b.params().bn(name).running_mean);
  }
  SUBCASE("empty shard is rejected") {
    Network a(nc, 1);
    CHECK_THROWS_AS(sync_replica_step(a, {}, loss, opt, 0, ForwardMode::Training, 1), InvalidInput);
  }
}

TEST_CASE("training loop log and cadence") {
  const auto dir = scratch_dir("train_log");
  Trainer t = make_trainer(tiny_config());
  const TrainSummary s = t.run(dir);
  CHECK(s.steps == 12);
  const auto rows = lines(slurp(dir / "learning_curve.csv"));
  REQUIRE(rows.size() == 13);
  CHECK(rows[0] == "step,train_loss,val_loss,lr,bn_mode");
  int validations = 0;
  for (size_t i = 1; i < rows.size(); ++i) {
    CHECK(std::stoll(rows[i]) == int64_t(i));
    std::vector<std::string> f;
    std::stringstream ss(rows[i]);
    std::string x;
    while (std::getline(ss, x, ',')) f.push_back(x);
    validations += f.size() > 2 && !f[2].empty();
  }
  CHECK(validations == 12 / 5);
  CHECK(std::filesystem::exists(dir / "checkpoints" / "final" / "manifest.txt"));
}

TEST_CASE("same seed, same artifacts, any thread count") {
  TrainConfig c = tiny_config();
  c.steps = 6;
  c.replicas = 2;
  const auto d1 = scratch_dir("train_det1"), d2 = scratch_dir("train_det2");
  make_trainer(c).run(d1);
  c.threads = 2;
  make_trainer(c).run(d2);
  CHECK(slurp(d1 / "learning_curve.csv") == slurp(d2 / "learning_curve.csv"));
  CHECK(slurp(d1 / "checkpoints/final/tensors.mdtc") == slurp(d2 / "checkpoints/final/tensors.mdtc"));
}

TEST_CASE("checkpoint round trip and resume") {
  const auto dir = scratch_dir("train_resume");
  TrainConfig c = tiny_config();
  c.steps = 6;
  c.checkpoint_every = 3;
  std::vector<double> losses;
  make_trainer(c).run(dir, [&](const LogRow& r) { losses.push_back(r.train_loss); });
  REQUIRE(losses.size() == 6);

  Trainer resumed = make_trainer(c);
  resumed.resume(dir / "checkpoints" / "step_3");
  CHECK(resumed.step() == 3);
  CHECK(resumed.step_once().train_loss == doctest::Approx(losses[3]).epsilon(1e-6));

  SUBCASE("save, load, save is byte identical") {
    const Checkpoint ck = load_checkpoint(dir / "checkpoints" / "step_3");
    save_checkpoint(dir / "again", ck.params, ck.manifest);
    CHECK(slurp(dir / "again" / "tensors.mdtc") == slurp(dir / "checkpoints" / "step_3" / "tensors.mdtc"));
    CHECK(slurp(dir / "again" / "manifest.txt") == slurp(dir / "checkpoints" / "step_3" / "manifest.txt"));
  }
  SUBCASE("moments survive the round trip") {
    const Checkpoint ck = load_checkpoint(dir / "checkpoints" / "step_3");
    for (const auto& [name, p] : ck.params.params()) {
      CHECK(!p.m.empty());
      CHECK(!p.v.empty());
    }
  }
  SUBCASE("architecture mismatch is rejected") {
    NetworkConfig other = c.net;
    other.width_multiplier = 0.25;
    CHECK_THROWS_AS(load_checkpoint(dir / "checkpoints" / "step_3", &other), ConfigError);
  }
  SUBCASE("resuming rewrites the log from the resume point") {
    TrainConfig longer = c;
    longer.steps = 8;
    Trainer t = make_trainer(longer);
    t.resume(dir / "checkpoints" / "step_3");
    t.run(dir);
    const auto rows = lines(slurp(dir / "learning_curve.csv"));
    REQUIRE(rows.size() == 9);
    for (size_t i = 1; i < rows.size(); ++i) CHECK(std::stoll(rows[i]) == int64_t(i));
  }
}

TEST_CASE("non-finite loss aborts with a diagnostic checkpoint") {
  const auto dir = scratch_dir("train_nan");
  TrainConfig c = tiny_config();
  c.steps = 2;
  Trainer t = make_trainer(c);
  (*t.network().params().params().begin()->second.value)[0] = std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS_AS(t.run(dir), NumericError);
  CHECK(std::filesystem::exists(dir / "checkpoints" / "nan_step_0" / "manifest.txt"));
}

TEST_CASE("config file") {
  const auto dir = scratch_dir("train_cfg");
  TrainConfig c = tiny_config();
  c.opt.beta1 = 0.2;
  c.loss.l2_scope = L2Scope::Weights;
  c.dose = DoseModel::parse("uniform:300,400");
  {
    std::ofstream out(dir / "train.cfg");
    c.to_key_values().write(out);
  }
  const TrainConfig back = TrainConfig::load(dir / "train.cfg");
  CHECK(back.opt.beta1 == 0.2);
  CHECK(back.loss.l2_scope == L2Scope::Weights);
  CHECK(back.dose.str() == c.dose.str());
  const KeyValues kb = back.to_key_values(), kc = c.to_key_values();
  CHECK(kb.entries().size() == kc.entries().size());

  std::ofstream(dir / "bad.cfg") << "steps = 10\nlearning_speed = 3\n";
  CHECK_THROWS_AS(TrainConfig::load(dir / "bad.cfg"), ConfigError);
  std::ofstream(dir / "beta.cfg") << "beta1 = 1.0\n";
  CHECK_THROWS_AS(TrainConfig::load(dir / "beta.cfg"), ConfigError);
}
