#include "mdn/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>
#include <variant>

#include "mdn/bounded_queue.hpp"
#include "mdn/checkpoint.hpp"
#include "mdn/errors.hpp"
#include "mdn/image_io.hpp"
#include "mdn/ops.hpp"
#include "mdn/parallel.hpp"

namespace mdn {
namespace fs = std::filesystem;

namespace {

constexpr uint64_t kTrainStream = 0x7472;
constexpr uint64_t kFixedStream = 0x6678;
constexpr uint64_t kValStream = 0x7661;

std::string resolve(const std::string& spec, const fs::path& base) {
  if (spec.rfind("phantom:", 0) == 0 || base.empty()) return spec;
  const fs::path p(spec);
  return p.is_absolute() ? spec : (base / p).string();
}

const char* bn_mode_name(ForwardMode m) {
  return m == ForwardMode::Training ? "training" : "frozen";
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10e", v);
  return buf;
}

}  // namespace

// ---- config ----

void TrainConfig::validate() const {
  net.validate();
  loss.validate();
  opt.validate();
  dose.validate();
  if (steps < 0) throw ConfigError("steps must be >= 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (replicas < 1) throw ConfigError("replicas must be >= 1");
  if (validate_every < 1) throw ConfigError("validate_every must be >= 1");
  if (checkpoint_every < 0) throw ConfigError("checkpoint_every must be >= 0");
  if (fixed_pairs < 0) throw ConfigError("fixed_pairs must be >= 0");
  if (queue_capacity < 1) throw ConfigError("queue_capacity must be >= 1");
}

TrainConfig TrainConfig::from_key_values(KeyValues& kv, const fs::path& base) {
  TrainConfig c;
  c.net.input_size = kv.get_int("input_size", c.net.input_size);
  c.net.width_multiplier = kv.get_double("width_multiplier", c.net.width_multiplier);
  c.net.middle_repeats = kv.get_int("middle_repeats", c.net.middle_repeats);
  c.net.aspp_rates = kv.get_int_list("aspp_rates", c.net.aspp_rates);
  c.net.aspp_out_channels = kv.get_int("aspp_out_channels", c.net.aspp_out_channels);
  c.net.bn_decay = static_cast<float>(kv.get_double("bn_decay", c.net.bn_decay));

  c.loss.mse_scale = kv.get_double("mse_scale", c.loss.mse_scale);
  c.loss.huber_threshold = kv.get_double("huber_threshold", c.loss.huber_threshold);
  c.loss.ssim_weight = kv.get_double("ssim_weight", c.loss.ssim_weight);
  c.loss.clip_in_loss = kv.get_bool("clip_in_loss", c.loss.clip_in_loss);
  c.loss.l2_rate = kv.get_double("l2_rate", c.loss.l2_rate);
  const std::string scope = kv.get_string("l2_scope", "all");
  if (scope == "all") {
    c.loss.l2_scope = L2Scope::All;
  } else if (scope == "weights") {
    c.loss.l2_scope = L2Scope::Weights;
  } else {
    throw ConfigError(kv.source() + ":" + std::to_string(kv.entries().at("l2_scope").line) +
                      ": l2_scope must be all or weights");
  }

  const std::string kind = kv.get_string("optimizer", "adam");
  if (kind == "adam") {
    c.opt.kind = OptimizerKind::Adam;
  } else if (kind == "rmsprop") {
    c.opt.kind = OptimizerKind::RmsProp;
  } else {
    throw ConfigError(kv.source() + ":" + std::to_string(kv.entries().at("optimizer").line) +
                      ": optimizer must be adam or rmsprop");
  }
  c.opt.beta1 = kv.get_double("beta1", c.opt.beta1);
  c.opt.beta2 = kv.get_double("beta2", c.opt.beta2);
  c.opt.rms_decay = kv.get_double("rms_decay", c.opt.rms_decay);
  c.opt.eps = kv.get_double("eps", c.opt.eps);
  if (kv.has("schedule")) {
    const int line = kv.entries().at("schedule").line;
    try {
      c.opt.schedule = parse_schedule(kv.get_string("schedule", ""));
    } catch (const ConfigError& e) {
      throw ConfigError(kv.source() + ":" + std::to_string(line) + ": " + e.what());
    }
  }
  c.opt.bn_freeze_batch = kv.get_int("bn_freeze_batch", c.opt.bn_freeze_batch);

  if (kv.has("dose")) {
    const int line = kv.entries().at("dose").line;
    try {
      c.dose = DoseModel::parse(kv.get_string("dose", ""));
    } catch (const std::exception& e) {
      throw ConfigError(kv.source() + ":" + std::to_string(line) + ": " + e.what());
    }
  }
  c.steps = kv.get_int("steps", c.steps);
  c.batch_size = kv.get_int("batch_size", c.batch_size);
  c.replicas = static_cast<int>(kv.get_int("replicas", c.replicas));
  c.seed = kv.get_uint64("seed", c.seed);
  c.validate_every = kv.get_int("validate_every", c.validate_every);
  c.checkpoint_every = kv.get_int("checkpoint_every", c.checkpoint_every);
  c.fixed_pairs = kv.get_int("fixed_pairs", c.fixed_pairs);
  c.downsample = kv.get_bool("downsample", c.downsample);
  c.train_corpus = resolve(kv.get_string("train_corpus", c.train_corpus), base);
  c.val_corpus = resolve(kv.get_string("val_corpus", c.val_corpus), base);
  c.queue_capacity = static_cast<int>(kv.get_int("queue_capacity", c.queue_capacity));
  kv.reject_unknown();
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(kv.source() + ": " + e.what());
  }
  return c;
}

TrainConfig TrainConfig::load(const fs::path& path) {
  KeyValues kv = KeyValues::load(path);
  return from_key_values(kv, path.parent_path());
}

KeyValues TrainConfig::to_key_values() const {
  KeyValues kv;
  auto join = [](const std::vector<int64_t>& v) {
    std::string s;
    for (size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    return s;
  };
  kv.set("input_size", std::to_string(net.input_size));
  kv.set("width_multiplier", format_double(net.width_multiplier));
  kv.set("middle_repeats", std::to_string(net.middle_repeats));
  kv.set("aspp_rates", join(net.aspp_rates));
  kv.set("aspp_out_channels", std::to_string(net.aspp_out_channels));
  kv.set("bn_decay", format_double(net.bn_decay));
  kv.set("mse_scale", format_double(loss.mse_scale));
  kv.set("huber_threshold", format_double(loss.huber_threshold));
  kv.set("ssim_weight", format_double(loss.ssim_weight));
  kv.set("clip_in_loss", loss.clip_in_loss ? "true" : "false");
  kv.set("l2_rate", format_double(loss.l2_rate));
  kv.set("l2_scope", loss.l2_scope == L2Scope::All ? "all" : "weights");
  kv.set("optimizer", opt.kind == OptimizerKind::Adam ? "adam" : "rmsprop");
  kv.set("beta1", format_double(opt.beta1));
  kv.set("beta2", format_double(opt.beta2));
  kv.set("rms_decay", format_double(opt.rms_decay));
  kv.set("eps", format_double(opt.eps));
  kv.set("schedule", format_schedule(opt.schedule));
  kv.set("bn_freeze_batch", std::to_string(opt.bn_freeze_batch));
  kv.set("dose", dose.str());
  kv.set("steps", std::to_string(steps));
  kv.set("batch_size", std::to_string(batch_size));
  kv.set("replicas", std::to_string(replicas));
  kv.set("seed", std::to_string(seed));
  kv.set("validate_every", std::to_string(validate_every));
  kv.set("checkpoint_every", std::to_string(checkpoint_every));
  kv.set("fixed_pairs", std::to_string(fixed_pairs));
  kv.set("downsample", downsample ? "true" : "false");
  kv.set("train_corpus", train_corpus);
  kv.set("val_corpus", val_corpus);
  kv.set("queue_capacity", std::to_string(queue_capacity));
  return kv;
}

std::vector<Micrograph> load_corpus(const std::string& spec, size_t* skipped) {
  std::vector<Micrograph> out;
  if (skipped) *skipped = 0;
  const bool clean = spec.rfind("phantom-clean:", 0) == 0;
  if (clean || spec.rfind("phantom:", 0) == 0) {
    std::vector<int64_t> nums;
    std::stringstream ss(spec.substr(spec.find(':') + 1));
    std::string part;
    while (std::getline(ss, part, ':')) {
      try {
        nums.push_back(std::stoll(part));
      } catch (const std::exception&) {
        throw ConfigError("bad phantom corpus spec '" + spec + "'");
      }
    }
    if (nums.size() < 2 || nums.size() > 3 || nums[0] < 1) {
      throw ConfigError("phantom corpus spec is phantom[-clean]:<count>:<size>[:<seed>], got '" +
                        spec + "'");
    }
    const uint64_t seed = nums.size() == 3 ? static_cast<uint64_t>(nums[2]) : 0;
    for (int64_t i = 0; i < nums[0]; ++i) {
      out.emplace_back(
          phantom_micrograph(nums[1], combine_seed(seed, static_cast<uint64_t>(i)), 4000.0, !clean),
          "phantom/" + std::to_string(i));
    }
    return out;
  }
  for (const auto& p : read_manifest(spec)) {
    try {
      out.push_back(load_micrograph(p));
    } catch (const std::exception& e) {
      if (skipped) ++*skipped;
      std::cerr << "warning: skipping " << p.string() << ": " << e.what() << "\n";
    }
  }
  if (out.empty()) throw IoError("corpus '" + spec + "' has no usable images");
  return out;
}

Batch make_batch(const std::vector<ImagePair>& pairs) {
  std::vector<Image> noisy, truth;
  for (const auto& p : pairs) {
    noisy.push_back(p.noisy);
    truth.push_back(p.ground_truth);
  }
  return {to_tensor(noisy), to_tensor(truth)};
}

// ---- replica step ----

StepStats sync_replica_step(Network& net, const std::vector<Batch>& shards,
                            const LossConfig& loss, const OptimizerConfig& opt, int64_t step,
                            ForwardMode mode, int threads) {
  if (shards.empty()) throw InvalidInput("sync_replica_step: no shards");
  if (mode == ForwardMode::Inference) throw InvalidInput("sync_replica_step: inference mode");
  for (const auto& b : shards) {
    if (b.noisy.numel() == 0) throw InvalidInput("sync_replica_step: empty shard");
    require_same_shape(b.noisy, b.truth, "sync_replica_step");
  }
  const size_t R = shards.size();

  struct Replica {
    ForwardContext ctx{ForwardMode::Training};
    Var pred;
    Var used;  // pred, or its clipped version when the loss clips
    double sse = 0;
    double sse_clipped = 0;
  };
  std::vector<Replica> reps(R);
  int64_t total_px = 0, total_images = 0;
  for (const auto& b : shards) {
    total_px += b.truth.numel();
    total_images += b.truth.shape().n;
  }

  parallel_for(static_cast<int64_t>(R), threads, [&](int64_t r) {
    Replica& rep = reps[r];
    rep.ctx = ForwardContext(mode);
    rep.pred = net.forward(shards[r].noisy, rep.ctx);
    rep.used = loss.clip_in_loss ? clip01(rep.pred) : rep.pred;
    const Tensor& t = shards[r].truth;
    for (int64_t i = 0; i < t.numel(); ++i) {
      const double p = rep.pred.value()[i];
      const double u = rep.used.value()[i] - static_cast<double>(t[i]);
      const double c = std::clamp(p, 0.0, 1.0) - t[i];
      rep.sse += u * u;
      rep.sse_clipped += c * c;
    }
  });

  double sse_total = 0, sse_clipped = 0;
  for (const auto& rep : reps) {
    sse_total += rep.sse;
    sse_clipped += rep.sse_clipped;
  }
  StepStats st;
  st.scaled_mse = loss.mse_scale * sse_total / static_cast<double>(total_px);
  st.reported = huberize(loss.mse_scale * sse_clipped / static_cast<double>(total_px),
                         loss.huber_threshold);
  st.objective = huberize(st.scaled_mse, loss.huber_threshold);
  st.lr = lr_at(opt.schedule, step);
  const double slope = huberize_slope(st.scaled_mse, loss.huber_threshold);
  const double data_factor = slope * loss.mse_scale / static_cast<double>(total_px);

  std::vector<double> ssim_terms(R, 0.0);
  parallel_for(static_cast<int64_t>(R), threads, [&](int64_t r) {
    Replica& rep = reps[r];
    Var j = sse(rep.used, shards[r].truth, data_factor);
    if (loss.ssim_weight > 0) {
      Var d = ssim_distance(rep.used, shards[r].truth,
                            loss.ssim_weight / static_cast<double>(total_images));
      ssim_terms[r] = d.value()[0];
      j = add(j, d);
    }
    backward(j);
  });
  for (double s : ssim_terms) st.objective += s;

  ParamStore& ps = net.params();
  st.objective += l2_penalty(ps, loss);
  if (!std::isfinite(st.objective)) {
    throw NumericError("non-finite loss at step " + std::to_string(step));
  }

  // Merge gradients in replica order, then add the L2 gradient.
  std::map<std::string, Tensor> grads;
  for (auto& [name, p] : ps.params()) {
    Tensor g(p.value->shape());
    for (const auto& rep : reps) {
      const Var& leaf = rep.ctx.leaves.at(name);
      if (leaf.has_grad()) g.add_(leaf.grad());
    }
    if (loss.l2_rate > 0 && l2_applies(p.kind, loss.l2_scope)) {
      const float k = static_cast<float>(2.0 * loss.l2_rate);
      for (int64_t i = 0; i < g.numel(); ++i) g[i] += k * (*p.value)[i];
    }
    if (!g.all_finite()) throw NumericError("non-finite gradient for '" + name + "'");
    grads.emplace(name, std::move(g));
  }

  // Batch-norm statistics: shard-size-weighted average, one update per layer.
  if (mode == ForwardMode::Training) {
    const size_t layers = reps[0].ctx.bn_updates.size();
    for (size_t l = 0; l < layers; ++l) {
      PendingBnUpdate merged = reps[0].ctx.bn_updates[l];
      if (R > 1) {
        std::fill(merged.mean.begin(), merged.mean.end(), 0.0);
        std::fill(merged.var.begin(), merged.var.end(), 0.0);
        for (size_t r = 0; r < R; ++r) {
          const auto& u = reps[r].ctx.bn_updates.at(l);
          const double w = static_cast<double>(shards[r].truth.shape().n) /
                           static_cast<double>(total_images);
          for (size_t c = 0; c < merged.mean.size(); ++c) {
            merged.mean[c] += w * u.mean[c];
            merged.var[c] += w * u.var[c];
          }
        }
      }
      merged.target->update(merged.mean, merged.var);
    }
  }

  for (auto& [name, p] : ps.params()) apply_update(p, grads.at(name), opt, step + 1, st.lr);
  return st;
}

// ---- trainer ----

Trainer::Trainer(TrainConfig cfg, std::vector<Micrograph> train, std::vector<Micrograph> val)
    : cfg_(std::move(cfg)), train_(std::move(train)), val_(std::move(val)),
      net_(cfg_.net, cfg_.seed) {
  cfg_.validate();
  if (train_.empty()) throw InvalidInput("trainer: empty training corpus");
  if (val_.empty()) throw InvalidInput("trainer: empty validation corpus");
  if (cfg_.fixed_pairs > 0) {
    const Rng root = Rng(cfg_.seed).split(kFixedStream);
    PairOptions po{cfg_.net.input_size, cfg_.downsample};
    for (int64_t k = 0; k < cfg_.fixed_pairs; ++k) {
      Rng rng = root.split(static_cast<uint64_t>(k));
      fixed_.push_back(make_pair(train_[static_cast<size_t>(k) % train_.size()], cfg_.dose, rng, po));
    }
  }
}

ForwardMode Trainer::mode_for(int64_t step) const {
  return step < cfg_.opt.bn_freeze_batch ? ForwardMode::Training : ForwardMode::FrozenBn;
}

std::vector<Batch> Trainer::shards_for(int64_t step) const {
  const PairOptions po{cfg_.net.input_size, cfg_.downsample};
  const int64_t per = cfg_.batch_size;
  const int64_t total = per * cfg_.replicas;
  const Rng root = Rng(cfg_.seed).split(kTrainStream);
  std::vector<Batch> shards;
  for (int r = 0; r < cfg_.replicas; ++r) {
    std::vector<ImagePair> pairs;
    for (int64_t i = r * per; i < (r + 1) * per; ++i) {
      if (!fixed_.empty()) {
        pairs.push_back(fixed_[static_cast<size_t>((step * total + i) % cfg_.fixed_pairs)]);
      } else {
        Rng rng = root.split(combine_seed(static_cast<uint64_t>(step), static_cast<uint64_t>(i)));
        const auto& m = train_[static_cast<size_t>(
            rng.uniform_int(0, static_cast<int64_t>(train_.size()) - 1))];
        pairs.push_back(make_pair(m, cfg_.dose, rng, po));
      }
    }
    shards.push_back(make_batch(pairs));
  }
  return shards;
}

std::optional<double> Trainer::validate_at(int64_t completed) {
  if (completed < 1 || completed % cfg_.validate_every != 0) return std::nullopt;
  const int64_t k = completed / cfg_.validate_every - 1;
  Rng rng = Rng(cfg_.seed).split(kValStream).split(static_cast<uint64_t>(k));
  const PairOptions po{cfg_.net.input_size, cfg_.downsample};
  const ImagePair p = make_pair(val_[static_cast<size_t>(k) % val_.size()], cfg_.dose, rng, po);
  ForwardContext ctx(ForwardMode::Inference, true);
  const Var out = net_.forward(to_tensor(p.noisy), ctx);
  const Image o = from_tensor(out.value());
  double s = 0;
  for (int64_t i = 0; i < o.size(); ++i) {
    const double d = o.px[i] - p.ground_truth.px[i];
    s += d * d;
  }
  return scaled_loss(s / static_cast<double>(o.size()), cfg_.loss);
}

LogRow Trainer::step_with(const std::vector<Batch>& shards) {
  const ForwardMode mode = mode_for(step_);
  const StepStats st =
      sync_replica_step(net_, shards, cfg_.loss, cfg_.opt, step_, mode, cfg_.threads);
  ++step_;
  LogRow row;
  row.step = step_;
  row.train_loss = st.reported;
  row.lr = st.lr;
  row.bn_mode = bn_mode_name(mode);
  row.val_loss = validate_at(step_);
  return row;
}

LogRow Trainer::step_once() { return step_with(shards_for(step_)); }

void Trainer::save(const fs::path& dir) const {
  CheckpointManifest m;
  m.config = cfg_.net;
  m.step = step_;
  m.bn_mode = bn_mode_name(mode_for(step_));
  m.rng_key = Rng(cfg_.seed).key();
  m.rng_counter = static_cast<uint64_t>(step_);
  const KeyValues kv = cfg_.to_key_values();
  for (const auto& [k, e] : kv.entries()) m.extra["train." + k] = e.value;
  save_checkpoint(dir, net_.params(), m);
}

void Trainer::resume(const fs::path& dir) {
  Checkpoint ck = load_checkpoint(dir, &cfg_.net);
  if (ck.manifest.model != "encoder_decoder") {
    throw ConfigError(dir.string() + ": cannot resume training from a '" + ck.manifest.model +
                      "' checkpoint");
  }
  net_ = Network(cfg_.net, std::move(ck.params));
  step_ = ck.manifest.step;
}

void write_log_header(std::ostream& out) { out << "step,train_loss,val_loss,lr,bn_mode\n"; }

void write_log_row(std::ostream& out, const LogRow& r) {
  out << r.step << ',' << fmt(r.train_loss) << ',' << (r.val_loss ? fmt(*r.val_loss) : "") << ','
      << fmt(r.lr) << ',' << r.bn_mode << '\n';
}

TrainSummary Trainer::run(const fs::path& out_dir,
                          const std::function<void(const LogRow&)>& on_step) {
  std::error_code ec;
  fs::create_directories(out_dir / "checkpoints", ec);
  if (ec) throw IoError("cannot create " + (out_dir / "checkpoints").string() + ": " + ec.message());

  // Keep rows up to the resume point, drop anything after it.
  const fs::path csv = out_dir / "learning_curve.csv";
  std::vector<std::string> kept;
  TrainSummary summary;
  if (step_ > 0 && fs::exists(csv)) {
    std::ifstream in(csv);
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
      const int64_t s = std::stoll(line.substr(0, line.find(',')));
      if (s > step_) break;
      kept.push_back(line);
      const auto parts = [&] {
        std::vector<std::string> v;
        std::stringstream ss(line);
        std::string f;
        while (std::getline(ss, f, ',')) v.push_back(f);
        return v;
      }();
      if (parts.size() > 2 && !parts[2].empty()) {
        const double vl = std::stod(parts[2]);
        if (!summary.best_val_loss || vl < *summary.best_val_loss) summary.best_val_loss = vl;
      }
    }
  }
  std::ofstream log(csv, std::ios::binary | std::ios::trunc);
  if (!log) throw IoError("cannot write " + csv.string());
  write_log_header(log);
  for (const auto& l : kept) log << l << '\n';

  const int64_t start = step_;
  BoundedQueue<std::vector<Batch>> queue(static_cast<size_t>(cfg_.queue_capacity));
  std::exception_ptr producer_error;
  std::thread producer([&] {
    try {
      for (int64_t s = start; s < cfg_.steps; ++s) {
        if (!queue.push(shards_for(s))) return;
      }
    } catch (...) {
      producer_error = std::current_exception();
    }
    queue.close();
  });
  auto stop_producer = [&] {
    queue.close();
    producer.join();
  };

  try {
    while (step_ < cfg_.steps) {
      auto shards = queue.pop();
      if (!shards) {
        if (producer_error) std::rethrow_exception(producer_error);
        throw IoError("batch producer stopped early");
      }
      LogRow row;
      try {
        row = step_with(*shards);
      } catch (const NumericError& e) {
        const fs::path dump = out_dir / "checkpoints" / ("nan_step_" + std::to_string(step_));
        save(dump);
        throw NumericError(std::string(e.what()) + "; diagnostic checkpoint at " + dump.string());
      }
      write_log_row(log, row);
      log.flush();
      if (!log) throw IoError("write failed: " + csv.string());
      summary.final_train_loss = row.train_loss;
      if (row.val_loss && (!summary.best_val_loss || *row.val_loss < *summary.best_val_loss)) {
        summary.best_val_loss = row.val_loss;
      }
      if (on_step) on_step(row);
      if (cfg_.checkpoint_every > 0 && step_ % cfg_.checkpoint_every == 0) {
        save(out_dir / "checkpoints" / ("step_" + std::to_string(step_)));
      }
    }
  } catch (...) {
    stop_producer();
    throw;
  }
  stop_producer();
  summary.steps = step_;
  summary.checkpoint = out_dir / "checkpoints" / "final";
  save(summary.checkpoint);
  return summary;
}

}  // namespace mdn
