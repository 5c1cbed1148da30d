#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "mdn/config.hpp"
#include "mdn/loss.hpp"
#include "mdn/network.hpp"
#include "mdn/optimizer.hpp"
#include "mdn/pipeline.hpp"

namespace mdn {

struct TrainConfig {
  NetworkConfig net;
  LossConfig loss;
  OptimizerConfig opt;
  DoseModel dose = DoseModel::low_dose();
  int64_t steps = 100;
  int64_t batch_size = 2;  // per replica
  int replicas = 1;
  uint64_t seed = 0;
  int64_t validate_every = 5;
  int64_t checkpoint_every = 0;  // 0: final checkpoint only
  // > 0: cycle through this many pairs drawn once up front.
  int64_t fixed_pairs = 0;
  bool downsample = true;
  // Manifest path, or "phantom[-clean]:<count>:<size>" for procedural micrographs.
  std::string train_corpus = "phantom:8:256";
  std::string val_corpus = "phantom:2:256";
  int queue_capacity = 2;
  int threads = 1;  // not part of the file format; outputs do not depend on it

  void validate() const;
  // Consumes every known key and rejects the rest. Relative corpus paths are
  // resolved against `base_dir`.
  static TrainConfig from_key_values(KeyValues& kv, const std::filesystem::path& base_dir = {});
  static TrainConfig load(const std::filesystem::path& path);
  KeyValues to_key_values() const;
};

// Manifest path or "phantom:<count>:<size>[:<seed>]"; "phantom-clean:" gives the
// same phantoms without counting noise. Unreadable manifest
// entries are skipped and counted; zero usable entries is an error.
std::vector<Micrograph> load_corpus(const std::string& spec, size_t* skipped = nullptr);

struct Batch {
  Tensor noisy;  // N x 1 x S x S
  Tensor truth;
};
Batch make_batch(const std::vector<ImagePair>& pairs);

struct StepStats {
  double objective = 0;    // loss actually minimised, including SSIM and L2 terms
  double scaled_mse = 0;   // s for the unclipped outputs of the whole batch
  double reported = 0;     // huberised loss of the clipped outputs
  double lr = 0;
};

// One synchronous step: every replica runs forward on its shard against the
// shared parameters, the batch-level loss scale is agreed on, replicas
// backpropagate, gradients are summed in replica order and exactly one
// optimiser update is applied. `step` is the 0-based batch index.
StepStats sync_replica_step(Network& net, const std::vector<Batch>& shards,
                            const LossConfig& loss, const OptimizerConfig& opt, int64_t step,
                            ForwardMode mode, int threads);

struct LogRow {
  int64_t step = 0;  // completed steps, 1-based
  double train_loss = 0;
  std::optional<double> val_loss;
  double lr = 0;
  std::string bn_mode;
};

struct TrainSummary {
  int64_t steps = 0;
  double final_train_loss = 0;
  std::optional<double> best_val_loss;
  std::filesystem::path checkpoint;
};

class Trainer {
 public:
  Trainer(TrainConfig cfg, std::vector<Micrograph> train, std::vector<Micrograph> val);

  // Continue from a checkpoint directory written by save().
  void resume(const std::filesystem::path& dir);
  void save(const std::filesystem::path& dir) const;

  // Trains until cfg.steps completed steps. Writes learning_curve.csv and
  // checkpoints/ under out_dir. A non-finite loss dumps checkpoints/nan_step_<k>
  // and throws NumericError.
  TrainSummary run(const std::filesystem::path& out_dir,
                   const std::function<void(const LogRow&)>& on_step = {});

  // The batch for 0-based step `step`, split into replica shards.
  std::vector<Batch> shards_for(int64_t step) const;
  // Single step without any I/O.
  LogRow step_once();
  std::optional<double> validate_at(int64_t completed_steps);

  int64_t step() const { return step_; }
  Network& network() { return net_; }
  const TrainConfig& config() const { return cfg_; }
  ForwardMode mode_for(int64_t step) const;

 private:
  LogRow step_with(const std::vector<Batch>& shards);

  TrainConfig cfg_;
  std::vector<Micrograph> train_;
  std::vector<Micrograph> val_;
  std::vector<ImagePair> fixed_;
  Network net_;
  int64_t step_ = 0;
};

void write_log_header(std::ostream& out);
void write_log_row(std::ostream& out, const LogRow& row);

}  // namespace mdn
