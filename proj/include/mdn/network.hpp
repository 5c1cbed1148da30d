#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "mdn/autodiff.hpp"
#include "mdn/ops.hpp"

namespace mdn {

struct NetworkConfig {
  int64_t input_size = 512;
  double width_multiplier = 1.0;
  int64_t middle_repeats = 12;
  std::vector<int64_t> aspp_rates{6, 12, 18};
  int64_t aspp_out_channels = 256;
  float bn_decay = 0.999f;

  // Throws ConfigError.
  void validate() const;
  // Channel count after width scaling, rounded up.
  int64_t channels(int64_t base) const;
  bool operator==(const NetworkConfig&) const = default;
};

enum class ParamKind { Weight, Bias, BnGamma, BnBeta };

struct Parameter {
  std::shared_ptr<Tensor> value;
  ParamKind kind = ParamKind::Weight;
  // Optimiser moments; empty until the first optimiser step.
  Tensor m;
  Tensor v;
};

// Named learnable tensors and batch-norm running statistics. Iteration order is
// the lexicographic order of names, so saving and updating are deterministic.
class ParamStore {
 public:
  Parameter& add(const std::string& name, Tensor value, ParamKind kind);
  BatchNormStats& add_bn(const std::string& name, int64_t channels, float decay);

  bool contains(const std::string& name) const { return params_.count(name) != 0; }
  Parameter& get(const std::string& name);
  const Parameter& get(const std::string& name) const;
  BatchNormStats& bn(const std::string& name);
  const BatchNormStats& bn(const std::string& name) const;

  std::map<std::string, Parameter>& params() { return params_; }
  const std::map<std::string, Parameter>& params() const { return params_; }
  std::map<std::string, BatchNormStats>& bn_stats() { return bn_; }
  const std::map<std::string, BatchNormStats>& bn_stats() const { return bn_; }

  // Total number of learnable scalars.
  int64_t scalar_count() const;
  // Deep copy (parameter tensors are not shared with the source).
  ParamStore clone() const;

 private:
  std::map<std::string, Parameter> params_;
  std::map<std::string, BatchNormStats> bn_;
};

enum class ForwardMode {
  Training,  // batch statistics, gradients tracked
  FrozenBn,  // running statistics, gradients tracked
  Inference  // running statistics, no graph retained
};

const char* to_string(ForwardMode mode);

// Per-call state of one forward pass. Holds the parameter leaves (whose grads
// are read after backward), pending batch-norm updates and named feature-map
// shapes for introspection.
struct ForwardContext {
  explicit ForwardContext(ForwardMode m, bool clip = false) : mode(m), clip_output(clip) {}

  ForwardMode mode;
  bool clip_output = false;
  std::vector<PendingBnUpdate> bn_updates;
  std::map<std::string, Var> leaves;
  std::map<std::string, Shape> taps;

  BnMode bn_mode() const { return mode == ForwardMode::Training ? BnMode::Training : BnMode::Frozen; }
  bool tracks_grad() const { return mode != ForwardMode::Inference; }
};

struct EntryFeatures {
  Var low_level_a;  // 1/4 resolution
  Var low_level_b;  // 1/4 resolution
  Var deep;         // 1/16 resolution
};

// Atrous convolutional encoder-decoder:
//   stem (residual downsampling) -> three Xception entry blocks -> skip-3
//   middle blocks -> ASPP (1x1, three atrous 3x3, image pooling) -> 1x1
//   bottleneck -> two-stage decoder with low-level concatenations -> two
//   stride-2 transposed convs -> 3x3 convs to one linear output channel.
class Network {
 public:
  Network(const NetworkConfig& cfg, uint64_t seed);
  // Adopts an existing parameter store (e.g. from a checkpoint). Throws if it
  // does not match the architecture of `cfg`.
  Network(const NetworkConfig& cfg, ParamStore params);

  // x: N x 1 x S x S with S = config().input_size.
  Var forward(const Tensor& x, ForwardContext& ctx);

  EntryFeatures entry_flow(const Var& x, ForwardContext& ctx);
  Var middle_flow(const Var& deep, ForwardContext& ctx);
  Var aspp(const Var& deep, ForwardContext& ctx);
  Var decoder(const Var& aspp_out, const Var& low_level_a, const Var& low_level_b,
              int64_t out_h, int64_t out_w, ForwardContext& ctx);

  const NetworkConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  // Channel plan derived from the config.
  int64_t low_level_a_channels() const;
  int64_t low_level_b_channels() const;

 private:
  Var forward_unchecked(const Var& x, ForwardContext& ctx);
  Var param(const std::string& name, const Shape& shape, ParamKind kind, ForwardContext& ctx);
  Var bn(const Var& x, const std::string& name, ForwardContext& ctx);
  Var conv(const Var& x, const std::string& name, int64_t cout, int64_t k, int64_t stride,
           int64_t dilation, ForwardContext& ctx, bool with_bias = false);
  Var separable(const Var& x, const std::string& name, int64_t cout, int64_t stride,
                int64_t dilation, ForwardContext& ctx);
  Var entry_block(const Var& x, const std::string& name, int64_t cout, ForwardContext& ctx);

  NetworkConfig cfg_;
  ParamStore params_;
  uint64_t seed_ = 0;
  bool building_ = false;
};

// Number of learnable scalars for `cfg`.
int64_t param_count(const NetworkConfig& cfg);

}  // namespace mdn
