#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mdn/autodiff.hpp"

namespace mdn {

enum class Padding { Same, Valid };

// Output geometry of a 2-D sliding window. Same padding is symmetric with the
// odd pixel going to the bottom/right.
struct ConvGeometry {
  int64_t kh = 1, kw = 1;
  int64_t stride = 1;
  int64_t dilation = 1;
  int64_t pad_top = 0, pad_left = 0;
  int64_t in_h = 0, in_w = 0;
  int64_t out_h = 0, out_w = 0;

  static ConvGeometry make(int64_t in_h, int64_t in_w, int64_t kh, int64_t kw, int64_t stride,
                           int64_t dilation, Padding padding);
};

// x: N x Cin x H x W, w: Cout x Cin x Kh x Kw, bias: optional Cout-vector (1 x Cout x 1 x 1).
Var conv2d(const Var& x, const Var& w, const Var& bias, int64_t stride, int64_t dilation,
           Padding padding = Padding::Same);

// Per-channel spatial convolution, w: C x 1 x Kh x Kw. Same padding.
Var depthwise_conv2d(const Var& x, const Var& w, int64_t stride, int64_t dilation);

// Adjoint of a same-padded stride-s conv2d: output spatial size is s x input.
// w: Cin x Cout x Kh x Kw (the kernel of the conv it is the adjoint of, read as
// Cout_conv = Cin, Cin_conv = Cout).
Var transposed_conv2d(const Var& x, const Var& w, int64_t stride);

// Half-pixel-centre bilinear interpolation (not corner aligned), edge clamped.
Var bilinear_upsample(const Var& x, int64_t out_h, int64_t out_w);

enum class BnMode { Training, Frozen };

struct BatchNormStats {
  std::vector<float> running_mean;
  std::vector<float> running_var;
  float decay = 0.999f;

  BatchNormStats() = default;
  explicit BatchNormStats(int64_t channels, float decay = 0.999f);
  int64_t channels() const { return static_cast<int64_t>(running_mean.size()); }
  // running <- decay * running + (1 - decay) * batch
  void update(const std::vector<double>& batch_mean, const std::vector<double>& batch_var);
};

// Batch statistics measured by a Training-mode batch_norm, applied to the
// running statistics later at a single synchronisation point.
struct PendingBnUpdate {
  BatchNormStats* target = nullptr;
  std::vector<double> mean;
  std::vector<double> var;
};

inline constexpr float kBatchNormEpsilon = 1e-3f;

// gamma/beta: 1 x C x 1 x 1. Training mode normalises by biased batch statistics
// over (N, H, W) and, when `pending` is non-null, records them for the caller.
// Frozen mode uses the running statistics. The op itself never writes `stats`.
Var batch_norm(const Var& x, const Var& gamma, const Var& beta, BatchNormStats& stats,
               BnMode mode, std::vector<PendingBnUpdate>* pending = nullptr);

// Depthwise conv -> batch norm -> pointwise (1x1) conv. Stride is applied in the
// depthwise stage.
Var depthwise_separable_conv(const Var& x, const Var& w_depth, const Var& bn_gamma,
                             const Var& bn_beta, BatchNormStats& bn_stats, const Var& w_point,
                             int64_t stride, int64_t dilation, BnMode mode,
                             std::vector<PendingBnUpdate>* pending);

Var relu6(const Var& x);

// Which linear piece (0 below, 1 inside, 2 above) every relu6/clip01 element
// landed on, in evaluation order. Record fills `pieces`; Replay forces each
// element onto the recorded piece, so a perturbed forward pass stays on the
// linear region the backward pass differentiated. Installed per thread by the
// gradient checker.
struct KinkTrace {
  enum class Mode { Record, Replay };
  Mode mode = Mode::Record;
  std::vector<uint8_t> pieces;
  size_t cursor = 0;
};
// Pass nullptr to uninstall.
void set_kink_trace(KinkTrace* trace);
// Clamp to [0, 1]; gradient passes only where the input is strictly inside.
Var clip01(const Var& x);
Var add(const Var& a, const Var& b);
Var concat_channels(const std::vector<Var>& xs);
Var slice_channels(const Var& x, int64_t begin, int64_t count);
Var global_avg_pool(const Var& x);
// Broadcasts an N x C x 1 x 1 tensor over an h x w grid.
Var broadcast_spatial(const Var& x, int64_t h, int64_t w);
Var sum(const Var& x);
// sum_i weights_i * x_i, accumulated in double. Handy for gradient checks.
Var weighted_sum(const Var& x, const Tensor& weights);
Var scale(const Var& x, float factor);

}  // namespace mdn
