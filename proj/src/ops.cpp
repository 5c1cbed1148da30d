#include "mdn/ops.hpp"

#include <algorithm>
#include <cmath>

#include "conv_kernels.hpp"
#include "mdn/errors.hpp"

namespace mdn {
namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw InvalidInput(msg);
}

Node& node_of(const Var& v) { return *v.node(); }

thread_local KinkTrace* g_kink_trace = nullptr;

void trace_pieces(const Tensor& x, Tensor& y, float lo, float hi) {
  if (g_kink_trace == nullptr) return;
  KinkTrace& t = *g_kink_trace;
  if (t.mode == KinkTrace::Mode::Record) {
    for (float v : x.values()) t.pieces.push_back(v <= lo ? 0 : (v >= hi ? 2 : 1));
    return;
  }
  if (t.cursor + static_cast<size_t>(x.numel()) > t.pieces.size()) {
    throw InvalidInput("kink trace replay: more activations than recorded");
  }
  for (int64_t i = 0; i < x.numel(); ++i) {
    const uint8_t p = t.pieces[t.cursor++];
    y[i] = p == 0 ? lo : (p == 2 ? hi : x[i]);
  }
}

}  // namespace

ConvGeometry ConvGeometry::make(int64_t in_h, int64_t in_w, int64_t kh, int64_t kw,
                                int64_t stride, int64_t dilation, Padding padding) {
  require(stride >= 1, "conv: stride must be >= 1");
  require(dilation >= 1, "conv: dilation must be >= 1");
  require(kh >= 1 && kw >= 1, "conv: kernel must be non-empty");
  ConvGeometry g;
  g.kh = kh;
  g.kw = kw;
  g.stride = stride;
  g.dilation = dilation;
  g.in_h = in_h;
  g.in_w = in_w;
  const int64_t ext_h = (kh - 1) * dilation + 1;
  const int64_t ext_w = (kw - 1) * dilation + 1;
  if (padding == Padding::Same) {
    g.out_h = (in_h + stride - 1) / stride;
    g.out_w = (in_w + stride - 1) / stride;
    g.pad_top = std::max<int64_t>((g.out_h - 1) * stride + ext_h - in_h, 0) / 2;
    g.pad_left = std::max<int64_t>((g.out_w - 1) * stride + ext_w - in_w, 0) / 2;
  } else {
    g.out_h = in_h >= ext_h ? (in_h - ext_h) / stride + 1 : 0;
    g.out_w = in_w >= ext_w ? (in_w - ext_w) / stride + 1 : 0;
  }
  require(g.out_h > 0 && g.out_w > 0, "conv: zero-size spatial output for input " +
                                          std::to_string(in_h) + "x" + std::to_string(in_w));
  return g;
}

Var conv2d(const Var& x, const Var& w, const Var& bias, int64_t stride, int64_t dilation,
           Padding padding) {
  const Shape xs = x.shape();
  const Shape ws = w.shape();
  require(ws.c == xs.c, "conv2d: kernel expects " + std::to_string(ws.c) +
                            " input channels, got " + std::to_string(xs.c));
  if (bias) require(bias.value().numel() == ws.n, "conv2d: bias length must equal Cout");
  kernels::DenseConv c{xs.c, ws.n, ConvGeometry::make(xs.h, xs.w, ws.h, ws.w, stride, dilation,
                                                      padding)};
  Tensor y({xs.n, c.cout, c.geo.out_h, c.geo.out_w});
  for (int64_t n = 0; n < xs.n; ++n) {
    kernels::conv_forward(c, x.value().plane(n, 0), w.value().data(), y.plane(n, 0));
    if (bias) {
      for (int64_t o = 0; o < c.cout; ++o) {
        const float b = bias.value()[o];
        float* p = y.plane(n, o);
        for (int64_t i = 0; i < y.shape().plane(); ++i) p[i] += b;
      }
    }
  }
  std::vector<Var> inputs{x, w};
  if (bias) inputs.push_back(bias);
  return make_op(std::move(y), inputs, [x, w, bias, c](const Tensor& gy) {
    const Shape xs = x.shape();
    if (x.requires_grad()) {
      Tensor& gx = node_of(x).grad_buffer();
      for (int64_t n = 0; n < xs.n; ++n) {
        kernels::conv_backward_data(c, gy.plane(n, 0), w.value().data(), gx.plane(n, 0));
      }
    }
    if (w.requires_grad()) {
      Tensor& gw = node_of(w).grad_buffer();
      for (int64_t n = 0; n < xs.n; ++n) {
        kernels::conv_backward_weight(c, x.value().plane(n, 0), gy.plane(n, 0), gw.data());
      }
    }
    if (bias && bias.requires_grad()) {
      Tensor& gb = node_of(bias).grad_buffer();
      for (int64_t o = 0; o < c.cout; ++o) {
        double s = 0.0;
        for (int64_t n = 0; n < xs.n; ++n) {
          const float* p = gy.plane(n, o);
          for (int64_t i = 0; i < gy.shape().plane(); ++i) s += p[i];
        }
        gb[o] += static_cast<float>(s);
      }
    }
  });
}

Var depthwise_conv2d(const Var& x, const Var& w, int64_t stride, int64_t dilation) {
  const Shape xs = x.shape();
  const Shape ws = w.shape();
  require(ws.n == xs.c && ws.c == 1,
          "depthwise_conv2d: kernel must be C x 1 x Kh x Kw with C = " + std::to_string(xs.c) +
              ", got " + ws.str());
  const ConvGeometry g = ConvGeometry::make(xs.h, xs.w, ws.h, ws.w, stride, dilation,
                                            Padding::Same);
  Tensor y({xs.n, xs.c, g.out_h, g.out_w});
  for (int64_t n = 0; n < xs.n; ++n) {
    kernels::depthwise_forward(xs.c, g, x.value().plane(n, 0), w.value().data(), y.plane(n, 0));
  }
  return make_op(std::move(y), {x, w}, [x, w, g](const Tensor& gy) {
    const Shape xs = x.shape();
    if (x.requires_grad()) {
      Tensor& gx = node_of(x).grad_buffer();
      for (int64_t n = 0; n < xs.n; ++n) {
        kernels::depthwise_backward_data(xs.c, g, gy.plane(n, 0), w.value().data(),
                                         gx.plane(n, 0));
      }
    }
    if (w.requires_grad()) {
      Tensor& gw = node_of(w).grad_buffer();
      for (int64_t n = 0; n < xs.n; ++n) {
        kernels::depthwise_backward_weight(xs.c, g, x.value().plane(n, 0), gy.plane(n, 0),
                                           gw.data());
      }
    }
  });
}

Var transposed_conv2d(const Var& x, const Var& w, int64_t stride) {
  const Shape xs = x.shape();
  const Shape ws = w.shape();
  require(ws.n == xs.c, "transposed_conv2d: kernel expects " + std::to_string(ws.n) +
                            " input channels, got " + std::to_string(xs.c));
  require(stride >= 1, "transposed_conv2d: stride must be >= 1");
  const int64_t out_h = xs.h * stride;
  const int64_t out_w = xs.w * stride;
  // The forward conv this op is the adjoint of: (ws.c -> ws.n) channels, out -> in.
  kernels::DenseConv c{ws.c, ws.n, ConvGeometry::make(out_h, out_w, ws.h, ws.w, stride, 1,
                                                      Padding::Same)};
  require(c.geo.out_h == xs.h && c.geo.out_w == xs.w, "transposed_conv2d: geometry mismatch");
  Tensor y({xs.n, ws.c, out_h, out_w});
  for (int64_t n = 0; n < xs.n; ++n) {
    kernels::conv_backward_data(c, x.value().plane(n, 0), w.value().data(), y.plane(n, 0));
  }
  return make_op(std::move(y), {x, w}, [x, w, c](const Tensor& gy) {
    const Shape xs = x.shape();
    if (x.requires_grad()) {
      Tensor& gx = node_of(x).grad_buffer();
      Tensor tmp({1, xs.c, xs.h, xs.w});
      for (int64_t n = 0; n < xs.n; ++n) {
        kernels::conv_forward(c, gy.plane(n, 0), w.value().data(), tmp.data());
        float* dst = gx.plane(n, 0);
        for (int64_t i = 0; i < tmp.numel(); ++i) dst[i] += tmp[i];
      }
    }
    if (w.requires_grad()) {
      Tensor& gw = node_of(w).grad_buffer();
      for (int64_t n = 0; n < xs.n; ++n) {
        kernels::conv_backward_weight(c, gy.plane(n, 0), x.value().plane(n, 0), gw.data());
      }
    }
  });
}

namespace {

struct Lerp {
  int64_t i0, i1;
  float f;
};

std::vector<Lerp> lerp_table(int64_t in, int64_t out) {
  std::vector<Lerp> t(static_cast<size_t>(out));
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (int64_t o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    const auto i0 = static_cast<int64_t>(std::floor(src));
    const int64_t i1 = std::min(i0 + 1, in - 1);
    t[static_cast<size_t>(o)] = {i0, i1, static_cast<float>(src - static_cast<double>(i0))};
  }
  return t;
}

}  // namespace

Var bilinear_upsample(const Var& x, int64_t out_h, int64_t out_w) {
  const Shape xs = x.shape();
  require(out_h >= xs.h && out_w >= xs.w, "bilinear_upsample: output smaller than input");
  auto ty = lerp_table(xs.h, out_h);
  auto tx = lerp_table(xs.w, out_w);
  Tensor y({xs.n, xs.c, out_h, out_w});
  for (int64_t n = 0; n < xs.n; ++n) {
    for (int64_t c = 0; c < xs.c; ++c) {
      const float* src = x.value().plane(n, c);
      float* dst = y.plane(n, c);
      for (int64_t oy = 0; oy < out_h; ++oy) {
        const Lerp& ly = ty[static_cast<size_t>(oy)];
        const float* r0 = src + ly.i0 * xs.w;
        const float* r1 = src + ly.i1 * xs.w;
        for (int64_t ox = 0; ox < out_w; ++ox) {
          const Lerp& lx = tx[static_cast<size_t>(ox)];
          const float top = r0[lx.i0] + lx.f * (r0[lx.i1] - r0[lx.i0]);
          const float bot = r1[lx.i0] + lx.f * (r1[lx.i1] - r1[lx.i0]);
          dst[oy * out_w + ox] = top + ly.f * (bot - top);
        }
      }
    }
  }
  return make_op(std::move(y), {x}, [x, ty, tx, out_h, out_w](const Tensor& gy) {
    const Shape xs = x.shape();
    Tensor& gx = node_of(x).grad_buffer();
    for (int64_t n = 0; n < xs.n; ++n) {
      for (int64_t c = 0; c < xs.c; ++c) {
        const float* g = gy.plane(n, c);
        float* dst = gx.plane(n, c);
        for (int64_t oy = 0; oy < out_h; ++oy) {
          const Lerp& ly = ty[static_cast<size_t>(oy)];
          for (int64_t ox = 0; ox < out_w; ++ox) {
            const Lerp& lx = tx[static_cast<size_t>(ox)];
            const float v = g[oy * out_w + ox];
            const float top = v * (1.0f - ly.f);
            const float bot = v * ly.f;
            dst[ly.i0 * xs.w + lx.i0] += top * (1.0f - lx.f);
            dst[ly.i0 * xs.w + lx.i1] += top * lx.f;
            dst[ly.i1 * xs.w + lx.i0] += bot * (1.0f - lx.f);
            dst[ly.i1 * xs.w + lx.i1] += bot * lx.f;
          }
        }
      }
    }
  });
}

BatchNormStats::BatchNormStats(int64_t channels, float decay_rate)
    : running_mean(static_cast<size_t>(channels), 0.0f),
      running_var(static_cast<size_t>(channels), 1.0f),
      decay(decay_rate) {}

void BatchNormStats::update(const std::vector<double>& batch_mean,
                            const std::vector<double>& batch_var) {
  if (batch_mean.size() != running_mean.size() || batch_var.size() != running_var.size()) {
    throw InvalidInput("BatchNormStats::update: channel count mismatch");
  }
  const double d = decay;
  for (size_t c = 0; c < running_mean.size(); ++c) {
    running_mean[c] = static_cast<float>(d * running_mean[c] + (1.0 - d) * batch_mean[c]);
    running_var[c] =
        static_cast<float>(std::max(0.0, d * running_var[c] + (1.0 - d) * batch_var[c]));
  }
}

Var batch_norm(const Var& x, const Var& gamma, const Var& beta, BatchNormStats& stats,
               BnMode mode, std::vector<PendingBnUpdate>* pending) {
  const Shape xs = x.shape();
  require(stats.channels() == xs.c && gamma.value().numel() == xs.c &&
              beta.value().numel() == xs.c,
          "batch_norm: channel count mismatch (" + std::to_string(xs.c) + " vs " +
              std::to_string(stats.channels()) + ")");
  const int64_t plane = xs.plane();
  const double count = static_cast<double>(xs.n * plane);
  require(count > 0, "batch_norm: empty input");

  std::vector<double> mean(static_cast<size_t>(xs.c));
  std::vector<double> var(static_cast<size_t>(xs.c));
  for (int64_t c = 0; c < xs.c; ++c) {
    if (mode == BnMode::Frozen) {
      mean[c] = stats.running_mean[c];
      var[c] = stats.running_var[c];
      continue;
    }
    double s = 0.0;
    for (int64_t n = 0; n < xs.n; ++n) {
      const float* p = x.value().plane(n, c);
      for (int64_t i = 0; i < plane; ++i) s += p[i];
    }
    const double m = s / count;
    double ss = 0.0;
    for (int64_t n = 0; n < xs.n; ++n) {
      const float* p = x.value().plane(n, c);
      for (int64_t i = 0; i < plane; ++i) {
        const double d = p[i] - m;
        ss += d * d;
      }
    }
    mean[c] = m;
    var[c] = ss / count;
  }
  if (mode == BnMode::Training && pending) pending->push_back({&stats, mean, var});

  std::vector<float> inv(static_cast<size_t>(xs.c));
  Tensor y(xs);
  for (int64_t c = 0; c < xs.c; ++c) {
    inv[c] = static_cast<float>(1.0 / std::sqrt(var[c] + kBatchNormEpsilon));
    const float g = gamma.value()[c] * inv[c];
    const float m = static_cast<float>(mean[c]);
    const float b = beta.value()[c];
    // Centre first so a constant channel maps exactly to beta.
    for (int64_t n = 0; n < xs.n; ++n) {
      const float* p = x.value().plane(n, c);
      float* q = y.plane(n, c);
      for (int64_t i = 0; i < plane; ++i) q[i] = (p[i] - m) * g + b;
    }
  }

  return make_op(std::move(y), {x, gamma, beta}, [x, gamma, beta, mean, inv, mode,
                                                  count](const Tensor& gy) {
    const Shape xs = x.shape();
    const int64_t plane = xs.plane();
    Tensor* gx = x.requires_grad() ? &node_of(x).grad_buffer() : nullptr;
    Tensor* gg = gamma.requires_grad() ? &node_of(gamma).grad_buffer() : nullptr;
    Tensor* gb = beta.requires_grad() ? &node_of(beta).grad_buffer() : nullptr;
    for (int64_t c = 0; c < xs.c; ++c) {
      const float m = static_cast<float>(mean[c]);
      double sum_dy = 0.0, sum_dy_xhat = 0.0;
      for (int64_t n = 0; n < xs.n; ++n) {
        const float* p = x.value().plane(n, c);
        const float* g = gy.plane(n, c);
        for (int64_t i = 0; i < plane; ++i) {
          sum_dy += g[i];
          sum_dy_xhat += static_cast<double>(g[i]) * ((p[i] - m) * inv[c]);
        }
      }
      if (gg) (*gg)[c] += static_cast<float>(sum_dy_xhat);
      if (gb) (*gb)[c] += static_cast<float>(sum_dy);
      if (!gx) continue;
      const float gscale = gamma.value()[c] * inv[c];
      if (mode == BnMode::Frozen) {
        for (int64_t n = 0; n < xs.n; ++n) {
          const float* g = gy.plane(n, c);
          float* d = gx->plane(n, c);
          for (int64_t i = 0; i < plane; ++i) d[i] += gscale * g[i];
        }
      } else {
        const float mean_dy = static_cast<float>(sum_dy / count);
        const float mean_dy_xhat = static_cast<float>(sum_dy_xhat / count);
        for (int64_t n = 0; n < xs.n; ++n) {
          const float* p = x.value().plane(n, c);
          const float* g = gy.plane(n, c);
          float* d = gx->plane(n, c);
          for (int64_t i = 0; i < plane; ++i) {
            const float xhat = (p[i] - m) * inv[c];
            d[i] += gscale * (g[i] - mean_dy - xhat * mean_dy_xhat);
          }
        }
      }
    }
  });
}

Var depthwise_separable_conv(const Var& x, const Var& w_depth, const Var& bn_gamma,
                             const Var& bn_beta, BatchNormStats& bn_stats, const Var& w_point,
                             int64_t stride, int64_t dilation, BnMode mode,
                             std::vector<PendingBnUpdate>* pending) {
  Var d = depthwise_conv2d(x, w_depth, stride, dilation);
  Var b = batch_norm(d, bn_gamma, bn_beta, bn_stats, mode, pending);
  return conv2d(b, w_point, Var{}, 1, 1, Padding::Same);
}

void set_kink_trace(KinkTrace* trace) { g_kink_trace = trace; }

Var relu6(const Var& x) {
  Tensor y(x.shape());
  const Tensor& xv = x.value();
  for (int64_t i = 0; i < y.numel(); ++i) y[i] = std::min(std::max(xv[i], 0.0f), 6.0f);
  trace_pieces(xv, y, 0.0f, 6.0f);
  return make_op(std::move(y), {x}, [x](const Tensor& gy) {
    Tensor& gx = node_of(x).grad_buffer();
    const Tensor& xv = x.value();
    for (int64_t i = 0; i < gy.numel(); ++i) {
      if (xv[i] > 0.0f && xv[i] < 6.0f) gx[i] += gy[i];
    }
  });
}

Var clip01(const Var& x) {
  Tensor y(x.shape());
  const Tensor& xv = x.value();
  for (int64_t i = 0; i < y.numel(); ++i) y[i] = std::clamp(xv[i], 0.0f, 1.0f);
  trace_pieces(xv, y, 0.0f, 1.0f);
  return make_op(std::move(y), {x}, [x](const Tensor& gy) {
    Tensor& gx = node_of(x).grad_buffer();
    const Tensor& xv = x.value();
    for (int64_t i = 0; i < gy.numel(); ++i) {
      if (xv[i] > 0.0f && xv[i] < 1.0f) gx[i] += gy[i];
    }
  });
}

Var add(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "add");
  Tensor y = a.value();
  y.add_(b.value());
  return make_op(std::move(y), {a, b}, [a, b](const Tensor& gy) {
    if (a.requires_grad()) node_of(a).accumulate(gy);
    if (b.requires_grad()) node_of(b).accumulate(gy);
  });
}

Var concat_channels(const std::vector<Var>& xs) {
  require(!xs.empty(), "concat_channels: no inputs");
  const Shape s0 = xs.front().shape();
  int64_t channels = 0;
  for (const auto& v : xs) {
    const Shape s = v.shape();
    require(s.n == s0.n && s.h == s0.h && s.w == s0.w,
            "concat_channels: N/H/W mismatch " + s.str() + " vs " + s0.str());
    channels += s.c;
  }
  Tensor y({s0.n, channels, s0.h, s0.w});
  const int64_t plane = s0.plane();
  for (int64_t n = 0; n < s0.n; ++n) {
    int64_t c0 = 0;
    for (const auto& v : xs) {
      const int64_t c = v.shape().c;
      std::copy_n(v.value().plane(n, 0), c * plane, y.plane(n, c0));
      c0 += c;
    }
  }
  return make_op(std::move(y), xs, [xs, plane](const Tensor& gy) {
    const int64_t batch = gy.shape().n;
    int64_t c0 = 0;
    for (const auto& v : xs) {
      const int64_t c = v.shape().c;
      if (v.requires_grad()) {
        Tensor& gx = node_of(v).grad_buffer();
        for (int64_t n = 0; n < batch; ++n) {
          const float* src = gy.plane(n, c0);
          float* dst = gx.plane(n, 0);
          for (int64_t i = 0; i < c * plane; ++i) dst[i] += src[i];
        }
      }
      c0 += c;
    }
  });
}

Var slice_channels(const Var& x, int64_t begin, int64_t count) {
  const Shape s = x.shape();
  require(begin >= 0 && count > 0 && begin + count <= s.c, "slice_channels: out of range");
  Tensor y({s.n, count, s.h, s.w});
  for (int64_t n = 0; n < s.n; ++n) {
    std::copy_n(x.value().plane(n, begin), count * s.plane(), y.plane(n, 0));
  }
  return make_op(std::move(y), {x}, [x, begin, count](const Tensor& gy) {
    const Shape s = x.shape();
    Tensor& gx = node_of(x).grad_buffer();
    for (int64_t n = 0; n < s.n; ++n) {
      const float* src = gy.plane(n, 0);
      float* dst = gx.plane(n, begin);
      for (int64_t i = 0; i < count * s.plane(); ++i) dst[i] += src[i];
    }
  });
}

Var global_avg_pool(const Var& x) {
  const Shape s = x.shape();
  require(s.plane() > 0, "global_avg_pool: empty spatial extent");
  Tensor y({s.n, s.c, 1, 1});
  for (int64_t n = 0; n < s.n; ++n) {
    for (int64_t c = 0; c < s.c; ++c) {
      double acc = 0.0;
      const float* p = x.value().plane(n, c);
      for (int64_t i = 0; i < s.plane(); ++i) acc += p[i];
      y.at(n, c, 0, 0) = static_cast<float>(acc / static_cast<double>(s.plane()));
    }
  }
  return make_op(std::move(y), {x}, [x](const Tensor& gy) {
    const Shape s = x.shape();
    Tensor& gx = node_of(x).grad_buffer();
    const float inv = 1.0f / static_cast<float>(s.plane());
    for (int64_t n = 0; n < s.n; ++n) {
      for (int64_t c = 0; c < s.c; ++c) {
        const float g = gy.at(n, c, 0, 0) * inv;
        float* d = gx.plane(n, c);
        for (int64_t i = 0; i < s.plane(); ++i) d[i] += g;
      }
    }
  });
}

Var broadcast_spatial(const Var& x, int64_t h, int64_t w) {
  const Shape s = x.shape();
  require(s.h == 1 && s.w == 1, "broadcast_spatial: input must be N x C x 1 x 1");
  require(h > 0 && w > 0, "broadcast_spatial: empty target grid");
  Tensor y({s.n, s.c, h, w});
  for (int64_t n = 0; n < s.n; ++n) {
    for (int64_t c = 0; c < s.c; ++c) {
      float* d = y.plane(n, c);
      std::fill(d, d + h * w, x.value().at(n, c, 0, 0));
    }
  }
  return make_op(std::move(y), {x}, [x](const Tensor& gy) {
    const Shape s = gy.shape();
    Tensor& gx = node_of(x).grad_buffer();
    for (int64_t n = 0; n < s.n; ++n) {
      for (int64_t c = 0; c < s.c; ++c) {
        double acc = 0.0;
        const float* p = gy.plane(n, c);
        for (int64_t i = 0; i < s.plane(); ++i) acc += p[i];
        gx.at(n, c, 0, 0) += static_cast<float>(acc);
      }
    }
  });
}

Var sum(const Var& x) {
  Tensor y = Tensor::scalar(static_cast<float>(x.value().sum()));
  return make_op(std::move(y), {x}, [x](const Tensor& gy) {
    Tensor& gx = node_of(x).grad_buffer();
    const float g = gy[0];
    for (int64_t i = 0; i < gx.numel(); ++i) gx[i] += g;
  });
}

Var weighted_sum(const Var& x, const Tensor& weights) {
  require(weights.numel() == x.value().numel(), "weighted_sum: weight count mismatch");
  double acc = 0.0;
  for (int64_t i = 0; i < weights.numel(); ++i) {
    acc += static_cast<double>(weights[i]) * x.value()[i];
  }
  return make_op(Tensor::scalar(static_cast<float>(acc)), {x}, [x, weights](const Tensor& gy) {
    Tensor& gx = node_of(x).grad_buffer();
    const float g = gy[0];
    for (int64_t i = 0; i < gx.numel(); ++i) gx[i] += g * weights[i];
  });
}

Var scale(const Var& x, float factor) {
  Tensor y = x.value();
  for (auto& v : y.values()) v *= factor;
  return make_op(std::move(y), {x}, [x, factor](const Tensor& gy) {
    Tensor& gx = node_of(x).grad_buffer();
    for (int64_t i = 0; i < gx.numel(); ++i) gx[i] += factor * gy[i];
  });
}

}  // namespace mdn
