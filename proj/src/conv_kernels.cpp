#include "conv_kernels.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <vector>

namespace mdn::kernels {
namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;
using ConstMatMap = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;

// Column panels are capped at this many floats (32 MiB).
constexpr int64_t kMaxColumnFloats = int64_t{8} << 20;

bool is_pointwise(const DenseConv& c) {
  const auto& g = c.geo;
  return g.kh == 1 && g.kw == 1 && g.stride == 1 && g.pad_top == 0 && g.pad_left == 0 &&
         g.out_h == g.in_h && g.out_w == g.in_w;
}

int64_t band_rows(const DenseConv& c) {
  int64_t k = c.cin * c.geo.kh * c.geo.kw;
  int64_t per_row = std::max<int64_t>(1, k * c.geo.out_w);
  return std::clamp<int64_t>(kMaxColumnFloats / per_row, 1, c.geo.out_h);
}

void im2col(const DenseConv& c, const float* x, int64_t r0, int64_t r1, float* col) {
  const auto& g = c.geo;
  const int64_t cols = (r1 - r0) * g.out_w;
  for (int64_t ci = 0; ci < c.cin; ++ci) {
    const float* xp = x + ci * g.in_h * g.in_w;
    for (int64_t ky = 0; ky < g.kh; ++ky) {
      for (int64_t kx = 0; kx < g.kw; ++kx) {
        float* dst = col + ((ci * g.kh + ky) * g.kw + kx) * cols;
        for (int64_t oy = r0; oy < r1; ++oy) {
          const int64_t iy = oy * g.stride - g.pad_top + ky * g.dilation;
          float* row = dst + (oy - r0) * g.out_w;
          if (iy < 0 || iy >= g.in_h) {
            std::fill(row, row + g.out_w, 0.0f);
            continue;
          }
          const float* src = xp + iy * g.in_w;
          for (int64_t ox = 0; ox < g.out_w; ++ox) {
            const int64_t ix = ox * g.stride - g.pad_left + kx * g.dilation;
            row[ox] = (ix >= 0 && ix < g.in_w) ? src[ix] : 0.0f;
          }
        }
      }
    }
  }
}

void col2im_add(const DenseConv& c, const float* col, int64_t r0, int64_t r1, float* x) {
  const auto& g = c.geo;
  const int64_t cols = (r1 - r0) * g.out_w;
  for (int64_t ci = 0; ci < c.cin; ++ci) {
    float* xp = x + ci * g.in_h * g.in_w;
    for (int64_t ky = 0; ky < g.kh; ++ky) {
      for (int64_t kx = 0; kx < g.kw; ++kx) {
        const float* src = col + ((ci * g.kh + ky) * g.kw + kx) * cols;
        for (int64_t oy = r0; oy < r1; ++oy) {
          const int64_t iy = oy * g.stride - g.pad_top + ky * g.dilation;
          if (iy < 0 || iy >= g.in_h) continue;
          const float* row = src + (oy - r0) * g.out_w;
          float* dst = xp + iy * g.in_w;
          for (int64_t ox = 0; ox < g.out_w; ++ox) {
            const int64_t ix = ox * g.stride - g.pad_left + kx * g.dilation;
            if (ix >= 0 && ix < g.in_w) dst[ix] += row[ox];
          }
        }
      }
    }
  }
}

// Valid output-x range [lo, hi) for which ix = ox*s - pad + k*d lands inside [0, in_w).
void valid_range(int64_t offset, int64_t stride, int64_t in, int64_t out, int64_t& lo,
                 int64_t& hi) {
  // ox*stride + offset >= 0  and  ox*stride + offset < in
  lo = offset >= 0 ? 0 : (-offset + stride - 1) / stride;
  hi = in - offset <= 0 ? 0 : (in - offset + stride - 1) / stride;
  lo = std::min(lo, out);
  hi = std::clamp(hi, lo, out);
}

}  // namespace

void conv_forward(const DenseConv& c, const float* x, const float* w, float* y) {
  const auto& g = c.geo;
  const int64_t k = c.cin * g.kh * g.kw;
  const int64_t out_plane = g.out_h * g.out_w;
  ConstMatMap wm(w, c.cout, k, Eigen::OuterStride<>(k));
  if (is_pointwise(c)) {
    ConstMatMap xm(x, c.cin, out_plane, Eigen::OuterStride<>(out_plane));
    MatMap ym(y, c.cout, out_plane, Eigen::OuterStride<>(out_plane));
    ym.noalias() = wm * xm;
    return;
  }
  const int64_t band = band_rows(c);
  std::vector<float> col(static_cast<size_t>(k * band * g.out_w));
  for (int64_t r0 = 0; r0 < g.out_h; r0 += band) {
    const int64_t r1 = std::min(g.out_h, r0 + band);
    const int64_t cols = (r1 - r0) * g.out_w;
    im2col(c, x, r0, r1, col.data());
    ConstMatMap cm(col.data(), k, cols, Eigen::OuterStride<>(cols));
    MatMap ym(y + r0 * g.out_w, c.cout, cols, Eigen::OuterStride<>(out_plane));
    ym.noalias() = wm * cm;
  }
}

void conv_backward_data(const DenseConv& c, const float* dy, const float* w, float* dx) {
  const auto& g = c.geo;
  const int64_t k = c.cin * g.kh * g.kw;
  const int64_t out_plane = g.out_h * g.out_w;
  ConstMatMap wm(w, c.cout, k, Eigen::OuterStride<>(k));
  if (is_pointwise(c)) {
    ConstMatMap dym(dy, c.cout, out_plane, Eigen::OuterStride<>(out_plane));
    MatMap dxm(dx, c.cin, out_plane, Eigen::OuterStride<>(out_plane));
    dxm.noalias() += wm.transpose() * dym;
    return;
  }
  const int64_t band = band_rows(c);
  std::vector<float> col(static_cast<size_t>(k * band * g.out_w));
  for (int64_t r0 = 0; r0 < g.out_h; r0 += band) {
    const int64_t r1 = std::min(g.out_h, r0 + band);
    const int64_t cols = (r1 - r0) * g.out_w;
    ConstMatMap dym(dy + r0 * g.out_w, c.cout, cols, Eigen::OuterStride<>(out_plane));
    MatMap cm(col.data(), k, cols, Eigen::OuterStride<>(cols));
    cm.noalias() = wm.transpose() * dym;
    col2im_add(c, col.data(), r0, r1, dx);
  }
}

void conv_backward_weight(const DenseConv& c, const float* x, const float* dy, float* dw) {
  const auto& g = c.geo;
  const int64_t k = c.cin * g.kh * g.kw;
  const int64_t out_plane = g.out_h * g.out_w;
  MatMap dwm(dw, c.cout, k, Eigen::OuterStride<>(k));
  if (is_pointwise(c)) {
    ConstMatMap xm(x, c.cin, out_plane, Eigen::OuterStride<>(out_plane));
    ConstMatMap dym(dy, c.cout, out_plane, Eigen::OuterStride<>(out_plane));
    dwm.noalias() += dym * xm.transpose();
    return;
  }
  const int64_t band = band_rows(c);
  std::vector<float> col(static_cast<size_t>(k * band * g.out_w));
  for (int64_t r0 = 0; r0 < g.out_h; r0 += band) {
    const int64_t r1 = std::min(g.out_h, r0 + band);
    const int64_t cols = (r1 - r0) * g.out_w;
    im2col(c, x, r0, r1, col.data());
    ConstMatMap cm(col.data(), k, cols, Eigen::OuterStride<>(cols));
    ConstMatMap dym(dy + r0 * g.out_w, c.cout, cols, Eigen::OuterStride<>(out_plane));
    dwm.noalias() += dym * cm.transpose();
  }
}

void depthwise_forward(int64_t channels, const ConvGeometry& g, const float* x, const float* w,
                       float* y) {
  const int64_t in_plane = g.in_h * g.in_w;
  const int64_t out_plane = g.out_h * g.out_w;
  for (int64_t ch = 0; ch < channels; ++ch) {
    const float* xp = x + ch * in_plane;
    const float* wp = w + ch * g.kh * g.kw;
    float* yp = y + ch * out_plane;
    std::fill(yp, yp + out_plane, 0.0f);
    for (int64_t ky = 0; ky < g.kh; ++ky) {
      for (int64_t kx = 0; kx < g.kw; ++kx) {
        const float wv = wp[ky * g.kw + kx];
        const int64_t off_x = kx * g.dilation - g.pad_left;
        int64_t lo, hi;
        valid_range(off_x, g.stride, g.in_w, g.out_w, lo, hi);
        for (int64_t oy = 0; oy < g.out_h; ++oy) {
          const int64_t iy = oy * g.stride - g.pad_top + ky * g.dilation;
          if (iy < 0 || iy >= g.in_h) continue;
          const float* src = xp + iy * g.in_w + off_x;
          float* dst = yp + oy * g.out_w;
          for (int64_t ox = lo; ox < hi; ++ox) dst[ox] += wv * src[ox * g.stride];
        }
      }
    }
  }
}

void depthwise_backward_data(int64_t channels, const ConvGeometry& g, const float* dy,
                             const float* w, float* dx) {
  const int64_t in_plane = g.in_h * g.in_w;
  const int64_t out_plane = g.out_h * g.out_w;
  for (int64_t ch = 0; ch < channels; ++ch) {
    float* xp = dx + ch * in_plane;
    const float* wp = w + ch * g.kh * g.kw;
    const float* yp = dy + ch * out_plane;
    for (int64_t ky = 0; ky < g.kh; ++ky) {
      for (int64_t kx = 0; kx < g.kw; ++kx) {
        const float wv = wp[ky * g.kw + kx];
        const int64_t off_x = kx * g.dilation - g.pad_left;
        int64_t lo, hi;
        valid_range(off_x, g.stride, g.in_w, g.out_w, lo, hi);
        for (int64_t oy = 0; oy < g.out_h; ++oy) {
          const int64_t iy = oy * g.stride - g.pad_top + ky * g.dilation;
          if (iy < 0 || iy >= g.in_h) continue;
          float* dst = xp + iy * g.in_w + off_x;
          const float* src = yp + oy * g.out_w;
          for (int64_t ox = lo; ox < hi; ++ox) dst[ox * g.stride] += wv * src[ox];
        }
      }
    }
  }
}

void depthwise_backward_weight(int64_t channels, const ConvGeometry& g, const float* x,
                               const float* dy, float* dw) {
  const int64_t in_plane = g.in_h * g.in_w;
  const int64_t out_plane = g.out_h * g.out_w;
  for (int64_t ch = 0; ch < channels; ++ch) {
    const float* xp = x + ch * in_plane;
    const float* yp = dy + ch * out_plane;
    float* wp = dw + ch * g.kh * g.kw;
    for (int64_t ky = 0; ky < g.kh; ++ky) {
      for (int64_t kx = 0; kx < g.kw; ++kx) {
        const int64_t off_x = kx * g.dilation - g.pad_left;
        int64_t lo, hi;
        valid_range(off_x, g.stride, g.in_w, g.out_w, lo, hi);
        double acc = 0.0;
        for (int64_t oy = 0; oy < g.out_h; ++oy) {
          const int64_t iy = oy * g.stride - g.pad_top + ky * g.dilation;
          if (iy < 0 || iy >= g.in_h) continue;
          const float* src = xp + iy * g.in_w + off_x;
          const float* gy = yp + oy * g.out_w;
          float row = 0.0f;
          for (int64_t ox = lo; ox < hi; ++ox) row += gy[ox] * src[ox * g.stride];
          acc += row;
        }
        wp[ky * g.kw + kx] += static_cast<float>(acc);
      }
    }
  }
}

}  // namespace mdn::kernels
