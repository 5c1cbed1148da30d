#pragma once

// Single-image convolution kernels shared by conv2d and transposed_conv2d.
// Dense convs lower to GEMM over im2col panels, processed a band of output
// rows at a time so the column buffer stays small for large images.

#include <cstdint>

#include "mdn/ops.hpp"

namespace mdn::kernels {

struct DenseConv {
  int64_t cin = 0;
  int64_t cout = 0;
  ConvGeometry geo;
};

// y (cout x out_h x out_w) = conv(x (cin x in_h x in_w), w (cout x cin x kh x kw))
void conv_forward(const DenseConv& c, const float* x, const float* w, float* y);
// dx += conv^T(dy)
void conv_backward_data(const DenseConv& c, const float* dy, const float* w, float* dx);
// dw += d(conv)/dw contracted with dy
void conv_backward_weight(const DenseConv& c, const float* x, const float* dy, float* dw);

// Depthwise variants: channels = cin = cout, w is C x kh x kw.
void depthwise_forward(int64_t channels, const ConvGeometry& g, const float* x, const float* w,
                       float* y);
void depthwise_backward_data(int64_t channels, const ConvGeometry& g, const float* dy,
                             const float* w, float* dx);
void depthwise_backward_weight(int64_t channels, const ConvGeometry& g, const float* x,
                               const float* dy, float* dw);

}  // namespace mdn::kernels
