#pragma once

#include "mdn/image.hpp"

namespace mdn {

struct ClaheParams {
  int tiles_y = 8;
  int tiles_x = 8;
  double clip_limit = 2.0;  // multiple of the uniform bin height
  int bins = 256;
};

// Contrast-limited adaptive histogram equalisation of an image in [0, 1]
// (values outside are clamped). Output lies in [0, 1].
Image clahe(const Image& img, const ClaheParams& p = {});

// Affine rescale to [0, 1]; constant images map to zeros.
Image rescale01(const Image& img);

}  // namespace mdn
