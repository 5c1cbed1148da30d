#include "mdn/tiling.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "mdn/checkpoint.hpp"
#include "mdn/errors.hpp"
#include "mdn/parallel.hpp"

namespace mdn {

void TileConfig::validate() const {
  if (tile < 1) throw ConfigError("tile must be >= 1");
  if (overlap < 0 || overlap >= tile) throw ConfigError("overlap must be in [0, tile)");
  if (pad < 0) throw ConfigError("pad must be >= 0");
}

namespace {

Image pad_sides(const Image& img, int64_t top, int64_t bottom, int64_t left, int64_t right) {
  Image out(img.height + top + bottom, img.width + left + right);
  for (int64_t y = 0; y < out.height; ++y) {
    const int64_t sy = mirror_index(y - top, img.height);
    for (int64_t x = 0; x < out.width; ++x) {
      out.at(y, x) = img.at(sy, mirror_index(x - left, img.width));
    }
  }
  return out;
}

}  // namespace

Image pad_reflect(const Image& img, int64_t pad) {
  if (pad < 0) throw InvalidInput("pad_reflect: negative pad");
  if (pad == 0) return img;
  if (pad >= std::min(img.height, img.width)) {
    throw InvalidInput("pad_reflect: pad " + std::to_string(pad) + " too large for " +
                       std::to_string(img.height) + "x" + std::to_string(img.width) + " image");
  }
  return pad_sides(img, pad, pad, pad, pad);
}

std::vector<int64_t> axis_origins(int64_t n, int64_t tile, int64_t overlap) {
  if (n < tile) throw InvalidInput("axis_origins: extent smaller than the tile");
  const int64_t stride = tile - overlap;
  std::vector<int64_t> o;
  int64_t p = 0;
  while (p + tile < n) {
    o.push_back(p);
    p += stride;
  }
  o.push_back(n - tile);
  return o;
}

std::vector<TileOrigin> tile_plan(int64_t h, int64_t w, const TileConfig& cfg) {
  cfg.validate();
  const auto ys = axis_origins(h, cfg.tile, cfg.overlap);
  const auto xs = axis_origins(w, cfg.tile, cfg.overlap);
  std::vector<TileOrigin> plan;
  for (int64_t y : ys)
    for (int64_t x : xs) plan.push_back({y, x});
  return plan;
}

std::vector<std::vector<double>> axis_weights(int64_t tile,
                                              const std::vector<int64_t>& o) {
  const size_t k = o.size();
  // Cross-fade zone [lo, hi] between tiles i and i+1: the central half of their
  // overlap, trimmed so neighbouring zones never intersect.
  std::vector<double> lo(k > 0 ? k - 1 : 0), hi(lo.size());
  for (size_t i = 0; i + 1 < k; ++i) {
    const double a = static_cast<double>(o[i + 1]), b = static_cast<double>(o[i] + tile);
    lo[i] = a + 0.25 * (b - a);
    hi[i] = b - 0.25 * (b - a);
  }
  for (size_t i = 0; i + 2 < k; ++i) {
    if (hi[i] > lo[i + 1]) hi[i] = lo[i + 1] = 0.5 * (hi[i] + lo[i + 1]);
  }
  std::vector<std::vector<double>> w(k, std::vector<double>(static_cast<size_t>(tile), 0.0));
  for (size_t i = 0; i < k; ++i) {
    for (int64_t t = 0; t < tile; ++t) {
      const double pos = static_cast<double>(o[i] + t) + 0.5;
      auto ramp = [&](size_t z) {  // 0 before zone z, 1 after it
        if (hi[z] <= lo[z]) return pos >= lo[z] ? 1.0 : 0.0;
        return std::clamp((pos - lo[z]) / (hi[z] - lo[z]), 0.0, 1.0);
      };
      double v = 1.0;
      if (i > 0) v = std::min(v, ramp(i - 1));
      if (i + 1 < k) v = std::min(v, 1.0 - ramp(i));
      w[i][static_cast<size_t>(t)] = v;
    }
  }
  return w;
}

Image blend(const std::vector<Image>& tiles, const std::vector<TileOrigin>& plan, int64_t h,
            int64_t w, int64_t tile) {
  if (tiles.size() != plan.size()) throw InvalidInput("blend: tile count does not match plan");
  for (const auto& t : tiles) {
    if (t.height != tile || t.width != tile) throw InvalidInput("blend: tile has wrong size");
  }
  std::vector<int64_t> ys, xs;
  for (const auto& p : plan) {
    if (std::find(ys.begin(), ys.end(), p.y) == ys.end()) ys.push_back(p.y);
    if (std::find(xs.begin(), xs.end(), p.x) == xs.end()) xs.push_back(p.x);
  }
  std::sort(ys.begin(), ys.end());
  std::sort(xs.begin(), xs.end());
  const auto wy = axis_weights(tile, ys);
  const auto wx = axis_weights(tile, xs);

  // Accumulate relative to the first contributing tile so that agreeing tiles
  // reproduce their common value exactly.
  Image base(h, w), num(h, w), den(h, w);
  std::vector<char> seen(static_cast<size_t>(h * w), 0);
  for (size_t t = 0; t < plan.size(); ++t) {
    const size_t iy = static_cast<size_t>(std::find(ys.begin(), ys.end(), plan[t].y) - ys.begin());
    const size_t ix = static_cast<size_t>(std::find(xs.begin(), xs.end(), plan[t].x) - xs.begin());
    for (int64_t y = 0; y < tile; ++y) {
      const double a = wy[iy][static_cast<size_t>(y)];
      if (a == 0) continue;
      for (int64_t x = 0; x < tile; ++x) {
        const double wt = a * wx[ix][static_cast<size_t>(x)];
        if (wt == 0) continue;
        const int64_t gy = plan[t].y + y, gx = plan[t].x + x;
        const size_t idx = static_cast<size_t>(gy * w + gx);
        const double v = tiles[t].at(y, x);
        if (!seen[idx]) {
          seen[idx] = 1;
          base.px[idx] = v;
        }
        num.px[idx] += wt * (v - base.px[idx]);
        den.px[idx] += wt;
      }
    }
  }
  Image out(h, w);
  for (int64_t i = 0; i < out.size(); ++i) {
    if (!(den.px[i] > 0)) throw std::logic_error("blend: pixel with zero total weight");
    out.px[i] = base.px[i] + num.px[i] / den.px[i];
  }
  return out;
}

Image NetworkModel::run(const Image& tile) const {
  ForwardContext ctx(ForwardMode::Inference, false);
  const Var out = net_.forward(to_tensor(tile), ctx);
  return from_tensor(out.value());
}

std::unique_ptr<TileModel> load_model(const std::filesystem::path& dir) {
  Checkpoint ck = load_checkpoint(dir);
  if (ck.manifest.model == "identity") {
    return std::make_unique<IdentityModel>(ck.manifest.config.input_size);
  }
  if (ck.manifest.model != "encoder_decoder") {
    throw ConfigError(dir.string() + ": unknown model kind '" + ck.manifest.model + "'");
  }
  return std::make_unique<NetworkModel>(Network(ck.manifest.config, std::move(ck.params)));
}

Image denoise_image(const TileModel& model, const Image& img, const TileConfig& cfg,
                    TilingStats* stats) {
  cfg.validate();
  if (img.empty()) throw InvalidInput("denoise_image: empty image");
  for (double v : img.px) {
    if (!std::isfinite(v)) throw InvalidInput("denoise_image: non-finite pixel");
  }
  const int64_t T = model.tile_size();
  if (cfg.tile != T) {
    throw ConfigError("tile size " + std::to_string(cfg.tile) + " does not match the model's " +
                      std::to_string(T));
  }
  const int64_t p = cfg.pad;
  const int64_t extra_h = std::max<int64_t>(0, T - (img.height + 2 * p));
  const int64_t extra_w = std::max<int64_t>(0, T - (img.width + 2 * p));
  const Image padded = pad_sides(img, p, p + extra_h, p, p + extra_w);

  const auto plan = tile_plan(padded.height, padded.width, cfg);
  std::vector<Image> outs(plan.size());
  parallel_for(static_cast<int64_t>(plan.size()), cfg.threads, [&](int64_t i) {
    Image out = model.run(crop(padded, plan[i].y, plan[i].x, T, T));
    if (out.height != T || out.width != T) throw std::logic_error("model changed the tile size");
    outs[i] = std::move(out);
  });
  if (stats) {
    stats->forward_calls = static_cast<int64_t>(plan.size());
    stats->padded_h = padded.height;
    stats->padded_w = padded.width;
  }
  Image full = blend(outs, plan, padded.height, padded.width, T);
  Image result = crop(full, p, p, img.height, img.width);
  return cfg.clip_output ? clipped(result, 0.0, 1.0) : result;
}

}  // namespace mdn
