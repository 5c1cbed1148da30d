#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <vector>

#include "mdn/image.hpp"
#include "mdn/network.hpp"

namespace mdn {

struct TileConfig {
  int64_t tile = 512;
  int64_t overlap = 32;
  int64_t pad = 16;
  bool clip_output = true;
  int threads = 1;

  void validate() const;
};

// Mirror padding without repeating the edge pixel. Requires pad < min(H, W).
Image pad_reflect(const Image& img, int64_t pad);

struct TileOrigin {
  int64_t y = 0;
  int64_t x = 0;
  bool operator==(const TileOrigin&) const = default;
};

// Origins along one axis: stride tile - overlap, last tile flush with the end.
// Requires n >= tile.
std::vector<int64_t> axis_origins(int64_t n, int64_t tile, int64_t overlap);
std::vector<TileOrigin> tile_plan(int64_t h, int64_t w, const TileConfig& cfg);

// Per-pixel blend weight of each tile along one axis. Adjacent tiles cross-fade
// linearly over the central half of their overlap; elsewhere a pixel belongs
// wholly to one tile. The weights of all tiles sum to 1 at every pixel.
std::vector<std::vector<double>> axis_weights(int64_t tile, const std::vector<int64_t>& origins);

// Weighted recombination of per-tile outputs (tile x tile each) on an h x w grid.
Image blend(const std::vector<Image>& tiles, const std::vector<TileOrigin>& plan, int64_t h,
            int64_t w, int64_t tile);

// Something that maps a tile x tile image to a same-size image.
class TileModel {
 public:
  virtual ~TileModel() = default;
  virtual int64_t tile_size() const = 0;
  virtual Image run(const Image& tile) const = 0;
};

class IdentityModel final : public TileModel {
 public:
  explicit IdentityModel(int64_t tile) : tile_(tile) {}
  int64_t tile_size() const override { return tile_; }
  Image run(const Image& tile) const override { return tile; }

 private:
  int64_t tile_;
};

// Inference-mode forward of a network; no clipping (applied after blending).
class NetworkModel final : public TileModel {
 public:
  explicit NetworkModel(Network net) : net_(std::move(net)) {}
  int64_t tile_size() const override { return net_.config().input_size; }
  Image run(const Image& tile) const override;
  const Network& network() const { return net_; }

 private:
  mutable Network net_;
};

// Loads a checkpoint written by save_checkpoint / save_identity_checkpoint.
std::unique_ptr<TileModel> load_model(const std::filesystem::path& checkpoint_dir);

struct TilingStats {
  int64_t forward_calls = 0;
  int64_t padded_h = 0, padded_w = 0;
};

// pad -> plan -> per-tile forward -> blend -> crop -> optional clip. cfg.tile
// must equal the model's tile size. Output shape always equals input shape.
Image denoise_image(const TileModel& model, const Image& img, const TileConfig& cfg,
                    TilingStats* stats = nullptr);

}  // namespace mdn
