#include <doctest.h>

#include "mdn/checkpoint.hpp"
#include "mdn/denoisers.hpp"
#include "mdn/errors.hpp"
#include "mdn/tiling.hpp"
#include "support.hpp"

using namespace mdn;
using mdn::test::max_abs_diff;
using mdn::test::random_image;
using mdn::test::scratch_dir;

namespace {

// Linear, shift-equivariant stand-in for a network.
class BlurModel final : public TileModel {
 public:
  explicit BlurModel(int64_t tile) : tile_(tile) {}
  int64_t tile_size() const override { return tile_; }
  Image run(const Image& t) const override { return gaussian3(t); }

 private:
  int64_t tile_;
};

TileConfig config(int64_t tile, int64_t overlap, int64_t pad) {
  TileConfig c;
  c.tile = tile;
  c.overlap = overlap;
  c.pad = pad;
  return c;
}

}  // namespace

TEST_CASE("reflection padding") {
  const Image img(3, 3, std::vector<double>{1, 2, 3, 4, 5, 6, 7, 8, 9});
  const Image p = pad_reflect(img, 1);
  CHECK(p.height == 5);
  CHECK(p.width == 5);
  const std::vector<double> middle{p.at(2, 0), p.at(2, 1), p.at(2, 2), p.at(2, 3), p.at(2, 4)};
  CHECK(middle == std::vector<double>{5, 4, 5, 6, 5});
  Image row(3, 3);
  for (int x = 0; x < 3; ++x) row.at(1, x) = x + 1;
  const Image pr = pad_reflect(row, 1);
  CHECK(std::vector<double>{pr.at(2, 0), pr.at(2, 1), pr.at(2, 2), pr.at(2, 3), pr.at(2, 4)} ==
        std::vector<double>{2, 1, 2, 3, 2});
  CHECK(pad_reflect(img, 0).px == img.px);
  CHECK_THROWS_AS(pad_reflect(img, 3), InvalidInput);
}

TEST_CASE("tile origins cover the axis") {
  CHECK(axis_origins(1024, 512, 64) == std::vector<int64_t>{0, 448, 512});
  CHECK(axis_origins(512, 512, 0) == std::vector<int64_t>{0});
  CHECK(axis_origins(512, 512, 32) == std::vector<int64_t>{0});
  for (int64_t n : {64, 65, 100, 127, 128, 300, 511}) {
    for (int64_t overlap : {0, 8, 16, 31}) {
      const auto o = axis_origins(n, 64, overlap);
      INFO(n << " " << overlap);
      CHECK(o.front() == 0);
      CHECK(o.back() == n - 64);
      for (size_t i = 1; i < o.size(); ++i) {
        CHECK(o[i] > o[i - 1]);
        CHECK(o[i] - o[i - 1] <= 64 - overlap);  // no gaps, at least `overlap` shared
      }
    }
  }
  const auto plan = tile_plan(700, 1100, config(512, 32, 0));
  std::vector<int> covered(700 * 1100);
  for (const auto& t : plan)
    for (int64_t y = t.y; y < t.y + 512; ++y)
      for (int64_t x = t.x; x < t.x + 512; ++x) covered[size_t(y * 1100 + x)]++;
  CHECK(std::find(covered.begin(), covered.end(), 0) == covered.end());
  CHECK_THROWS_AS(axis_origins(63, 64, 0), InvalidInput);
}

TEST_CASE("blend weights form a partition of unity") {
  for (int64_t n : {64, 100, 200, 333}) {
    for (int64_t overlap : {0, 4, 16, 32, 48}) {
      const auto o = axis_origins(n, 64, overlap);
      const auto w = axis_weights(64, o);
      std::vector<double> sum(size_t(n), 0.0);
      for (size_t i = 0; i < o.size(); ++i)
        for (int64_t t = 0; t < 64; ++t) {
          CHECK(w[i][size_t(t)] >= 0.0);
          CHECK(w[i][size_t(t)] <= 1.0);
          sum[size_t(o[i] + t)] += w[i][size_t(t)];
        }
      for (double s : sum) CHECK(std::abs(s - 1.0) < 1e-12);
    }
  }
  // Tile edges carry no weight where a neighbour exists.
  const auto w = axis_weights(64, {0, 32, 64});
  CHECK(w[1][0] == 0.0);
  CHECK(w[1][63] == 0.0);
  CHECK(w[0][0] == 1.0);
}

TEST_CASE("blend") {
  const auto plan = tile_plan(100, 90, config(64, 32, 0));
  std::vector<Image> tiles(plan.size(), Image(64, 64, 0.37));
  const Image b = blend(tiles, plan, 100, 90, 64);
  for (double v : b.px) CHECK(std::abs(v - 0.37) < 1e-12);

  Rng rng(1);
  const Image img = random_image(100, 90, rng);
  std::vector<Image> crops;
  for (const auto& t : plan) crops.push_back(crop(img, t.y, t.x, 64, 64));
  CHECK(max_abs_diff(blend(crops, plan, 100, 90, 64), img) < 1e-12);
}

TEST_CASE("identity stub round trip") {
  Rng rng(2);
  for (auto [h, w] : {std::pair<int64_t, int64_t>{300, 700}, {512, 512}, {1024, 1024}, {2048, 2048}, {40, 33}}) {
    INFO(h << "x" << w);
    const Image img = random_image(h, w, rng);
    TilingStats st;
    const Image out = denoise_image(IdentityModel(512), img, TileConfig{}, &st);
    CHECK(out.height == h);
    CHECK(out.width == w);
    CHECK(out.px == img.px);
    CHECK(st.padded_h >= 512);
  }
  TilingStats st;
  denoise_image(IdentityModel(512), Image(512, 512, 0.5), config(512, 0, 0), &st);
  CHECK(st.forward_calls == 1);
}

TEST_CASE("linear stub matches whole-image application") {
  Rng rng(3);
  const Image img = random_image(150, 230, rng);
  TileConfig c = config(64, 32, 8);
  c.clip_output = false;
  const Image tiled = denoise_image(BlurModel(64), img, c);
  const Image whole = gaussian3(img);
  double worst = 0;
  for (int64_t y = 1; y + 1 < img.height; ++y)
    for (int64_t x = 1; x + 1 < img.width; ++x) worst = std::max(worst, std::abs(tiled.at(y, x) - whole.at(y, x)));
  CHECK(worst < 1e-5);
}

TEST_CASE("network tiles are deterministic and thread independent") {
  NetworkConfig nc;
  nc.input_size = 64;
  nc.width_multiplier = 0.125;
  NetworkModel model(Network(nc, 4));
  Rng rng(4);
  const Image img = random_image(90, 130, rng);
  TileConfig c = config(64, 16, 4);
  const Image a = denoise_image(model, img, c);
  c.threads = 3;
  const Image b = denoise_image(model, img, c);
  CHECK(a.px == b.px);
  CHECK(a.min() >= 0.0);
  CHECK(a.max() <= 1.0);
  CHECK_THROWS_AS(denoise_image(model, img, config(512, 32, 16)), ConfigError);
}

TEST_CASE("checkpoints load as tile models") {
  const auto dir = scratch_dir("tiling_models");
  save_identity_checkpoint(dir / "identity", 128);
  const auto id = load_model(dir / "identity");
  CHECK(id->tile_size() == 128);
  Rng rng(5);
  const Image img = random_image(200, 150, rng);
  CHECK(denoise_image(*id, img, config(128, 32, 16)).px == img.px);

  NetworkConfig nc;
  nc.input_size = 64;
  nc.width_multiplier = 0.125;
  const Network net(nc, 6);
  CheckpointManifest m;
  m.config = nc;
  save_checkpoint(dir / "net", net.params(), m);
  const auto loaded = load_model(dir / "net");
  CHECK(loaded->tile_size() == 64);
  const Image t = random_image(64, 64, rng);
  CHECK(loaded->run(t).px == NetworkModel(Network(nc, 6)).run(t).px);

  CHECK_THROWS(load_model(dir / "missing"));
}

TEST_CASE("invalid tiling input") {
  CHECK_THROWS_AS(config(64, 64, 0).validate(), ConfigError);
  CHECK_THROWS_AS(config(64, 8, -1).validate(), ConfigError);
  Image bad(70, 70, 0.5);
  bad.at(3, 3) = std::nan("");
  CHECK_THROWS_AS(denoise_image(IdentityModel(64), bad, config(64, 8, 4)), InvalidInput);
}
