#include <catch2/catch_amalgamated.hpp>

#include "gncaf/tiling.hpp"

#include "helpers.hpp"

using namespace gncaf;

namespace {

SlideImage solid_slide(int h, int w, std::uint8_t r, std::uint8_t g, std::uint8_t b,
                       const std::string& id = "s") {
  SlideImage s;
  s.slide_id = id;
  s.pixels = ImageU8(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) s.pixels.set_pixel(y, x, r, g, b);
  return s;
}

}  // namespace

TEST_CASE("foreground: uniform white slide is all background") {
  SlideImage s = solid_slide(64, 64, 255, 255, 255);
  for (ThresholdMode mode : {ThresholdMode::otsu, ThresholdMode::fixed}) {
    ForegroundResult fg = compute_foreground_mask(s, 16, mode, 0.25, 0.1);
    for (auto v : fg.mask) CHECK(v == 0);
  }
}

TEST_CASE("foreground: uniform saturated red slide is all foreground") {
  SlideImage s = solid_slide(64, 64, 255, 0, 0);
  ForegroundResult fg = compute_foreground_mask(s, 16, ThresholdMode::otsu, 0.5);
  for (auto v : fg.mask) CHECK(v == 1);
}

TEST_CASE("foreground: single red tile, fixed threshold, pixel-loop oracle") {
  // 2x2-tile slide, only tile (0,1) saturated red.
  int patch = 8;
  SlideImage s = solid_slide(16, 16, 255, 255, 255);
  for (int y = 0; y < 8; ++y)
    for (int x = 8; x < 16; ++x) s.pixels.set_pixel(y, x, 220, 20, 20);

  ForegroundResult fg = compute_foreground_mask(s, patch, ThresholdMode::fixed, 0.25, 0.1);

  // Independent oracle: count pixels whose saturation exceeds 0.1 per tile.
  for (int r = 0; r < 2; ++r)
    for (int c = 0; c < 2; ++c) {
      int tissue = 0;
      for (int y = r * patch; y < (r + 1) * patch; ++y)
        for (int x = c * patch; x < (c + 1) * patch; ++x)
          if (pixel_saturation(s.pixels.pixel(y, x)) > 0.1) ++tissue;
      bool expected = static_cast<double>(tissue) / (patch * patch) >= 0.25;
      CHECK(fg.mask[r * 2 + c] == (expected ? 1 : 0));
    }
  CHECK(fg.mask == std::vector<std::uint8_t>{0, 1, 0, 0});
}

TEST_CASE("foreground: empty slide errors") {
  SlideImage s;
  s.slide_id = "empty";
  CHECK_THROWS_WITH(compute_foreground_mask(s, 8, ThresholdMode::otsu, 0.25), "no pixels");
}

TEST_CASE("foreground: padding never changes edge-tile decisions") {
  // 20x20 slide with patch 16: edge tiles are partial. The saturated band
  // covers all original pixels of tile (1,1), so it must be foreground even
  // though white padding would dilute it far below the threshold.
  SlideImage s = solid_slide(20, 20, 255, 255, 255);
  for (int y = 16; y < 20; ++y)
    for (int x = 16; x < 20; ++x) s.pixels.set_pixel(y, x, 200, 10, 10);
  ForegroundResult fg = compute_foreground_mask(s, 16, ThresholdMode::fixed, 0.9, 0.1);
  CHECK(fg.mask[3] == 1);
}

TEST_CASE("tile_slide: 512x512 all-foreground grid") {
  SlideImage s = solid_slide(512, 512, 200, 40, 40);
  ForegroundResult fg = compute_foreground_mask(s, 256, ThresholdMode::fixed, 0.25, 0.1);
  TilingResult t = tile_slide(s, fg, 256);
  CHECK(t.grid.rows == 2);
  CHECK(t.grid.cols == 2);
  CHECK(t.grid.n_nodes() == 4);
  CHECK(t.grid.coords[0] == std::pair<int, int>{0, 0});
  CHECK(t.grid.coords[3] == std::pair<int, int>{1, 1});
  CHECK(t.patches.size() == 4);
}

TEST_CASE("tile_slide: single foreground cell maps to node 0") {
  SlideImage s = solid_slide(512, 512, 255, 255, 255);
  ForegroundResult fg;
  fg.rows = 2;
  fg.cols = 2;
  fg.mask = {0, 0, 1, 0};  // only (1,0)
  TilingResult t = tile_slide(s, fg, 256);
  CHECK(t.grid.n_nodes() == 1);
  CHECK(t.grid.coords[0] == std::pair<int, int>{1, 0});
}

TEST_CASE("tile_slide: 300x300 pads to 512x512 with white") {
  SlideImage s = solid_slide(300, 300, 180, 60, 60);
  ForegroundResult fg = compute_foreground_mask(s, 256, ThresholdMode::fixed, 0.25, 0.1);
  TilingResult t = tile_slide(s, fg, 256);
  CHECK(t.grid.rows == 2);
  CHECK(t.grid.cols == 2);
  CHECK(t.grid.height_px == 300);
  // Bottom-right patch content beyond the original extent is white.
  int node = t.grid.node_at(1, 1);
  REQUIRE(node >= 0);
  const ImageU8& p = t.patches[node];
  CHECK(p.pixel(100, 100)[0] == 255);
  CHECK(p.pixel(100, 100)[1] == 255);
  CHECK(p.pixel(0, 0)[0] == 180);  // (256,256) is original content
}

TEST_CASE("tile_slide: mask dimension mismatch errors") {
  SlideImage s = solid_slide(64, 64, 128, 30, 30);
  ForegroundResult fg;
  fg.rows = 3;
  fg.cols = 2;
  fg.mask.assign(6, 1);
  CHECK_THROWS_AS(tile_slide(s, fg, 16), DataError);
}

TEST_CASE("stitch: quadrant and halves placement") {
  TileGrid grid = make_tile_grid("s", 2, 2, 4, 8, 8, {0, 0, 1, 0});
  std::vector<LabelMask> masks{LabelMask(4, 4, 1)};
  LabelMask out = stitch_masks(masks, grid);
  CHECK(out.at(5, 1) == 1);
  CHECK(out.at(1, 1) == 0);
  CHECK(out.at(5, 5) == 0);

  TileGrid halves = make_tile_grid("s", 1, 2, 4, 4, 8, {1, 1});
  LabelMask out2 = stitch_masks({LabelMask(4, 4, 2), LabelMask(4, 4, 3)}, halves);
  CHECK(out2.at(2, 1) == 2);
  CHECK(out2.at(2, 6) == 3);
}

TEST_CASE("stitch: count mismatch errors") {
  TileGrid grid = make_tile_grid("s", 1, 2, 4, 4, 8, {1, 1});
  CHECK_THROWS_AS(stitch_masks({LabelMask(4, 4, 1)}, grid), DataError);
}

TEST_CASE("round trip: tile then stitch reproduces any mask exactly") {
  Rng rng(41);
  for (int trial = 0; trial < 20; ++trial) {
    int h = rng.uniform_int(5, 40);
    int w = rng.uniform_int(5, 40);
    int patch = rng.uniform_int(3, 9);
    LabelMask mask(h, w);
    for (auto& v : mask.labels) v = static_cast<std::uint8_t>(rng.uniform_int(0, 3));
    int rows = (h + patch - 1) / patch;
    int cols = (w + patch - 1) / patch;
    TileGrid grid = make_tile_grid("s", rows, cols, patch, h, w,
                                   std::vector<std::uint8_t>(static_cast<std::size_t>(rows) * cols, 1));
    LabelMask stitched = stitch_masks(tile_mask(mask, grid), grid);
    CHECK(stitched == mask);
  }
}

TEST_CASE("tiling is deterministic: node order is row-major and repeatable") {
  Rng rng(7);
  TileGrid a = test::random_grid(rng, 6, 7);
  TileGrid b = make_tile_grid(a.slide_id, a.rows, a.cols, a.patch_size_px, a.height_px, a.width_px,
                              a.foreground);
  CHECK(a.coords == b.coords);
  int prev = -1;
  for (const auto& [r, c] : a.coords) {
    int flat = r * a.cols + c;
    CHECK(flat > prev);
    prev = flat;
  }
}

TEST_CASE("tile grid JSON round trip") {
  Rng rng(11);
  TileGrid g = test::random_grid(rng, 4, 5);
  TileGrid back = tile_grid_from_json(tile_grid_to_json(g));
  CHECK(back.rows == g.rows);
  CHECK(back.cols == g.cols);
  CHECK(back.foreground == g.foreground);
  CHECK(back.coords == g.coords);
  CHECK(back.height_px == g.height_px);
}
