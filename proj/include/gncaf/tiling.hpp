#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "gncaf/common.hpp"
#include "gncaf/image.hpp"

namespace gncaf {

struct SlideImage {
  ImageU8 pixels;
  double microns_per_pixel = 1.0;  // metadata only at desk scale
  std::string slide_id;
};

// Tiling geometry for one slide. Node ids are assigned in row-major order
// over foreground cells and are the node ids of the context graph.
struct TileGrid {
  std::string slide_id;
  int rows = 0;
  int cols = 0;
  int patch_size_px = 0;
  int height_px = 0;  // original (unpadded) slide dims
  int width_px = 0;
  std::vector<std::uint8_t> foreground;       // rows*cols, row-major
  std::vector<std::pair<int, int>> coords;    // node id -> (row, col)
  std::vector<int> cell_to_node;              // rows*cols, -1 for background

  int n_nodes() const { return static_cast<int>(coords.size()); }

  bool is_foreground(int r, int c) const { return foreground[static_cast<std::size_t>(r) * cols + c] != 0; }

  int node_at(int r, int c) const { return cell_to_node[static_cast<std::size_t>(r) * cols + c]; }
};

inline TileGrid make_tile_grid(const std::string& slide_id, int rows, int cols, int patch_size_px,
                               int height_px, int width_px, std::vector<std::uint8_t> foreground) {
  TileGrid grid;
  grid.slide_id = slide_id;
  grid.rows = rows;
  grid.cols = cols;
  grid.patch_size_px = patch_size_px;
  grid.height_px = height_px;
  grid.width_px = width_px;
  grid.foreground = std::move(foreground);
  grid.cell_to_node.assign(static_cast<std::size_t>(rows) * cols, -1);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      if (grid.foreground[static_cast<std::size_t>(r) * cols + c]) {
        grid.cell_to_node[static_cast<std::size_t>(r) * cols + c] = grid.n_nodes();
        grid.coords.emplace_back(r, c);
      }
    }
  }
  return grid;
}

inline ordered_json tile_grid_to_json(const TileGrid& grid) {
  ordered_json j;
  j["slide_id"] = grid.slide_id;
  j["rows"] = grid.rows;
  j["cols"] = grid.cols;
  j["patch_size_px"] = grid.patch_size_px;
  j["height_px"] = grid.height_px;
  j["width_px"] = grid.width_px;
  j["foreground"] = std::vector<int>(grid.foreground.begin(), grid.foreground.end());
  ordered_json coords = ordered_json::array();
  for (const auto& [r, c] : grid.coords) coords.push_back({r, c});
  j["coords"] = coords;
  return j;
}

inline TileGrid tile_grid_from_json(const ordered_json& j) {
  int rows = j.at("rows").get<int>();
  int cols = j.at("cols").get<int>();
  std::vector<int> fg = j.at("foreground").get<std::vector<int>>();
  require(static_cast<int>(fg.size()) == rows * cols, "tile grid: foreground size mismatch");
  TileGrid grid = make_tile_grid(j.at("slide_id").get<std::string>(), rows, cols,
                                 j.at("patch_size_px").get<int>(), j.at("height_px").get<int>(),
                                 j.at("width_px").get<int>(),
                                 std::vector<std::uint8_t>(fg.begin(), fg.end()));
  // Sanity-check the stored node order against the row-major convention.
  const auto& coords = j.at("coords");
  require(static_cast<int>(coords.size()) == grid.n_nodes(), "tile grid: coords/node count mismatch");
  for (int i = 0; i < grid.n_nodes(); ++i) {
    require(coords[i][0].get<int>() == grid.coords[i].first && coords[i][1].get<int>() == grid.coords[i].second,
            "tile grid: coords not in row-major node order");
  }
  return grid;
}

// Per-pixel saturation of the HSV conversion: (max-min)/max, 0 for black.
inline double pixel_saturation(const std::uint8_t* rgb) {
  int mx = std::max({rgb[0], rgb[1], rgb[2]});
  int mn = std::min({rgb[0], rgb[1], rgb[2]});
  if (mx == 0) return 0.0;
  return static_cast<double>(mx - mn) / static_cast<double>(mx);
}

enum class ThresholdMode { otsu, fixed };

inline ThresholdMode threshold_mode_from_string(const std::string& s) {
  if (s == "otsu") return ThresholdMode::otsu;
  if (s == "fixed") return ThresholdMode::fixed;
  throw ConfigError("unknown foreground threshold mode: " + s);
}

// Otsu's threshold over a 256-bin histogram. Returns the bin index t that
// maximizes between-class variance; ties resolve to the smallest t.
inline int otsu_threshold(const std::vector<std::int64_t>& hist) {
  std::int64_t total = 0;
  double sum_all = 0.0;
  for (int i = 0; i < 256; ++i) {
    total += hist[i];
    sum_all += static_cast<double>(i) * static_cast<double>(hist[i]);
  }
  require(total > 0, "otsu: empty histogram");
  std::int64_t w0 = 0;
  double sum0 = 0.0;
  double best_var = -1.0;
  int best_t = 0;
  for (int t = 0; t < 256; ++t) {
    w0 += hist[t];
    sum0 += static_cast<double>(t) * static_cast<double>(hist[t]);
    std::int64_t w1 = total - w0;
    if (w0 == 0 || w1 == 0) continue;
    double m0 = sum0 / static_cast<double>(w0);
    double m1 = (sum_all - sum0) / static_cast<double>(w1);
    double var = static_cast<double>(w0) * static_cast<double>(w1) * (m0 - m1) * (m0 - m1);
    if (var > best_var) {
      best_var = var;
      best_t = t;
    }
  }
  return best_t;
}

struct ForegroundResult {
  int rows = 0;
  int cols = 0;
  std::vector<std::uint8_t> mask;  // rows*cols, row-major
  double threshold = 0.0;          // resolved saturation threshold in [0,1]
};

// A tile is foreground iff the fraction of its pixels with saturation above
// the threshold is >= min_tissue_fraction. The fraction is taken over the
// original pixels only, so right/bottom padding never changes decisions.
inline ForegroundResult compute_foreground_mask(const SlideImage& slide, int patch_size_px,
                                                ThresholdMode mode, double min_tissue_fraction,
                                                double fixed_threshold = 0.1) {
  require(patch_size_px > 0, "patch_size_px must be positive");
  require(min_tissue_fraction >= 0.0 && min_tissue_fraction <= 1.0, "min_tissue_fraction must be in [0,1]");
  const ImageU8& img = slide.pixels;
  if (img.height <= 0 || img.width <= 0) throw DataError("no pixels");

  double threshold;
  if (mode == ThresholdMode::otsu) {
    std::vector<std::int64_t> hist(256, 0);
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x)
        hist[static_cast<int>(std::lround(pixel_saturation(img.pixel(y, x)) * 255.0))]++;
    threshold = otsu_threshold(hist) / 255.0;
  } else {
    threshold = fixed_threshold;
  }

  ForegroundResult res;
  res.rows = (img.height + patch_size_px - 1) / patch_size_px;
  res.cols = (img.width + patch_size_px - 1) / patch_size_px;
  res.threshold = threshold;
  res.mask.assign(static_cast<std::size_t>(res.rows) * res.cols, 0);
  for (int r = 0; r < res.rows; ++r) {
    for (int c = 0; c < res.cols; ++c) {
      int y1 = std::min((r + 1) * patch_size_px, img.height);
      int x1 = std::min((c + 1) * patch_size_px, img.width);
      std::int64_t tissue = 0, count = 0;
      for (int y = r * patch_size_px; y < y1; ++y) {
        for (int x = c * patch_size_px; x < x1; ++x) {
          ++count;
          if (pixel_saturation(img.pixel(y, x)) > threshold) ++tissue;
        }
      }
      double fraction = count > 0 ? static_cast<double>(tissue) / static_cast<double>(count) : 0.0;
      if (count > 0 && fraction >= min_tissue_fraction) res.mask[static_cast<std::size_t>(r) * res.cols + c] = 1;
    }
  }
  return res;
}

// Pad on the right/bottom with white pixels to a multiple of patch_size_px.
inline ImageU8 pad_to_multiple(const ImageU8& img, int patch_size_px) {
  int rows = (img.height + patch_size_px - 1) / patch_size_px;
  int cols = (img.width + patch_size_px - 1) / patch_size_px;
  int h = rows * patch_size_px;
  int w = cols * patch_size_px;
  if (h == img.height && w == img.width) return img;
  ImageU8 out(h, w, 255);
  for (int y = 0; y < img.height; ++y)
    std::copy_n(img.pixel(y, 0), static_cast<std::size_t>(img.width) * 3, out.pixel(y, 0));
  return out;
}

inline LabelMask pad_mask_to_multiple(const LabelMask& mask, int patch_size_px) {
  int rows = (mask.height + patch_size_px - 1) / patch_size_px;
  int cols = (mask.width + patch_size_px - 1) / patch_size_px;
  int h = rows * patch_size_px;
  int w = cols * patch_size_px;
  if (h == mask.height && w == mask.width) return mask;
  LabelMask out(h, w, 0);
  for (int y = 0; y < mask.height; ++y)
    std::copy_n(&mask.labels[static_cast<std::size_t>(y) * mask.width], mask.width,
                &out.labels[static_cast<std::size_t>(y) * w]);
  return out;
}

struct TilingResult {
  TileGrid grid;
  std::vector<ImageU8> patches;  // node-id order
};

inline TilingResult tile_slide(const SlideImage& slide, const ForegroundResult& fg, int patch_size_px) {
  const ImageU8& img = slide.pixels;
  if (img.height <= 0 || img.width <= 0) throw DataError("no pixels");
  int rows = (img.height + patch_size_px - 1) / patch_size_px;
  int cols = (img.width + patch_size_px - 1) / patch_size_px;
  require(fg.rows == rows && fg.cols == cols, "tile_slide: mask/slide dimension mismatch");

  ImageU8 padded = pad_to_multiple(img, patch_size_px);
  TilingResult out;
  out.grid = make_tile_grid(slide.slide_id, rows, cols, patch_size_px, img.height, img.width, fg.mask);
  out.patches.reserve(out.grid.n_nodes());
  for (const auto& [r, c] : out.grid.coords) {
    ImageU8 patch(patch_size_px, patch_size_px);
    for (int y = 0; y < patch_size_px; ++y)
      std::copy_n(padded.pixel(r * patch_size_px + y, c * patch_size_px),
                  static_cast<std::size_t>(patch_size_px) * 3, patch.pixel(y, 0));
    out.patches.push_back(std::move(patch));
  }
  return out;
}

// Extract a single foreground patch without materializing the whole set.
inline ImageU8 extract_patch(const SlideImage& slide, const TileGrid& grid, int node) {
  require(node >= 0 && node < grid.n_nodes(), "extract_patch: bad node id");
  auto [r, c] = grid.coords[node];
  int p = grid.patch_size_px;
  ImageU8 patch(p, p, 255);
  int y1 = std::min((r + 1) * p, slide.pixels.height);
  int x1 = std::min((c + 1) * p, slide.pixels.width);
  for (int y = r * p; y < y1; ++y)
    std::copy_n(slide.pixels.pixel(y, c * p), static_cast<std::size_t>(x1 - c * p) * 3,
                patch.pixel(y - r * p, 0));
  return patch;
}

inline LabelMask extract_mask_patch(const LabelMask& mask, const TileGrid& grid, int node) {
  require(node >= 0 && node < grid.n_nodes(), "extract_mask_patch: bad node id");
  auto [r, c] = grid.coords[node];
  int p = grid.patch_size_px;
  LabelMask patch(p, p, 0);
  int y1 = std::min((r + 1) * p, mask.height);
  int x1 = std::min((c + 1) * p, mask.width);
  for (int y = r * p; y < y1; ++y)
    std::copy_n(&mask.labels[static_cast<std::size_t>(y) * mask.width + c * p],
                x1 - c * p, &patch.labels[static_cast<std::size_t>(y - r * p) * p]);
  return patch;
}

inline std::vector<LabelMask> tile_mask(const LabelMask& mask, const TileGrid& grid) {
  std::vector<LabelMask> out;
  out.reserve(grid.n_nodes());
  for (int i = 0; i < grid.n_nodes(); ++i) out.push_back(extract_mask_patch(mask, grid, i));
  return out;
}

// Stitch per-tile masks back to a slide-level mask. Background-tile regions
// are label 0; the output is cropped to the original slide dims.
inline LabelMask stitch_masks(const std::vector<LabelMask>& per_tile_masks, const TileGrid& grid) {
  require(static_cast<int>(per_tile_masks.size()) == grid.n_nodes(), "stitch_masks: mask count != node count");
  int p = grid.patch_size_px;
  LabelMask out(grid.height_px, grid.width_px, 0);
  for (int i = 0; i < grid.n_nodes(); ++i) {
    const LabelMask& patch = per_tile_masks[i];
    require(patch.height == p && patch.width == p, "stitch_masks: patch size mismatch");
    auto [r, c] = grid.coords[i];
    int y1 = std::min((r + 1) * p, grid.height_px);
    int x1 = std::min((c + 1) * p, grid.width_px);
    for (int y = r * p; y < y1; ++y)
      std::copy_n(&patch.labels[static_cast<std::size_t>(y - r * p) * p], x1 - c * p,
                  &out.labels[static_cast<std::size_t>(y) * grid.width_px + c * p]);
  }
  return out;
}

}  // namespace gncaf
