#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gncaf/common.hpp"
#include "gncaf/encoders.hpp"
#include "gncaf/graph.hpp"
#include "gncaf/image.hpp"
#include "gncaf/tiling.hpp"

namespace gncaf {

struct ForegroundConfig {
  ThresholdMode mode = ThresholdMode::otsu;
  double threshold = 0.1;  // used in fixed mode
  double min_tissue_fraction = 0.25;
};

inline ForegroundConfig foreground_config_from_json(const ordered_json& j) {
  ForegroundConfig f;
  f.mode = threshold_mode_from_string(j.at("mode").get<std::string>());
  f.threshold = j.at("threshold").get<double>();
  f.min_tissue_fraction = j.at("min_tissue_fraction").get<double>();
  return f;
}

struct DatasetInfo {
  std::string dir;
  std::vector<std::string> slide_ids;
  ForegroundConfig foreground;
  int classes = 4;
};

inline DatasetInfo load_dataset_info(const std::string& dir) {
  namespace fs = std::filesystem;
  fs::path meta = fs::path(dir) / "dataset.json";
  std::ifstream in(meta.string());
  if (!in) throw DataError("dataset.json not found in " + dir);
  ordered_json j = ordered_json::parse(in, nullptr, true, true);
  DatasetInfo info;
  info.dir = dir;
  info.slide_ids = j.at("slide_ids").get<std::vector<std::string>>();
  info.classes = j.at("classes").get<int>();
  if (j.contains("foreground")) info.foreground = foreground_config_from_json(j.at("foreground"));
  return info;
}

// One slide with everything training needs; patches are cropped on demand.
struct SlideRecord {
  std::string id;
  SlideImage slide;
  LabelMask mask;
  TileGrid grid;
  ContextGraph graph;
  MatrixF features;  // frozen node features, empty until computed

  ImageU8 patch(int node) const { return extract_patch(slide, grid, node); }
  LabelMask mask_patch(int node) const { return extract_mask_patch(mask, grid, node); }
};

inline SlideRecord prepare_slide_record(SlideImage slide, LabelMask mask, int patch_size,
                                        const ForegroundConfig& fg) {
  require(slide.pixels.height == mask.height && slide.pixels.width == mask.width,
          "slide/mask dimension mismatch for " + slide.slide_id);
  SlideRecord rec;
  ForegroundResult fgres =
      compute_foreground_mask(slide, patch_size, fg.mode, fg.min_tissue_fraction, fg.threshold);
  TilingResult tiled = tile_slide(slide, fgres, patch_size);
  rec.id = slide.slide_id;
  rec.slide = std::move(slide);
  rec.mask = std::move(mask);
  rec.grid = std::move(tiled.grid);
  rec.graph = build_context_graph(rec.grid);
  return rec;
}

inline SlideRecord load_slide_record(const DatasetInfo& info, const std::string& id, int patch_size) {
  namespace fs = std::filesystem;
  SlideImage slide;
  slide.slide_id = id;
  slide.pixels = read_ppm((fs::path(info.dir) / "slides" / (id + ".img")).string());
  LabelMask mask = read_pgm((fs::path(info.dir) / "masks" / (id + ".lbl")).string());
  for (std::uint8_t v : mask.labels)
    require(v < info.classes, "mask label out of range in " + id);
  return prepare_slide_record(std::move(slide), std::move(mask), patch_size, info.foreground);
}

inline std::vector<SlideRecord> load_slide_records(const DatasetInfo& info, const std::vector<std::string>& ids,
                                                   int patch_size) {
  std::vector<SlideRecord> out;
  out.reserve(ids.size());
  for (const auto& id : ids) out.push_back(load_slide_record(info, id, patch_size));
  return out;
}

inline void compute_slide_features(SlideRecord& rec, const PatchEncoderConfig& config,
                                   const PatchEncoderParams& params, ParamStore& store) {
  std::vector<ImageU8> patches;
  patches.reserve(rec.grid.n_nodes());
  for (int i = 0; i < rec.grid.n_nodes(); ++i) patches.push_back(rec.patch(i));
  rec.features = encode_patches(patches, config, params, store);
}

}  // namespace gncaf
