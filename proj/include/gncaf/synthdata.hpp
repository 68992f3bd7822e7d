#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gncaf/common.hpp"
#include "gncaf/image.hpp"
#include "gncaf/tiling.hpp"

namespace gncaf {

// Synthetic slides whose labels are decidable only from neighboring-tile
// context: every class renders the same disc in its own tile; classes 2 and
// 3 add a ring one / two tiles out, always outside the disc's tile. Rings
// are labeled background, so context informs but never leaks labels.
struct SynthSpec {
  int rows = 16;
  int cols = 16;
  int tile_size_px = 64;
  int n_structures = 6;
  double disc_radius_min_tiles = 0.22;
  double disc_radius_max_tiles = 0.38;
  double ring_radius_class2_tiles = 1.0;
  double ring_radius_class3_tiles = 2.0;
  double ring_halfwidth_px = 2.5;
  double noise_level = 8.0;
  int forced_class = 0;  // 0 = off; otherwise all structures get this class
  std::uint64_t seed = 0;
};

struct SynthStructure {
  int tile_row = 0, tile_col = 0;
  double center_x = 0.0, center_y = 0.0;  // pixels
  int cls = 1;
  double disc_radius_px = 0.0;
  double ring_radius_px = 0.0;  // 0 for class 1
};

struct SynthSlide {
  SlideImage slide;
  LabelMask mask;
  std::vector<SynthStructure> structures;
};

inline ordered_json synth_spec_to_json(const SynthSpec& s) {
  ordered_json j;
  j["rows"] = s.rows;
  j["cols"] = s.cols;
  j["tile_size_px"] = s.tile_size_px;
  j["n_structures"] = s.n_structures;
  j["disc_radius_min_tiles"] = s.disc_radius_min_tiles;
  j["disc_radius_max_tiles"] = s.disc_radius_max_tiles;
  j["ring_radius_class2_tiles"] = s.ring_radius_class2_tiles;
  j["ring_radius_class3_tiles"] = s.ring_radius_class3_tiles;
  j["ring_halfwidth_px"] = s.ring_halfwidth_px;
  j["noise_level"] = s.noise_level;
  j["forced_class"] = s.forced_class;
  j["seed"] = s.seed;
  return j;
}

inline SynthSpec synth_spec_from_json(const ordered_json& j) {
  SynthSpec s;
  s.rows = j.at("rows").get<int>();
  s.cols = j.at("cols").get<int>();
  s.tile_size_px = j.at("tile_size_px").get<int>();
  s.n_structures = j.at("n_structures").get<int>();
  s.disc_radius_min_tiles = j.at("disc_radius_min_tiles").get<double>();
  s.disc_radius_max_tiles = j.at("disc_radius_max_tiles").get<double>();
  s.ring_radius_class2_tiles = j.at("ring_radius_class2_tiles").get<double>();
  s.ring_radius_class3_tiles = j.at("ring_radius_class3_tiles").get<double>();
  s.ring_halfwidth_px = j.at("ring_halfwidth_px").get<double>();
  s.noise_level = j.at("noise_level").get<double>();
  s.forced_class = j.at("forced_class").get<int>();
  s.seed = j.at("seed").get<std::uint64_t>();
  return s;
}

namespace detail {

// Background tint with position-keyed noise; identical for a given seed no
// matter which classes get drawn.
inline void synth_background_pixel(std::uint64_t noise_seed, int y, int x, double noise_level,
                                   std::uint8_t* px) {
  static constexpr int base[3] = {232, 205, 216};
  std::uint64_t h = hash2d(noise_seed, static_cast<std::uint64_t>(y), static_cast<std::uint64_t>(x));
  for (int ch = 0; ch < 3; ++ch) {
    double u = static_cast<double>((h >> (ch * 16)) & 0xffff) / 65535.0;
    int v = base[ch] + static_cast<int>(std::lround((2.0 * u - 1.0) * noise_level));
    px[ch] = static_cast<std::uint8_t>(std::clamp(v, 0, 255));
  }
}

inline void synth_textured_pixel(std::uint64_t noise_seed, int y, int x, const int base[3], std::uint8_t* px) {
  std::uint64_t h = hash2d(noise_seed ^ 0x5bd1e995, static_cast<std::uint64_t>(y), static_cast<std::uint64_t>(x));
  for (int ch = 0; ch < 3; ++ch) {
    double u = static_cast<double>((h >> (ch * 16)) & 0xffff) / 65535.0;
    int v = base[ch] + static_cast<int>(std::lround((2.0 * u - 1.0) * 4.0));
    px[ch] = static_cast<std::uint8_t>(std::clamp(v, 0, 255));
  }
}

}  // namespace detail

inline SynthSlide generate_slide(const SynthSpec& spec, const std::string& slide_id) {
  int tile = spec.tile_size_px;
  require(tile > 0 && spec.rows > 0 && spec.cols > 0, "synth: bad grid");
  // Jittered centers keep the whole tile within 0.78 tiles of the center
  // (corner distance of sqrt(2) * 0.55), so the inner ring edge must clear
  // that; the disc likewise must stay inside its own tile.
  double jitter = 0.05 * tile;
  require(spec.ring_radius_class2_tiles * tile - spec.ring_halfwidth_px > 0.79 * tile,
          "synth: class-2 ring would intersect the disc's own tile");
  require(spec.disc_radius_max_tiles + 0.05 < 0.5, "synth: disc would leave its own tile");
  require(spec.ring_radius_class3_tiles > spec.ring_radius_class2_tiles, "synth: ring radii must increase");
  double ring_max_tiles = spec.ring_radius_class3_tiles;

  int margin = static_cast<int>(std::ceil(ring_max_tiles - 0.5 + (spec.ring_halfwidth_px + 2.0) / tile));
  int sep = static_cast<int>(std::ceil(2.0 * ring_max_tiles + 1.0));
  require(spec.rows > 2 * margin && spec.cols > 2 * margin, "synth: grid too small for ring margin");

  Rng rng_place(derive_seed(spec.seed, 1));
  Rng rng_class(derive_seed(spec.seed, 2));
  std::uint64_t noise_seed = derive_seed(spec.seed, 3);

  // Place structure tiles with a minimum Chebyshev separation so rings of
  // distinct structures never touch each other or another center tile.
  // Whole configurations are restarted: a greedy prefix can be a dead end.
  std::vector<std::pair<int, int>> placed;
  for (int restart = 0; static_cast<int>(placed.size()) < spec.n_structures; ++restart) {
    if (restart >= 60)
      throw DataError("synth: could not place " + std::to_string(spec.n_structures) +
                      " structures without overlap (grid too crowded)");
    placed.clear();
    for (int attempt = 0; attempt < 40 * std::max(1, spec.n_structures) &&
                          static_cast<int>(placed.size()) < spec.n_structures;
         ++attempt) {
      int r = rng_place.uniform_int(margin, spec.rows - 1 - margin);
      int c = rng_place.uniform_int(margin, spec.cols - 1 - margin);
      bool ok = true;
      for (const auto& [pr, pc] : placed)
        if (std::max(std::abs(pr - r), std::abs(pc - c)) < sep) ok = false;
      if (ok) placed.emplace_back(r, c);
    }
  }

  SynthSlide out;
  out.slide.slide_id = slide_id;
  out.slide.microns_per_pixel = 1.0;
  out.slide.pixels = ImageU8(spec.rows * tile, spec.cols * tile);
  out.mask = LabelMask(spec.rows * tile, spec.cols * tile, 0);
  ImageU8& img = out.slide.pixels;

  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      detail::synth_background_pixel(noise_seed, y, x, spec.noise_level, img.pixel(y, x));

  // Balanced class assignment, shuffled from a class-only stream so forcing
  // a class leaves placement and disc rendering untouched.
  std::vector<int> classes(spec.n_structures);
  for (int i = 0; i < spec.n_structures; ++i) classes[i] = 1 + i % 3;
  rng_class.shuffle(classes);

  static constexpr int disc_color[3] = {168, 52, 88};
  static constexpr int ring_color[3] = {64, 96, 196};

  for (int i = 0; i < spec.n_structures; ++i) {
    SynthStructure st;
    st.tile_row = placed[i].first;
    st.tile_col = placed[i].second;
    st.cls = spec.forced_class > 0 ? spec.forced_class : classes[i];
    st.center_y = (st.tile_row + 0.5) * tile + rng_place.uniform(-jitter, jitter);
    st.center_x = (st.tile_col + 0.5) * tile + rng_place.uniform(-jitter, jitter);
    st.disc_radius_px = rng_place.uniform(spec.disc_radius_min_tiles, spec.disc_radius_max_tiles) * tile;
    st.ring_radius_px = st.cls == 2   ? spec.ring_radius_class2_tiles * tile
                        : st.cls == 3 ? spec.ring_radius_class3_tiles * tile
                                      : 0.0;

    int dr = static_cast<int>(std::ceil(st.disc_radius_px)) + 1;
    for (int y = std::max(0, static_cast<int>(st.center_y) - dr);
         y <= std::min(img.height - 1, static_cast<int>(st.center_y) + dr); ++y)
      for (int x = std::max(0, static_cast<int>(st.center_x) - dr);
           x <= std::min(img.width - 1, static_cast<int>(st.center_x) + dr); ++x) {
        double d = std::hypot(y + 0.5 - st.center_y, x + 0.5 - st.center_x);
        if (d <= st.disc_radius_px) {
          detail::synth_textured_pixel(noise_seed, y, x, disc_color, img.pixel(y, x));
          out.mask.at(y, x) = static_cast<std::uint8_t>(st.cls);
        }
      }

    if (st.ring_radius_px > 0.0) {
      int rr = static_cast<int>(std::ceil(st.ring_radius_px + spec.ring_halfwidth_px)) + 1;
      for (int y = std::max(0, static_cast<int>(st.center_y) - rr);
           y <= std::min(img.height - 1, static_cast<int>(st.center_y) + rr); ++y)
        for (int x = std::max(0, static_cast<int>(st.center_x) - rr);
             x <= std::min(img.width - 1, static_cast<int>(st.center_x) + rr); ++x) {
          double d = std::hypot(y + 0.5 - st.center_y, x + 0.5 - st.center_x);
          if (std::abs(d - st.ring_radius_px) <= spec.ring_halfwidth_px)
            detail::synth_textured_pixel(noise_seed, y, x, ring_color, img.pixel(y, x));
        }
    }
    out.structures.push_back(st);
  }
  return out;
}

inline ordered_json manifest_to_json(const std::string& slide_id, const SynthSpec& spec,
                                     const std::vector<SynthStructure>& structures) {
  ordered_json j;
  j["slide_id"] = slide_id;
  j["seed"] = spec.seed;
  ordered_json arr = ordered_json::array();
  for (const auto& s : structures) {
    ordered_json e;
    e["tile_row"] = s.tile_row;
    e["tile_col"] = s.tile_col;
    e["center_x"] = s.center_x;
    e["center_y"] = s.center_y;
    e["class"] = s.cls;
    e["disc_radius_px"] = s.disc_radius_px;
    e["ring_radius_px"] = s.ring_radius_px;
    arr.push_back(e);
  }
  j["structures"] = arr;
  return j;
}

// Recommended foreground settings for synthetic slides: the tinted tissue
// background must stay foreground so the context graph spans the slide.
inline ordered_json synth_foreground_config() {
  return ordered_json{{"mode", "fixed"}, {"threshold", 0.05}, {"min_tissue_fraction", 0.25}};
}

// Layout: slides/<id>.img, masks/<id>.lbl, manifests/<id>.json, dataset.json.
inline std::vector<std::string> generate_dataset(const SynthSpec& base_spec, int n_slides, std::uint64_t seed,
                                                 const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(dir) / "slides");
  fs::create_directories(fs::path(dir) / "masks");
  fs::create_directories(fs::path(dir) / "manifests");

  std::vector<std::string> ids;
  for (int i = 0; i < n_slides; ++i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "slide_%04d", i);
    std::string id(buf);
    SynthSpec spec = base_spec;
    spec.seed = derive_seed(seed, 1000 + static_cast<std::uint64_t>(i));
    SynthSlide s = generate_slide(spec, id);
    write_ppm((fs::path(dir) / "slides" / (id + ".img")).string(), s.slide.pixels);
    write_pgm((fs::path(dir) / "masks" / (id + ".lbl")).string(), s.mask);
    std::ofstream mf((fs::path(dir) / "manifests" / (id + ".json")).string());
    mf << manifest_to_json(id, spec, s.structures).dump(2) << "\n";
    ids.push_back(id);
  }

  ordered_json ds;
  ds["format"] = "gncaf-synth-dataset";
  ds["version"] = 1;
  SynthSpec stored = base_spec;
  stored.seed = seed;
  ds["spec"] = synth_spec_to_json(stored);
  ds["n_slides"] = n_slides;
  ds["classes"] = 4;
  ds["slide_ids"] = ids;
  ds["foreground"] = synth_foreground_config();
  std::ofstream df((fs::path(dir) / "dataset.json").string());
  df << ds.dump(2) << "\n";
  return ids;
}

}  // namespace gncaf
