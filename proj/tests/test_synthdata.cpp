#include <filesystem>
#include <fstream>

#include <catch2/catch_amalgamated.hpp>

#include "gncaf/graph.hpp"
#include "gncaf/synthdata.hpp"

#include "helpers.hpp"

using namespace gncaf;

namespace {

SynthSpec small_spec(std::uint64_t seed, int forced_class = 0) {
  SynthSpec s;
  s.rows = 12;
  s.cols = 12;
  s.tile_size_px = 16;
  s.n_structures = 2;
  s.noise_level = 6.0;
  s.forced_class = forced_class;
  s.seed = seed;
  return s;
}

ImageU8 crop_tile(const ImageU8& img, int r, int c, int tile) {
  ImageU8 out(tile, tile);
  for (int y = 0; y < tile; ++y)
    std::copy_n(img.pixel(r * tile + y, c * tile), static_cast<std::size_t>(tile) * 3, out.pixel(y, 0));
  return out;
}

}  // namespace

TEST_CASE("zero structures give an all-background mask") {
  SynthSpec spec = small_spec(1);
  spec.n_structures = 0;
  SynthSlide s = generate_slide(spec, "s");
  for (auto v : s.mask.labels) CHECK(v == 0);
}

TEST_CASE("same seed regenerates bit-identical slide and mask") {
  SynthSlide a = generate_slide(small_spec(7), "s");
  SynthSlide b = generate_slide(small_spec(7), "s");
  CHECK(a.slide.pixels == b.slide.pixels);
  CHECK(a.mask == b.mask);
}

TEST_CASE("center tiles are pixel-identical across forced classes (generator oracle)") {
  for (std::uint64_t seed : {11ull, 12ull, 13ull}) {
    SynthSlide c1 = generate_slide(small_spec(seed, 1), "s");
    SynthSlide c2 = generate_slide(small_spec(seed, 2), "s");
    SynthSlide c3 = generate_slide(small_spec(seed, 3), "s");
    REQUIRE(c2.structures.size() == c1.structures.size());
    for (std::size_t i = 0; i < c2.structures.size(); ++i) {
      const SynthStructure& st = c2.structures[i];
      ImageU8 t1 = crop_tile(c1.slide.pixels, st.tile_row, st.tile_col, 16);
      ImageU8 t2 = crop_tile(c2.slide.pixels, st.tile_row, st.tile_col, 16);
      ImageU8 t3 = crop_tile(c3.slide.pixels, st.tile_row, st.tile_col, 16);
      CHECK(t1 == t2);
      CHECK(t2 == t3);
    }
  }
}

TEST_CASE("ring context lands at the intended hop distance") {
  // Tiles whose pixels differ from the ring-free class-1 render are exactly
  // the ring tiles; their grid (Manhattan = hop) distance from the center
  // must start at 1 for class 2 and at 2 for class 3.
  for (std::uint64_t seed : {21ull, 22ull}) {
    SynthSlide c1 = generate_slide(small_spec(seed, 1), "s");
    for (int cls : {2, 3}) {
      SynthSlide cs = generate_slide(small_spec(seed, cls), "s");
      for (const SynthStructure& st : cs.structures) {
        int min_dist = 1000;
        for (int r = 0; r < 12; ++r)
          for (int c = 0; c < 12; ++c) {
            if (crop_tile(cs.slide.pixels, r, c, 16) == crop_tile(c1.slide.pixels, r, c, 16)) continue;
            min_dist = std::min(min_dist, std::abs(r - st.tile_row) + std::abs(c - st.tile_col));
          }
        CHECK(min_dist == (cls == 2 ? 1 : 2));
      }
    }
  }
}

TEST_CASE("label geometry: every labeled pixel is inside a manifest disc and every disc is labeled") {
  SynthSlide s = generate_slide(small_spec(31), "s");
  for (int y = 0; y < s.mask.height; ++y)
    for (int x = 0; x < s.mask.width; ++x) {
      if (s.mask.at(y, x) == 0) continue;
      bool inside = false;
      for (const SynthStructure& st : s.structures)
        if (std::hypot(y + 0.5 - st.center_y, x + 0.5 - st.center_x) <= st.disc_radius_px &&
            st.cls == s.mask.at(y, x))
          inside = true;
      CHECK(inside);
    }
  for (const SynthStructure& st : s.structures) {
    int labeled = 0;
    for (int y = 0; y < s.mask.height; ++y)
      for (int x = 0; x < s.mask.width; ++x)
        if (s.mask.at(y, x) == st.cls &&
            std::hypot(y + 0.5 - st.center_y, x + 0.5 - st.center_x) <= st.disc_radius_px)
          ++labeled;
    CHECK(labeled > 0);
  }
}

TEST_CASE("discs stay inside their own tile") {
  SynthSlide s = generate_slide(small_spec(32), "s");
  for (const SynthStructure& st : s.structures)
    for (int y = 0; y < s.mask.height; ++y)
      for (int x = 0; x < s.mask.width; ++x)
        if (s.mask.at(y, x) != 0 &&
            std::hypot(y + 0.5 - st.center_y, x + 0.5 - st.center_x) <= st.disc_radius_px) {
          CHECK(y / 16 == st.tile_row);
          CHECK(x / 16 == st.tile_col);
        }
}

TEST_CASE("recommended foreground config keeps the whole grid connected") {
  SynthSlide s = generate_slide(small_spec(33), "s");
  ordered_json fg = synth_foreground_config();
  ForegroundResult res = compute_foreground_mask(s.slide, 16, ThresholdMode::fixed,
                                                 fg["min_tissue_fraction"].get<double>(),
                                                 fg["threshold"].get<double>());
  for (auto v : res.mask) CHECK(v == 1);
}

TEST_CASE("infeasible packing errors after bounded retries") {
  SynthSpec spec = small_spec(34);
  spec.n_structures = 40;
  CHECK_THROWS_AS(generate_slide(spec, "s"), DataError);
}

TEST_CASE("generate_dataset writes complete, reproducible triples") {
  namespace fs = std::filesystem;
  SynthSpec spec = small_spec(0);
  std::string dir_a = test::make_temp_dir("synth_a");
  std::string dir_b = test::make_temp_dir("synth_b");
  std::vector<std::string> ids = generate_dataset(spec, 3, 77, dir_a);
  generate_dataset(spec, 3, 77, dir_b);

  CHECK(ids.size() == 3);
  for (const auto& id : ids) {
    CHECK(fs::exists(fs::path(dir_a) / "slides" / (id + ".img")));
    CHECK(fs::exists(fs::path(dir_a) / "masks" / (id + ".lbl")));
    CHECK(fs::exists(fs::path(dir_a) / "manifests" / (id + ".json")));
  }
  CHECK(fs::exists(fs::path(dir_a) / "dataset.json"));

  // Distinct derived seeds: slides pairwise different.
  ImageU8 s0 = read_ppm((fs::path(dir_a) / "slides" / "slide_0000.img").string());
  ImageU8 s1 = read_ppm((fs::path(dir_a) / "slides" / "slide_0001.img").string());
  CHECK_FALSE(s0 == s1);

  // Regeneration with the same top seed is byte-identical.
  for (const auto& rel : {"slides/slide_0002.img", "masks/slide_0002.lbl", "dataset.json"}) {
    std::ifstream fa((fs::path(dir_a) / rel).string(), std::ios::binary);
    std::ifstream fb((fs::path(dir_b) / rel).string(), std::ios::binary);
    std::string ba((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
    std::string bb((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
    CHECK(ba == bb);
  }
}
