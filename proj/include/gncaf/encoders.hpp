#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "gncaf/autograd.hpp"
#include "gncaf/common.hpp"
#include "gncaf/image.hpp"

namespace gncaf {

enum class EncoderMode { trainable_cnn, frozen_archive };

inline EncoderMode encoder_mode_from_string(const std::string& s) {
  if (s == "trainable_cnn" || s == "finetune" || s == "trainable") return EncoderMode::trainable_cnn;
  if (s == "frozen_archive" || s == "frozen") return EncoderMode::frozen_archive;
  throw ConfigError("unknown encoder mode: " + s);
}

struct PatchEncoderConfig {
  EncoderMode mode = EncoderMode::frozen_archive;
  int feature_dim = 64;
  bool trainable = false;       // frozen_archive implies false
  bool l2_normalize = false;    // frozen features pass through unnormalized by default
};

// Small trainable stand-in for a foundation encoder: three stride-2 conv
// stages with ReLU, global average pool, linear head. ReLU is zero at zero,
// so all-zero parameters give all-zero features.
struct PatchEncoderParams {
  std::vector<int> conv_w, conv_b;  // ParamStore ids per stage
  int head_w = -1, head_b = -1;
  std::vector<int> channels;  // per-stage output channels
  int feature_dim = 0;
};

inline PatchEncoderParams init_patch_encoder(ParamStore& store, Rng& rng, int feature_dim,
                                             const std::vector<int>& channels = {8, 16, 32}) {
  PatchEncoderParams p;
  p.channels = channels;
  p.feature_dim = feature_dim;
  int in_c = 3;
  for (std::size_t s = 0; s < channels.size(); ++s) {
    int out_c = channels[s];
    double std = std::sqrt(2.0 / (in_c * 9.0));
    Matrix w(out_c, in_c * 9);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = std * rng.normal();
    p.conv_w.push_back(store.add("patch_encoder.conv" + std::to_string(s) + ".w", std::move(w)));
    p.conv_b.push_back(store.add("patch_encoder.conv" + std::to_string(s) + ".b", Matrix::Zero(out_c, 1)));
    in_c = out_c;
  }
  double std = std::sqrt(1.0 / in_c);
  Matrix hw(in_c, feature_dim);
  for (Eigen::Index i = 0; i < hw.size(); ++i) hw.data()[i] = std * rng.normal();
  p.head_w = store.add("patch_encoder.head.w", std::move(hw));
  p.head_b = store.add("patch_encoder.head.b", Matrix::Zero(1, feature_dim));
  return p;
}

inline Matrix patch_to_input(const ImageU8& patch) {
  Matrix x(3, static_cast<Eigen::Index>(patch.height) * patch.width);
  for (int y = 0; y < patch.height; ++y)
    for (int xpx = 0; xpx < patch.width; ++xpx) {
      const std::uint8_t* px = patch.pixel(y, xpx);
      for (int ch = 0; ch < 3; ++ch) x(ch, static_cast<Eigen::Index>(y) * patch.width + xpx) = px[ch] / 255.0;
    }
  return x;
}

// 1 x feature_dim encoding of one patch on the given tape.
inline Var encode_patch(Tape& t, const PatchEncoderParams& p, const ImageU8& patch) {
  Var x = t.input(patch_to_input(patch));
  int c = 3, h = patch.height, w = patch.width;
  for (std::size_t s = 0; s < p.channels.size(); ++s) {
    ag::ConvShape shape{c, h, w, p.channels[s], 3, 2, 1};
    x = ag::relu(t, ag::conv2d(t, x, t.param(p.conv_w[s]), t.param(p.conv_b[s]), shape));
    c = p.channels[s];
    h = shape.out_h();
    w = shape.out_w();
  }
  Var pooled = ag::transpose(t, ag::mean_cols(t, x));  // 1 x channels
  return ag::linear(t, pooled, t.param(p.head_w), t.param(p.head_b));
}

// Forward-only batch encoding; row i is patch i. Output is float32, the
// unit features travel in (matches the archive payload bit-for-bit).
inline MatrixF encode_patches(const std::vector<ImageU8>& patches, const PatchEncoderConfig& config,
                              const PatchEncoderParams& params, ParamStore& store) {
  MatrixF out(static_cast<Eigen::Index>(patches.size()), config.feature_dim);
  for (std::size_t i = 0; i < patches.size(); ++i) {
    require(patches[i].height == patches[0].height && patches[i].width == patches[0].width,
            "encode_patches: patch size mismatch");
    Tape t(&store);
    Var f = encode_patch(t, params, patches[i]);
    Matrix row = t.val(f);
    if (config.l2_normalize) {
      double norm = row.norm();
      if (norm > 0.0) row /= norm;
    }
    out.row(static_cast<Eigen::Index>(i)) = row.row(0).cast<float>();
  }
  require(out.allFinite(), "encode_patches: non-finite features");
  return out;
}

// --- feature archive ---
// Layout (all little-endian): magic "GNCF", version u32=1, N u32, D u32,
// rows u32, cols u32, N x (row u32, col u32), N*D float32 row-major.

class ArchiveError : public DataError {
public:
  enum class Code { bad_magic, bad_version, truncated };
  ArchiveError(Code code, const std::string& msg) : DataError(msg), code(code) {}
  Code code;
};

namespace detail {

inline void put_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (in.gcount() != 4) throw ArchiveError(ArchiveError::Code::truncated, "truncated archive");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline void put_f32(std::ostream& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(out, bits);
}

inline float get_f32(std::istream& in) {
  std::uint32_t bits = get_u32(in);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

}  // namespace detail

inline void write_feature_archive(const std::string& path, const MatrixF& features,
                                  const std::vector<std::pair<int, int>>& coords, int grid_rows, int grid_cols) {
  require(features.allFinite(), "write_feature_archive: non-finite features");
  require(static_cast<Eigen::Index>(coords.size()) == features.rows(),
          "write_feature_archive: coords/feature row mismatch");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open for writing: " + path);
  out.write("GNCF", 4);
  detail::put_u32(out, 1);
  detail::put_u32(out, static_cast<std::uint32_t>(features.rows()));
  detail::put_u32(out, static_cast<std::uint32_t>(features.cols()));
  detail::put_u32(out, static_cast<std::uint32_t>(grid_rows));
  detail::put_u32(out, static_cast<std::uint32_t>(grid_cols));
  for (const auto& [r, c] : coords) {
    detail::put_u32(out, static_cast<std::uint32_t>(r));
    detail::put_u32(out, static_cast<std::uint32_t>(c));
  }
  for (Eigen::Index i = 0; i < features.rows(); ++i)
    for (Eigen::Index j = 0; j < features.cols(); ++j) detail::put_f32(out, features(i, j));
  if (!out) throw DataError("write failed: " + path);
}

struct FeatureArchive {
  MatrixF features;
  std::vector<std::pair<int, int>> coords;
  int grid_rows = 0;
  int grid_cols = 0;
};

inline FeatureArchive load_feature_archive(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open: " + path);
  char magic[4] = {};
  in.read(magic, 4);
  if (in.gcount() != 4 || std::memcmp(magic, "GNCF", 4) != 0)
    throw ArchiveError(ArchiveError::Code::bad_magic, "not a feature archive: " + path);
  std::uint32_t version = detail::get_u32(in);
  if (version != 1)
    throw ArchiveError(ArchiveError::Code::bad_version,
                       "unsupported archive version " + std::to_string(version) + ": " + path);
  std::uint32_t n = detail::get_u32(in);
  std::uint32_t d = detail::get_u32(in);
  FeatureArchive arc;
  arc.grid_rows = static_cast<int>(detail::get_u32(in));
  arc.grid_cols = static_cast<int>(detail::get_u32(in));
  arc.coords.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    int r = static_cast<int>(detail::get_u32(in));
    int c = static_cast<int>(detail::get_u32(in));
    arc.coords.emplace_back(r, c);
  }
  arc.features.resize(n, d);
  for (std::uint32_t i = 0; i < n; ++i)
    for (std::uint32_t j = 0; j < d; ++j) arc.features(i, j) = detail::get_f32(in);
  return arc;
}

}  // namespace gncaf
