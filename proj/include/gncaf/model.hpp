#pragma once

#include <cstring>
#include <fstream>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gncaf/backbone.hpp"
#include "gncaf/context_agg.hpp"
#include "gncaf/encoders.hpp"
#include "gncaf/fusion.hpp"
#include "gncaf/graph.hpp"

namespace gncaf {

struct ModelConfig {
  int classes = 4;
  int patch_size = 64;
  int hops = 3;
  int feature_dim = 64;
  std::vector<int> gcn_hidden = {128, 128, 128};  // sized to hops at init
  std::string gcn_activation = "relu";
  std::string aggregator = "gcn";
  int aggregator_heads = 4;
  int mlp_hidden = 128;
  int token_stride = 8;
  int token_dim = 64;
  std::string fusion = "msa";
  int fusion_layers = 1;
  int fusion_heads = 8;
  bool fusion_ffn = false;
  int stem_channels = 12;
  std::string encoder_mode = "frozen_archive";
  bool l2_normalize_features = false;
  std::vector<int> encoder_channels = {8, 16, 32};
  std::uint64_t init_seed = 0;
};

inline ordered_json model_config_to_json(const ModelConfig& c) {
  ordered_json j;
  j["classes"] = c.classes;
  j["patch_size"] = c.patch_size;
  j["hops"] = c.hops;
  j["feature_dim"] = c.feature_dim;
  j["gcn_hidden"] = c.gcn_hidden;
  j["gcn_activation"] = c.gcn_activation;
  j["aggregator"] = c.aggregator;
  j["aggregator_heads"] = c.aggregator_heads;
  j["mlp_hidden"] = c.mlp_hidden;
  j["token_stride"] = c.token_stride;
  j["token_dim"] = c.token_dim;
  j["fusion"] = c.fusion;
  j["fusion_layers"] = c.fusion_layers;
  j["fusion_heads"] = c.fusion_heads;
  j["fusion_ffn"] = c.fusion_ffn;
  j["stem_channels"] = c.stem_channels;
  j["encoder_mode"] = c.encoder_mode;
  j["l2_normalize_features"] = c.l2_normalize_features;
  j["encoder_channels"] = c.encoder_channels;
  j["init_seed"] = c.init_seed;
  return j;
}

inline ModelConfig model_config_from_json(const ordered_json& j) {
  ModelConfig c;
  c.classes = j.at("classes").get<int>();
  c.patch_size = j.at("patch_size").get<int>();
  c.hops = j.at("hops").get<int>();
  c.feature_dim = j.at("feature_dim").get<int>();
  c.gcn_hidden = j.at("gcn_hidden").get<std::vector<int>>();
  c.gcn_activation = j.at("gcn_activation").get<std::string>();
  c.aggregator = j.at("aggregator").get<std::string>();
  c.aggregator_heads = j.at("aggregator_heads").get<int>();
  c.mlp_hidden = j.at("mlp_hidden").get<int>();
  c.token_stride = j.at("token_stride").get<int>();
  c.token_dim = j.at("token_dim").get<int>();
  c.fusion = j.at("fusion").get<std::string>();
  c.fusion_layers = j.at("fusion_layers").get<int>();
  c.fusion_heads = j.at("fusion_heads").get<int>();
  c.fusion_ffn = j.at("fusion_ffn").get<bool>();
  c.stem_channels = j.at("stem_channels").get<int>();
  c.encoder_mode = j.at("encoder_mode").get<std::string>();
  c.l2_normalize_features = j.at("l2_normalize_features").get<bool>();
  c.encoder_channels = j.at("encoder_channels").get<std::vector<int>>();
  c.init_seed = j.at("init_seed").get<std::uint64_t>();
  return c;
}

// Full parameter bundle: patch encoder, GCN (or variant aggregator),
// context MLP, fusion block, backbone.
struct GncafModel {
  ModelConfig config;
  ParamStore store;
  PatchEncoderParams encoder;
  GcnParams gcn;
  VariantAggregatorParams agg_variant;
  ContextMlpParams context_mlp;
  FusionParams fusion;
  MiniBackbone backbone;

  AggregatorMode aggregator_mode() const { return aggregator_from_string(config.aggregator); }
  EncoderMode encoder_mode() const { return encoder_mode_from_string(config.encoder_mode); }
};

inline GncafModel init_model(const ModelConfig& config_in, std::uint64_t seed) {
  GncafModel m;
  m.config = config_in;
  m.config.init_seed = seed;
  ModelConfig& c = m.config;
  require_config(c.hops >= 0, "hops must be >= 0");
  c.gcn_hidden.resize(c.hops, c.gcn_hidden.empty() ? 128 : c.gcn_hidden.back());

  Rng rng(derive_seed(seed, 0xA11));
  m.encoder = init_patch_encoder(m.store, rng, c.feature_dim, c.encoder_channels);

  AggregatorMode agg = aggregator_from_string(c.aggregator);
  int mlp_input = c.feature_dim;
  if (agg == AggregatorMode::gcn) {
    m.gcn = init_gcn(m.store, rng, c.feature_dim, c.gcn_hidden, activation_from_string(c.gcn_activation));
    mlp_input = std::accumulate(m.gcn.dims.begin(), m.gcn.dims.end(), 0);
  } else {
    if (agg == AggregatorMode::msa)
      m.agg_variant = init_variant_aggregator(m.store, rng, c.feature_dim, c.aggregator_heads);
    // variants feed [X^(0), variant output] into the MLP
    mlp_input = c.hops == 0 ? c.feature_dim : 2 * c.feature_dim;
  }
  m.context_mlp = init_context_mlp(m.store, rng, mlp_input, c.mlp_hidden, c.token_dim);

  int patch_tokens = (c.patch_size / c.token_stride) * (c.patch_size / c.token_stride);
  m.fusion = init_fusion(m.store, rng, fusion_from_string(c.fusion), patch_tokens, c.token_dim,
                         c.fusion_layers, c.fusion_heads, c.fusion_ffn);
  m.backbone = MiniBackbone(m.store, rng, c.token_stride, c.token_dim, c.classes, c.stem_channels);
  return m;
}

inline Matrix ego_features(const MatrixF& slide_features, const EgoSubgraph& ego) {
  Matrix x(static_cast<Eigen::Index>(ego.local_to_global.size()), slide_features.cols());
  for (std::size_t l = 0; l < ego.local_to_global.size(); ++l)
    x.row(static_cast<Eigen::Index>(l)) = slide_features.row(ego.local_to_global[l]).cast<double>();
  return x;
}

// Context vector of the ego center: GCN hop stack or a Table 2 variant,
// then the Eq. 3 MLP.
inline Var context_vector_for_ego(Tape& t, const GncafModel& m, const EgoSubgraph& ego, Var x0) {
  AggregatorMode agg = m.aggregator_mode();
  HopFeatureStack stack;
  if (agg == AggregatorMode::gcn) {
    stack = aggregate_context(t, ego.normalized_adjacency, x0, m.gcn);
  } else {
    stack.levels.push_back(x0);
    if (m.config.hops > 0)
      stack.levels.push_back(aggregate_context_variant(t, ego.normalized_adjacency, x0, m.config.hops, agg,
                                                       m.agg_variant));
  }
  return context_vector(t, stack, ego.center_local_id, m.context_mlp);
}

// End-to-end assembly: logits = decode(select(fuse(encode(patch), z_context))).
// Node features come either from a frozen per-slide feature matrix or from
// the trainable patch encoder run over the ego patches.
inline Var gncaf_forward(Tape& t, const GncafModel& m, const EgoSubgraph& ego, const MatrixF* frozen_features,
                         const std::vector<ImageU8>* ego_patches, const ImageU8& target_patch) {
  require(ego.radius >= m.config.hops, "insufficient context radius");

  Var x0;
  if (m.encoder_mode() == EncoderMode::frozen_archive) {
    require(frozen_features != nullptr, "gncaf_forward: frozen mode requires node features");
    x0 = t.input(ego_features(*frozen_features, ego));
  } else {
    require(ego_patches != nullptr, "gncaf_forward: trainable mode requires ego patches");
    require(ego_patches->size() == ego.local_to_global.size(), "gncaf_forward: ego patch count mismatch");
    std::vector<Var> rows;
    rows.reserve(ego_patches->size());
    for (const ImageU8& p : *ego_patches) rows.push_back(encode_patch(t, m.encoder, p));
    x0 = rows.size() == 1 ? rows[0] : ag::concat_rows(t, rows);
  }

  Var z_context = context_vector_for_ego(t, m, ego, x0);
  Var z_local = m.backbone.encode(t, target_patch);
  TokenSequence seq = fuse(t, z_local, z_context, m.fusion);
  Var tokens = seq.fused ? select_local_tokens(t, seq) : seq.tokens;
  return m.backbone.decode(t, tokens, target_patch.height, target_patch.width);
}

// --- checkpoint container ---
// "GNCK" magic, version, JSON header (config + tensor directory), then raw
// float64 little-endian tensor data in directory order.

namespace detail {

inline void put_u64(std::ostream& out, std::uint64_t v) {
  put_u32(out, static_cast<std::uint32_t>(v));
  put_u32(out, static_cast<std::uint32_t>(v >> 32));
}

inline std::uint64_t get_u64(std::istream& in) {
  std::uint64_t lo = get_u32(in);
  std::uint64_t hi = get_u32(in);
  return lo | (hi << 32);
}

inline void put_f64(std::ostream& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  put_u64(out, bits);
}

inline double get_f64(std::istream& in) {
  std::uint64_t bits = get_u64(in);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const GncafModel& model,
                            const ordered_json& extra = ordered_json::object()) {
  ordered_json header;
  header["format"] = "gncaf-checkpoint";
  header["version"] = 1;
  header["config"] = model_config_to_json(model.config);
  if (!extra.empty()) header["extra"] = extra;
  ordered_json tensors = ordered_json::array();
  for (int i = 0; i < model.store.size(); ++i) {
    ordered_json t;
    t["name"] = model.store.name(i);
    t["rows"] = model.store.value(i).rows();
    t["cols"] = model.store.value(i).cols();
    tensors.push_back(t);
  }
  header["tensors"] = tensors;
  std::string header_str = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open for writing: " + path);
  out.write("GNCK", 4);
  detail::put_u32(out, 1);
  detail::put_u64(out, header_str.size());
  out.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
  for (int i = 0; i < model.store.size(); ++i) {
    const Matrix& v = model.store.value(i);
    for (Eigen::Index k = 0; k < v.size(); ++k) detail::put_f64(out, v.data()[k]);
  }
  if (!out) throw DataError("write failed: " + path);
}

inline GncafModel load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open: " + path);
  char magic[4] = {};
  in.read(magic, 4);
  if (in.gcount() != 4 || std::memcmp(magic, "GNCK", 4) != 0)
    throw DataError("not a gncaf checkpoint: " + path);
  std::uint32_t version = detail::get_u32(in);
  if (version != 1) throw DataError("unsupported checkpoint version: " + std::to_string(version));
  std::uint64_t header_len = detail::get_u64(in);
  std::string header_str(header_len, '\0');
  in.read(header_str.data(), static_cast<std::streamsize>(header_len));
  if (in.gcount() != static_cast<std::streamsize>(header_len)) throw DataError("truncated checkpoint: " + path);
  ordered_json header = ordered_json::parse(header_str);

  GncafModel model = init_model(model_config_from_json(header.at("config")),
                                header.at("config").at("init_seed").get<std::uint64_t>());
  const auto& tensors = header.at("tensors");
  require(static_cast<int>(tensors.size()) == model.store.size(), "checkpoint: tensor count mismatch");
  for (int i = 0; i < model.store.size(); ++i) {
    const auto& t = tensors[i];
    require(t.at("name").get<std::string>() == model.store.name(i), "checkpoint: tensor name mismatch");
    Eigen::Index rows = t.at("rows").get<Eigen::Index>();
    Eigen::Index cols = t.at("cols").get<Eigen::Index>();
    require(rows == model.store.value(i).rows() && cols == model.store.value(i).cols(),
            "checkpoint: tensor shape mismatch for " + model.store.name(i));
    Matrix& v = model.store.value(i);
    for (Eigen::Index k = 0; k < v.size(); ++k) v.data()[k] = detail::get_f64(in);
    if (!in) throw DataError("truncated checkpoint: " + path);
  }
  return model;
}

}  // namespace gncaf
