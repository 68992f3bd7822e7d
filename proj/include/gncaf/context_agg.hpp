#pragma once

#include <memory>
#include <queue>
#include <string>
#include <vector>

#include "gncaf/autograd.hpp"
#include "gncaf/common.hpp"
#include "gncaf/graph.hpp"

namespace gncaf {

enum class Activation { relu, identity, softmax_rows };

inline Activation activation_from_string(const std::string& s) {
  if (s == "relu") return Activation::relu;
  if (s == "identity") return Activation::identity;
  if (s == "softmax_rows" || s == "softmax") return Activation::softmax_rows;
  throw ConfigError("unknown activation: " + s);
}

inline std::string to_string(Activation a) {
  switch (a) {
    case Activation::relu: return "relu";
    case Activation::identity: return "identity";
    default: return "softmax_rows";
  }
}

struct GcnParams {
  std::vector<int> weights;   // ParamStore ids, W^(t): D_t x D_{t+1}
  std::vector<int> dims;      // D_0 .. D_K
  Activation activation = Activation::relu;

  int hops() const { return static_cast<int>(weights.size()); }
};

inline GcnParams init_gcn(ParamStore& store, Rng& rng, int input_dim, const std::vector<int>& hidden_dims,
                          Activation activation = Activation::relu) {
  GcnParams p;
  p.activation = activation;
  p.dims.push_back(input_dim);
  int d_in = input_dim;
  for (std::size_t t = 0; t < hidden_dims.size(); ++t) {
    int d_out = hidden_dims[t];
    double std = std::sqrt(2.0 / (d_in + d_out));
    Matrix w(d_in, d_out);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = std * rng.normal();
    p.weights.push_back(store.add("gcn.w" + std::to_string(t), std::move(w)));
    p.dims.push_back(d_out);
    d_in = d_out;
  }
  return p;
}

inline Var apply_activation(Tape& t, Var x, Activation a) {
  switch (a) {
    case Activation::relu: return ag::relu(t, x);
    case Activation::identity: return x;
    default: return ag::softmax_rows(t, x);
  }
}

// One propagation step: sigma(A~ X W).
inline Var gcn_layer(Tape& t, Var x, const SparseMatrix& adj, Var w, Activation activation) {
  ensure_finite(t.val(x), "gcn_layer input");
  require(t.val(x).cols() == t.val(w).rows(), "gcn_layer: dim-chain mismatch");
  return apply_activation(t, ag::matmul(t, ag::spmm(t, adj, x), w), activation);
}

// X^(0) .. X^(K); level t is t propagation steps.
struct HopFeatureStack {
  std::vector<Var> levels;

  int hops() const { return static_cast<int>(levels.size()) - 1; }
};

inline HopFeatureStack aggregate_context(Tape& t, const SparseMatrix& adj, Var x0, const GcnParams& params) {
  require(t.val(x0).rows() == adj.n_rows, "aggregate_context: feature rows != node count");
  require(t.val(x0).cols() == params.dims.front(), "aggregate_context: dim-chain mismatch");
  HopFeatureStack stack;
  stack.levels.push_back(x0);
  Var x = x0;
  for (int k = 0; k < params.hops(); ++k) {
    x = gcn_layer(t, x, adj, t.param(params.weights[k]), params.activation);
    stack.levels.push_back(x);
  }
  return stack;
}

// Two-layer MLP projecting the concatenated hop features to the backbone
// token dim.
struct ContextMlpParams {
  int w1 = -1, b1 = -1, w2 = -1, b2 = -1;
  int input_dim = 0, hidden_dim = 0, output_dim = 0;
};

inline ContextMlpParams init_context_mlp(ParamStore& store, Rng& rng, int input_dim, int hidden_dim,
                                         int output_dim) {
  ContextMlpParams p;
  p.input_dim = input_dim;
  p.hidden_dim = hidden_dim;
  p.output_dim = output_dim;
  auto init = [&](const std::string& name, int r, int c) {
    double std = std::sqrt(2.0 / (r + c));
    Matrix w(r, c);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = std * rng.normal();
    return store.add(name, std::move(w));
  };
  p.w1 = init("context_mlp.w1", input_dim, hidden_dim);
  p.b1 = store.add("context_mlp.b1", Matrix::Zero(1, hidden_dim));
  p.w2 = init("context_mlp.w2", hidden_dim, output_dim);
  p.b2 = store.add("context_mlp.b2", Matrix::Zero(1, output_dim));
  return p;
}

// z_context = MLP(CAT(stack rows at node i)), levels concatenated 0..K.
inline Var context_vector(Tape& t, const HopFeatureStack& stack, int node, const ContextMlpParams& mlp) {
  require(!stack.levels.empty(), "context_vector: empty stack");
  require(node >= 0 && node < t.val(stack.levels[0]).rows(), "context_vector: bad node id");
  std::vector<Var> slices;
  slices.reserve(stack.levels.size());
  Eigen::Index total = 0;
  for (Var level : stack.levels) {
    slices.push_back(ag::select_row(t, level, node));
    total += t.val(level).cols();
  }
  require(total == mlp.input_dim, "context_vector: MLP input dim mismatch");
  Var cat = slices.size() == 1 ? slices[0] : ag::concat_cols(t, slices);
  Var h = ag::relu(t, ag::linear(t, cat, t.param(mlp.w1), t.param(mlp.b1)));
  return ag::linear(t, h, t.param(mlp.w2), t.param(mlp.b2));
}

// --- Table 2 aggregator variants (ADD / MEAN / MSA) ---

enum class AggregatorMode { gcn, add, mean, msa };

inline AggregatorMode aggregator_from_string(const std::string& s) {
  if (s == "gcn") return AggregatorMode::gcn;
  if (s == "add") return AggregatorMode::add;
  if (s == "mean") return AggregatorMode::mean;
  if (s == "msa") return AggregatorMode::msa;
  throw ConfigError("unknown aggregator mode: " + s);
}

inline std::string to_string(AggregatorMode m) {
  switch (m) {
    case AggregatorMode::gcn: return "gcn";
    case AggregatorMode::add: return "add";
    case AggregatorMode::mean: return "mean";
    default: return "msa";
  }
}

struct VariantAggregatorParams {
  int wq = -1, wk = -1, wv = -1, wo = -1;  // msa only
  int heads = 4;
  int dim = 0;
};

inline VariantAggregatorParams init_variant_aggregator(ParamStore& store, Rng& rng, int dim, int heads) {
  require_config(dim % heads == 0, "variant msa: feature dim not divisible by heads");
  VariantAggregatorParams p;
  p.heads = heads;
  p.dim = dim;
  auto init = [&](const std::string& name) {
    double std = std::sqrt(1.0 / dim);
    Matrix w(dim, dim);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = std * rng.normal();
    return store.add(name, std::move(w));
  };
  p.wq = init("agg_msa.wq");
  p.wk = init("agg_msa.wk");
  p.wv = init("agg_msa.wv");
  p.wo = init("agg_msa.wo");
  return p;
}

// Structural neighbor lists of a propagation matrix (nonzeros minus diagonal).
inline std::vector<std::vector<int>> neighbor_lists(const SparseMatrix& adj) {
  std::vector<std::vector<int>> nb(adj.n_rows);
  for (std::size_t k = 0; k < adj.value.size(); ++k)
    if (adj.row[k] != adj.col[k]) nb[adj.row[k]].push_back(adj.col[k]);
  return nb;
}

// Node ids within hop distance <= k, sorted; includes the node itself.
inline std::vector<int> hop_neighborhood(const std::vector<std::vector<int>>& neighbors, int node, int k) {
  std::vector<int> dist = bfs_distances(neighbors, node);
  std::vector<int> out;
  for (int v = 0; v < static_cast<int>(dist.size()); ++v)
    if (dist[v] != kUnreachable && dist[v] <= k) out.push_back(v);
  return out;
}

// Replaces GCN propagation for the Table 2 comparison: per node i the
// hop-limited set S_i = {x_j : d(i,j) <= k} is reduced by sum, mean, or one
// multi-head attention layer with x_i as the query.
inline Var aggregate_context_variant(Tape& t, const SparseMatrix& adj, Var x0, int k, AggregatorMode mode,
                                     const VariantAggregatorParams& params) {
  require(k >= 0, "aggregate_context_variant: k must be >= 0");
  require(t.val(x0).rows() == adj.n_rows, "aggregate_context_variant: feature rows != node count");
  std::vector<std::vector<int>> nb = neighbor_lists(adj);
  int n = adj.n_rows;

  if (mode == AggregatorMode::add || mode == AggregatorMode::mean) {
    std::vector<std::tuple<int, int, double>> triplets;
    for (int i = 0; i < n; ++i) {
      std::vector<int> s = hop_neighborhood(nb, i, k);
      double w = mode == AggregatorMode::mean ? 1.0 / static_cast<double>(s.size()) : 1.0;
      for (int j : s) triplets.emplace_back(i, j, w);
    }
    return ag::spmm(t, SparseMatrix::from_triplets(n, n, std::move(triplets)), x0);
  }

  if (mode == AggregatorMode::msa) {
    int d = params.dim;
    require(t.val(x0).cols() == d, "aggregate_context_variant: msa dim mismatch");
    int dh = d / params.heads;
    Var q_all = ag::matmul(t, x0, t.param(params.wq));
    Var k_all = ag::matmul(t, x0, t.param(params.wk));
    Var v_all = ag::matmul(t, x0, t.param(params.wv));
    std::vector<Var> rows;
    rows.reserve(n);
    for (int i = 0; i < n; ++i) {
      auto sel = std::make_shared<const std::vector<int>>(hop_neighborhood(nb, i, k));
      Var q_i = ag::select_row(t, q_all, i);
      Var k_s = ag::gather_rows(t, k_all, sel);
      Var v_s = ag::gather_rows(t, v_all, sel);
      std::vector<Var> heads;
      heads.reserve(params.heads);
      for (int h = 0; h < params.heads; ++h) {
        Var qh = ag::slice_cols(t, q_i, h * dh, dh);
        Var kh = ag::slice_cols(t, k_s, h * dh, dh);
        Var vh = ag::slice_cols(t, v_s, h * dh, dh);
        Var scores = ag::scale(t, ag::matmul(t, qh, ag::transpose(t, kh)), 1.0 / std::sqrt(dh));
        heads.push_back(ag::matmul(t, ag::softmax_rows(t, scores), vh));
      }
      Var merged = heads.size() == 1 ? heads[0] : ag::concat_cols(t, heads);
      rows.push_back(ag::matmul(t, merged, t.param(params.wo)));
    }
    return rows.size() == 1 ? rows[0] : ag::concat_rows(t, rows);
  }

  throw ConfigError("aggregate_context_variant: unknown mode");
}

}  // namespace gncaf
