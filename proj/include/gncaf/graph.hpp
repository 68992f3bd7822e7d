#pragma once

#include <algorithm>
#include <cmath>
#include <queue>
#include <tuple>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "gncaf/common.hpp"
#include "gncaf/tiling.hpp"

namespace gncaf {

inline constexpr int kUnreachable = -1;

// Sparse matrix stored as a sorted coordinate list plus row offsets.
// Not necessarily symmetric; multiply/transpose-multiply work off the
// same entry list.
struct SparseMatrix {
  int n_rows = 0;
  int n_cols = 0;
  std::vector<int> row;      // sorted by (row, col)
  std::vector<int> col;
  std::vector<double> value;
  std::vector<int> row_ptr;  // size n_rows+1

  std::size_t nnz() const { return value.size(); }

  static SparseMatrix from_triplets(int n_rows, int n_cols, std::vector<std::tuple<int, int, double>> triplets) {
    std::sort(triplets.begin(), triplets.end());
    SparseMatrix m;
    m.n_rows = n_rows;
    m.n_cols = n_cols;
    m.row.reserve(triplets.size());
    m.col.reserve(triplets.size());
    m.value.reserve(triplets.size());
    for (const auto& [r, c, v] : triplets) {
      m.row.push_back(r);
      m.col.push_back(c);
      m.value.push_back(v);
    }
    m.row_ptr.assign(n_rows + 1, 0);
    for (int r : m.row) m.row_ptr[r + 1]++;
    for (int i = 0; i < n_rows; ++i) m.row_ptr[i + 1] += m.row_ptr[i];
    return m;
  }

  // y = this * x. Row-wise products touch only structural entries, so
  // values outside a row's neighborhood cannot perturb the result even at
  // the bit level.
  Matrix multiply(const Matrix& x) const {
    require(x.rows() == n_cols, "sparse multiply: dimension mismatch");
    Matrix y = Matrix::Zero(n_rows, x.cols());
    for (int r = 0; r < n_rows; ++r)
      for (int k = row_ptr[r]; k < row_ptr[r + 1]; ++k)
        y.row(r) += value[k] * x.row(col[k]);
    return y;
  }

  // y = this^T * x.
  Matrix multiply_transposed(const Matrix& x) const {
    require(x.rows() == n_rows, "sparse multiply_transposed: dimension mismatch");
    Matrix y = Matrix::Zero(n_cols, x.cols());
    for (std::size_t k = 0; k < value.size(); ++k) y.row(col[k]) += value[k] * x.row(row[k]);
    return y;
  }

  Matrix to_dense() const {
    Matrix d = Matrix::Zero(n_rows, n_cols);
    for (std::size_t k = 0; k < value.size(); ++k) d(row[k], col[k]) += value[k];
    return d;
  }
};

// A~ = D^{-1/2} (A + I) D^{-1/2} with D the degree matrix of A + I.
inline SparseMatrix normalize_adjacency(const std::vector<std::pair<int, int>>& edges, int n) {
  std::vector<int> degree(n, 1);  // self loop
  for (const auto& [i, j] : edges) {
    require(i >= 0 && i < n && j >= 0 && j < n && i != j, "normalize_adjacency: malformed edge");
    degree[i]++;
    degree[j]++;
  }
  std::vector<std::tuple<int, int, double>> triplets;
  triplets.reserve(2 * edges.size() + n);
  for (int i = 0; i < n; ++i) triplets.emplace_back(i, i, 1.0 / degree[i]);
  for (const auto& [i, j] : edges) {
    double w = 1.0 / std::sqrt(static_cast<double>(degree[i]) * static_cast<double>(degree[j]));
    triplets.emplace_back(i, j, w);
    triplets.emplace_back(j, i, w);
  }
  return SparseMatrix::from_triplets(n, n, std::move(triplets));
}

// Context graph over foreground tiles: 4-connectivity, symmetric-normalized
// adjacency, full-graph degrees.
struct ContextGraph {
  int n_nodes = 0;
  std::vector<std::pair<int, int>> edges;      // i < j, sorted
  std::vector<int> degrees_with_self_loop;     // degree in A + I
  SparseMatrix normalized_adjacency;
  std::vector<std::pair<int, int>> grid_coords;  // node id -> (row, col)
  std::vector<std::vector<int>> neighbors;       // adjacency list, no self

  const std::vector<int>& neighbors_of(int i) const { return neighbors[i]; }
};

inline ContextGraph build_context_graph(const TileGrid& grid) {
  if (grid.n_nodes() == 0) throw DataError("empty graph");
  ContextGraph g;
  g.n_nodes = grid.n_nodes();
  g.grid_coords = grid.coords;
  for (int i = 0; i < g.n_nodes; ++i) {
    auto [r, c] = grid.coords[i];
    // Row-major node order: right and down neighbors always have larger ids.
    if (c + 1 < grid.cols && grid.is_foreground(r, c + 1)) g.edges.emplace_back(i, grid.node_at(r, c + 1));
    if (r + 1 < grid.rows && grid.is_foreground(r + 1, c)) g.edges.emplace_back(i, grid.node_at(r + 1, c));
  }
  std::sort(g.edges.begin(), g.edges.end());
  g.degrees_with_self_loop.assign(g.n_nodes, 1);
  g.neighbors.assign(g.n_nodes, {});
  for (const auto& [i, j] : g.edges) {
    g.degrees_with_self_loop[i]++;
    g.degrees_with_self_loop[j]++;
    g.neighbors[i].push_back(j);
    g.neighbors[j].push_back(i);
  }
  for (auto& nb : g.neighbors) std::sort(nb.begin(), nb.end());
  g.normalized_adjacency = normalize_adjacency(g.edges, g.n_nodes);
  return g;
}

// BFS distances from a center node; kUnreachable where disconnected.
inline std::vector<int> bfs_distances(const std::vector<std::vector<int>>& neighbors, int center) {
  std::vector<int> dist(neighbors.size(), kUnreachable);
  dist[center] = 0;
  std::queue<int> q;
  q.push(center);
  while (!q.empty()) {
    int u = q.front();
    q.pop();
    for (int v : neighbors[u]) {
      if (dist[v] == kUnreachable) {
        dist[v] = dist[u] + 1;
        q.push(v);
      }
    }
  }
  return dist;
}

inline int hop_distance(const ContextGraph& graph, int i, int j) {
  require(i >= 0 && i < graph.n_nodes && j >= 0 && j < graph.n_nodes, "hop_distance: bad node id");
  if (i == j) return 0;
  return bfs_distances(graph.neighbors, i)[j];
}

// Radius-k neighborhood of a node. The local normalized adjacency is built
// from the induced edge set but weights come from FULL-graph degrees, so k
// propagation steps at the center match the full graph exactly.
struct EgoSubgraph {
  int center_local_id = 0;
  std::vector<int> local_to_global;  // sorted by global id
  SparseMatrix normalized_adjacency;
  int radius = 0;
};

inline EgoSubgraph ego_subgraph(const ContextGraph& graph, int center, int radius) {
  require(center >= 0 && center < graph.n_nodes, "ego_subgraph: bad center");
  require(radius >= 0, "ego_subgraph: radius must be >= 0");
  std::vector<int> dist = bfs_distances(graph.neighbors, center);
  EgoSubgraph ego;
  ego.radius = radius;
  for (int v = 0; v < graph.n_nodes; ++v)
    if (dist[v] != kUnreachable && dist[v] <= radius) ego.local_to_global.push_back(v);
  std::vector<int> global_to_local(graph.n_nodes, -1);
  for (int l = 0; l < static_cast<int>(ego.local_to_global.size()); ++l) global_to_local[ego.local_to_global[l]] = l;
  ego.center_local_id = global_to_local[center];

  std::vector<std::tuple<int, int, double>> triplets;
  for (int l = 0; l < static_cast<int>(ego.local_to_global.size()); ++l) {
    int g = ego.local_to_global[l];
    triplets.emplace_back(l, l, 1.0 / graph.degrees_with_self_loop[g]);
    for (int nb : graph.neighbors_of(g)) {
      int lnb = global_to_local[nb];
      if (lnb < 0) continue;  // outside the ego set
      double w = 1.0 / std::sqrt(static_cast<double>(graph.degrees_with_self_loop[g]) *
                                 static_cast<double>(graph.degrees_with_self_loop[nb]));
      triplets.emplace_back(l, lnb, w);
    }
  }
  int n = static_cast<int>(ego.local_to_global.size());
  ego.normalized_adjacency = SparseMatrix::from_triplets(n, n, std::move(triplets));
  return ego;
}

// Persisted form: edge list plus degree vector. Loading recomputes A~ from
// the edges and verifies against the stored degrees.
inline ordered_json graph_to_json(const ContextGraph& graph) {
  ordered_json j;
  j["n_nodes"] = graph.n_nodes;
  ordered_json edges = ordered_json::array();
  for (const auto& [a, b] : graph.edges) edges.push_back({a, b});
  j["edges"] = edges;
  j["degrees_with_self_loop"] = graph.degrees_with_self_loop;
  ordered_json coords = ordered_json::array();
  for (const auto& [r, c] : graph.grid_coords) coords.push_back({r, c});
  j["coords"] = coords;
  return j;
}

inline ContextGraph graph_from_json(const ordered_json& j) {
  ContextGraph g;
  g.n_nodes = j.at("n_nodes").get<int>();
  if (g.n_nodes == 0) throw DataError("empty graph");
  for (const auto& e : j.at("edges")) g.edges.emplace_back(e[0].get<int>(), e[1].get<int>());
  std::sort(g.edges.begin(), g.edges.end());
  g.degrees_with_self_loop.assign(g.n_nodes, 1);
  g.neighbors.assign(g.n_nodes, {});
  for (const auto& [i, j2] : g.edges) {
    require(i >= 0 && i < g.n_nodes && j2 >= 0 && j2 < g.n_nodes, "graph: edge out of range");
    g.degrees_with_self_loop[i]++;
    g.degrees_with_self_loop[j2]++;
    g.neighbors[i].push_back(j2);
    g.neighbors[j2].push_back(i);
  }
  for (auto& nb : g.neighbors) std::sort(nb.begin(), nb.end());
  std::vector<int> stored = j.at("degrees_with_self_loop").get<std::vector<int>>();
  require(stored == g.degrees_with_self_loop, "graph: stored degree vector does not match edges");
  if (j.contains("coords"))
    for (const auto& c : j.at("coords")) g.grid_coords.emplace_back(c[0].get<int>(), c[1].get<int>());
  g.normalized_adjacency = normalize_adjacency(g.edges, g.n_nodes);
  return g;
}

}  // namespace gncaf
