#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "gncaf/common.hpp"
#include "gncaf/graph.hpp"

namespace gncaf {

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Named parameter tensors; gradients accumulate here across tape runs,
// which makes minibatch accumulation trivial.
class ParamStore {
public:
  int add(std::string name, Matrix value) {
    names_.push_back(std::move(name));
    grads_.emplace_back(Matrix::Zero(value.rows(), value.cols()));
    values_.push_back(std::move(value));
    return static_cast<int>(values_.size()) - 1;
  }

  int size() const { return static_cast<int>(values_.size()); }

  int find(const std::string& name) const {
    for (int i = 0; i < size(); ++i)
      if (names_[i] == name) return i;
    return -1;
  }

  Matrix& value(int i) { return values_[i]; }
  const Matrix& value(int i) const { return values_[i]; }
  Matrix& grad(int i) { return grads_[i]; }
  const Matrix& grad(int i) const { return grads_[i]; }
  const std::string& name(int i) const { return names_[i]; }

  void zero_grads() {
    for (auto& g : grads_) g.setZero();
  }

private:
  std::vector<std::string> names_;
  std::vector<Matrix> values_;
  std::vector<Matrix> grads_;
};

// Eager reverse-mode tape over dense matrices. Creation order is the
// topological order; backward walks it in reverse.
class Tape {
public:
  explicit Tape(ParamStore* store = nullptr) : store_(store) {}

  Var input(Matrix value, bool requires_grad = false) {
    return push(std::move(value), requires_grad, {}, nullptr, -1);
  }

  Var constant(Matrix value) { return input(std::move(value), false); }

  Var param(int idx) {
    require(store_ != nullptr, "tape has no parameter store");
    auto it = param_cache_.find(idx);
    if (it != param_cache_.end()) return it->second;
    Var v = push(store_->value(idx), true, {}, nullptr, idx);
    param_cache_[idx] = v;
    return v;
  }

  const Matrix& val(Var v) const { return nodes_[v.id].value; }

  Matrix& grad(Var v) {
    Node& n = nodes_[v.id];
    require(n.requires_grad, "grad requested for a node that does not require it");
    return n.grad;
  }

  bool needs_grad(Var v) const { return nodes_[v.id].requires_grad; }

  // Seeds d(root)/d(root) = 1 and propagates to every reachable node and
  // into the parameter store.
  void backward(Var root) {
    Node& r = nodes_[root.id];
    require(r.value.rows() == 1 && r.value.cols() == 1, "backward root must be a scalar");
    require(r.requires_grad, "backward root does not depend on any differentiable input");
    r.grad(0, 0) += 1.0;
    for (int i = root.id; i >= 0; --i) {
      Node& n = nodes_[i];
      if (n.requires_grad && n.backward) n.backward(*this, i);
    }
    if (store_ != nullptr)
      for (const auto& [idx, var] : param_cache_) store_->grad(idx) += nodes_[var.id].grad;
  }

  std::size_t size() const { return nodes_.size(); }

  // --- internals used by the op constructors ---

  using BackwardFn = std::function<void(Tape&, int)>;

  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    int param_idx = -1;
    std::vector<int> parents;
    BackwardFn backward;
  };

  Var push(Matrix value, bool requires_grad, std::vector<int> parents, BackwardFn backward, int param_idx) {
    Node n;
    if (requires_grad) n.grad = Matrix::Zero(value.rows(), value.cols());
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.param_idx = param_idx;
    n.parents = std::move(parents);
    n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  Var make(Matrix value, const std::vector<Var>& parents, BackwardFn backward) {
    bool rg = false;
    std::vector<int> ids;
    ids.reserve(parents.size());
    for (Var p : parents) {
      ids.push_back(p.id);
      rg = rg || nodes_[p.id].requires_grad;
    }
    return push(std::move(value), rg, std::move(ids), rg ? std::move(backward) : nullptr, -1);
  }

  const Matrix& node_val(int id) const { return nodes_[id].value; }
  bool node_needs_grad(int id) const { return nodes_[id].requires_grad; }
  Matrix& node_grad(int id) { return nodes_[id].grad; }
  const std::vector<int>& node_parents(int id) const { return nodes_[id].parents; }

private:
  std::vector<Node> nodes_;
  ParamStore* store_;
  std::map<int, Var> param_cache_;
};

namespace ag {

inline Var add(Tape& t, Var a, Var b) {
  return t.make(t.val(a) + t.val(b), {a, b}, [](Tape& t, int id) {
    const Matrix& g = t.node_grad(id);
    auto& p = t.node_parents(id);
    if (t.node_needs_grad(p[0])) t.node_grad(p[0]) += g;
    if (t.node_needs_grad(p[1])) t.node_grad(p[1]) += g;
  });
}

inline Var sub(Tape& t, Var a, Var b) {
  return t.make(t.val(a) - t.val(b), {a, b}, [](Tape& t, int id) {
    const Matrix& g = t.node_grad(id);
    auto& p = t.node_parents(id);
    if (t.node_needs_grad(p[0])) t.node_grad(p[0]) += g;
    if (t.node_needs_grad(p[1])) t.node_grad(p[1]) -= g;
  });
}

inline Var scale(Tape& t, Var a, double c) {
  return t.make(t.val(a) * c, {a}, [c](Tape& t, int id) {
    auto& p = t.node_parents(id);
    if (t.node_needs_grad(p[0])) t.node_grad(p[0]) += c * t.node_grad(id);
  });
}

inline Var cwise_mul(Tape& t, Var a, Var b) {
  require(t.val(a).rows() == t.val(b).rows() && t.val(a).cols() == t.val(b).cols(),
          "cwise_mul: shape mismatch");
  return t.make(t.val(a).cwiseProduct(t.val(b)), {a, b}, [](Tape& t, int id) {
    const Matrix& g = t.node_grad(id);
    auto& p = t.node_parents(id);
    if (t.node_needs_grad(p[0])) t.node_grad(p[0]) += g.cwiseProduct(t.node_val(p[1]));
    if (t.node_needs_grad(p[1])) t.node_grad(p[1]) += g.cwiseProduct(t.node_val(p[0]));
  });
}

inline Var matmul(Tape& t, Var a, Var b) {
  require(t.val(a).cols() == t.val(b).rows(), "matmul: inner dimension mismatch");
  return t.make(t.val(a) * t.val(b), {a, b}, [](Tape& t, int id) {
    const Matrix& g = t.node_grad(id);
    auto& p = t.node_parents(id);
    if (t.node_needs_grad(p[0])) t.node_grad(p[0]) += g * t.node_val(p[1]).transpose();
    if (t.node_needs_grad(p[1])) t.node_grad(p[1]) += t.node_val(p[0]).transpose() * g;
  });
}

inline Var transpose(Tape& t, Var a) {
  return t.make(t.val(a).transpose(), {a}, [](Tape& t, int id) {
    auto& p = t.node_parents(id);
    if (t.node_needs_grad(p[0])) t.node_grad(p[0]) += t.node_grad(id).transpose();
  });
}

inline Var relu(Tape& t, Var a) {
  return t.make(t.val(a).cwiseMax(0.0), {a}, [](Tape& t, int id) {
    auto& p = t.node_parents(id);
    if (!t.node_needs_grad(p[0])) return;
    const Matrix& x = t.node_val(p[0]);
    t.node_grad(p[0]) += t.node_grad(id).cwiseProduct((x.array() > 0.0).cast<double>().matrix());
  });
}

inline Var softmax_rows(Tape& t, Var a) {
  const Matrix& x = t.val(a);
  Matrix y(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    double m = x.row(r).maxCoeff();
    Eigen::ArrayXd e = (x.row(r).array() - m).exp();
    y.row(r) = (e / e.sum()).matrix();
  }
  return t.make(std::move(y), {a}, [](Tape& t, int id) {
    auto& p = t.node_parents(id);
    if (!t.node_needs_grad(p[0])) return;
    const Matrix& y = t.node_val(id);
    const Matrix& g = t.node_grad(id);
    Matrix& gx = t.node_grad(p[0]);
    for (Eigen::Index r = 0; r < y.rows(); ++r) {
      double dot = g.row(r).dot(y.row(r));
      gx.row(r) += (y.row(r).array() * (g.row(r).array() - dot)).matrix();
    }
  });
}

// Per-row layer normalization (population variance), no affine part.
inline Var layernorm_rows(Tape& t, Var a, double eps = 1e-5) {
  const Matrix& x = t.val(a);
  Matrix y(x.rows(), x.cols());
  std::vector<double> inv_std(x.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    double mu = x.row(r).mean();
    double var = (x.row(r).array() - mu).square().mean();
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    y.row(r) = ((x.row(r).array() - mu) * inv_std[r]).matrix();
  }
  auto inv = std::make_shared<std::vector<double>>(std::move(inv_std));
  return t.make(std::move(y), {a}, [inv](Tape& t, int id) {
    auto& p = t.node_parents(id);
    if (!t.node_needs_grad(p[0])) return;
    const Matrix& y = t.node_val(id);
    const Matrix& g = t.node_grad(id);
    Matrix& gx = t.node_grad(p[0]);
    double n = static_cast<double>(y.cols());
    for (Eigen::Index r = 0; r < y.rows(); ++r) {
      double sum_g = g.row(r).sum();
      double sum_gy = g.row(r).dot(y.row(r));
      gx.row(r) += ((*inv)[r] / n * (n * g.row(r).array() - sum_g - y.row(r).array() * sum_gy)).matrix();
    }
  });
}

// v is 1 x D, broadcast over the rows of x.
inline Var add_rowvec(Tape& t, Var x, Var v) {
  require(t.val(v).rows() == 1 && t.val(v).cols() == t.val(x).cols(), "add_rowvec: shape mismatch");
  Matrix y = t.val(x);
  y.rowwise() += t.val(v).row(0);
  return t.make(std::move(y), {x, v}, [](Tape& t, int id) {
    const Matrix& g = t.node_grad(id);
    auto& p = t.node_parents(id);
    if (t.node_needs_grad(p[0])) t.node_grad(p[0]) += g;
    if (t.node_needs_grad(p[1])) t.node_grad(p[1]) += g.colwise().sum();
  });
}

inline Var mul_rowvec(Tape& t, Var x, Var v) {
  require(t.val(v).rows() == 1 && t.val(v).cols() == t.val(x).cols(), "mul_rowvec: shape mismatch");
  Matrix y = t.val(x).array().rowwise() * t.val(v).row(0).array();
  return t.make(std::move(y), {x, v}, [](Tape& t, int id) {
    const Matrix& g = t.node_grad(id);
    auto& p = t.node_parents(id);
    if (t.node_needs_grad(p[0]))
      t.node_grad(p[0]) += (g.array().rowwise() * t.node_val(p[1]).row(0).array()).matrix();
    if (t.node_needs_grad(p[1]))
      t.node_grad(p[1]) += (g.cwiseProduct(t.node_val(p[0]))).colwise().sum();
  });
}

// v is C x 1, broadcast across the columns of x.
inline Var add_colvec(Tape& t, Var x, Var v) {
  require(t.val(v).cols() == 1 && t.val(v).rows() == t.val(x).rows(), "add_colvec: shape mismatch");
  Matrix y = t.val(x);
  y.colwise() += t.val(v).col(0);
  return t.make(std::move(y), {x, v}, [](Tape& t, int id) {
    const Matrix& g = t.node_grad(id);
    auto& p = t.node_parents(id);
    if (t.node_needs_grad(p[0])) t.node_grad(p[0]) += g;
    if (t.node_needs_grad(p[1])) t.node_grad(p[1]) += g.rowwise().sum();
  });
}

inline Var broadcast_rows(Tape& t, Var v, int n) {
  require(t.val(v).rows() == 1, "broadcast_rows: expected a row vector");
  return t.make(t.val(v).replicate(n, 1), {v}, [](Tape& t, int id) {
    auto& p = t.node_parents(id);
    if (t.node_needs_grad(p[0])) t.node_grad(p[0]) += t.node_grad(id).colwise().sum();
  });
}

inline Var concat_rows(Tape& t, const std::vector<Var>& parts) {
  require(!parts.empty(), "concat_rows: empty");
  Eigen::Index cols = t.val(parts[0]).cols(), rows = 0;
  for (Var v : parts) {
    require(t.val(v).cols() == cols, "concat_rows: column mismatch");
    rows += t.val(v).rows();
  }
  Matrix y(rows, cols);
  Eigen::Index r = 0;
  for (Var v : parts) {
    y.middleRows(r, t.val(v).rows()) = t.val(v);
    r += t.val(v).rows();
  }
  return t.make(std::move(y), parts, [](Tape& t, int id) {
    const Matrix& g = t.node_grad(id);
    Eigen::Index r = 0;
    for (int pid : t.node_parents(id)) {
      Eigen::Index n = t.node_val(pid).rows();
      if (t.node_needs_grad(pid)) t.node_grad(pid) += g.middleRows(r, n);
      r += n;
    }
  });
}

inline Var concat_cols(Tape& t, const std::vector<Var>& parts) {
  require(!parts.empty(), "concat_cols: empty");
  Eigen::Index rows = t.val(parts[0]).rows(), cols = 0;
  for (Var v : parts) {
    require(t.val(v).rows() == rows, "concat_cols: row mismatch");
    cols += t.val(v).cols();
  }
  Matrix y(rows, cols);
  Eigen::Index c = 0;
  for (Var v : parts) {
    y.middleCols(c, t.val(v).cols()) = t.val(v);
    c += t.val(v).cols();
  }
  return t.make(std::move(y), parts, [](Tape& t, int id) {
    const Matrix& g = t.node_grad(id);
    Eigen::Index c = 0;
    for (int pid : t.node_parents(id)) {
      Eigen::Index n = t.node_val(pid).cols();
      if (t.node_needs_grad(pid)) t.node_grad(pid) += g.middleCols(c, n);
      c += n;
    }
  });
}

inline Var slice_rows(Tape& t, Var x, int first, int count) {
  require(first >= 0 && count >= 0 && first + count <= t.val(x).rows(), "slice_rows: out of range");
  return t.make(t.val(x).middleRows(first, count), {x}, [first, count](Tape& t, int id) {
    auto& p = t.node_parents(id);
    if (t.node_needs_grad(p[0])) t.node_grad(p[0]).middleRows(first, count) += t.node_grad(id);
  });
}

inline Var slice_cols(Tape& t, Var x, int first, int count) {
  require(first >= 0 && count >= 0 && first + count <= t.val(x).cols(), "slice_cols: out of range");
  return t.make(t.val(x).middleCols(first, count), {x}, [first, count](Tape& t, int id) {
    auto& p = t.node_parents(id);
    if (t.node_needs_grad(p[0])) t.node_grad(p[0]).middleCols(first, count) += t.node_grad(id);
  });
}

inline Var select_row(Tape& t, Var x, int row) { return slice_rows(t, x, row, 1); }

// Gather rows by index; duplicates allowed (backward scatter-adds).
inline Var gather_rows(Tape& t, Var x, std::shared_ptr<const std::vector<int>> rows) {
  Matrix y(static_cast<Eigen::Index>(rows->size()), t.val(x).cols());
  for (std::size_t i = 0; i < rows->size(); ++i) y.row(static_cast<Eigen::Index>(i)) = t.val(x).row((*rows)[i]);
  return t.make(std::move(y), {x}, [rows](Tape& t, int id) {
    auto& p = t.node_parents(id);
    if (!t.node_needs_grad(p[0])) return;
    const Matrix& g = t.node_grad(id);
    Matrix& gx = t.node_grad(p[0]);
    for (std::size_t i = 0; i < rows->size(); ++i) gx.row((*rows)[i]) += g.row(static_cast<Eigen::Index>(i));
  });
}

// Flat row-major gather into a new shape; index -1 reads as zero padding.
inline Var gather(Tape& t, Var x, std::shared_ptr<const std::vector<int>> idx, int out_rows, int out_cols) {
  require(static_cast<int>(idx->size()) == out_rows * out_cols, "gather: index/shape mismatch");
  const Matrix& xv = t.val(x);
  const double* src = xv.data();
  Matrix y(out_rows, out_cols);
  double* dst = y.data();
  for (std::size_t i = 0; i < idx->size(); ++i) {
    int s = (*idx)[i];
    dst[i] = s < 0 ? 0.0 : src[s];
  }
  return t.make(std::move(y), {x}, [idx](Tape& t, int id) {
    auto& p = t.node_parents(id);
    if (!t.node_needs_grad(p[0])) return;
    const Matrix& g = t.node_grad(id);
    Matrix& gx = t.node_grad(p[0]);
    const double* gsrc = g.data();
    double* gdst = gx.data();
    for (std::size_t i = 0; i < idx->size(); ++i) {
      int s = (*idx)[i];
      if (s >= 0) gdst[s] += gsrc[i];
    }
  });
}

// y = A x for a constant sparse matrix A (the propagation matrix).
inline Var spmm(Tape& t, const SparseMatrix& a, Var x) {
  auto ap = std::make_shared<SparseMatrix>(a);
  return t.make(ap->multiply(t.val(x)), {x}, [ap](Tape& t, int id) {
    auto& p = t.node_parents(id);
    if (t.node_needs_grad(p[0])) t.node_grad(p[0]) += ap->multiply_transposed(t.node_grad(id));
  });
}

inline Var mean_cols(Tape& t, Var x) {
  double n = static_cast<double>(t.val(x).cols());
  return t.make(t.val(x).rowwise().mean(), {x}, [n](Tape& t, int id) {
    auto& p = t.node_parents(id);
    if (!t.node_needs_grad(p[0])) return;
    t.node_grad(p[0]) += (t.node_grad(id) / n).replicate(1, t.node_val(p[0]).cols());
  });
}

inline Var mean_all(Tape& t, Var x) {
  double n = static_cast<double>(t.val(x).size());
  Matrix y(1, 1);
  y(0, 0) = t.val(x).mean();
  return t.make(std::move(y), {x}, [n](Tape& t, int id) {
    auto& p = t.node_parents(id);
    if (!t.node_needs_grad(p[0])) return;
    t.node_grad(p[0]).array() += t.node_grad(id)(0, 0) / n;
  });
}

inline Var sum_all(Tape& t, Var x) {
  Matrix y(1, 1);
  y(0, 0) = t.val(x).sum();
  return t.make(std::move(y), {x}, [](Tape& t, int id) {
    auto& p = t.node_parents(id);
    if (!t.node_needs_grad(p[0])) return;
    t.node_grad(p[0]).array() += t.node_grad(id)(0, 0);
  });
}

// Mean (optionally class-weighted) negative log-softmax over rows; targets
// are class indices per row. Weighted form is the weighted mean.
inline Var cross_entropy_rows(Tape& t, Var logits, std::shared_ptr<const std::vector<int>> targets,
                              std::shared_ptr<const std::vector<double>> class_weights = nullptr) {
  const Matrix& x = t.val(logits);
  require(static_cast<Eigen::Index>(targets->size()) == x.rows(), "cross_entropy: target count mismatch");
  int c = static_cast<int>(x.cols());
  for (int tg : *targets)
    require(tg >= 0 && tg < c, "cross_entropy: label out of range");
  if (class_weights) require(static_cast<int>(class_weights->size()) == c, "cross_entropy: weight count mismatch");

  double total_w = 0.0, loss = 0.0;
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    double m = x.row(r).maxCoeff();
    double lse = m + std::log((x.row(r).array() - m).exp().sum());
    double w = class_weights ? (*class_weights)[(*targets)[r]] : 1.0;
    loss += w * (lse - x(r, (*targets)[r]));
    total_w += w;
  }
  require(total_w > 0.0, "cross_entropy: zero total weight");
  Matrix y(1, 1);
  y(0, 0) = loss / total_w;
  double tw = total_w;
  return t.make(std::move(y), {logits}, [targets, class_weights, tw](Tape& t, int id) {
    auto& p = t.node_parents(id);
    if (!t.node_needs_grad(p[0])) return;
    const Matrix& x = t.node_val(p[0]);
    Matrix& gx = t.node_grad(p[0]);
    double g = t.node_grad(id)(0, 0);
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      double m = x.row(r).maxCoeff();
      Eigen::ArrayXd e = (x.row(r).array() - m).exp();
      Eigen::ArrayXd sm = e / e.sum();
      double w = class_weights ? (*class_weights)[(*targets)[r]] : 1.0;
      gx.row(r) += (g * w / tw * sm).matrix().transpose();
      gx(r, (*targets)[r]) -= g * w / tw;
    }
  });
}

inline Var linear(Tape& t, Var x, Var w, Var b) { return add_rowvec(t, matmul(t, x, w), b); }

// --- convolution plumbing ---

struct ConvShape {
  int in_channels = 0, height = 0, width = 0;
  int out_channels = 0, kernel = 0, stride = 1, pad = 0;
  int out_h() const { return (height + 2 * pad - kernel) / stride + 1; }
  int out_w() const { return (width + 2 * pad - kernel) / stride + 1; }
};

// im2col gather map; cached per shape since shapes repeat every sample.
inline std::shared_ptr<const std::vector<int>> im2col_indices(const ConvShape& s) {
  using Key = std::tuple<int, int, int, int, int, int>;
  static std::map<Key, std::shared_ptr<const std::vector<int>>> cache;
  static std::mutex mutex;
  Key key{s.in_channels, s.height, s.width, s.kernel, s.stride, s.pad};
  std::lock_guard<std::mutex> lock(mutex);
  auto it = cache.find(key);
  if (it != cache.end()) return it->second;

  int oh = s.out_h(), ow = s.out_w();
  auto idx = std::make_shared<std::vector<int>>();
  idx->reserve(static_cast<std::size_t>(s.in_channels) * s.kernel * s.kernel * oh * ow);
  for (int c = 0; c < s.in_channels; ++c)
    for (int ky = 0; ky < s.kernel; ++ky)
      for (int kx = 0; kx < s.kernel; ++kx)
        for (int oy = 0; oy < oh; ++oy)
          for (int ox = 0; ox < ow; ++ox) {
            int iy = oy * s.stride + ky - s.pad;
            int ix = ox * s.stride + kx - s.pad;
            bool inside = iy >= 0 && iy < s.height && ix >= 0 && ix < s.width;
            idx->push_back(inside ? c * s.height * s.width + iy * s.width + ix : -1);
          }
  cache[key] = idx;
  return idx;
}

// x: in_channels x (H*W); w: out_channels x (in_channels*k*k); b: out_channels x 1.
// Returns out_channels x (out_h*out_w).
inline Var conv2d(Tape& t, Var x, Var w, Var b, const ConvShape& s) {
  require(t.val(x).rows() == s.in_channels && t.val(x).cols() == static_cast<Eigen::Index>(s.height) * s.width,
          "conv2d: input shape mismatch");
  require(t.val(w).rows() == s.out_channels &&
              t.val(w).cols() == static_cast<Eigen::Index>(s.in_channels) * s.kernel * s.kernel,
          "conv2d: weight shape mismatch");
  auto idx = im2col_indices(s);
  Var col = gather(t, x, idx, s.in_channels * s.kernel * s.kernel, s.out_h() * s.out_w());
  return add_colvec(t, matmul(t, w, col), b);
}

}  // namespace ag
}  // namespace gncaf
