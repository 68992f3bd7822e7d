#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "gncaf/autograd.hpp"
#include "gncaf/common.hpp"
#include "gncaf/tiling.hpp"

namespace gncaf::test {

// Random foreground pattern with at least one foreground tile.
inline TileGrid random_grid(Rng& rng, int rows, int cols, double p_foreground = 0.6) {
  std::vector<std::uint8_t> fg(static_cast<std::size_t>(rows) * cols, 0);
  for (auto& v : fg) v = rng.uniform() < p_foreground ? 1 : 0;
  fg[static_cast<std::size_t>(rng.uniform_int(0, rows * cols - 1))] = 1;
  return make_tile_grid("test", rows, cols, 8, rows * 8, cols * 8, std::move(fg));
}

inline Matrix random_matrix(Rng& rng, int rows, int cols, double scale = 1.0) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.normal();
  return m;
}

// Central finite differences over every element of the given parameters;
// returns the max relative error against the analytic gradients.
inline double max_grad_rel_err(ParamStore& store, const std::function<Var(Tape&)>& build,
                               const std::vector<int>& param_ids, double h = 1e-5) {
  store.zero_grads();
  Tape tape(&store);
  Var loss = build(tape);
  tape.backward(loss);
  std::vector<Matrix> analytic;
  analytic.reserve(param_ids.size());
  for (int id : param_ids) analytic.push_back(store.grad(id));

  auto eval = [&]() {
    Tape t(&store);
    return t.val(build(t))(0, 0);
  };

  double worst = 0.0;
  for (std::size_t k = 0; k < param_ids.size(); ++k) {
    Matrix& v = store.value(param_ids[k]);
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      double orig = v.data()[i];
      v.data()[i] = orig + h;
      double up = eval();
      v.data()[i] = orig - h;
      double down = eval();
      v.data()[i] = orig;
      double numeric = (up - down) / (2.0 * h);
      double a = analytic[k].data()[i];
      double err = std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
      worst = std::max(worst, err);
    }
  }
  return worst;
}

inline std::string make_temp_dir(const std::string& tag) {
  static int counter = 0;
  auto dir = std::filesystem::temp_directory_path() /
             ("gncaf_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
  std::filesystem::create_directories(dir);
  return dir.string();
}

}  // namespace gncaf::test
