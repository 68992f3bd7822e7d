#include <cmath>

#include <catch2/catch_amalgamated.hpp>

#include "gncaf/autograd.hpp"

#include "helpers.hpp"

using namespace gncaf;

TEST_CASE("matmul forward and gradient") {
  ParamStore store;
  Rng rng(1);
  int a = store.add("a", test::random_matrix(rng, 3, 4));
  int b = store.add("b", test::random_matrix(rng, 4, 2));

  Tape t(&store);
  Var y = ag::matmul(t, t.param(a), t.param(b));
  CHECK((t.val(y) - store.value(a) * store.value(b)).cwiseAbs().maxCoeff() == 0.0);

  double err = test::max_grad_rel_err(
      store, [&](Tape& t) { return ag::sum_all(t, ag::matmul(t, t.param(a), t.param(b))); }, {a, b});
  CHECK(err < 1e-7);
}

TEST_CASE("elementwise and broadcast ops gradients") {
  ParamStore store;
  Rng rng(2);
  int x = store.add("x", test::random_matrix(rng, 4, 5));
  int y = store.add("y", test::random_matrix(rng, 4, 5));
  int rv = store.add("rv", test::random_matrix(rng, 1, 5));
  int cv = store.add("cv", test::random_matrix(rng, 4, 1));

  auto build = [&](Tape& t) {
    Var a = ag::cwise_mul(t, t.param(x), t.param(y));
    a = ag::add_rowvec(t, a, t.param(rv));
    a = ag::mul_rowvec(t, a, t.param(rv));
    a = ag::add_colvec(t, a, t.param(cv));
    a = ag::relu(t, ag::sub(t, a, ag::scale(t, t.param(y), 0.3)));
    return ag::mean_all(t, a);
  };
  CHECK(test::max_grad_rel_err(store, build, {x, y, rv, cv}) < 1e-6);
}

TEST_CASE("softmax rows: forward sums to one, gradient checks") {
  ParamStore store;
  Rng rng(3);
  int x = store.add("x", test::random_matrix(rng, 5, 7));

  Tape t(&store);
  Var s = ag::softmax_rows(t, t.param(x));
  for (Eigen::Index r = 0; r < 5; ++r) CHECK(t.val(s).row(r).sum() == Catch::Approx(1.0).epsilon(1e-12));

  ParamStore store2;
  int w = store2.add("w", test::random_matrix(rng, 7, 3));
  int x2 = store2.add("x", test::random_matrix(rng, 5, 7));
  auto build = [&](Tape& t) {
    return ag::mean_all(t, ag::matmul(t, ag::softmax_rows(t, t.param(x2)), t.param(w)));
  };
  CHECK(test::max_grad_rel_err(store2, build, {x2, w}) < 1e-6);
}

TEST_CASE("layernorm rows gradient") {
  ParamStore store;
  Rng rng(4);
  int x = store.add("x", test::random_matrix(rng, 6, 9));
  int w = store.add("w", test::random_matrix(rng, 9, 2));
  auto build = [&](Tape& t) {
    return ag::mean_all(t, ag::matmul(t, ag::layernorm_rows(t, t.param(x)), t.param(w)));
  };
  CHECK(test::max_grad_rel_err(store, build, {x, w}) < 1e-5);
}

TEST_CASE("concat and slice gradients") {
  ParamStore store;
  Rng rng(5);
  int a = store.add("a", test::random_matrix(rng, 3, 4));
  int b = store.add("b", test::random_matrix(rng, 2, 4));
  int c = store.add("c", test::random_matrix(rng, 3, 2));
  auto build = [&](Tape& t) {
    Var rows = ag::concat_rows(t, {t.param(a), t.param(b)});
    Var cols = ag::concat_cols(t, {t.param(a), t.param(c)});
    Var s1 = ag::slice_rows(t, rows, 1, 3);
    Var s2 = ag::slice_cols(t, cols, 2, 3);
    return ag::add(t, ag::mean_all(t, s1), ag::sum_all(t, s2));
  };
  CHECK(test::max_grad_rel_err(store, build, {a, b, c}) < 1e-7);
}

TEST_CASE("gather with padding and duplicates") {
  ParamStore store;
  Rng rng(6);
  int x = store.add("x", test::random_matrix(rng, 2, 3));
  auto idx = std::make_shared<const std::vector<int>>(std::vector<int>{0, 0, 5, -1, 2, 4});

  Tape t(&store);
  Var g = ag::gather(t, t.param(x), idx, 2, 3);
  const Matrix& xv = store.value(x);
  CHECK(t.val(g)(0, 0) == xv(0, 0));
  CHECK(t.val(g)(0, 1) == xv(0, 0));
  CHECK(t.val(g)(1, 0) == 0.0);

  auto build = [&](Tape& t) { return ag::mean_all(t, ag::gather(t, t.param(x), idx, 2, 3)); };
  CHECK(test::max_grad_rel_err(store, build, {x}) < 1e-8);
}

TEST_CASE("spmm matches dense multiply and gradient checks") {
  Rng rng(7);
  SparseMatrix adj = normalize_adjacency({{0, 1}, {1, 2}, {2, 3}, {0, 3}}, 4);
  ParamStore store;
  int x = store.add("x", test::random_matrix(rng, 4, 5));

  Tape t(&store);
  Var y = ag::spmm(t, adj, t.param(x));
  CHECK((t.val(y) - adj.to_dense() * store.value(x)).cwiseAbs().maxCoeff() < 1e-14);

  auto build = [&](Tape& t) { return ag::mean_all(t, ag::spmm(t, adj, t.param(x))); };
  CHECK(test::max_grad_rel_err(store, build, {x}) < 1e-8);
}

TEST_CASE("conv2d matches a naive convolution oracle") {
  Rng rng(8);
  ag::ConvShape shape{2, 5, 6, 3, 3, 2, 1};
  ParamStore store;
  int x = store.add("x", test::random_matrix(rng, 2, 30));
  int w = store.add("w", test::random_matrix(rng, 3, 2 * 9));
  int b = store.add("b", test::random_matrix(rng, 3, 1));

  Tape t(&store);
  Var y = ag::conv2d(t, t.param(x), t.param(w), t.param(b), shape);
  REQUIRE(t.val(y).rows() == 3);
  REQUIRE(t.val(y).cols() == shape.out_h() * shape.out_w());

  // Direct loop oracle.
  const Matrix& xv = store.value(x);
  const Matrix& wv = store.value(w);
  const Matrix& bv = store.value(b);
  for (int oc = 0; oc < 3; ++oc)
    for (int oy = 0; oy < shape.out_h(); ++oy)
      for (int ox = 0; ox < shape.out_w(); ++ox) {
        double acc = bv(oc, 0);
        for (int ic = 0; ic < 2; ++ic)
          for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) {
              int iy = oy * shape.stride + ky - shape.pad;
              int ix = ox * shape.stride + kx - shape.pad;
              if (iy < 0 || iy >= shape.height || ix < 0 || ix >= shape.width) continue;
              acc += wv(oc, (ic * 3 + ky) * 3 + kx) * xv(ic, iy * shape.width + ix);
            }
        CHECK(t.val(y)(oc, oy * shape.out_w() + ox) == Catch::Approx(acc).epsilon(1e-12));
      }

  auto build = [&](Tape& t) {
    return ag::mean_all(t, ag::relu(t, ag::conv2d(t, t.param(x), t.param(w), t.param(b), shape)));
  };
  CHECK(test::max_grad_rel_err(store, build, {x, w, b}) < 1e-6);
}

TEST_CASE("cross entropy rows: uniform logits and gradient") {
  ParamStore store;
  Rng rng(9);
  int x = store.add("x", Matrix::Zero(6, 4));
  auto targets = std::make_shared<const std::vector<int>>(std::vector<int>{0, 1, 2, 3, 1, 2});

  Tape t(&store);
  Var loss = ag::cross_entropy_rows(t, t.param(x), targets);
  CHECK(t.val(loss)(0, 0) == Catch::Approx(std::log(4.0)).epsilon(1e-12));

  store.value(x) = test::random_matrix(rng, 6, 4);
  auto build = [&](Tape& t) { return ag::cross_entropy_rows(t, t.param(x), targets); };
  CHECK(test::max_grad_rel_err(store, build, {x}) < 1e-7);

  auto weights = std::make_shared<const std::vector<double>>(std::vector<double>{0.5, 2.0, 1.0, 3.0});
  auto build_w = [&](Tape& t) { return ag::cross_entropy_rows(t, t.param(x), targets, weights); };
  CHECK(test::max_grad_rel_err(store, build_w, {x}) < 1e-7);
}

TEST_CASE("gradients accumulate across tapes for batched steps") {
  ParamStore store;
  Rng rng(10);
  int w = store.add("w", test::random_matrix(rng, 3, 3));
  Matrix x1 = test::random_matrix(rng, 2, 3);
  Matrix x2 = test::random_matrix(rng, 2, 3);

  auto run = [&](const Matrix& x) {
    Tape t(&store);
    Var loss = ag::mean_all(t, ag::matmul(t, t.input(x), t.param(w)));
    t.backward(loss);
  };
  store.zero_grads();
  run(x1);
  Matrix g1 = store.grad(w);
  store.zero_grads();
  run(x2);
  Matrix g2 = store.grad(w);
  store.zero_grads();
  run(x1);
  run(x2);
  CHECK((store.grad(w) - (g1 + g2)).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("mean_cols and transpose gradients") {
  ParamStore store;
  Rng rng(11);
  int x = store.add("x", test::random_matrix(rng, 4, 6));
  int w = store.add("w", test::random_matrix(rng, 4, 2));
  auto build = [&](Tape& t) {
    Var pooled = ag::transpose(t, ag::mean_cols(t, t.param(x)));  // 1 x 4
    return ag::sum_all(t, ag::matmul(t, pooled, t.param(w)));
  };
  CHECK(test::max_grad_rel_err(store, build, {x, w}) < 1e-7);
}
