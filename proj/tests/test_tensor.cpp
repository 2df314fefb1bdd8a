// Copyright 2026 The echomae Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <vector>

#include "echomae/gradcheck.hpp"
#include "echomae/rng.hpp"
#include "echomae/tensor.hpp"

using namespace echomae;

namespace {

std::vector<float> randu(Rng& rng, std::int64_t n, float lo = -1.0f, float hi = 1.0f) {
  std::vector<float> v(static_cast<std::size_t>(n));
  for (auto& x : v) x = static_cast<float>(rng.uniform(lo, hi));
  return v;
}

void fill_random(Variable& v, Rng& rng, float lo = -1.0f, float hi = 1.0f) {
  for (auto& x : v.value) x = static_cast<float>(rng.uniform(lo, hi));
}

}  // namespace

TEST_CASE("matmul: identity and hand-computed product") {
  Tape tape;
  auto I = tape.input({2, 2}, std::vector<float>{1, 0, 0, 1});
  auto X = tape.input({2, 2}, std::vector<float>{3.5f, -2, 7, 0.25f});
  auto IX = matmul(I, X);
  for (int i = 0; i < 4; ++i) CHECK(IX.value()[i] == X.value()[i]);

  auto A = tape.input({2, 2}, std::vector<float>{1, 2, 3, 4});
  auto B = tape.input({2, 1}, std::vector<float>{5, 6});
  auto C = matmul(A, B);
  CHECK(C.value()[0] == doctest::Approx(17.0).epsilon(1e-7));
  CHECK(C.value()[1] == doctest::Approx(39.0).epsilon(1e-7));
}

TEST_CASE("matmul: shape mismatch names both shapes") {
  Tape tape;
  auto A = tape.full({3, 4}, 1.0f);
  auto B = tape.full({5, 2}, 1.0f);
  bool threw = false;
  try {
    matmul(A, B);
  } catch (const DimensionError& e) {
    threw = true;
    const std::string msg = e.what();
    CHECK(msg.find("[3x4]") != std::string::npos);
    CHECK(msg.find("[5x2]") != std::string::npos);
  }
  CHECK(threw);
}

TEST_CASE("matmul: gradient of sum(A*B) matches finite differences") {
  Rng rng(11);
  Variable A("A", {3, 4});
  Variable B("B", {4, 2});
  fill_random(A, rng);
  fill_random(B, rng);
  auto fwd = [&](Tape& t) { return sum(matmul(t.leaf(A), t.leaf(B))); };
  Variable* vars[] = {&A, &B};
  auto rep = gradcheck(fwd, vars);
  CHECK(rep.ok);
  CHECK(rep.checked == 20);
}

TEST_CASE("softmax: symmetry, stability, scalar-exp oracle") {
  Tape tape;
  auto a = softmax_lastdim(tape.input({3}, std::vector<float>{0, 0, 0}));
  for (int i = 0; i < 3; ++i) CHECK(a.value()[i] == doctest::Approx(1.0 / 3).epsilon(1e-7));

  auto b = softmax_lastdim(tape.input({2}, std::vector<float>{1000, 0}));
  CHECK(b.value()[0] == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(b.value()[1] == doctest::Approx(0.0).scale(1).epsilon(1e-6));

  const std::vector<float> in{1, 2, 3};
  auto c = softmax_lastdim(tape.input({3}, in));
  // independent scalar-exp computation
  double denom = 0;
  for (float v : in) denom += std::exp(static_cast<double>(v));
  for (int i = 0; i < 3; ++i) {
    CHECK(c.value()[i] == doctest::Approx(std::exp(double(in[i])) / denom).epsilon(1e-6));
  }
  CHECK(c.value()[0] == doctest::Approx(0.0900).epsilon(1e-3));
  CHECK(c.value()[1] == doctest::Approx(0.2447).epsilon(1e-3));
  CHECK(c.value()[2] == doctest::Approx(0.6652).epsilon(1e-3));
}

TEST_CASE("softmax: rows sum to 1 for inputs across [-1e4, 1e4]") {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    Tape tape;
    const int rows = 1 + rng.below_int(4), cols = 1 + rng.below_int(8);
    auto x = tape.input({rows, cols}, randu(rng, rows * cols, -1e4f, 1e4f));
    auto y = softmax_lastdim(x);
    for (int r = 0; r < rows; ++r) {
      double s = 0;
      for (int j = 0; j < cols; ++j) {
        const float v = y.value()[static_cast<std::size_t>(r * cols + j)];
        CHECK(v >= 0.0f);
        s += v;
      }
      CHECK(std::abs(s - 1.0) < 1e-6);
    }
  }
}

TEST_CASE("softmax: non-finite input is a numeric-input error") {
  Tape tape;
  auto x = tape.input({2}, std::vector<float>{std::numeric_limits<float>::infinity(), 0.0f});
  CHECK_THROWS_AS(softmax_lastdim(x), NumericError);
}

TEST_CASE("layer_norm: constant slice and hand-computed values") {
  Tape tape;
  auto g = tape.full({3}, 1.0f);
  auto b = tape.full({3}, 0.0f);
  auto y = layer_norm(tape.input({3}, std::vector<float>{5, 5, 5}), g, b, 1e-5f);
  for (int i = 0; i < 3; ++i) CHECK(std::abs(y.value()[i]) < 1e-4f);

  auto z = layer_norm(tape.input({3}, std::vector<float>{1, 2, 3}), g, b, 1e-5f);
  CHECK(z.value()[0] == doctest::Approx(-1.2247).epsilon(1e-3));
  CHECK(z.value()[1] == doctest::Approx(0.0).scale(1).epsilon(1e-5));
  CHECK(z.value()[2] == doctest::Approx(1.2247).epsilon(1e-3));
}

TEST_CASE("layer_norm: normalized slices have mean 0, population variance 1") {
  Rng rng(17);
  Tape tape;
  const int rows = 4, cols = 16;
  auto g = tape.full({cols}, 1.0f);
  auto b = tape.full({cols}, 0.0f);
  auto y = layer_norm(tape.input({rows, cols}, randu(rng, rows * cols, -3, 3)), g, b, 1e-5f);
  for (int r = 0; r < rows; ++r) {
    double mean = 0, var = 0;
    for (int j = 0; j < cols; ++j) mean += y.value()[static_cast<std::size_t>(r * cols + j)];
    mean /= cols;
    for (int j = 0; j < cols; ++j) {
      const double d = y.value()[static_cast<std::size_t>(r * cols + j)] - mean;
      var += d * d;
    }
    var /= cols;
    CHECK(std::abs(mean) < 1e-5);
    CHECK(std::abs(var - 1.0) < 1e-4);
  }
}

TEST_CASE("layer_norm: gradient matches finite differences on random 2x8") {
  Rng rng(23);
  Variable X("X", {2, 8});
  Variable G("G", {8});
  Variable B("B", {8});
  fill_random(X, rng, -2, 2);
  fill_random(G, rng, 0.5f, 1.5f);
  fill_random(B, rng, -0.5f, 0.5f);
  Variable W("W", {2, 8});
  fill_random(W, rng, 0.5f, 1.5f);  // weighting keeps gradient entries O(1)
  auto fwd = [&](Tape& t) {
    auto y = layer_norm(t.leaf(X), t.leaf(G), t.leaf(B), 1e-5f);
    return sum(masked_mse_loss(y, t.full({2, 8}, 0.25f), t.leaf(W)));
  };
  Variable* vars[] = {&X, &G, &B};
  auto rep = gradcheck(fwd, vars);
  CHECK(rep.ok);
}

TEST_CASE("gelu: zero fixpoint and finite-difference gradient") {
  Tape tape;
  auto y = gelu(tape.input({3}, std::vector<float>{0, 1, -1}));
  CHECK(y.value()[0] == 0.0f);
  CHECK(y.value()[1] == doctest::Approx(0.8412).epsilon(1e-3));
  CHECK(y.value()[2] == doctest::Approx(-0.1588).epsilon(1e-3));

  Rng rng(31);
  Variable X("X", {4, 4});
  fill_random(X, rng, -2, 2);
  auto fwd = [&](Tape& t) { return sum(gelu(t.leaf(X))); };
  Variable* vars[] = {&X};
  CHECK(gradcheck(fwd, vars).ok);
}

TEST_CASE("gather_rows: identity permutation and one-hot backward") {
  Tape tape;
  auto X = tape.input({3, 2}, std::vector<float>{1, 2, 3, 4, 5, 6});
  auto Y = gather_rows(X, {0, 1, 2});
  for (int i = 0; i < 6; ++i) CHECK(Y.value()[i] == X.value()[i]);

  Variable V("V", {3, 2});
  V.value = {1, 2, 3, 4, 5, 6};
  Tape t2;
  auto loss = sum(gather_rows(t2.leaf(V), {2}));
  t2.backward(loss);
  const std::vector<float> want{0, 0, 0, 0, 1, 1};
  for (int i = 0; i < 6; ++i) CHECK(V.grad[static_cast<std::size_t>(i)] == want[static_cast<std::size_t>(i)]);
}

TEST_CASE("gather_rows: out-of-range index error") {
  Tape tape;
  auto X = tape.full({3, 2}, 1.0f);
  CHECK_THROWS_AS(gather_rows(X, {3}), IndexError);
  CHECK_THROWS_AS(gather_rows(X, {-1}), IndexError);
}

TEST_CASE("gather/scatter: gradient touches only gathered rows") {
  Rng rng(41);
  for (int trial = 0; trial < 20; ++trial) {
    const int rows = 2 + rng.below_int(6), cols = 1 + rng.below_int(4);
    Variable V("V", {rows, cols});
    fill_random(V, rng);
    const int k = 1 + rng.below_int(rows);
    std::vector<int> ids;
    std::vector<bool> hit(static_cast<std::size_t>(rows), false);
    for (int i = 0; i < k; ++i) {
      const int id = rng.below_int(rows);
      ids.push_back(id);
      hit[static_cast<std::size_t>(id)] = true;
    }
    Tape t;
    auto loss = sum(gather_rows(t.leaf(V), ids));
    t.backward(loss);
    for (int r = 0; r < rows; ++r) {
      for (int c = 0; c < cols; ++c) {
        const float gr = V.grad[static_cast<std::size_t>(r * cols + c)];
        if (!hit[static_cast<std::size_t>(r)]) {
          CHECK(gr == 0.0f);
        } else {
          CHECK(gr >= 1.0f);  // counted once per duplicate
        }
      }
    }
  }
}

TEST_CASE("mse_loss: trivial cases and hand arithmetic") {
  Tape tape;
  auto p = tape.input({2}, std::vector<float>{1, 2});
  auto q = tape.input({2}, std::vector<float>{1, 2});
  CHECK(mse_loss(p, q).scalar() == 0.0f);

  auto t = tape.input({2}, std::vector<float>{3, 2});
  CHECK(mse_loss(p, t).scalar() == doctest::Approx(2.0).epsilon(1e-7));

  auto bad = tape.full({3}, 0.0f);
  CHECK_THROWS_AS(mse_loss(p, bad), DimensionError);
}

TEST_CASE("mse_loss: gradient matches finite differences") {
  Rng rng(53);
  Variable P("P", {3, 3});
  fill_random(P, rng);
  std::vector<float> target = randu(rng, 9);
  auto fwd = [&](Tape& t) {
    return mse_loss(t.leaf(P), t.input({3, 3}, target));
  };
  Variable* vars[] = {&P};
  GradCheckOptions opts;
  opts.rel_tol = 1e-4;
  opts.abs_tol = 1e-6;
  CHECK(gradcheck(fwd, vars, opts).ok);
}

TEST_CASE("backward: sum gives all-ones gradient; double backward rejected") {
  Variable X("X", {2, 3});
  X.value = {1, 2, 3, 4, 5, 6};
  Tape tape;
  auto loss = sum(tape.leaf(X));
  tape.backward(loss);
  for (float g : X.grad) CHECK(g == 1.0f);
  CHECK_THROWS_AS(tape.backward(loss), ContractError);
}

TEST_CASE("backward: non-scalar loss rejected") {
  Variable X("X", {2, 2});
  Tape tape;
  auto y = scale(tape.leaf(X), 2.0f);
  CHECK_THROWS_AS(tape.backward(y), ContractError);
}

TEST_CASE("backward: two-layer MLP matches finite differences") {
  Rng rng(67);
  Variable W1("W1", {4, 8});
  Variable B1("B1", {8});
  Variable W2("W2", {8, 2});
  Variable B2("B2", {2});
  Variable X("X", {3, 4});
  for (Variable* v : {&W1, &B1, &W2, &B2, &X}) fill_random(*v, rng, -0.8f, 0.8f);
  std::vector<float> target = randu(rng, 6);
  auto fwd = [&](Tape& t) {
    auto h = gelu(add_rowvec(matmul(t.leaf(X), t.leaf(W1)), t.leaf(B1)));
    auto o = add_rowvec(matmul(h, t.leaf(W2)), t.leaf(B2));
    return mse_loss(o, t.input({3, 2}, target));
  };
  Variable* vars[] = {&W1, &B1, &W2, &B2, &X};
  auto rep = gradcheck(fwd, vars);
  CHECK(rep.ok);
  CHECK(rep.checked == 32 + 8 + 16 + 2 + 12);
}

TEST_CASE("composition property: random op chains pass finite differences") {
  // compositions of the primitive ops on tensors with <= 64 elements
  Rng rng(101);
  for (int trial = 0; trial < 20; ++trial) {
    const int m = 2 + rng.below_int(3);      // 2..4
    const int k = 2 + rng.below_int(3);
    const int n = 1 + rng.below_int(3);
    Variable A("A", {m, k});
    Variable B("B", {k, n});
    Variable G("G", {n});
    Variable Bi("Bi", {n});
    fill_random(A, rng);
    fill_random(B, rng);
    fill_random(G, rng, 0.5f, 1.5f);
    fill_random(Bi, rng, -0.5f, 0.5f);
    const int pick = rng.below_int(4);
    std::vector<int> ids;
    for (int i = 0; i < m; ++i) ids.push_back(rng.below_int(m));
    auto fwd = [&](Tape& t) {
      auto h = matmul(t.leaf(A), t.leaf(B));
      std::vector<float> ramp(static_cast<std::size_t>(n));
      for (int j = 0; j < n; ++j) ramp[static_cast<std::size_t>(j)] = 8.0f * j;
      switch (pick) {
        case 0: h = softmax_lastdim(h); break;
        // the ramp keeps slice variance well away from the eps regime, where
        // the true function's curvature would swamp the h=1e-3 stencil
        case 1:
          h = layer_norm(add_rowvec(h, t.input({n}, ramp)), t.leaf(G), t.leaf(Bi), 1e-5f);
          break;
        case 2: h = gelu(scale(h, 0.7f)); break;
        default: h = gather_rows(h, ids); break;
      }
      h = add(h, h);
      return sum(transpose(reshape(h, {h.shape()[0], h.shape()[1]})));
    };
    Variable* vars[] = {&A, &B, &G, &Bi};
    auto rep = gradcheck(fwd, vars);
    INFO("trial ", trial, " pick ", pick);
    CHECK(rep.ok);
  }
}

TEST_CASE("concat/repeat/mean/gather_cols: values and gradients") {
  Tape tape;
  auto a = tape.input({2, 2}, std::vector<float>{1, 2, 3, 4});
  auto b = tape.input({1, 2}, std::vector<float>{5, 6});
  auto c = concat_rows(a, b);
  CHECK(c.shape() == Shape{3, 2});
  CHECK(c.value()[4] == 5.0f);

  auto r = repeat_rows(b, 3);
  CHECK(r.shape() == Shape{3, 2});
  CHECK(r.value()[4] == 5.0f);

  auto m = mean_rows(a);
  CHECK(m.value()[0] == doctest::Approx(2.0));
  CHECK(m.value()[1] == doctest::Approx(3.0));

  auto gc = gather_cols(a, {1});
  CHECK(gc.shape() == Shape{2, 1});
  CHECK(gc.value()[0] == 2.0f);
  CHECK(gc.value()[1] == 4.0f);

  Rng rng(71);
  Variable X("X", {2, 3});
  Variable Y("Y", {1, 3});
  fill_random(X, rng);
  fill_random(Y, rng);
  auto fwd = [&](Tape& t) {
    auto cc = concat_rows(t.leaf(X), repeat_rows(t.leaf(Y), 2));
    return sum(gather_cols(mean_rows(cc), {0, 2}));
  };
  Variable* vars[] = {&X, &Y};
  CHECK(gradcheck(fwd, vars).ok);
}

TEST_CASE("masked_mse_loss: weights select contributing entries") {
  Tape tape;
  auto p = tape.input({2, 2}, std::vector<float>{1, 2, 3, 4});
  auto t = tape.input({2, 2}, std::vector<float>{0, 0, 0, 0});
  auto w = tape.input({2, 2}, std::vector<float>{1, 0, 0, 1});
  // (1^2 + 4^2) / 2
  CHECK(masked_mse_loss(p, t, w).scalar() == doctest::Approx(8.5).epsilon(1e-7));
  auto wz = tape.full({2, 2}, 0.0f);
  CHECK(masked_mse_loss(p, t, wz).scalar() == 0.0f);
}

TEST_CASE("determinism: identical inputs give bitwise-identical outputs") {
  auto run = [] {
    Rng rng(999);
    Tape tape;
    auto a = tape.input({4, 4}, randu(rng, 16));
    auto b = tape.input({4, 4}, randu(rng, 16));
    auto y = softmax_lastdim(matmul(gelu(a), b));
    return std::vector<float>(y.value().begin(), y.value().end());
  };
  auto r1 = run();
  auto r2 = run();
  CHECK(r1 == r2);
}
