#include <doctest.h>

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "drgcn/autodiff.hpp"
#include "gradcheck.hpp"

using namespace drgcn;
using drgcn::testing::grad_check;
using drgcn::testing::random_away_from_zero;
using drgcn::testing::random_tensor;

namespace {

constexpr double kFdTol = 1e-4;

// Weighted sum so that every output entry carries a distinct gradient.
Var weighted(Tape& t, Var y, const Tensor& r) { return sum(hadamard(y, t.constant(r))); }

void check_unary(const std::string& name, Var (*op)(Var), bool avoid_zero = false) {
  CAPTURE(name);
  Rng rng(stable_hash(name));
  const Tensor x = avoid_zero ? random_away_from_zero(4, 5, rng) : random_tensor(4, 5, rng);
  Tape shape_tape;
  const Tensor y = op(shape_tape.constant(x)).value();
  const Tensor r = random_tensor(y.rows(), y.cols(), rng);
  const auto res = grad_check({x}, [&](Tape& t, std::span<const Var> in) { return weighted(t, op(in[0]), r); });
  CAPTURE(res.worst);
  CHECK(res.max_rel_err < kFdTol);
}

}  // namespace

TEST_CASE("matmul examples") {
  Tape t;
  const Tensor m = Tensor::from_rows({{1, 2}, {3, 4}});
  CHECK(matmul(t.constant(Tensor::from_rows({{1, 0}, {0, 1}})), t.constant(m)).value() == m);
  CHECK(matmul(t.constant(Tensor::from_rows({{1, 2}})), t.constant(Tensor::from_rows({{3}, {4}}))).value().item() ==
        11.0);
  CHECK_THROWS_AS(matmul(t.constant(Tensor(2, 3)), t.constant(Tensor(2, 3))), ShapeError);
}

TEST_CASE("matmul gradient of sum matches finite differences") {
  Rng rng(1);
  const auto res = grad_check({random_tensor(3, 4, rng), random_tensor(4, 2, rng)},
                              [](Tape&, std::span<const Var> in) { return sum(matmul(in[0], in[1])); });
  CAPTURE(res.worst);
  CHECK(res.max_rel_err < 1e-6);
}

TEST_CASE("elementwise examples") {
  Tape t;
  const Var r = relu(t.constant(Tensor::from_rows({{-1, 0, 2}})));
  CHECK(r.value() == Tensor::from_rows({{0, 0, 2}}));
  CHECK(sigmoid(t.constant(Tensor::scalar(0.0))).value().item() == 0.5);
  CHECK(tanh(t.constant(Tensor::scalar(0.5))).value().item() == doctest::Approx(std::tanh(0.5)).epsilon(1e-15));
  CHECK(tanh(t.constant(Tensor::scalar(0.5))).value().item() == doctest::Approx(0.46211715).epsilon(1e-8));
  CHECK_THROWS_AS(add(t.constant(Tensor(2, 2)), t.constant(Tensor(2, 3))), ShapeError);
  CHECK_THROWS_AS(hadamard(t.constant(Tensor(1, 2)), t.constant(Tensor(2, 1))), ShapeError);
}

TEST_CASE("sigmoid stays strictly inside the unit interval") {
  Tape t;
  for (double x : {-1e308, -800.0, -745.0, -40.0, 0.0, 37.0, 40.0, 800.0, 1e308}) {
    CAPTURE(x);
    const double y = sigmoid(t.constant(Tensor::scalar(x))).value().item();
    CHECK(y > 0.0);
    CHECK(y < 1.0);
  }
}

TEST_CASE("unary ops match finite differences") {
  check_unary("relu", relu, true);
  check_unary("sigmoid", sigmoid);
  check_unary("tanh", tanh);
  check_unary("square", square);
  check_unary("rows_softmax", rows_softmax);
  check_unary("rows_log_softmax", rows_log_softmax);
  check_unary("l2_normalize_rows", l2_normalize_rows);
  check_unary("scale", [](Var a) { return scale(a, -1.7); });
  check_unary("affine", [](Var a) { return affine(a, 0.3, 2.0); });
  check_unary("mean", [](Var a) { return mean(a); });
  check_unary("head_rows", [](Var a) { return head_rows(a, 2); });
}

TEST_CASE("binary ops match finite differences") {
  Rng rng(2);
  const Tensor a = random_tensor(4, 3, rng);
  const Tensor b = random_tensor(4, 3, rng);
  const Tensor r = random_tensor(4, 3, rng);
  using Bin = Var (*)(Var, Var);
  for (auto [name, op] : {std::pair<const char*, Bin>{"add", add}, {"sub", sub}, {"hadamard", hadamard}}) {
    CAPTURE(name);
    const auto res = grad_check({a, b}, [&](Tape& t, std::span<const Var> in) { return weighted(t, op(in[0], in[1]), r); });
    CAPTURE(res.worst);
    CHECK(res.max_rel_err < kFdTol);
  }
}

TEST_CASE("broadcast ops match finite differences") {
  Rng rng(3);
  const Tensor x = random_tensor(5, 3, rng);
  const Tensor y = random_tensor(5, 3, rng);
  const Tensor bias = random_tensor(1, 3, rng);
  const Tensor c = random_tensor(5, 1, rng, 0.1, 0.9);
  const Tensor r = random_tensor(5, 3, rng);
  auto res = grad_check({x, bias}, [&](Tape& t, std::span<const Var> in) { return weighted(t, add_row_bias(in[0], in[1]), r); });
  CHECK(res.max_rel_err < kFdTol);
  res = grad_check({x, c}, [&](Tape& t, std::span<const Var> in) { return weighted(t, scale_rows(in[0], in[1]), r); });
  CHECK(res.max_rel_err < kFdTol);
  res = grad_check({x, y, c},
                   [&](Tape& t, std::span<const Var> in) { return weighted(t, blend_rows(in[0], in[1], in[2]), r); });
  CAPTURE(res.worst);
  CHECK(res.max_rel_err < kFdTol);
}

TEST_CASE("concat_cols shape, values and gradient split") {
  Tape t;
  CHECK(concat_cols(t.constant(Tensor(2, 3)), t.constant(Tensor(2, 3))).value().cols() == 6);
  CHECK(concat_cols(t.constant(Tensor::scalar(1)), t.constant(Tensor::scalar(2))).value() ==
        Tensor::from_rows({{1, 2}}));
  CHECK_THROWS_AS(concat_cols(t.constant(Tensor(2, 1)), t.constant(Tensor(3, 1))), ShapeError);

  Rng rng(4);
  const Tensor r = random_tensor(3, 5, rng);
  const auto res = grad_check({random_tensor(3, 2, rng), random_tensor(3, 3, rng)},
                              [&](Tape& tp, std::span<const Var> in) { return weighted(tp, concat_cols(in[0], in[1]), r); });
  CHECK(res.max_rel_err < kFdTol);
}

TEST_CASE("gather_rows scatter-adds repeated indices") {
  Rng rng(5);
  const std::vector<std::size_t> idx{2, 0, 2, 1};
  const Tensor r = random_tensor(4, 3, rng);
  const auto res = grad_check({random_tensor(3, 3, rng)},
                              [&](Tape& t, std::span<const Var> in) { return weighted(t, gather_rows(in[0], idx), r); });
  CHECK(res.max_rel_err < kFdTol);
  Tape t;
  CHECK_THROWS_AS(gather_rows(t.constant(Tensor(2, 2)), std::vector<std::size_t>{2}), ShapeError);
}

TEST_CASE("softmax examples and properties") {
  Tape t;
  const Tensor half = rows_softmax(t.constant(Tensor::from_rows({{0, 0}}))).value();
  CHECK(half(0, 0) == 0.5);
  CHECK(half(0, 1) == 0.5);
  const Tensor q = rows_softmax(t.constant(Tensor::from_rows({{std::log(1.0), std::log(3.0)}}))).value();
  CHECK(q(0, 0) == doctest::Approx(0.25).epsilon(1e-14));
  CHECK(q(0, 1) == doctest::Approx(0.75).epsilon(1e-14));

  Rng rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor x = random_tensor(5, 7, rng, -30.0, 30.0);
    const Tensor p = rows_softmax(t.constant(x)).value();
    const Tensor lp = rows_log_softmax(t.constant(x)).value();
    for (std::size_t i = 0; i < 5; ++i) {
      double s = 0.0;
      double m = -std::numeric_limits<double>::infinity();
      for (double v : lp.row(i)) m = std::max(m, v);
      double z = 0.0;
      for (double v : lp.row(i)) z += std::exp(v - m);
      for (double v : p.row(i)) s += v;
      CHECK(std::abs(s - 1.0) < 1e-12);
      CHECK(std::abs(m + std::log(z)) < 1e-10);
    }
  }
}

TEST_CASE("l2_normalize_rows examples") {
  Tape t;
  const Tensor y = l2_normalize_rows(t.constant(Tensor::from_rows({{3, 4}, {0, 0}, {1, 0}}))).value();
  CHECK(y(0, 0) == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(y(0, 1) == doctest::Approx(0.8).epsilon(1e-15));
  CHECK(y(1, 0) == 0.0);
  CHECK(y(1, 1) == 0.0);
  CHECK(y(2, 0) == 1.0);
  CHECK(y(2, 1) == 0.0);
}

TEST_CASE("backward of sum gives ones and unused leaves get zeros") {
  Tape t;
  const Var w = t.leaf(Tensor::from_rows({{1, 2}, {3, 4}}), true);
  const Var unused = t.leaf(Tensor(2, 2, 7.0), true);
  t.backward(sum(w));
  CHECK(t.grad(w) == Tensor(2, 2, 1.0));
  CHECK(t.grad(unused) == Tensor(2, 2, 0.0));
}

TEST_CASE("backward rejects non-scalar losses and reuse") {
  Tape t;
  const Var w = t.leaf(Tensor(2, 2, 1.0), true);
  CHECK_THROWS_AS(t.backward(relu(w)), TapeError);
  Tape u;
  const Var v = u.leaf(Tensor(1, 1, 1.0), true);
  const Var loss = sum(v);
  u.backward(loss);
  CHECK(u.consumed());
  CHECK_THROWS_AS(u.backward(loss), TapeError);
}

TEST_CASE("non-finite values are rejected at the producing op") {
  Tape t;
  const Var a = t.leaf(Tensor::scalar(std::numeric_limits<double>::max()), true);
  CHECK_THROWS_AS(scale(a, 10.0), NonFiniteError);
  CHECK_THROWS_AS(t.leaf(Tensor::scalar(std::nan("")), true), NonFiniteError);
}

TEST_CASE("backward is bit-identical across repeated passes") {
  Rng rng(7);
  const Tensor a = random_tensor(6, 4, rng);
  const Tensor b = random_tensor(4, 3, rng);
  auto run = [&] {
    Tape t;
    const Var va = t.leaf(a, true);
    const Var vb = t.leaf(b, true);
    const Var y = rows_log_softmax(tanh(matmul(l2_normalize_rows(va), vb)));
    t.backward(mean(square(y)));
    return std::pair{t.grad(va), t.grad(vb)};
  };
  const auto first = run();
  const auto second = run();
  CHECK(first.first == second.first);
  CHECK(first.second == second.second);
}

TEST_CASE("dropout keeps expectation and is identity at rate zero") {
  Tape t;
  Rng rng(8);
  const Var x = t.constant(Tensor(200, 50, 1.0));
  CHECK(dropout(x, 0.0, rng).id == x.id);
  const Tensor y = dropout(x, 0.3, rng).value();
  double s = 0.0;
  for (double v : y.values()) {
    CHECK((v == 0.0 || std::abs(v - 1.0 / 0.7) < 1e-12));
    s += v;
  }
  // Each entry has variance p/(1-p); the mean over 10^4 entries is within 4 standard errors of 1.
  CHECK(std::abs(s / y.size() - 1.0) < 4.0 * std::sqrt(0.3 / 0.7 / y.size()));
  CHECK_THROWS_AS(dropout(x, 1.0, rng), std::invalid_argument);
}
