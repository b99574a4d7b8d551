#include <doctest.h>

#include <cmath>
#include <functional>
#include <random>

#include "surf/autodiff.hpp"
#include "surf/errors.hpp"

using namespace surf;
using ad::Matrix;
using ad::Tape;
using ad::Var;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng, double lo = -2.0, double hi = 2.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix m(r, c);
  for (double& v : m.data) v = u(rng);
  return m;
}

// Max relative error (denominator max(1, |analytic|)) of the tape gradient of
// f against central differences, over every entry of every input.
double gradient_check(const std::vector<Matrix>& inputs, const std::function<Var(Tape&, std::vector<Var>&)>& f,
                      double h = 1e-5) {
  Tape tape;
  std::vector<Var> vars;
  for (const auto& m : inputs) vars.push_back(tape.variable(m));
  Var out = f(tape, vars);
  tape.backward(out);
  double worst = 0.0;
  for (std::size_t a = 0; a < inputs.size(); ++a) {
    const Matrix g = tape.grad(vars[a]);
    for (std::size_t i = 0; i < inputs[a].size(); ++i) {
      auto eval = [&](double delta) {
        std::vector<Matrix> xs = inputs;
        xs[a].data[i] += delta;
        Tape t;
        std::vector<Var> vs;
        for (const auto& m : xs) vs.push_back(t.variable(m));
        return f(t, vs).item();
      };
      const double fd = (eval(h) - eval(-h)) / (2.0 * h);
      worst = std::max(worst, std::abs(fd - g.data[i]) / std::max(1.0, std::abs(g.data[i])));
    }
  }
  return worst;
}

}  // namespace

TEST_CASE("softplus and logsumexp values") {
  CHECK(ad::softplus(0.0) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  Tape t;
  Var x = t.constant(Matrix(1, 2, {1000.0, 1000.0}));
  Var l = ad::logsumexp_rows(x);
  CHECK(std::isfinite(l.item()));
  CHECK(l.item() == doctest::Approx(1000.0 + std::log(2.0)).epsilon(1e-15));
  CHECK(ad::softplus(-800.0) >= 0.0);
  CHECK(ad::softplus(800.0) == 800.0);
}

TEST_CASE("matmul on integer matrices") {
  Tape t;
  Var a = t.constant(Matrix(2, 3, {1, 2, 3, 4, 5, 6}));
  Var b = t.constant(Matrix(3, 1, {7, 8, 9}));
  Var c = ad::matmul(a, b);
  REQUIRE(c.rows() == 2);
  REQUIRE(c.cols() == 1);
  CHECK(c.value().data[0] == 50.0);
  CHECK(c.value().data[1] == 122.0);
}

TEST_CASE("analytic derivatives") {
  Tape t;
  Var x = t.variable(Matrix::scalar(0.0));
  Var y = ad::sum(ad::softplus(x));
  t.backward(y);
  CHECK(t.grad(x).data[0] == doctest::Approx(0.5).epsilon(1e-15));

  Tape t2;
  Var v = t2.variable(Matrix(1, 3, {-1.5, 0.25, 2.0}));
  t2.backward(ad::sum(ad::mul(v, v)));
  const Matrix g = t2.grad(v);
  CHECK(g.data[0] == -3.0);
  CHECK(g.data[1] == 0.5);
  CHECK(g.data[2] == 4.0);
}

TEST_CASE("errors") {
  Tape t;
  Var a = t.variable(Matrix(2, 3));
  Var b = t.variable(Matrix(2, 2));
  CHECK_THROWS_AS(ad::add(a, b), ValidationError);
  try {
    ad::matmul(a, a);
  } catch (const ValidationError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("matmul") != std::string::npos);
    CHECK(msg.find("2x3") != std::string::npos);
  }
  CHECK_THROWS_AS(t.backward(a), ValidationError);
  CHECK_THROWS_AS(ad::log(t.constant(Matrix::scalar(0.0))), NumericError);
  CHECK_THROWS_AS(t.variable(Matrix::scalar(std::nan(""))), NumericError);
  CHECK_THROWS_AS(t.constant(Matrix::scalar(INFINITY)), NumericError);
  CHECK_THROWS_AS(Matrix(2, 2, std::vector<double>{1.0}), ValidationError);
}

TEST_CASE("random 5-parameter MLP matches finite differences") {
  std::mt19937_64 rng(11);
  // y = sum softplus(tanh(x w1) w2 + b2): w1 1x2, w2 2x1, b2 1x1.
  const std::vector<Matrix> p = {random_matrix(1, 2, rng), random_matrix(2, 1, rng), random_matrix(1, 1, rng)};
  auto f = [](Tape& t, std::vector<Var>& v) {
    Var x = t.constant(Matrix(3, 1, {0.3, -1.1, 1.7}));
    Var h = ad::tanh(ad::mul(x, v[0]));
    return ad::sum(ad::softplus(ad::add(ad::matmul(h, v[1]), v[2])));
  };
  CHECK(gradient_check(p, f) <= 1e-6);
}

TEST_CASE("gradient check over random composites of every op") {
  std::mt19937_64 rng(2024);
  using Fn = std::function<Var(Tape&, std::vector<Var>&)>;
  const std::vector<std::pair<const char*, Fn>> cases = {
      {"add/sub broadcast", [](Tape&, std::vector<Var>& v) { return ad::sum(ad::square(ad::sub(ad::add(v[0], v[1]), v[2]))); }},
      {"mul/div", [](Tape&, std::vector<Var>& v) { return ad::sum(ad::div(ad::mul(v[0], v[1]), ad::add_scalar(ad::square(v[2]), 1.0))); }},
      {"exp/log/tanh/sigmoid", [](Tape&, std::vector<Var>& v) {
         return ad::sum(ad::mul(ad::log(ad::add_scalar(ad::exp(v[0]), 0.5)), ad::add(ad::tanh(v[1]), ad::sigmoid(v[2]))));
       }},
      {"softplus/sqrt/one_minus_exp_neg", [](Tape&, std::vector<Var>& v) {
         return ad::sum(ad::add(ad::sqrt(ad::add_scalar(ad::softplus(v[0]), 0.1)), ad::one_minus_exp_neg(ad::square(v[1]))));
       }},
      {"matmul/matmul_nt/transpose", [](Tape&, std::vector<Var>& v) {
         Var a = ad::matmul(ad::transpose(v[0]), v[0]);
         return ad::sum(ad::tanh(ad::add(ad::matmul_nt(a, a), ad::scale(a, 0.3))));
       }},
      {"logsumexp/log_softmax/mean", [](Tape&, std::vector<Var>& v) {
         return ad::add(ad::sum(ad::logsumexp_rows(v[0])), ad::mean(ad::square(ad::log_softmax_rows(v[1]))));
       }},
      {"causal softmax attention", [](Tape&, std::vector<Var>& v) {
         Var s = ad::causal_softmax(ad::matmul_nt(v[0], v[1]));
         return ad::sum(ad::tanh(ad::matmul(s, v[2])));
       }},
      {"slices/concat/gather/pick", [](Tape&, std::vector<Var>& v) {
         const Var parts[] = {ad::slice_rows(v[0], 1, 2), ad::slice_cols(v[1], 0, 3)};
         Var c = ad::concat_rows(parts);
         const Var cols[] = {c, ad::neg(c)};
         Var d = ad::concat_cols(cols);
         const std::size_t gi[] = {0, 2, 2, 1};
         const std::size_t pk[] = {5, 0, 3, 1};
         return ad::sum(ad::square(ad::pick(ad::gather_rows(d, gi), pk)));
       }},
      {"layer norm/relu/sum_rows", [](Tape& t, std::vector<Var>& v) {
         Var g = ad::add_scalar(ad::slice_rows(v[1], 0, 1), 1.0);
         Var b = ad::slice_rows(v[2], 0, 1);
         (void)t;
         return ad::sum(ad::square(ad::sum_rows(ad::mul(ad::layer_norm_rows(v[0], g, b), ad::relu(ad::add_scalar(v[0], 3.0))))));
       }},
      {"segment weighted sum", [](Tape&, std::vector<Var>& v) {
         Var col = ad::transpose(ad::slice_rows(v[0], 0, 1));
         const double w[] = {0.5, -1.0, 2.0};
         return ad::sum(ad::exp(ad::segment_weighted_sum(col, w, 1)));
       }},
  };
  for (const auto& [name, fn] : cases) {
    CAPTURE(name);
    for (int trial = 0; trial < 5; ++trial) {
      const std::vector<Matrix> in = {random_matrix(3, 3, rng), random_matrix(3, 3, rng), random_matrix(3, 3, rng)};
      CHECK(gradient_check(in, fn) <= 1e-5);
    }
  }
  // Row-vector broadcasting in the binary ops.
  for (int trial = 0; trial < 5; ++trial) {
    const std::vector<Matrix> in = {random_matrix(4, 3, rng), random_matrix(1, 3, rng), random_matrix(4, 1, rng)};
    auto fn = [](Tape&, std::vector<Var>& v) {
      return ad::sum(ad::tanh(ad::mul(ad::add(v[0], v[1]), ad::div(v[2], ad::add_scalar(ad::square(v[1]), 1.0)))));
    };
    CHECK(gradient_check(in, fn) <= 1e-5);
  }
}

TEST_CASE("linearity of backward") {
  std::mt19937_64 rng(5);
  const Matrix x0 = random_matrix(3, 2, rng);
  auto grads = [&](double a, double b) {
    Tape t;
    Var x = t.variable(x0);
    Var f = ad::sum(ad::tanh(x));
    Var g = ad::sum(ad::square(x));
    t.backward(ad::add(ad::scale(f, a), ad::scale(g, b)));
    return t.grad(x);
  };
  const double a = 0.75, b = -2.5;
  const Matrix gf = grads(1.0, 0.0), gg = grads(0.0, 1.0), gab = grads(a, b);
  for (std::size_t i = 0; i < x0.size(); ++i) CHECK(gab.data[i] == doctest::Approx(a * gf.data[i] + b * gg.data[i]).epsilon(1e-15));
}

TEST_CASE("determinism and dropout") {
  std::mt19937_64 rng(9);
  const Matrix x0 = random_matrix(6, 4, rng);
  auto run = [&] {
    Tape t;
    Var x = t.variable(x0);
    Rng r(42);
    t.backward(ad::sum(ad::square(ad::dropout(x, 0.3, r))));
    return t.grad(x);
  };
  CHECK(run() == run());
  Tape t;
  Rng r(1);
  Var x = t.variable(x0);
  CHECK(ad::dropout(x, 0.0, r).id() == x.id());
}

TEST_CASE("causal softmax does not look ahead") {
  std::mt19937_64 rng(3);
  Matrix s = random_matrix(4, 4, rng);
  Tape t;
  const Matrix p1 = ad::causal_softmax(t.constant(s)).value();
  s(1, 3) += 10.0;
  s(0, 2) -= 4.0;
  const Matrix p2 = ad::causal_softmax(t.constant(s)).value();
  for (std::size_t j = 0; j < 4; ++j) {
    CHECK(p1(0, j) == p2(0, j));
    CHECK(p1(1, j) == p2(1, j));
  }
  CHECK(p1(3, 3) > 0.0);
  CHECK(p1(0, 1) == 0.0);
}
