#include "surf/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Core>

#include "surf/errors.hpp"

namespace surf::ad {

namespace {

constexpr const char* kModule = "autodiff";

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

ConstMap view(const Matrix& m) { return ConstMap(m.data.data(), Eigen::Index(m.rows), Eigen::Index(m.cols)); }
MutMap view(Matrix& m) { return MutMap(m.data.data(), Eigen::Index(m.rows), Eigen::Index(m.cols)); }

[[noreturn]] void shape_error(const char* op, const Matrix& a, const Matrix& b) {
  throw ValidationError(kModule, std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

void check_finite(const Matrix& m, const char* what) {
  for (double v : m.data)
    if (!std::isfinite(v)) throw NumericError(kModule, std::string(what) + ": non-finite value");
}

Tape& tape_of(Var a) {
  if (!a.valid()) throw ValidationError(kModule, "operation on an empty Var");
  return *a.tape();
}

Tape& tape_of(Var a, Var b) {
  Tape& t = tape_of(a);
  if (b.tape() != &t) throw ValidationError(kModule, "operands live on different tapes");
  return t;
}

// Elementwise unary op. `deriv(x, y)` is dy/dx given input x and output y.
template <class F, class D>
Var unary(Var a, F f, D deriv) {
  Tape& t = tape_of(a);
  const Matrix& x = a.value();
  Matrix y(x.rows, x.cols);
  for (std::size_t i = 0; i < x.size(); ++i) y.data[i] = f(x.data[i]);
  const std::size_t out = t.size();
  const std::size_t ia = a.id();
  return t.record(std::move(y), {a}, [ia, out, deriv](Tape& tp, const Matrix& g) {
    if (!tp.tracked(ia)) return;
    const Matrix& xv = tp.value(ia);
    const Matrix& yv = tp.value(out);
    Matrix& ga = tp.grad_buffer(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga.data[i] += g.data[i] * deriv(xv.data[i], yv.data[i]);
  });
}

struct Broadcast {
  std::size_t rows, cols;
  bool a_r, a_c, b_r, b_c;  // true when that operand broadcasts along the dim
};

Broadcast broadcast_shape(const char* op, const Matrix& a, const Matrix& b) {
  auto dim = [&](std::size_t x, std::size_t y) -> std::size_t {
    if (x == y) return x;
    if (x == 1) return y;
    if (y == 1) return x;
    shape_error(op, a, b);
  };
  Broadcast s{};
  s.rows = dim(a.rows, b.rows);
  s.cols = dim(a.cols, b.cols);
  s.a_r = a.rows != s.rows;
  s.a_c = a.cols != s.cols;
  s.b_r = b.rows != s.rows;
  s.b_c = b.cols != s.cols;
  return s;
}

// Elementwise binary op with broadcasting. `da(x, y, z)` and `db(x, y, z)`
// are the partials of z = f(x, y).
template <class F, class DA, class DB>
Var binary(const char* op, Var a, Var b, F f, DA da, DB db) {
  Tape& t = tape_of(a, b);
  const Matrix& x = a.value();
  const Matrix& y = b.value();
  const Broadcast s = broadcast_shape(op, x, y);
  Matrix z(s.rows, s.cols);
  for (std::size_t i = 0; i < s.rows; ++i) {
    const std::size_t xr = s.a_r ? 0 : i, yr = s.b_r ? 0 : i;
    for (std::size_t j = 0; j < s.cols; ++j) {
      z(i, j) = f(x(xr, s.a_c ? 0 : j), y(yr, s.b_c ? 0 : j));
    }
  }
  const std::size_t ia = a.id(), ib = b.id(), out = t.size();
  return t.record(std::move(z), {a, b}, [ia, ib, out, s, da, db](Tape& tp, const Matrix& g) {
    const Matrix& xv = tp.value(ia);
    const Matrix& yv = tp.value(ib);
    const Matrix& zv = tp.value(out);
    const bool ta = tp.tracked(ia), tb = tp.tracked(ib);
    Matrix* ga = ta ? &tp.grad_buffer(ia) : nullptr;
    Matrix* gb = tb ? &tp.grad_buffer(ib) : nullptr;
    for (std::size_t i = 0; i < s.rows; ++i) {
      const std::size_t xr = s.a_r ? 0 : i, yr = s.b_r ? 0 : i;
      for (std::size_t j = 0; j < s.cols; ++j) {
        const std::size_t xc = s.a_c ? 0 : j, yc = s.b_c ? 0 : j;
        const double gi = g(i, j);
        const double xi = xv(xr, xc), yi = yv(yr, yc), zi = zv(i, j);
        if (ga) (*ga)(xr, xc) += gi * da(xi, yi, zi);
        if (gb) (*gb)(yr, yc) += gi * db(xi, yi, zi);
      }
    }
  });
}

}  // namespace

// ---------------------------------------------------------------- Matrix

Matrix::Matrix(std::size_t r, std::size_t c, std::vector<double> values)
    : rows(r), cols(c), data(std::move(values)) {
  if (data.size() != r * c)
    throw ValidationError(kModule, "matrix data length " + std::to_string(data.size()) + " does not match " +
                                       std::to_string(r) + "x" + std::to_string(c));
}

Matrix Matrix::column(std::span<const double> v) { return Matrix(v.size(), 1, {v.begin(), v.end()}); }
Matrix Matrix::row(std::span<const double> v) { return Matrix(1, v.size(), {v.begin(), v.end()}); }

std::string shape_str(const Matrix& m) { return std::to_string(m.rows) + "x" + std::to_string(m.cols); }

// ---------------------------------------------------------------- Var / Tape

const Matrix& Var::value() const { return tape_->value(id_); }

double Var::item() const {
  const Matrix& v = value();
  if (v.size() != 1) throw ValidationError(kModule, "item() on non-scalar " + shape_str(v));
  return v.data[0];
}

bool Var::tracked() const { return tape_->tracked(id_); }

Var Tape::variable(Matrix value) {
  if (checked_) check_finite(value, "variable");
  nodes_.push_back(Node{std::move(value), {}, true, {}});
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Matrix value) {
  if (checked_) check_finite(value, "constant");
  nodes_.push_back(Node{std::move(value), {}, false, {}});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Matrix value, std::initializer_list<Var> parents, Backprop fn) {
  return record(std::move(value), std::span<const Var>(parents.begin(), parents.size()), std::move(fn));
}

Var Tape::record(Matrix value, std::span<const Var> parents, Backprop fn) {
  bool tracked = false;
  for (const Var& p : parents) tracked = tracked || nodes_[p.id()].tracked;
  nodes_.push_back(Node{std::move(value), {}, tracked, tracked ? std::move(fn) : Backprop{}});
  return Var(this, nodes_.size() - 1);
}

Matrix& Tape::grad_buffer(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty() && !n.value.empty()) n.grad = Matrix(n.value.rows, n.value.cols);
  return n.grad;
}

void Tape::zero_grad() {
  for (auto& n : nodes_) n.grad = Matrix();
}

void Tape::backward(Var loss) {
  if (loss.tape() != this) throw ValidationError(kModule, "backward: loss is not on this tape");
  const Matrix& lv = loss.value();
  if (lv.size() != 1) throw ValidationError(kModule, "backward: loss must be scalar, got " + shape_str(lv));
  zero_grad();
  grad_buffer(loss.id()).data[0] = 1.0;
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.tracked || !n.backprop || n.grad.empty()) continue;
    n.backprop(*this, n.grad);
  }
}

Matrix Tape::grad(Var v) const {
  const Node& n = nodes_.at(v.id());
  if (n.grad.empty()) return Matrix(n.value.rows, n.value.cols);
  return n.grad;
}

// ---------------------------------------------------------------- scalar helpers

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// ---------------------------------------------------------------- binary

Var add(Var a, Var b) {
  return binary(
      "add", a, b, [](double x, double y) { return x + y; }, [](double, double, double) { return 1.0; },
      [](double, double, double) { return 1.0; });
}

Var sub(Var a, Var b) {
  return binary(
      "sub", a, b, [](double x, double y) { return x - y; }, [](double, double, double) { return 1.0; },
      [](double, double, double) { return -1.0; });
}

Var mul(Var a, Var b) {
  return binary(
      "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y, double) { return y; },
      [](double x, double, double) { return x; });
}

Var div(Var a, Var b) {
  if (tape_of(a, b).checked())
    for (double v : b.value().data)
      if (v == 0.0) throw NumericError(kModule, "div: division by zero");
  return binary(
      "div", a, b, [](double x, double y) { return x / y; }, [](double, double y, double) { return 1.0 / y; },
      [](double, double y, double z) { return -z / y; });
}

Var add_scalar(Var a, double c) {
  return unary(a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

Var scale(Var a, double c) {
  return unary(a, [c](double x) { return c * x; }, [c](double, double) { return c; });
}

Var neg(Var a) { return scale(a, -1.0); }

// ---------------------------------------------------------------- unary

Var exp(Var a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(Var a) {
  if (tape_of(a).checked())
    for (double v : a.value().data)
      if (!(v > 0.0)) throw NumericError(kModule, "log: input must be strictly positive");
  return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var tanh(Var a) {
  return unary(a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var sigmoid(Var a) {
  return unary(a, [](double x) { return ad::sigmoid(x); }, [](double, double y) { return y * (1.0 - y); });
}

Var softplus(Var a) {
  return unary(a, [](double x) { return ad::softplus(x); }, [](double x, double) { return ad::sigmoid(x); });
}

Var relu(Var a) {
  return unary(a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var square(Var a) {
  return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var one_minus_exp_neg(Var a) {
  return unary(a, [](double x) { return -std::expm1(-x); }, [](double x, double) { return std::exp(-x); });
}

Var sqrt(Var a) {
  if (tape_of(a).checked())
    for (double v : a.value().data)
      if (v < 0.0) throw NumericError(kModule, "sqrt: negative input");
  return unary(a, [](double x) { return std::sqrt(x); },
               [](double, double y) { return y > 0.0 ? 0.5 / y : 0.0; });
}

// ---------------------------------------------------------------- linear algebra

namespace {

// Forward products accumulate each output row in a fixed order so a row's
// value does not depend on how many other rows are present (Eigen picks
// different kernels by size). Backward passes use Eigen.
void row_product(const Matrix& x, const Matrix& y, Matrix& z) {
  for (std::size_t i = 0; i < x.rows; ++i) {
    double* zr = z.data.data() + i * z.cols;
    for (std::size_t k = 0; k < x.cols; ++k) {
      const double a = x.data[i * x.cols + k];
      const double* yr = y.data.data() + k * y.cols;
      for (std::size_t j = 0; j < y.cols; ++j) zr[j] += a * yr[j];
    }
  }
}

void row_product_nt(const Matrix& x, const Matrix& y, Matrix& z) {
  for (std::size_t i = 0; i < x.rows; ++i) {
    const double* xr = x.data.data() + i * x.cols;
    for (std::size_t j = 0; j < y.rows; ++j) {
      const double* yr = y.data.data() + j * y.cols;
      double acc = 0.0;
      for (std::size_t k = 0; k < x.cols; ++k) acc += xr[k] * yr[k];
      z.data[i * z.cols + j] = acc;
    }
  }
}

}  // namespace

Var matmul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const Matrix& x = a.value();
  const Matrix& y = b.value();
  if (x.cols != y.rows) shape_error("matmul", x, y);
  Matrix z(x.rows, y.cols);
  row_product(x, y, z);
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(std::move(z), {a, b}, [ia, ib](Tape& tp, const Matrix& g) {
    if (tp.tracked(ia)) view(tp.grad_buffer(ia)).noalias() += view(g) * view(tp.value(ib)).transpose();
    if (tp.tracked(ib)) view(tp.grad_buffer(ib)).noalias() += view(tp.value(ia)).transpose() * view(g);
  });
}

Var matmul_nt(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const Matrix& x = a.value();
  const Matrix& y = b.value();
  if (x.cols != y.cols) shape_error("matmul_nt", x, y);
  Matrix z(x.rows, y.rows);
  row_product_nt(x, y, z);
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(std::move(z), {a, b}, [ia, ib](Tape& tp, const Matrix& g) {
    if (tp.tracked(ia)) view(tp.grad_buffer(ia)).noalias() += view(g) * view(tp.value(ib));
    if (tp.tracked(ib)) view(tp.grad_buffer(ib)).noalias() += view(g).transpose() * view(tp.value(ia));
  });
}

Var transpose(Var a) {
  Tape& t = tape_of(a);
  const Matrix& x = a.value();
  Matrix z(x.cols, x.rows);
  view(z) = view(x).transpose();
  const std::size_t ia = a.id();
  return t.record(std::move(z), {a}, [ia](Tape& tp, const Matrix& g) {
    if (tp.tracked(ia)) view(tp.grad_buffer(ia)) += view(g).transpose();
  });
}

// ---------------------------------------------------------------- reductions

Var sum(Var a) {
  Tape& t = tape_of(a);
  double s = 0.0;
  for (double v : a.value().data) s += v;
  const std::size_t ia = a.id();
  return t.record(Matrix::scalar(s), {a}, [ia](Tape& tp, const Matrix& g) {
    if (!tp.tracked(ia)) return;
    for (double& v : tp.grad_buffer(ia).data) v += g.data[0];
  });
}

Var mean(Var a) {
  const std::size_t n = a.value().size();
  if (n == 0) throw ValidationError(kModule, "mean of empty matrix");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

Var sum_rows(Var a) {
  Tape& t = tape_of(a);
  const Matrix& x = a.value();
  Matrix z(x.rows, 1);
  for (std::size_t i = 0; i < x.rows; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < x.cols; ++j) s += x(i, j);
    z.data[i] = s;
  }
  const std::size_t ia = a.id();
  return t.record(std::move(z), {a}, [ia](Tape& tp, const Matrix& g) {
    if (!tp.tracked(ia)) return;
    Matrix& ga = tp.grad_buffer(ia);
    for (std::size_t i = 0; i < ga.rows; ++i)
      for (std::size_t j = 0; j < ga.cols; ++j) ga(i, j) += g.data[i];
  });
}

Var logsumexp_rows(Var a) {
  Tape& t = tape_of(a);
  const Matrix& x = a.value();
  if (x.cols == 0) throw ValidationError(kModule, "logsumexp_rows: no columns");
  Matrix z(x.rows, 1);
  for (std::size_t i = 0; i < x.rows; ++i) {
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < x.cols; ++j) m = std::max(m, x(i, j));
    double s = 0.0;
    for (std::size_t j = 0; j < x.cols; ++j) s += std::exp(x(i, j) - m);
    z.data[i] = m + std::log(s);
  }
  const std::size_t ia = a.id(), out = t.size();
  return t.record(std::move(z), {a}, [ia, out](Tape& tp, const Matrix& g) {
    if (!tp.tracked(ia)) return;
    const Matrix& xv = tp.value(ia);
    const Matrix& zv = tp.value(out);
    Matrix& ga = tp.grad_buffer(ia);
    for (std::size_t i = 0; i < xv.rows; ++i)
      for (std::size_t j = 0; j < xv.cols; ++j) ga(i, j) += g.data[i] * std::exp(xv(i, j) - zv.data[i]);
  });
}

Var log_softmax_rows(Var a) {
  Tape& t = tape_of(a);
  const Matrix& x = a.value();
  Matrix z(x.rows, x.cols);
  for (std::size_t i = 0; i < x.rows; ++i) {
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < x.cols; ++j) m = std::max(m, x(i, j));
    double s = 0.0;
    for (std::size_t j = 0; j < x.cols; ++j) s += std::exp(x(i, j) - m);
    const double lse = m + std::log(s);
    for (std::size_t j = 0; j < x.cols; ++j) z(i, j) = x(i, j) - lse;
  }
  const std::size_t ia = a.id(), out = t.size();
  return t.record(std::move(z), {a}, [ia, out](Tape& tp, const Matrix& g) {
    if (!tp.tracked(ia)) return;
    const Matrix& zv = tp.value(out);
    Matrix& ga = tp.grad_buffer(ia);
    for (std::size_t i = 0; i < zv.rows; ++i) {
      double gs = 0.0;
      for (std::size_t j = 0; j < zv.cols; ++j) gs += g(i, j);
      for (std::size_t j = 0; j < zv.cols; ++j) ga(i, j) += g(i, j) - std::exp(zv(i, j)) * gs;
    }
  });
}

Var causal_softmax(Var a) {
  Tape& t = tape_of(a);
  const Matrix& x = a.value();
  if (x.rows != x.cols) shape_error("causal_softmax", x, x);
  const std::size_t n = x.rows;
  Matrix z(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j <= i; ++j) m = std::max(m, x(i, j));
    double s = 0.0;
    for (std::size_t j = 0; j <= i; ++j) {
      z(i, j) = std::exp(x(i, j) - m);
      s += z(i, j);
    }
    for (std::size_t j = 0; j <= i; ++j) z(i, j) /= s;
  }
  const std::size_t ia = a.id(), out = t.size();
  return t.record(std::move(z), {a}, [ia, out](Tape& tp, const Matrix& g) {
    if (!tp.tracked(ia)) return;
    const Matrix& p = tp.value(out);
    Matrix& ga = tp.grad_buffer(ia);
    for (std::size_t i = 0; i < p.rows; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j <= i; ++j) dot += g(i, j) * p(i, j);
      for (std::size_t j = 0; j <= i; ++j) ga(i, j) += p(i, j) * (g(i, j) - dot);
    }
  });
}

Var segment_weighted_sum(Var a, std::span<const double> weights, std::size_t per_segment) {
  Tape& t = tape_of(a);
  const Matrix& x = a.value();
  if (x.cols != 1 || per_segment == 0 || x.rows % per_segment != 0 || weights.size() != x.rows)
    throw ValidationError(kModule, "segment_weighted_sum: bad shape " + shape_str(x));
  const std::size_t n = x.rows / per_segment;
  Matrix z(n, 1);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t q = 0; q < per_segment; ++q) s += weights[i * per_segment + q] * x.data[i * per_segment + q];
    z.data[i] = s;
  }
  std::vector<double> w(weights.begin(), weights.end());
  const std::size_t ia = a.id();
  return t.record(std::move(z), {a}, [ia, w = std::move(w), per_segment](Tape& tp, const Matrix& g) {
    if (!tp.tracked(ia)) return;
    Matrix& ga = tp.grad_buffer(ia);
    for (std::size_t r = 0; r < ga.rows; ++r) ga.data[r] += w[r] * g.data[r / per_segment];
  });
}

// ---------------------------------------------------------------- structure

Var slice_rows(Var a, std::size_t begin, std::size_t count) {
  Tape& t = tape_of(a);
  const Matrix& x = a.value();
  if (begin + count > x.rows)
    throw ValidationError(kModule, "slice_rows: rows [" + std::to_string(begin) + ", " +
                                       std::to_string(begin + count) + ") out of " + shape_str(x));
  Matrix z(count, x.cols,
           std::vector<double>(x.data.begin() + static_cast<std::ptrdiff_t>(begin * x.cols),
                               x.data.begin() + static_cast<std::ptrdiff_t>((begin + count) * x.cols)));
  const std::size_t ia = a.id();
  return t.record(std::move(z), {a}, [ia, begin](Tape& tp, const Matrix& g) {
    if (!tp.tracked(ia)) return;
    Matrix& ga = tp.grad_buffer(ia);
    const std::size_t off = begin * ga.cols;
    for (std::size_t i = 0; i < g.size(); ++i) ga.data[off + i] += g.data[i];
  });
}

Var slice_cols(Var a, std::size_t begin, std::size_t count) {
  Tape& t = tape_of(a);
  const Matrix& x = a.value();
  if (begin + count > x.cols)
    throw ValidationError(kModule, "slice_cols: cols [" + std::to_string(begin) + ", " +
                                       std::to_string(begin + count) + ") out of " + shape_str(x));
  Matrix z(x.rows, count);
  for (std::size_t i = 0; i < x.rows; ++i)
    for (std::size_t j = 0; j < count; ++j) z(i, j) = x(i, begin + j);
  const std::size_t ia = a.id();
  return t.record(std::move(z), {a}, [ia, begin](Tape& tp, const Matrix& g) {
    if (!tp.tracked(ia)) return;
    Matrix& ga = tp.grad_buffer(ia);
    for (std::size_t i = 0; i < g.rows; ++i)
      for (std::size_t j = 0; j < g.cols; ++j) ga(i, begin + j) += g(i, j);
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ValidationError(kModule, "concat_rows: no inputs");
  Tape& t = tape_of(parts.front());
  const std::size_t cols = parts.front().cols();
  std::size_t rows = 0;
  for (const Var& p : parts) {
    if (p.tape() != &t) throw ValidationError(kModule, "concat_rows: operands live on different tapes");
    if (p.cols() != cols) shape_error("concat_rows", parts.front().value(), p.value());
    rows += p.rows();
  }
  Matrix z(rows, cols);
  std::vector<std::size_t> ids;
  std::size_t off = 0;
  for (const Var& p : parts) {
    std::copy(p.value().data.begin(), p.value().data.end(), z.data.begin() + static_cast<std::ptrdiff_t>(off));
    off += p.value().size();
    ids.push_back(p.id());
  }
  return t.record(std::move(z), parts, [ids = std::move(ids)](Tape& tp, const Matrix& g) {
    std::size_t o = 0;
    for (std::size_t id : ids) {
      const std::size_t n = tp.value(id).size();
      if (tp.tracked(id)) {
        Matrix& gp = tp.grad_buffer(id);
        for (std::size_t i = 0; i < n; ++i) gp.data[i] += g.data[o + i];
      }
      o += n;
    }
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ValidationError(kModule, "concat_cols: no inputs");
  Tape& t = tape_of(parts.front());
  const std::size_t rows = parts.front().rows();
  std::size_t cols = 0;
  for (const Var& p : parts) {
    if (p.tape() != &t) throw ValidationError(kModule, "concat_cols: operands live on different tapes");
    if (p.rows() != rows) shape_error("concat_cols", parts.front().value(), p.value());
    cols += p.cols();
  }
  Matrix z(rows, cols);
  std::vector<std::size_t> ids;
  std::size_t c0 = 0;
  for (const Var& p : parts) {
    const Matrix& v = p.value();
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < v.cols; ++j) z(i, c0 + j) = v(i, j);
    c0 += v.cols;
    ids.push_back(p.id());
  }
  return t.record(std::move(z), parts, [ids = std::move(ids)](Tape& tp, const Matrix& g) {
    std::size_t c = 0;
    for (std::size_t id : ids) {
      const std::size_t w = tp.value(id).cols;
      if (tp.tracked(id)) {
        Matrix& gp = tp.grad_buffer(id);
        for (std::size_t i = 0; i < g.rows; ++i)
          for (std::size_t j = 0; j < w; ++j) gp(i, j) += g(i, c + j);
      }
      c += w;
    }
  });
}

Var gather_rows(Var a, std::span<const std::size_t> index) {
  Tape& t = tape_of(a);
  const Matrix& x = a.value();
  Matrix z(index.size(), x.cols);
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] >= x.rows) throw ValidationError(kModule, "gather_rows: index out of range");
    std::copy_n(x.data.begin() + static_cast<std::ptrdiff_t>(index[r] * x.cols), x.cols,
                z.data.begin() + static_cast<std::ptrdiff_t>(r * x.cols));
  }
  std::vector<std::size_t> idx(index.begin(), index.end());
  const std::size_t ia = a.id();
  return t.record(std::move(z), {a}, [ia, idx = std::move(idx)](Tape& tp, const Matrix& g) {
    if (!tp.tracked(ia)) return;
    Matrix& ga = tp.grad_buffer(ia);
    for (std::size_t r = 0; r < idx.size(); ++r)
      for (std::size_t j = 0; j < g.cols; ++j) ga(idx[r], j) += g(r, j);
  });
}

Var pick(Var a, std::span<const std::size_t> index) {
  Tape& t = tape_of(a);
  const Matrix& x = a.value();
  if (index.size() != x.rows) throw ValidationError(kModule, "pick: need one index per row");
  Matrix z(x.rows, 1);
  for (std::size_t i = 0; i < x.rows; ++i) {
    if (index[i] >= x.cols) throw ValidationError(kModule, "pick: column index out of range");
    z.data[i] = x(i, index[i]);
  }
  std::vector<std::size_t> idx(index.begin(), index.end());
  const std::size_t ia = a.id();
  return t.record(std::move(z), {a}, [ia, idx = std::move(idx)](Tape& tp, const Matrix& g) {
    if (!tp.tracked(ia)) return;
    Matrix& ga = tp.grad_buffer(ia);
    for (std::size_t i = 0; i < idx.size(); ++i) ga(i, idx[i]) += g.data[i];
  });
}

Var detach(Var a) { return tape_of(a).constant(a.value()); }

// ---------------------------------------------------------------- layers

Var layer_norm_rows(Var x, Var gain, Var bias, double eps) {
  Tape& t = tape_of(x, gain);
  if (bias.tape() != &t) throw ValidationError(kModule, "layer_norm: operands live on different tapes");
  const Matrix& xv = x.value();
  const std::size_t n = xv.rows, d = xv.cols;
  if (gain.rows() != 1 || gain.cols() != d || bias.rows() != 1 || bias.cols() != d)
    shape_error("layer_norm", xv, gain.value());
  // Saved per-row normalized values and inverse std.
  Matrix xhat(n, d);
  std::vector<double> inv_std(n);
  Matrix z(n, d);
  const Matrix& gv = gain.value();
  const Matrix& bv = bias.value();
  for (std::size_t i = 0; i < n; ++i) {
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += xv(i, j);
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (xv(i, j) - mu) * (xv(i, j) - mu);
    var /= static_cast<double>(d);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      xhat(i, j) = (xv(i, j) - mu) * inv_std[i];
      z(i, j) = xhat(i, j) * gv.data[j] + bv.data[j];
    }
  }
  const std::size_t ix = x.id(), ig = gain.id(), ib = bias.id();
  return t.record(std::move(z), {x, gain, bias},
                  [ix, ig, ib, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& tp, const Matrix& g) {
                    const std::size_t rows = xhat.rows, dd = xhat.cols;
                    const Matrix& gain_v = tp.value(ig);
                    if (tp.tracked(ig)) {
                      Matrix& gg = tp.grad_buffer(ig);
                      for (std::size_t i = 0; i < rows; ++i)
                        for (std::size_t j = 0; j < dd; ++j) gg.data[j] += g(i, j) * xhat(i, j);
                    }
                    if (tp.tracked(ib)) {
                      Matrix& gb = tp.grad_buffer(ib);
                      for (std::size_t i = 0; i < rows; ++i)
                        for (std::size_t j = 0; j < dd; ++j) gb.data[j] += g(i, j);
                    }
                    if (tp.tracked(ix)) {
                      Matrix& gx = tp.grad_buffer(ix);
                      const double inv_d = 1.0 / static_cast<double>(dd);
                      for (std::size_t i = 0; i < rows; ++i) {
                        double s1 = 0.0, s2 = 0.0;
                        for (std::size_t j = 0; j < dd; ++j) {
                          const double gy = g(i, j) * gain_v.data[j];
                          s1 += gy;
                          s2 += gy * xhat(i, j);
                        }
                        for (std::size_t j = 0; j < dd; ++j) {
                          const double gy = g(i, j) * gain_v.data[j];
                          gx(i, j) += inv_std[i] * (gy - inv_d * s1 - xhat(i, j) * inv_d * s2);
                        }
                      }
                    }
                  });
}

Var dropout(Var a, double p, Rng& rng) {
  if (p <= 0.0) return a;
  if (p >= 1.0) throw ValidationError(kModule, "dropout probability must be in [0, 1)");
  Tape& t = tape_of(a);
  const Matrix& x = a.value();
  std::bernoulli_distribution keep(1.0 - p);
  std::vector<double> mask(x.size());
  for (double& m : mask) m = keep(rng) ? 1.0 / (1.0 - p) : 0.0;
  Matrix z(x.rows, x.cols);
  for (std::size_t i = 0; i < x.size(); ++i) z.data[i] = x.data[i] * mask[i];
  const std::size_t ia = a.id();
  return t.record(std::move(z), {a}, [ia, mask = std::move(mask)](Tape& tp, const Matrix& g) {
    if (!tp.tracked(ia)) return;
    Matrix& ga = tp.grad_buffer(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga.data[i] += g.data[i] * mask[i];
  });
}

}  // namespace surf::ad
