#pragma once

// Reverse-mode differentiation over dense row-major matrices.
//
// Every value is a 2-D matrix (vectors are n x 1 or 1 x n, scalars 1 x 1).
// Array operations are fused: one tape node per op, not per element. A Tape
// is single-owner; independent tapes may be used concurrently.

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "surf/rng.hpp"

namespace surf::ad {

struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}
  Matrix(std::size_t r, std::size_t c, std::vector<double> values);

  static Matrix scalar(double v) { return Matrix(1, 1, v); }
  static Matrix column(std::span<const double> v);
  static Matrix row(std::span<const double> v);

  std::size_t size() const noexcept { return data.size(); }
  bool empty() const noexcept { return data.empty(); }
  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::span<const double> row_span(std::size_t r) const { return {data.data() + r * cols, cols}; }

  friend bool operator==(const Matrix&, const Matrix&) = default;
};

std::string shape_str(const Matrix& m);

class Tape;

// Lightweight handle to a node on a tape.
class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  std::size_t rows() const { return value().rows; }
  std::size_t cols() const { return value().cols; }
  double item() const;
  bool tracked() const;
  Tape* tape() const noexcept { return tape_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* t, std::size_t id) : tape_(t), id_(id) {}
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  // Accumulates into the parents' gradients given this node's gradient.
  using Backprop = std::function<void(Tape&, const Matrix& grad)>;

  explicit Tape(bool checked = true) : checked_(checked) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Tracked leaf (a parameter or an input we differentiate against).
  Var variable(Matrix value);
  Var constant(Matrix value);

  // Records an op result; tracked iff any parent is tracked.
  Var record(Matrix value, std::initializer_list<Var> parents, Backprop fn);
  Var record(Matrix value, std::span<const Var> parents, Backprop fn);

  // Seeds d(loss)/d(loss) = 1 and visits nodes in reverse creation order.
  void backward(Var loss);

  // Gradient of the last backward() with respect to v (zeros if unreached).
  Matrix grad(Var v) const;

  // Mutable gradient buffer for node `id`, allocated lazily; used by ops.
  Matrix& grad_buffer(std::size_t id);
  const Matrix& value(std::size_t id) const { return nodes_[id].value; }
  bool tracked(std::size_t id) const { return nodes_[id].tracked; }

  void zero_grad();
  void clear() { nodes_.clear(); }
  std::size_t size() const noexcept { return nodes_.size(); }
  bool checked() const noexcept { return checked_; }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool tracked = false;
    Backprop backprop;
  };
  std::vector<Node> nodes_;
  bool checked_;
};

// ---- elementwise binary (shapes equal, or an operand broadcasts along a
// dimension of extent 1) ----
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);

Var add_scalar(Var a, double c);
Var scale(Var a, double c);
Var neg(Var a);

// ---- elementwise unary ----
Var exp(Var a);
Var log(Var a);
Var tanh(Var a);
Var sigmoid(Var a);
Var softplus(Var a);
Var relu(Var a);
Var square(Var a);
// 1 - exp(-a) without cancellation near 0.
Var one_minus_exp_neg(Var a);
// Square root with a zero subgradient at 0.
Var sqrt(Var a);

// ---- linear algebra ----
Var matmul(Var a, Var b);
// a * b^T
Var matmul_nt(Var a, Var b);
Var transpose(Var a);

// ---- reductions ----
Var sum(Var a);
Var mean(Var a);
// Row sums as an n x 1 column.
Var sum_rows(Var a);
Var logsumexp_rows(Var a);
Var log_softmax_rows(Var a);
// Row softmax over columns j <= i (square input).
Var causal_softmax(Var a);
// out[i] = sum_q w[i*q_per + q] * a[i*q_per + q] for a column input.
Var segment_weighted_sum(Var a, std::span<const double> weights, std::size_t per_segment);

// ---- structure ----
Var slice_rows(Var a, std::size_t begin, std::size_t count);
Var slice_cols(Var a, std::size_t begin, std::size_t count);
Var concat_rows(std::span<const Var> parts);
Var concat_cols(std::span<const Var> parts);
Var gather_rows(Var a, std::span<const std::size_t> index);
// out[i] = a(i, index[i]) as an n x 1 column.
Var pick(Var a, std::span<const std::size_t> index);
Var detach(Var a);

// ---- layers ----
Var layer_norm_rows(Var x, Var gain, Var bias, double eps = 1e-5);
// Inverted dropout; identity when p == 0.
Var dropout(Var a, double p, Rng& rng);

// Scalar helpers used by the plain-double code paths.
double softplus(double x);
double sigmoid(double x);

}  // namespace surf::ad
