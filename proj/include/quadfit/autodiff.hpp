#pragma once

// Reverse-mode differentiation over small dense row-major matrices.
//
// A Tape records every operation applied to Vars created from it. Calling
// Tape::backward on a 1x1 result sweeps the recorded nodes in reverse order
// and accumulates adjoints into every node that depends on a variable.
// Tapes are single-threaded; use one tape per thread.

#include <functional>
#include <initializer_list>
#include <span>
#include <string_view>
#include <vector>

namespace quadfit::ad {

class Tape;

class Var {
 public:
  Var() = default;

  int rows() const;
  int cols() const;
  int size() const { return rows() * cols(); }
  std::span<const double> value() const;
  double item() const;
  double at(int r, int c) const { return value()[static_cast<size_t>(r * cols() + c)]; }

  Tape& tape() const { return *tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  // Receives the output adjoint and accumulates into the inputs' adjoints.
  using Backward = std::function<void(Tape&, std::span<const double>)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var variable(std::vector<double> values, int rows, int cols);
  Var variable(std::vector<double> values);
  Var constant(std::vector<double> values, int rows, int cols);
  Var constant(double value);
  Var zeros(int rows, int cols) { return constant(std::vector<double>(static_cast<size_t>(rows * cols), 0.0), rows, cols); }

  // Appends a node. A null backward marks the op as non-differentiable; the
  // sweep fails with Errc::not_differentiable if an adjoint reaches it.
  Var record(std::string_view op, int rows, int cols, std::vector<double> value,
             std::initializer_list<Var> inputs, Backward backward);
  Var record(std::string_view op, int rows, int cols, std::vector<double> value,
             const std::vector<Var>& inputs, Backward backward);

  void backward(const Var& root);
  std::vector<double> grad(const Var& v) const;

  bool requires_grad(const Var& v) const { return nodes_[static_cast<size_t>(v.id())].requires_grad; }
  // Adjoint buffer of v during a sweep; empty when v does not need one.
  std::span<double> accum(const Var& v);

  size_t node_count() const { return nodes_.size(); }

 private:
  friend class Var;
  struct Node {
    std::string_view op;
    int rows = 1;
    int cols = 1;
    std::vector<double> value;
    std::vector<double> grad;
    bool requires_grad = false;
    Backward backward;
  };
  Var push(Node node, std::span<const Var> inputs);

  std::vector<Node> nodes_;
};

// Elementwise binary ops broadcast an operand whose row or column count is 1.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var neg(const Var& a);
Var scale(const Var& a, double k);
Var add_scalar(const Var& a, double k);

Var operator+(const Var& a, const Var& b);
Var operator-(const Var& a, const Var& b);
Var operator*(const Var& a, const Var& b);
Var operator/(const Var& a, const Var& b);
Var operator-(const Var& a);
Var operator*(const Var& a, double k);
Var operator*(double k, const Var& a);
Var operator+(const Var& a, double k);
Var operator+(double k, const Var& a);
Var operator-(const Var& a, double k);
Var operator-(double k, const Var& a);
Var operator/(const Var& a, double k);

Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);

Var sin(const Var& a);
Var cos(const Var& a);
Var exp(const Var& a);
Var log(const Var& a);
Var sqrt(const Var& a);
Var pow(const Var& a, double p);
Var square(const Var& a);
Var sigmoid(const Var& a);
Var relu(const Var& a);
Var tanh(const Var& a);
// Huber-style smooth L1 with quadratic zone |x| < beta.
Var smooth_l1(const Var& a, double beta = 1.0);
// Geman-McClure penalty sigma^2 q / (sigma^2 + q) of squared residuals q.
Var geman_mcclure_sq(const Var& q, double sigma);

Var sum(const Var& a);
Var mean(const Var& a);
Var sum_rows(const Var& a);  // R x C -> 1 x C
Var sum_cols(const Var& a);  // R x C -> R x 1
Var dot(const Var& a, const Var& b);

Var reshape(const Var& a, int rows, int cols);
Var slice_rows(const Var& a, int first, int count);
Var slice_cols(const Var& a, int first, int count);
Var concat_rows(const std::vector<Var>& parts);
Var concat_cols(const std::vector<Var>& parts);
Var gather_rows(const Var& a, std::span<const int> index);
Var scatter_add_rows(const Var& a, std::span<const int> index, int out_rows);

// N x 3 axis-angle rows -> N x 9 row-major rotation matrices.
Var rodrigues(const Var& axis_angle);
// Row i of the result is reshape(m.row(i), 3, 3) * v.row(i)^T.
Var rowwise_matvec(const Var& m, const Var& v);

// Non-differentiable rounding; exists so that the sweep can reject it.
Var round(const Var& a);

}  // namespace quadfit::ad
