#include "quadfit/autodiff.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <string>

#include "quadfit/error.hpp"

namespace quadfit::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

std::string dims(const Var& v) { return std::to_string(v.rows()) + "x" + std::to_string(v.cols()); }

[[noreturn]] void shape_fail(std::string_view op, const Var& a, const Var& b) {
  throw Error(Errc::shape_error, std::string(op) + " " + dims(a) + " vs " + dims(b));
}

void same_tape(const Var& a, const Var& b) {
  if (&a.tape() != &b.tape()) throw Error(Errc::invalid_argument, "vars from different tapes");
}

// Index mapping for elementwise ops where a size-1 dimension broadcasts.
struct Broadcast {
  int rows, cols;
  int ar, ac, br, bc;

  size_t a_index(int r, int c) const {
    return static_cast<size_t>((ar == 1 ? 0 : r) * ac + (ac == 1 ? 0 : c));
  }
  size_t b_index(int r, int c) const {
    return static_cast<size_t>((br == 1 ? 0 : r) * bc + (bc == 1 ? 0 : c));
  }
};

Broadcast broadcast(std::string_view op, const Var& a, const Var& b) {
  same_tape(a, b);
  Broadcast bc{0, 0, a.rows(), a.cols(), b.rows(), b.cols()};
  auto merge = [&](int x, int y) -> int {
    if (x == y) return x;
    if (x == 1) return y;
    if (y == 1) return x;
    shape_fail(op, a, b);
  };
  bc.rows = merge(a.rows(), b.rows());
  bc.cols = merge(a.cols(), b.cols());
  return bc;
}

// f(x, y) -> value; dfx(x, y, out) and dfy(x, y, out) -> partials.
template <class F, class Dx, class Dy>
Var binary(std::string_view op, const Var& a, const Var& b, F f, Dx dfx, Dy dfy) {
  const Broadcast bc = broadcast(op, a, b);
  const auto av = a.value();
  const auto bv = b.value();
  std::vector<double> out(static_cast<size_t>(bc.rows * bc.cols));
  for (int r = 0; r < bc.rows; ++r)
    for (int c = 0; c < bc.cols; ++c)
      out[static_cast<size_t>(r * bc.cols + c)] = f(av[bc.a_index(r, c)], bv[bc.b_index(r, c)]);
  Tape& tape = a.tape();
  return tape.record(op, bc.rows, bc.cols, std::move(out), {a, b},
                     [a, b, bc, dfx, dfy](Tape& t, std::span<const double> g) {
                       const auto av = a.value();
                       const auto bv = b.value();
                       auto ga = t.accum(a);
                       auto gb = t.accum(b);
                       for (int r = 0; r < bc.rows; ++r) {
                         for (int c = 0; c < bc.cols; ++c) {
                           const size_t ia = bc.a_index(r, c);
                           const size_t ib = bc.b_index(r, c);
                           const double go = g[static_cast<size_t>(r * bc.cols + c)];
                           if (!ga.empty()) ga[ia] += go * dfx(av[ia], bv[ib]);
                           if (!gb.empty()) gb[ib] += go * dfy(av[ia], bv[ib]);
                         }
                       }
                     });
}

// f(x) -> value; df(x, y) -> derivative given input x and output y.
template <class F, class D>
Var unary(std::string_view op, const Var& a, F f, D df) {
  const auto av = a.value();
  std::vector<double> out(av.size());
  std::transform(av.begin(), av.end(), out.begin(), f);
  return a.tape().record(op, a.rows(), a.cols(), std::move(out), {a},
                         [a, df](Tape& t, std::span<const double> g) {
                           auto ga = t.accum(a);
                           if (ga.empty()) return;
                           const auto av = a.value();
                           for (size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * df(av[i]);
                         });
}

using Mat3 = Eigen::Matrix3d;

Mat3 hat(const Eigen::Vector3d& r) {
  Mat3 k;
  k << 0.0, -r.z(), r.y(), r.z(), 0.0, -r.x(), -r.y(), r.x(), 0.0;
  return k;
}

// Coefficients of R = I + a K + b K^2 and their scaled derivatives
// ca = a'(theta)/theta, cb = b'(theta)/theta.
struct RodriguesCoeffs {
  double a, b, ca, cb;
};

RodriguesCoeffs rodrigues_coeffs(double theta2) {
  const double theta = std::sqrt(theta2);
  if (theta < 1e-2) {
    const double t4 = theta2 * theta2;
    return {1.0 - theta2 / 6.0 + t4 / 120.0, 0.5 - theta2 / 24.0 + t4 / 720.0,
            -1.0 / 3.0 + theta2 / 30.0 - t4 / 840.0, -1.0 / 12.0 + theta2 / 180.0 - t4 / 6720.0};
  }
  const double s = std::sin(theta);
  const double c = std::cos(theta);
  return {s / theta, (1.0 - c) / theta2, (theta * c - s) / (theta2 * theta),
          (theta * s - 2.0 * (1.0 - c)) / (theta2 * theta2)};
}

}  // namespace

// ---------------------------------------------------------------------------
// Var / Tape

int Var::rows() const { return tape_->nodes_[static_cast<size_t>(id_)].rows; }
int Var::cols() const { return tape_->nodes_[static_cast<size_t>(id_)].cols; }

std::span<const double> Var::value() const { return tape_->nodes_[static_cast<size_t>(id_)].value; }

double Var::item() const {
  if (size() != 1) throw Error(Errc::shape_error, "item() on " + dims(*this));
  return value()[0];
}

Var Tape::push(Node node, std::span<const Var> inputs) {
  for (const Var& in : inputs) {
    if (!in.valid() || &in.tape() != this) throw Error(Errc::invalid_argument, "input from another tape");
    node.requires_grad = node.requires_grad || nodes_[static_cast<size_t>(in.id())].requires_grad;
  }
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::variable(std::vector<double> values, int rows, int cols) {
  if (static_cast<int>(values.size()) != rows * cols) throw Error(Errc::shape_error, "variable size");
  Node n{"variable", rows, cols, std::move(values), {}, true, {}};
  return push(std::move(n), {});
}

Var Tape::variable(std::vector<double> values) {
  const int n = static_cast<int>(values.size());
  return variable(std::move(values), n, 1);
}

Var Tape::constant(std::vector<double> values, int rows, int cols) {
  if (static_cast<int>(values.size()) != rows * cols) throw Error(Errc::shape_error, "constant size");
  Node n{"constant", rows, cols, std::move(values), {}, false, {}};
  return push(std::move(n), {});
}

Var Tape::constant(double value) { return constant({value}, 1, 1); }

Var Tape::record(std::string_view op, int rows, int cols, std::vector<double> value,
                 std::initializer_list<Var> inputs, Backward backward) {
  Node n{op, rows, cols, std::move(value), {}, false, std::move(backward)};
  return push(std::move(n), std::span<const Var>(inputs.begin(), inputs.size()));
}

Var Tape::record(std::string_view op, int rows, int cols, std::vector<double> value,
                 const std::vector<Var>& inputs, Backward backward) {
  Node n{op, rows, cols, std::move(value), {}, false, std::move(backward)};
  return push(std::move(n), std::span<const Var>(inputs.data(), inputs.size()));
}

std::span<double> Tape::accum(const Var& v) {
  Node& n = nodes_[static_cast<size_t>(v.id())];
  if (!n.requires_grad) return {};
  if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
  return n.grad;
}

void Tape::backward(const Var& root) {
  if (&root.tape() != this) throw Error(Errc::invalid_argument, "root from another tape");
  if (root.size() != 1) throw Error(Errc::shape_error, "backward needs a scalar, got " + dims(root));
  for (Node& n : nodes_) n.grad.clear();
  Node& r = nodes_[static_cast<size_t>(root.id())];
  if (!r.requires_grad) return;
  r.grad.assign(1, 1.0);
  for (int i = root.id(); i >= 0; --i) {
    Node& n = nodes_[static_cast<size_t>(i)];
    if (!n.requires_grad || n.grad.empty()) continue;
    if (n.op == "variable") continue;
    if (!n.backward) throw Error(Errc::not_differentiable, std::string(n.op));
    // The closure only touches earlier nodes, so n.grad stays put.
    n.backward(*this, n.grad);
  }
}

std::vector<double> Tape::grad(const Var& v) const {
  const Node& n = nodes_[static_cast<size_t>(v.id())];
  if (n.grad.empty()) return std::vector<double>(n.value.size(), 0.0);
  return n.grad;
}

// ---------------------------------------------------------------------------
// Elementwise

Var add(const Var& a, const Var& b) {
  return binary("add", a, b, [](double x, double y) { return x + y; },
                [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

Var sub(const Var& a, const Var& b) {
  return binary("sub", a, b, [](double x, double y) { return x - y; },
                [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

Var mul(const Var& a, const Var& b) {
  return binary("mul", a, b, [](double x, double y) { return x * y; },
                [](double, double y) { return y; }, [](double x, double) { return x; });
}

Var div(const Var& a, const Var& b) {
  return binary("div", a, b, [](double x, double y) { return x / y; },
                [](double, double y) { return 1.0 / y; }, [](double x, double y) { return -x / (y * y); });
}

Var neg(const Var& a) { return scale(a, -1.0); }

Var scale(const Var& a, double k) {
  return unary("scale", a, [k](double x) { return k * x; }, [k](double) { return k; });
}

Var add_scalar(const Var& a, double k) {
  return unary("add_scalar", a, [k](double x) { return x + k; }, [](double) { return 1.0; });
}

Var operator+(const Var& a, const Var& b) { return add(a, b); }
Var operator-(const Var& a, const Var& b) { return sub(a, b); }
Var operator*(const Var& a, const Var& b) { return mul(a, b); }
Var operator/(const Var& a, const Var& b) { return div(a, b); }
Var operator-(const Var& a) { return neg(a); }
Var operator*(const Var& a, double k) { return scale(a, k); }
Var operator*(double k, const Var& a) { return scale(a, k); }
Var operator+(const Var& a, double k) { return add_scalar(a, k); }
Var operator+(double k, const Var& a) { return add_scalar(a, k); }
Var operator-(const Var& a, double k) { return add_scalar(a, -k); }
Var operator-(double k, const Var& a) { return add_scalar(neg(a), k); }
Var operator/(const Var& a, double k) { return scale(a, 1.0 / k); }

Var sin(const Var& a) {
  return unary("sin", a, [](double x) { return std::sin(x); }, [](double x) { return std::cos(x); });
}

Var cos(const Var& a) {
  return unary("cos", a, [](double x) { return std::cos(x); }, [](double x) { return -std::sin(x); });
}

Var exp(const Var& a) {
  return unary("exp", a, [](double x) { return std::exp(x); }, [](double x) { return std::exp(x); });
}

Var log(const Var& a) {
  return unary("log", a, [](double x) { return std::log(x); }, [](double x) { return 1.0 / x; });
}

Var sqrt(const Var& a) {
  return unary("sqrt", a, [](double x) { return std::sqrt(x); },
               [](double x) { return 0.5 / std::sqrt(x); });
}

Var pow(const Var& a, double p) {
  return unary("pow", a, [p](double x) { return std::pow(x, p); },
               [p](double x) { return p * std::pow(x, p - 1.0); });
}

Var square(const Var& a) {
  return unary("square", a, [](double x) { return x * x; }, [](double x) { return 2.0 * x; });
}

Var sigmoid(const Var& a) {
  auto f = [](double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
  };
  return unary("sigmoid", a, f, [f](double x) {
    const double s = f(x);
    return s * (1.0 - s);
  });
}

Var relu(const Var& a) {
  return unary("relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
               [](double x) { return x > 0.0 ? 1.0 : 0.0; });
}

Var tanh(const Var& a) {
  return unary("tanh", a, [](double x) { return std::tanh(x); }, [](double x) {
    const double t = std::tanh(x);
    return 1.0 - t * t;
  });
}

Var smooth_l1(const Var& a, double beta) {
  return unary(
      "smooth_l1", a,
      [beta](double x) {
        const double ax = std::abs(x);
        return ax < beta ? 0.5 * x * x / beta : ax - 0.5 * beta;
      },
      [beta](double x) {
        if (std::abs(x) < beta) return x / beta;
        return x > 0.0 ? 1.0 : -1.0;
      });
}

Var geman_mcclure_sq(const Var& q, double sigma) {
  const double s2 = sigma * sigma;
  return unary("geman_mcclure", q, [s2](double x) { return s2 * x / (s2 + x); },
               [s2](double x) {
                 const double d = s2 + x;
                 return s2 * s2 / (d * d);
               });
}

Var round(const Var& a) {
  const auto av = a.value();
  std::vector<double> out(av.size());
  std::transform(av.begin(), av.end(), out.begin(), [](double x) { return std::round(x); });
  return a.tape().record("round", a.rows(), a.cols(), std::move(out), {a}, nullptr);
}

// ---------------------------------------------------------------------------
// Reductions and linear algebra

Var sum(const Var& a) {
  const auto av = a.value();
  double s = 0.0;
  for (double x : av) s += x;
  return a.tape().record("sum", 1, 1, {s}, {a}, [a](Tape& t, std::span<const double> g) {
    auto ga = t.accum(a);
    for (double& x : ga) x += g[0];
  });
}

Var mean(const Var& a) { return scale(sum(a), 1.0 / a.size()); }

Var sum_rows(const Var& a) {
  const int r = a.rows(), c = a.cols();
  std::vector<double> out(static_cast<size_t>(c), 0.0);
  const auto av = a.value();
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) out[static_cast<size_t>(j)] += av[static_cast<size_t>(i * c + j)];
  return a.tape().record("sum_rows", 1, c, std::move(out), {a}, [a, r, c](Tape& t, std::span<const double> g) {
    auto ga = t.accum(a);
    if (ga.empty()) return;
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) ga[static_cast<size_t>(i * c + j)] += g[static_cast<size_t>(j)];
  });
}

Var sum_cols(const Var& a) {
  const int r = a.rows(), c = a.cols();
  std::vector<double> out(static_cast<size_t>(r), 0.0);
  const auto av = a.value();
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) out[static_cast<size_t>(i)] += av[static_cast<size_t>(i * c + j)];
  return a.tape().record("sum_cols", r, 1, std::move(out), {a}, [a, r, c](Tape& t, std::span<const double> g) {
    auto ga = t.accum(a);
    if (ga.empty()) return;
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) ga[static_cast<size_t>(i * c + j)] += g[static_cast<size_t>(i)];
  });
}

Var dot(const Var& a, const Var& b) {
  if (a.size() != b.size()) shape_fail("dot", a, b);
  return sum(mul(reshape(a, a.size(), 1), reshape(b, b.size(), 1)));
}

Var matmul(const Var& a, const Var& b) {
  same_tape(a, b);
  if (a.cols() != b.rows()) shape_fail("matmul", a, b);
  const int m = a.rows(), k = a.cols(), n = b.cols();
  std::vector<double> out(static_cast<size_t>(m * n));
  MutMap(out.data(), m, n).noalias() = ConstMap(a.value().data(), m, k) * ConstMap(b.value().data(), k, n);
  return a.tape().record("matmul", m, n, std::move(out), {a, b}, [a, b, m, k, n](Tape& t, std::span<const double> g) {
    ConstMap gm(g.data(), m, n);
    auto ga = t.accum(a);
    if (!ga.empty()) MutMap(ga.data(), m, k).noalias() += gm * ConstMap(b.value().data(), k, n).transpose();
    auto gb = t.accum(b);
    if (!gb.empty()) MutMap(gb.data(), k, n).noalias() += ConstMap(a.value().data(), m, k).transpose() * gm;
  });
}

Var transpose(const Var& a) {
  const int r = a.rows(), c = a.cols();
  std::vector<double> out(static_cast<size_t>(r * c));
  MutMap(out.data(), c, r) = ConstMap(a.value().data(), r, c).transpose();
  return a.tape().record("transpose", c, r, std::move(out), {a}, [a, r, c](Tape& t, std::span<const double> g) {
    auto ga = t.accum(a);
    if (!ga.empty()) MutMap(ga.data(), r, c) += ConstMap(g.data(), c, r).transpose();
  });
}

// ---------------------------------------------------------------------------
// Shape manipulation

Var reshape(const Var& a, int rows, int cols) {
  if (rows * cols != a.size()) throw Error(Errc::shape_error, "reshape " + dims(a));
  const auto av = a.value();
  return a.tape().record("reshape", rows, cols, std::vector<double>(av.begin(), av.end()), {a},
                         [a](Tape& t, std::span<const double> g) {
                           auto ga = t.accum(a);
                           for (size_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
                         });
}

Var slice_rows(const Var& a, int first, int count) {
  if (first < 0 || count < 0 || first + count > a.rows()) throw Error(Errc::shape_error, "slice_rows " + dims(a));
  const int c = a.cols();
  const auto av = a.value();
  const auto begin = av.begin() + static_cast<std::ptrdiff_t>(first * c);
  std::vector<double> out(begin, begin + static_cast<std::ptrdiff_t>(count * c));
  return a.tape().record("slice_rows", count, c, std::move(out), {a}, [a, first, c](Tape& t, std::span<const double> g) {
    auto ga = t.accum(a);
    if (ga.empty()) return;
    for (size_t i = 0; i < g.size(); ++i) ga[static_cast<size_t>(first * c) + i] += g[i];
  });
}

Var slice_cols(const Var& a, int first, int count) {
  if (first < 0 || count < 0 || first + count > a.cols()) throw Error(Errc::shape_error, "slice_cols " + dims(a));
  const int r = a.rows(), c = a.cols();
  const auto av = a.value();
  std::vector<double> out(static_cast<size_t>(r * count));
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < count; ++j)
      out[static_cast<size_t>(i * count + j)] = av[static_cast<size_t>(i * c + first + j)];
  return a.tape().record("slice_cols", r, count, std::move(out), {a},
                         [a, first, count, r, c](Tape& t, std::span<const double> g) {
                           auto ga = t.accum(a);
                           if (ga.empty()) return;
                           for (int i = 0; i < r; ++i)
                             for (int j = 0; j < count; ++j)
                               ga[static_cast<size_t>(i * c + first + j)] += g[static_cast<size_t>(i * count + j)];
                         });
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw Error(Errc::shape_error, "concat_rows of nothing");
  const int c = parts.front().cols();
  int r = 0;
  std::vector<double> out;
  for (const Var& p : parts) {
    if (p.cols() != c) shape_fail("concat_rows", parts.front(), p);
    r += p.rows();
    const auto pv = p.value();
    out.insert(out.end(), pv.begin(), pv.end());
  }
  return parts.front().tape().record("concat_rows", r, c, std::move(out), parts,
                                     [parts](Tape& t, std::span<const double> g) {
                                       size_t off = 0;
                                       for (const Var& p : parts) {
                                         auto gp = t.accum(p);
                                         for (size_t i = 0; i < gp.size(); ++i) gp[i] += g[off + i];
                                         off += static_cast<size_t>(p.size());
                                       }
                                     });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw Error(Errc::shape_error, "concat_cols of nothing");
  const int r = parts.front().rows();
  int c = 0;
  for (const Var& p : parts) {
    if (p.rows() != r) shape_fail("concat_cols", parts.front(), p);
    c += p.cols();
  }
  std::vector<double> out(static_cast<size_t>(r * c));
  int off = 0;
  for (const Var& p : parts) {
    const auto pv = p.value();
    const int pc = p.cols();
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < pc; ++j) out[static_cast<size_t>(i * c + off + j)] = pv[static_cast<size_t>(i * pc + j)];
    off += pc;
  }
  return parts.front().tape().record("concat_cols", r, c, std::move(out), parts,
                                     [parts, r, c](Tape& t, std::span<const double> g) {
                                       int off = 0;
                                       for (const Var& p : parts) {
                                         const int pc = p.cols();
                                         auto gp = t.accum(p);
                                         if (!gp.empty()) {
                                           for (int i = 0; i < r; ++i)
                                             for (int j = 0; j < pc; ++j)
                                               gp[static_cast<size_t>(i * pc + j)] += g[static_cast<size_t>(i * c + off + j)];
                                         }
                                         off += pc;
                                       }
                                     });
}

Var gather_rows(const Var& a, std::span<const int> index) {
  const int c = a.cols();
  const auto av = a.value();
  std::vector<int> idx(index.begin(), index.end());
  std::vector<double> out(idx.size() * static_cast<size_t>(c));
  for (size_t j = 0; j < idx.size(); ++j) {
    if (idx[j] < 0 || idx[j] >= a.rows()) throw Error(Errc::shape_error, "gather_rows index");
    for (int k = 0; k < c; ++k) out[j * static_cast<size_t>(c) + static_cast<size_t>(k)] = av[static_cast<size_t>(idx[j] * c + k)];
  }
  const int n = static_cast<int>(idx.size());
  return a.tape().record("gather_rows", n, c, std::move(out), {a}, [a, idx = std::move(idx), c](Tape& t, std::span<const double> g) {
    auto ga = t.accum(a);
    if (ga.empty()) return;
    for (size_t j = 0; j < idx.size(); ++j)
      for (int k = 0; k < c; ++k)
        ga[static_cast<size_t>(idx[j] * c + k)] += g[j * static_cast<size_t>(c) + static_cast<size_t>(k)];
  });
}

Var scatter_add_rows(const Var& a, std::span<const int> index, int out_rows) {
  if (static_cast<int>(index.size()) != a.rows()) throw Error(Errc::shape_error, "scatter_add_rows index");
  const int c = a.cols();
  const auto av = a.value();
  std::vector<int> idx(index.begin(), index.end());
  std::vector<double> out(static_cast<size_t>(out_rows * c), 0.0);
  for (size_t j = 0; j < idx.size(); ++j) {
    if (idx[j] < 0 || idx[j] >= out_rows) throw Error(Errc::shape_error, "scatter_add_rows index");
    for (int k = 0; k < c; ++k) out[static_cast<size_t>(idx[j] * c + k)] += av[j * static_cast<size_t>(c) + static_cast<size_t>(k)];
  }
  return a.tape().record("scatter_add_rows", out_rows, c, std::move(out), {a},
                         [a, idx = std::move(idx), c](Tape& t, std::span<const double> g) {
                           auto ga = t.accum(a);
                           if (ga.empty()) return;
                           for (size_t j = 0; j < idx.size(); ++j)
                             for (int k = 0; k < c; ++k)
                               ga[j * static_cast<size_t>(c) + static_cast<size_t>(k)] += g[static_cast<size_t>(idx[j] * c + k)];
                         });
}

// ---------------------------------------------------------------------------
// Rotations

Var rodrigues(const Var& axis_angle) {
  if (axis_angle.cols() != 3) throw Error(Errc::shape_error, "rodrigues expects Nx3, got " + dims(axis_angle));
  const int n = axis_angle.rows();
  const auto rv = axis_angle.value();
  std::vector<double> out(static_cast<size_t>(n * 9));
  for (int i = 0; i < n; ++i) {
    const Eigen::Vector3d r(rv[static_cast<size_t>(3 * i)], rv[static_cast<size_t>(3 * i + 1)], rv[static_cast<size_t>(3 * i + 2)]);
    const auto co = rodrigues_coeffs(r.squaredNorm());
    const Mat3 k = hat(r);
    const Mat3 rot = Mat3::Identity() + co.a * k + co.b * k * k;
    Eigen::Map<Eigen::Matrix<double, 3, 3, Eigen::RowMajor>>(out.data() + 9 * i) = rot;
  }
  return axis_angle.tape().record("rodrigues", n, 9, std::move(out), {axis_angle},
                                  [axis_angle, n](Tape& t, std::span<const double> g) {
                                    auto gr = t.accum(axis_angle);
                                    if (gr.empty()) return;
                                    const auto rv = axis_angle.value();
                                    for (int i = 0; i < n; ++i) {
                                      const Eigen::Vector3d r(rv[static_cast<size_t>(3 * i)], rv[static_cast<size_t>(3 * i + 1)],
                                                              rv[static_cast<size_t>(3 * i + 2)]);
                                      const auto co = rodrigues_coeffs(r.squaredNorm());
                                      const Mat3 k = hat(r);
                                      const Mat3 k2 = k * k;
                                      const Mat3 gm = Eigen::Map<const Eigen::Matrix<double, 3, 3, Eigen::RowMajor>>(g.data() + 9 * i);
                                      const double gk = (gm.cwiseProduct(k)).sum();
                                      const double gk2 = (gm.cwiseProduct(k2)).sum();
                                      for (int j = 0; j < 3; ++j) {
                                        const Mat3 e = hat(Eigen::Vector3d::Unit(j));
                                        const double ge = gm.cwiseProduct(e).sum();
                                        const double gek = gm.cwiseProduct(e * k + k * e).sum();
                                        gr[static_cast<size_t>(3 * i + j)] +=
                                            co.ca * r[j] * gk + co.a * ge + co.cb * r[j] * gk2 + co.b * gek;
                                      }
                                    }
                                  });
}

Var rowwise_matvec(const Var& m, const Var& v) {
  same_tape(m, v);
  if (m.cols() != 9 || v.cols() != 3 || m.rows() != v.rows()) shape_fail("rowwise_matvec", m, v);
  const int n = m.rows();
  const auto mv = m.value();
  const auto vv = v.value();
  std::vector<double> out(static_cast<size_t>(n * 3));
  for (int i = 0; i < n; ++i) {
    const double* mi = mv.data() + 9 * i;
    const double* vi = vv.data() + 3 * i;
    for (int r = 0; r < 3; ++r) out[static_cast<size_t>(3 * i + r)] = mi[3 * r] * vi[0] + mi[3 * r + 1] * vi[1] + mi[3 * r + 2] * vi[2];
  }
  return m.tape().record("rowwise_matvec", n, 3, std::move(out), {m, v}, [m, v, n](Tape& t, std::span<const double> g) {
    auto gm = t.accum(m);
    auto gv = t.accum(v);
    const auto mv = m.value();
    const auto vv = v.value();
    for (int i = 0; i < n; ++i) {
      const double* gi = g.data() + 3 * i;
      if (!gm.empty())
        for (int r = 0; r < 3; ++r)
          for (int c = 0; c < 3; ++c) gm[static_cast<size_t>(9 * i + 3 * r + c)] += gi[r] * vv[static_cast<size_t>(3 * i + c)];
      if (!gv.empty())
        for (int c = 0; c < 3; ++c)
          for (int r = 0; r < 3; ++r) gv[static_cast<size_t>(3 * i + c)] += mv[static_cast<size_t>(9 * i + 3 * r + c)] * gi[r];
    }
  });
}

}  // namespace quadfit::ad
