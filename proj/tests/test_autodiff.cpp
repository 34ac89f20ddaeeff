#include <doctest.h>

#include <cmath>
#include <functional>
#include <string>

#include "quadfit/autodiff.hpp"
#include "quadfit/error.hpp"
#include "quadfit/optim.hpp"
#include "test_util.hpp"

using namespace quadfit;
using ad::Tape;
using ad::Var;

TEST_CASE("square at three") {
  const auto r = opt::grad([](Tape&, const Var& x) { return ad::sum(x * x); }, std::vector<double>{3.0});
  CHECK(r.value == 9.0);
  CHECK(r.gradient[0] == 6.0);
}

TEST_CASE("sum of sines at zero has unit gradient") {
  const auto r = opt::grad([](Tape&, const Var& x) { return ad::sum(ad::sin(x)); }, std::vector<double>(7, 0.0));
  CHECK(r.value == 0.0);
  for (double g : r.gradient) CHECK(g == 1.0);
}

TEST_CASE("quadratic form gradient is near exact") {
  testutil::Gen gen(11);
  const int n = 6;
  const auto a = gen.normals(n * n);
  const opt::LossFn f = [&](Tape& tape, const Var& x) {
    const Var m = tape.constant(a, n, n);
    return ad::sum(x * ad::matmul(m, x));
  };
  opt::GradCheckOptions o;
  o.step = 1e-3;
  const auto rep = opt::check_gradient(f, gen.normals(n), o);
  CHECK(rep.max_rel_error < 1e-8);
  CHECK(rep.passed);
}

TEST_CASE("corrupted adjoint is reported") {
  const opt::LossFn f = [](Tape& tape, const Var& x) {
    std::vector<double> v(x.value().begin(), x.value().end());
    for (double& e : v) e = e * e;
    const Var sq = tape.record("bad_square", x.rows(), x.cols(), v, {x}, [x](Tape& t, std::span<const double> g) {
      auto acc = t.accum(x);
      if (acc.empty()) return;
      // Off by a factor of three.
      for (size_t i = 0; i < acc.size(); ++i) acc[i] += 6.0 * x.value()[i] * g[i];
    });
    return ad::sum(sq);
  };
  const auto rep = opt::check_gradient(f, std::vector<double>{0.5, -1.2, 2.0});
  CHECK_FALSE(rep.passed);
  CHECK(rep.max_rel_error > 0.5);
}

TEST_CASE("non-differentiable op is rejected on the backward sweep") {
  try {
    opt::grad([](Tape&, const Var& x) { return ad::sum(ad::round(x)); }, std::vector<double>{0.3});
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::not_differentiable);
  }
  // Forward evaluation alone is fine.
  CHECK(opt::evaluate([](Tape&, const Var& x) { return ad::sum(ad::round(x)); }, std::vector<double>{1.6}) == 2.0);
}

TEST_CASE("constants receive no gradient and shapes are checked") {
  Tape tape;
  const Var x = tape.variable({1.0, 2.0, 3.0}, 3, 1);
  const Var c = tape.constant({1.0, 1.0}, 2, 1);
  CHECK_THROWS_AS(x + c, Error);
  const Var y = ad::sum(x * x);
  tape.backward(y);
  CHECK_FALSE(tape.requires_grad(c));
  CHECK(tape.grad(x) == std::vector<double>{2.0, 4.0, 6.0});
}

namespace {

// Each entry builds a scalar from an input vector of fixed size.
struct OpCase {
  std::string name;
  int size;
  double lo, hi;
  opt::LossFn fn;
};

std::vector<OpCase> op_cases() {
  std::vector<OpCase> c;
  auto mat = [](const Var& x, int r, int k) { return ad::reshape(x, r, k); };
  c.push_back({"add_broadcast", 12, -2, 2, [mat](Tape&, const Var& x) {
                 const Var a = mat(ad::slice_rows(x, 0, 9), 3, 3);
                 const Var b = mat(ad::slice_rows(x, 9, 3), 1, 3);
                 return ad::sum(ad::square(a + b) * a);
               }});
  c.push_back({"sub_mul_div", 12, 0.5, 2, [mat](Tape&, const Var& x) {
                 const Var a = mat(ad::slice_rows(x, 0, 6), 3, 2);
                 const Var b = mat(ad::slice_rows(x, 6, 6), 3, 2);
                 return ad::sum((a - b) * a / b);
               }});
  c.push_back({"column_broadcast_div", 9, 0.5, 2, [mat](Tape&, const Var& x) {
                 const Var a = mat(ad::slice_rows(x, 0, 6), 3, 2);
                 const Var b = mat(ad::slice_rows(x, 6, 3), 3, 1);
                 return ad::sum(ad::square(a / b));
               }});
  c.push_back({"matmul_transpose", 12, -1, 1, [mat](Tape&, const Var& x) {
                 const Var a = mat(ad::slice_rows(x, 0, 6), 2, 3);
                 const Var b = mat(ad::slice_rows(x, 6, 6), 2, 3);
                 return ad::sum(ad::square(ad::matmul(a, ad::transpose(b))));
               }});
  c.push_back({"unary_chain", 5, 0.2, 1.5, [](Tape&, const Var& x) {
                 return ad::sum(ad::sin(x) * ad::cos(x) + ad::exp(x) * ad::log(x) + ad::sqrt(x) + ad::pow(x, 2.5) +
                                ad::tanh(x));
               }});
  c.push_back({"sigmoid_relu", 6, -2, 2, [](Tape&, const Var& x) {
                 return ad::sum(ad::sigmoid(x * 3.0) + ad::relu(x) * x);
               }});
  c.push_back({"smooth_l1", 8, -2.5, 2.5, [](Tape&, const Var& x) { return ad::sum(ad::smooth_l1(x, 1.0)); }});
  c.push_back({"geman_mcclure", 6, -40, 40, [](Tape&, const Var& x) {
                 return ad::sum(ad::geman_mcclure_sq(ad::square(x), 10.0));
               }});
  c.push_back({"reductions", 12, -1, 1, [mat](Tape&, const Var& x) {
                 const Var a = mat(x, 3, 4);
                 return ad::dot(ad::sum_rows(a), ad::sum_rows(a)) + ad::sum(ad::square(ad::sum_cols(a))) +
                        ad::mean(a * a);
               }});
  c.push_back({"slicing_and_concat", 12, -1, 1, [mat](Tape&, const Var& x) {
                 const Var a = mat(x, 4, 3);
                 const Var b = ad::concat_cols({ad::slice_cols(a, 2, 1), ad::slice_cols(a, 0, 2)});
                 const Var d = ad::concat_rows({ad::slice_rows(b, 3, 1), ad::slice_rows(b, 0, 3)});
                 return ad::sum(d * a * a);
               }});
  c.push_back({"gather_scatter", 12, -1, 1, [mat](Tape&, const Var& x) {
                 const Var a = mat(x, 4, 3);
                 const std::vector<int> idx{3, 1, 1, 0, 2};
                 const Var g = ad::gather_rows(a, idx);
                 const Var s = ad::scatter_add_rows(ad::square(g), idx, 4);
                 return ad::sum(s * a);
               }});
  c.push_back({"rodrigues", 9, -2, 2, [mat](Tape&, const Var& x) {
                 const Var r = ad::rodrigues(mat(x, 3, 3));
                 const Var w = r.tape().constant({0.3, -1.1, 0.7, 2.0, 0.1, -0.4, 0.9, 0.5, -0.8}, 1, 9);
                 return ad::sum(r * w);
               }});
  c.push_back({"rodrigues_small_angle", 6, -4e-3, 4e-3, [mat](Tape&, const Var& x) {
                 const Var r = ad::rodrigues(mat(x, 2, 3));
                 const Var w = r.tape().constant({0.3, -1.1, 0.7, 2.0, 0.1, -0.4, 0.9, 0.5, -0.8}, 1, 9);
                 return ad::sum(r * w);
               }});
  c.push_back({"rowwise_matvec", 24, -1, 1, [mat](Tape&, const Var& x) {
                 const Var m = mat(ad::slice_rows(x, 0, 18), 2, 9);
                 const Var v = mat(ad::slice_rows(x, 18, 6), 2, 3);
                 return ad::sum(ad::square(ad::rowwise_matvec(m, v)));
               }});
  return c;
}

}  // namespace

TEST_CASE("every op matches central differences on random inputs") {
  testutil::Gen gen(2024);
  for (const auto& op : op_cases()) {
    CAPTURE(op.name);
    for (int trial = 0; trial < 20; ++trial) {
      const auto x = gen.uniforms(static_cast<size_t>(op.size), op.lo, op.hi);
      const auto rep = opt::check_gradient(op.fn, x);
      CAPTURE(trial);
      CHECK(rep.max_rel_error < 1e-4);
    }
  }
}

TEST_CASE("rodrigues agrees with an independent quaternion oracle") {
  testutil::Gen gen(5);
  for (int trial = 0; trial < 200; ++trial) {
    const double scale = trial % 2 ? 3.0 : 1e-3;
    const std::vector<double> r{gen.normal(scale), gen.normal(scale), gen.normal(scale)};
    Tape tape;
    const Var m = ad::rodrigues(tape.constant(r, 1, 3));
    const std::vector<double> got(m.value().begin(), m.value().end());
    CHECK(testutil::max_abs_diff(got, testutil::rotation_matrix(r[0], r[1], r[2])) < 1e-12);
  }
}

TEST_CASE("adam leaves parameters alone under zero gradient") {
  opt::Adam adam(4, {.lr = 0.1});
  std::vector<double> p{1.0, -2.0, 3.0, 0.5};
  const auto before = p;
  for (int i = 0; i < 10; ++i) adam.step(p, std::vector<double>(4, 0.0));
  CHECK(p == before);
  CHECK(adam.steps() == 10);
}

TEST_CASE("adam first step moves each coordinate by about lr against the gradient") {
  opt::Adam adam(3, {.lr = 0.01});
  std::vector<double> p{0.0, 0.0, 0.0};
  adam.step(p, std::vector<double>{2.0, -0.5, 1e-3});
  CHECK(p[0] == doctest::Approx(-0.01).epsilon(1e-6));
  CHECK(p[1] == doctest::Approx(0.01).epsilon(1e-6));
  CHECK(p[2] == doctest::Approx(-0.01).epsilon(1e-4));
}

TEST_CASE("adam minimises a convex quadratic") {
  opt::Adam adam(2, {.lr = 0.05});
  std::vector<double> p{3.0, -4.0};
  for (int i = 0; i < 2000; ++i) {
    const auto r = opt::grad([](Tape& t, const Var& x) {
      const Var c = t.constant({1.0, 2.0}, 2, 1);
      return ad::sum(ad::square(x - c));
    }, p);
    adam.step(p, r.gradient);
  }
  CHECK(p[0] == doctest::Approx(1.0).epsilon(1e-3));
  CHECK(p[1] == doctest::Approx(2.0).epsilon(1e-3));
}

TEST_CASE("kink-aware gradient check") {
  const opt::LossFn f = [](Tape&, const Var& x) { return ad::sum(ad::relu(x) * 2.0); };
  // The second coordinate sits within one step of the relu corner.
  const std::vector<double> x{0.7, 3e-6, -1.1, 2.5};
  CHECK_FALSE(opt::check_gradient(f, x).passed);
  opt::GradCheckOptions o;
  o.kink_fraction = 0.3;
  const auto rep = opt::check_gradient(f, x, o);
  CHECK(rep.passed);
  CHECK(rep.kinks == 1);
  CHECK(rep.max_rel_error < 1e-8);
  // Corners everywhere exceed the allowed fraction.
  CHECK_FALSE(opt::check_gradient(f, std::vector<double>{1e-6, -2e-6, 4e-6, 0.5}, o).passed);
  // A wrong adjoint is not excused as a kink.
  const opt::LossFn bad = [](Tape& tape, const Var& x) {
    const Var r = ad::relu(x);
    const Var y = tape.record("bad_relu", x.rows(), x.cols(), std::vector<double>(r.value().begin(), r.value().end()), {x},
                              [x](Tape& t, std::span<const double> g) {
                                auto acc = t.accum(x);
                                if (acc.empty()) return;
                                for (size_t i = 0; i < acc.size(); ++i) acc[i] += x.value()[i] > 0 ? 1.5 * g[i] : 0.0;
                              });
    return ad::sum(y);
  };
  CHECK_FALSE(opt::check_gradient(bad, x, o).passed);
}
