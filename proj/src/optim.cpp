#include "quadfit/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "quadfit/error.hpp"

namespace quadfit::opt {

ValueAndGrad grad(const LossFn& loss, std::span<const double> params) {
  ad::Tape tape;
  const ad::Var x = tape.variable(std::vector<double>(params.begin(), params.end()));
  const ad::Var y = loss(tape, x);
  tape.backward(y);
  return {y.item(), tape.grad(x)};
}

double evaluate(const LossFn& loss, std::span<const double> params) {
  ad::Tape tape;
  const ad::Var x = tape.constant(std::vector<double>(params.begin(), params.end()),
                                  static_cast<int>(params.size()), 1);
  return loss(tape, x).item();
}

namespace {

struct Accumulator {
  const GradCheckOptions& options;
  GradCheckReport report;

  // fp, f0, fm are the values at x + h, x and x - h along the probe.
  void add(double analytic, double fp, double f0, double fm, double h, double scale_floor) {
    const double numeric = (fp - fm) / (2.0 * h);
    const double abs_err = std::abs(analytic - numeric);
    const double denom = std::max({std::abs(analytic), std::abs(numeric), scale_floor});
    if (options.kink_fraction > 0.0 && abs_err > options.tol * denom) {
      // A slope change inside [x - h, x + h] splits the one-sided differences;
      // the analytic value then sits between them.
      const double fwd = (fp - f0) / h, bwd = (f0 - fm) / h;
      const double slack = options.tol * denom;
      if (std::abs(fwd - bwd) > slack && analytic >= std::min(fwd, bwd) - slack &&
          analytic <= std::max(fwd, bwd) + slack) {
        ++report.kinks;
        ++report.checked;
        return;
      }
    }
    report.max_abs_error = std::max(report.max_abs_error, abs_err);
    report.max_rel_error = std::max(report.max_rel_error, abs_err / denom);
    ++report.checked;
  }
};

}  // namespace

GradCheckReport check_gradient(const ValueFn& value, const GradFn& gradient,
                               std::span<const double> params, const GradCheckOptions& options) {
  const std::vector<double> analytic = gradient(params);
  if (analytic.size() != params.size()) throw Error(Errc::shape_error, "gradient size");
  std::vector<double> x(params.begin(), params.end());
  const double h = options.step;

  double gmax = 0.0;
  for (double g : analytic) gmax = std::max(gmax, std::abs(g));
  const double floor = options.abs_floor + 1e-6 * gmax;

  Accumulator acc{options, {}};
  const double f0 = options.kink_fraction > 0.0 ? value(x) : 0.0;
  std::mt19937_64 rng(options.seed);
  const int n = static_cast<int>(x.size());

  std::vector<int> coords(static_cast<size_t>(n));
  std::iota(coords.begin(), coords.end(), 0);
  const bool directional = n > options.max_coordinates;
  if (directional) {
    std::shuffle(coords.begin(), coords.end(), rng);
    coords.resize(static_cast<size_t>(options.max_coordinates));
  }
  for (int i : coords) {
    const double saved = x[static_cast<size_t>(i)];
    const double hi = h * std::max(1.0, std::abs(saved));
    x[static_cast<size_t>(i)] = saved + hi;
    const double fp = value(x);
    x[static_cast<size_t>(i)] = saved - hi;
    const double fm = value(x);
    x[static_cast<size_t>(i)] = saved;
    acc.add(analytic[static_cast<size_t>(i)], fp, f0, fm, hi, floor);
  }

  if (directional) {
    std::normal_distribution<double> normal;
    double rms = 0.0;
    for (double xi : x) rms += xi * xi;
    const double hd = h * std::max(1.0, std::sqrt(rms / n));
    double gnorm = 0.0;
    for (double g : analytic) gnorm += g * g;
    const double dir_floor = options.abs_floor + 1e-6 * std::sqrt(gnorm);
    std::vector<double> u(static_cast<size_t>(n));
    std::vector<double> xp(static_cast<size_t>(n));
    for (int p = 0; p < options.probes; ++p) {
      double norm = 0.0;
      for (double& ui : u) {
        ui = normal(rng);
        norm += ui * ui;
      }
      norm = std::sqrt(norm);
      double a = 0.0;
      for (int i = 0; i < n; ++i) {
        u[static_cast<size_t>(i)] /= norm;
        a += analytic[static_cast<size_t>(i)] * u[static_cast<size_t>(i)];
      }
      for (int i = 0; i < n; ++i) xp[static_cast<size_t>(i)] = x[static_cast<size_t>(i)] + hd * u[static_cast<size_t>(i)];
      const double fp = value(xp);
      for (int i = 0; i < n; ++i) xp[static_cast<size_t>(i)] = x[static_cast<size_t>(i)] - hd * u[static_cast<size_t>(i)];
      const double fm = value(xp);
      acc.add(a, fp, f0, fm, hd, dir_floor);
    }
  }

  acc.report.directional = directional;
  acc.report.passed = acc.report.max_rel_error < options.tol &&
                      acc.report.kinks <= options.kink_fraction * acc.report.checked;
  return acc.report;
}

GradCheckReport check_gradient(const LossFn& loss, std::span<const double> params,
                               const GradCheckOptions& options) {
  return check_gradient([&](std::span<const double> x) { return evaluate(loss, x); },
                        [&](std::span<const double> x) { return grad(loss, x).gradient; }, params, options);
}

Adam::Adam(size_t size, AdamConfig config) : config_(config), m_(size, 0.0), v_(size, 0.0) {}

void Adam::step(std::span<double> params, std::span<const double> gradient) {
  if (params.size() != m_.size() || gradient.size() != m_.size())
    throw Error(Errc::shape_error, "adam parameter size");
  ++steps_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
  for (size_t i = 0; i < params.size(); ++i) {
    const double g = gradient[i];
    m_[i] = b1 * m_[i] + (1.0 - b1) * g;
    v_[i] = b2 * v_[i] + (1.0 - b2) * g * g;
    const double mhat = m_[i] / c1;
    const double vhat = v_[i] / c2;
    params[i] -= config_.lr * mhat / (std::sqrt(vhat) + config_.eps);
  }
}

}  // namespace quadfit::opt
