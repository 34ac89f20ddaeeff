#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "quadfit/autodiff.hpp"

namespace quadfit::opt {

// A differentiable program of a flat parameter vector (an N x 1 Var).
using LossFn = std::function<ad::Var(ad::Tape&, const ad::Var& params)>;

struct ValueAndGrad {
  double value = 0.0;
  std::vector<double> gradient;
};

ValueAndGrad grad(const LossFn& loss, std::span<const double> params);
double evaluate(const LossFn& loss, std::span<const double> params);

struct GradCheckOptions {
  // Central-difference step, scaled by max(1, |x_i|) per coordinate.
  double step = 1e-5;
  double tol = 1e-4;
  // Differences below this are treated as noise when forming ratios.
  double abs_floor = 1e-7;
  // Above this many coordinates, a random subset plus random directional
  // probes is checked instead of every coordinate.
  int max_coordinates = 64;
  int probes = 16;
  std::uint64_t seed = 7;
  // For piecewise-smooth functions: a sample whose analytic value lies
  // between the forward and backward differences is counted as a kink
  // instead of an error, and up to this fraction of samples may be kinks.
  // 0 disables the test.
  double kink_fraction = 0.0;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  int checked = 0;
  int kinks = 0;
  bool directional = false;
  bool passed = false;
};

using ValueFn = std::function<double(std::span<const double>)>;
using GradFn = std::function<std::vector<double>(std::span<const double>)>;

// Compares an analytic gradient against central differences of value.
GradCheckReport check_gradient(const ValueFn& value, const GradFn& gradient,
                               std::span<const double> params, const GradCheckOptions& options = {});
GradCheckReport check_gradient(const LossFn& loss, std::span<const double> params,
                               const GradCheckOptions& options = {});

struct AdamConfig {
  double lr = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  Adam(size_t size, AdamConfig config = {});

  void step(std::span<double> params, std::span<const double> gradient);

  long steps() const { return steps_; }
  const AdamConfig& config() const { return config_; }
  std::span<const double> first_moment() const { return m_; }
  std::span<const double> second_moment() const { return v_; }

 private:
  AdamConfig config_;
  std::vector<double> m_;
  std::vector<double> v_;
  long steps_ = 0;
};

}  // namespace quadfit::opt
