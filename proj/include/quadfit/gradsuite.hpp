#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "quadfit/body_model.hpp"
#include "quadfit/optim.hpp"

namespace quadfit {

struct GradCase {
  std::string op;
  int config = 0;
  double tol = 0.0;
  opt::GradCheckReport report;
};

// Finite-difference checks of every differentiable stage on random inputs:
// pose_mesh, project_points, the four losses, the soft rasterizer and the
// three regressor variants.
std::vector<GradCase> run_gradient_suite(const MeshModel& model, int configs_per_op, std::uint64_t seed);

}  // namespace quadfit
