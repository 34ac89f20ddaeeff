#pragma once

#include <span>
#include <vector>

#include "quadfit/autodiff.hpp"
#include "quadfit/body_model.hpp"
#include "quadfit/dataset.hpp"
#include "quadfit/losses.hpp"

namespace quadfit {

struct FitOptions {
  double lr = 1e-2;
  // The silhouette term is rendered at sil_res x sil_res against
  // area-downsampled target masks, with a blur of sil_sigma pixels.
  int sil_res = 64;
  double sil_sigma = 0.25;
  double sigma_gm = kDefaultGemanMcClureSigma;
  // Stop once every gradient entry is below this; Adam would otherwise
  // blow rounding-level gradients up to full lr-sized steps.
  double grad_tol = 1e-12;
};

// Flat parameter layout: beta (S), theta_global (T x 3), theta_joints
// (T x 3(J-1)), cam_weak (T x 3).
int fit_param_count(const MeshModel& model, int frames);
std::vector<double> pack_pose(const PoseState& pose);
PoseState unpack_pose(std::span<const double> params, const MeshModel& model, int frames);

// Total training loss of a clip as a function of the flat parameters.
class SequenceObjective {
 public:
  SequenceObjective(const ClipRecord& clip, const MeshModel& model, const LossWeights& weights,
                    const FitOptions& options = {});

  // Records the loss on tape; fills report with the term values when given.
  ad::Var operator()(ad::Tape& tape, const ad::Var& params, LossReport* report = nullptr) const;
  double value(std::span<const double> params, LossReport* report = nullptr) const;

  int frames() const { return frames_; }

 private:
  const ClipRecord& clip_;
  const MeshModel& model_;
  LossWeights weights_;
  FitOptions options_;
  int frames_;
  bool use_kp_;
  bool use_sil_;
  std::vector<Mask> targets_;
};

// beta = 0, joints at the prior mean, the best of four yaws on the keypoint
// loss, and a per-frame least-squares weak-perspective camera.
PoseState initial_pose(const ClipRecord& clip, const MeshModel& model, const FitOptions& options = {});

struct FitResult {
  PoseState pose;
  std::vector<LossReport> trace;  // up to iters + 1 entries; the last is at the returned pose
  bool converged = false;         // stopped early on grad_tol
};

FitResult fit_sequence(const ClipRecord& clip, const MeshModel& model, const PoseState& init,
                       const LossWeights& weights, int iters, const FitOptions& options = {});

}  // namespace quadfit
