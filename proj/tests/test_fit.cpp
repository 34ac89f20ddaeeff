#include <doctest.h>

#include <cmath>
#include <random>

#include "quadfit/error.hpp"
#include "quadfit/fit.hpp"
#include "quadfit/metrics.hpp"
#include "quadfit/optim.hpp"
#include "quadfit/synth.hpp"

using namespace quadfit;

namespace {

std::vector<double> keypoints3d(const MeshModel& m, const PoseState& p) {
  std::vector<double> out;
  for (int t = 0; t < p.frames(); ++t) {
    const auto k = regress_keypoints3d(pose_mesh(m, p.beta, p.global(t), p.joints(t, m.pose_dim())), m);
    out.insert(out.end(), k.begin(), k.end());
  }
  return out;
}

PoseState perturbed(const PoseState& gt, double sigma, std::uint64_t seed) {
  PoseState p = gt;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, sigma);
  for (double& x : p.theta_joints) x += n(rng);
  return p;
}

}  // namespace

TEST_CASE("parameter packing round trip") {
  const MeshModel m = bundled_toy_model();
  const ClipRecord c = synth_gait(m, Gait::walk, 4, 25.0, 2);
  const auto flat = pack_pose(*c.gt_pose);
  CHECK(static_cast<int>(flat.size()) == fit_param_count(m, 4));
  const PoseState back = unpack_pose(flat, m, 4);
  CHECK(back.beta == c.gt_pose->beta);
  CHECK(back.theta_joints == c.gt_pose->theta_joints);
  CHECK(back.cam_weak == c.gt_pose->cam_weak);
  CHECK_THROWS_AS(unpack_pose(std::vector<double>(3, 0.0), m, 4), Error);
}

TEST_CASE("full objective gradient matches finite differences") {
  const MeshModel m = bundled_toy_model();
  const ClipRecord c = synth_gait(m, Gait::trot, 3, 25.0, 6);
  LossWeights w;
  w.sil = 1.0;  // make the silhouette term visible next to the others
  FitOptions o;
  o.sil_res = 24;
  o.sil_sigma = 0.6;
  const SequenceObjective f(c, m, w, o);
  const opt::LossFn loss = [&](ad::Tape& tape, const ad::Var& p) { return f(tape, p); };
  for (std::uint64_t trial = 0; trial < 3; ++trial) {
    const auto x = pack_pose(perturbed(*c.gt_pose, 0.1, trial));
    opt::GradCheckOptions g;
    g.tol = 1e-3;
    g.seed = trial;
    const auto r = opt::check_gradient(loss, x, g);
    CAPTURE(r.max_rel_error);
    CHECK(r.passed);
  }
}

TEST_CASE("fit stays put at a keypoint optimum") {
  const MeshModel m = bundled_toy_model();
  const ClipRecord c = synth_gait(m, Gait::trot, 5, 25.0, 3);
  LossWeights w;
  w.sil = w.beta_prior = w.theta_prior = w.smooth_gamma = w.smooth_global = w.smooth_joints = 0.0;
  const FitResult r = fit_sequence(c, m, *c.gt_pose, w, 20);
  CHECK(r.converged);
  CHECK(r.trace.front().total < 1e-12);
  CHECK(std::abs(r.trace.back().total - r.trace.front().total) < 1e-6);
  const auto a = pack_pose(*c.gt_pose), b = pack_pose(r.pose);
  for (size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - b[i]) < 1e-3);
}

TEST_CASE("fit from ground truth does not increase the loss") {
  const MeshModel m = bundled_toy_model();
  const ClipRecord c = synth_gait(m, Gait::walk, 5, 25.0, 4);
  const FitResult r = fit_sequence(c, m, *c.gt_pose, LossWeights{}, 15);
  CHECK(r.trace.back().total <= r.trace.front().total);
  for (const auto& rep : r.trace)
    CHECK(rep.total == doctest::Approx(rep.l_kp + rep.l_sil + rep.l_smooth + rep.l_prior).epsilon(1e-12));
}

TEST_CASE("fit recovers a perturbed pose") {
  const MeshModel m = bundled_toy_model();
  const double limit = 0.1 * body_length(m);
  for (Gait g : {Gait::trot, Gait::canter}) {
    const ClipRecord c = synth_gait(m, g, 5, 25.0, 40 + static_cast<int>(g));
    const PoseState init = perturbed(*c.gt_pose, 0.2, 9);
    const double before = p_mpjpe(keypoints3d(m, init), c.gt_keypoints3d, 5).summary.mean;
    const FitResult r = fit_sequence(c, m, init, LossWeights{}, 100);
    const double after = p_mpjpe(keypoints3d(m, r.pose), c.gt_keypoints3d, 5).summary.mean;
    CAPTURE(before);
    CAPTURE(after);
    CHECK(after < limit);
    CHECK(after < 0.7 * before);
    CHECK(r.trace.back().total < r.trace.front().total);
  }
}

TEST_CASE("fit is bit-reproducible") {
  const MeshModel m = bundled_toy_model();
  const ClipRecord c = synth_gait(m, Gait::canter, 4, 25.0, 12);
  const PoseState init = perturbed(*c.gt_pose, 0.2, 1);
  const FitResult a = fit_sequence(c, m, init, LossWeights{}, 10);
  const FitResult b = fit_sequence(c, m, init, LossWeights{}, 10);
  CHECK(pack_pose(a.pose) == pack_pose(b.pose));
  CHECK(a.trace.back().total == b.trace.back().total);
}

TEST_CASE("initialization picks the facing direction") {
  const MeshModel m = bundled_toy_model();
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    const ClipRecord c = synth_gait(m, Gait::trot, 5, 25.0, 70 + seed);
    const PoseState p = initial_pose(c, m);
    validate_pose(p, m);
    CHECK(p.theta_global[1] == 0.0);
    for (int t = 0; t < 5; ++t) CHECK(p.cam_weak[static_cast<size_t>(3 * t)] == doctest::Approx(c.gt_pose->cam_weak[static_cast<size_t>(3 * t)]).epsilon(0.25));
    // A camera on the far side sees the mirror image.
    ClipRecord flipped = c;
    for (int t = 0; t < 5; ++t)
      for (int k = 0; k < m.num_keypoints(); ++k) {
        double& x = flipped.keypoints2d[static_cast<size_t>(2 * (t * m.num_keypoints() + k))];
        x = 2.0 * c.boxes[static_cast<size_t>(t)].cx - x;
      }
    CHECK(std::abs(initial_pose(flipped, m).theta_global[1]) == doctest::Approx(M_PI));
  }
}

TEST_CASE("fit input errors") {
  const MeshModel m = bundled_toy_model();
  const ClipRecord c = synth_gait(m, Gait::trot, 5, 25.0, 1);

  ClipRecord blind = c;
  std::fill(blind.confidence.begin(), blind.confidence.end(), 0.0);
  std::fill(blind.mask_valid.begin(), blind.mask_valid.end(), false);
  try {
    fit_sequence(blind, m, *c.gt_pose, LossWeights{}, 1);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::no_supervision);
  }
  CHECK_THROWS_AS(initial_pose(blind, m), Error);

  // Silhouettes alone are enough supervision.
  ClipRecord masks_only = c;
  std::fill(masks_only.confidence.begin(), masks_only.confidence.end(), 0.0);
  CHECK_NOTHROW(fit_sequence(masks_only, m, *c.gt_pose, LossWeights{}, 1));

  const ClipRecord two = synth_gait(m, Gait::trot, 2, 25.0, 1);
  try {
    fit_sequence(two, m, *two.gt_pose, LossWeights{}, 1);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::sequence_too_short);
  }

  PoseState bad = *c.gt_pose;
  bad.beta[0] = std::nan("");
  try {
    fit_sequence(c, m, bad, LossWeights{}, 3);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::diverged);
    CHECK(std::string(e.what()).find("iteration 0") != std::string::npos);
  }
}
