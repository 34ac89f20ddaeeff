#include <doctest.h>

#include <cmath>

#include "quadfit/audio.hpp"
#include "quadfit/error.hpp"
#include "quadfit/losses.hpp"
#include "quadfit/metrics.hpp"
#include "quadfit/synth.hpp"
#include "test_util.hpp"

using namespace quadfit;

namespace {

// Hoof height above the ground (the model's y axis points down).
double hoof_height(const MeshModel& m, const GaitParams& p, int leg, double t) {
  const auto v = pose_mesh(m, p.beta, gait_global_pose(p, t), gait_joint_pose(m, p, t));
  const auto k3 = regress_keypoints3d(v, m);
  const int hoof = 5 + 3 * leg + 2;
  return -k3[static_cast<size_t>(3 * hoof + 1)];
}

}  // namespace

TEST_CASE("gait phase patterns") {
  const auto trot = gait_phases(Gait::trot);
  CHECK(trot == std::array<double, 4>{0.0, M_PI, M_PI, 0.0});
  CHECK(parse_gait("canter") == Gait::canter);
  CHECK(gait_name(Gait::walk) == "walk");
  CHECK_THROWS_AS(parse_gait("gallop"), Error);

  // Diagonal pairs land together, half a stride apart from the other pair.
  const MeshModel m = bundled_toy_model();
  const GaitParams p = draw_gait_params(m, Gait::trot, 11);
  const auto contacts = contact_times(p, 3.0);
  std::array<std::vector<double>, 4> by_leg;
  for (const auto& c : contacts) by_leg[static_cast<size_t>(c.leg)].push_back(c.time);
  const double period = 1.0 / p.stride_hz;
  for (size_t i = 0; i < std::min(by_leg[0].size(), by_leg[3].size()); ++i) CHECK(by_leg[0][i] == doctest::Approx(by_leg[3][i]));
  for (size_t i = 0; i < std::min(by_leg[1].size(), by_leg[2].size()); ++i) CHECK(by_leg[1][i] == doctest::Approx(by_leg[2][i]));
  const double gap = std::fmod(by_leg[1][0] - by_leg[0][0] + 2 * period, period);
  CHECK(gap == doctest::Approx(period / 2));
  for (int l = 0; l < 4; ++l)
    for (size_t i = 1; i < by_leg[static_cast<size_t>(l)].size(); ++i)
      CHECK(by_leg[static_cast<size_t>(l)][i] - by_leg[static_cast<size_t>(l)][i - 1] == doctest::Approx(period));
}

TEST_CASE("contacts coincide with the lowest hoof position") {
  const MeshModel m = bundled_toy_model();
  for (Gait g : {Gait::walk, Gait::trot, Gait::canter}) {
    const GaitParams p = draw_gait_params(m, g, 5);
    const double duration = 1.5;
    const auto contacts = contact_times(p, duration);
    REQUIRE(contacts.size() >= 4);
    // Within each stride centred on a contact, the hoof's lowest sample
    // (1 ms grid) is at that contact.
    const double period = 1.0 / p.stride_hz;
    for (const auto& c : contacts) {
      if (c.time - period / 2 < 0.0 || c.time + period / 2 > duration) continue;
      double best_t = 0.0, best_h = 1e9;
      for (double t = c.time - period / 2; t <= c.time + period / 2; t += 1e-3) {
        const double h = hoof_height(m, p, c.leg, t);
        if (h < best_h) best_h = h, best_t = t;
      }
      CHECK(std::abs(best_t - c.time) <= 1e-3);
    }
  }
}

TEST_CASE("audio onsets follow hoof contacts within one hop") {
  const MeshModel m = bundled_toy_model();
  SynthConfig cfg;
  cfg.frames = 50;
  cfg.seed = 8;
  cfg.crops = false;
  for (Gait g : {Gait::walk, Gait::trot}) {
    cfg.gait = g;
    const Sequence seq = synth_sequence(m, cfg);
    const auto& a = *seq.audio;
    const GaitParams p = draw_gait_params(m, g, cfg.seed);
    const auto contacts = contact_times(p, cfg.frames / cfg.fps);

    // Onsets from 10 ms block energy: first loud block after a quiet one.
    const int hop = 441;
    std::vector<double> onsets;
    bool loud = true;
    for (size_t b = 0; (b + 1) * hop <= a.samples.size(); ++b) {
      double e = 0.0;
      for (int i = 0; i < hop; ++i) e += a.samples[b * hop + static_cast<size_t>(i)] * a.samples[b * hop + static_cast<size_t>(i)];
      const bool now = std::sqrt(e / hop) > 0.02;
      if (now && !loud) onsets.push_back(static_cast<double>(b * hop) / a.sample_rate);
      loud = now;
    }
    REQUIRE(onsets.size() >= 3);
    for (double o : onsets) {
      double nearest = 1e9;
      for (const auto& c : contacts) nearest = std::min(nearest, std::abs(c.time - o));
      CAPTURE(o);
      CHECK(nearest <= hop / a.sample_rate);
    }
  }
}

TEST_CASE("synthetic labels are self-consistent") {
  const MeshModel m = bundled_toy_model();
  const ClipRecord c = synth_gait(m, Gait::trot, 5, 25.0, 21);
  validate_clip(c);
  REQUIRE(c.gt_pose.has_value());
  const PoseState& gt = *c.gt_pose;
  const int pd = m.pose_dim(), nk = m.num_keypoints();
  for (int t = 0; t < 5; ++t) {
    const auto v = pose_mesh(m, gt.beta, gt.global(t), gt.joints(t, pd));
    const auto k3 = regress_keypoints3d(v, m);
    const BBox& box = c.boxes[static_cast<size_t>(t)];
    const auto cam = gt.cam(t);
    const auto uv = project_points(k3, focal_full(box.frame_w, box.frame_h), full_camera_translation(cam[0], cam[1], cam[2], box),
                                   full_principal(box));
    for (int i = 0; i < 2 * nk; ++i) CHECK(std::abs(uv[static_cast<size_t>(i)] - c.keypoints2d[static_cast<size_t>(2 * nk * t + i)]) < 1e-6);
    for (int k = 0; k < nk; ++k) {
      CHECK(rect_of(box).contains(uv[static_cast<size_t>(2 * k)], uv[static_cast<size_t>(2 * k + 1)]));
      for (int d = 0; d < 3; ++d) CHECK(k3[static_cast<size_t>(3 * k + d)] == c.gt_keypoints3d[static_cast<size_t>(3 * (nk * t + k) + d)]);
    }
    CHECK(c.masks[static_cast<size_t>(t)].sum() > 3000);
    CHECK(c.confidence[static_cast<size_t>(t * nk)] == 1.0);
  }
  CHECK(p_mpjpe(c.gt_keypoints3d, c.gt_keypoints3d, 5).summary.mean < 1e-12);
  REQUIRE(c.audio.has_value());
  CHECK(c.audio->width == 20);
}

TEST_CASE("synthesis is deterministic per seed") {
  const MeshModel m = bundled_toy_model();
  SynthConfig cfg;
  cfg.frames = 6;
  cfg.seed = 4;
  const Sequence a = synth_sequence(m, cfg), b = synth_sequence(m, cfg);
  CHECK(a.all.keypoints2d == b.all.keypoints2d);
  CHECK(a.all.crops[3].pixels == b.all.crops[3].pixels);
  CHECK(a.audio->samples == b.audio->samples);
  cfg.seed = 5;
  CHECK(synth_sequence(m, cfg).all.keypoints2d != a.all.keypoints2d);
}

TEST_CASE("bundled model prior") {
  const MeshModel m = bundled_toy_model();
  validate_model(m);
  const GaussianPrior prior(m.pose_mean, m.pose_cov);
  CHECK(prior.dim() == m.pose_dim());
  // Sampled gait poses are typical under the refitted prior; a random
  // twist of the spine is not.
  const GaitParams p = draw_gait_params(m, Gait::canter, 99);
  const double typical = prior_loss(std::vector<double>(4, 0.0), gait_joint_pose(m, p, 0.37), m, 0.0, 1.0);
  std::vector<double> odd(static_cast<size_t>(m.pose_dim()), 0.0);
  odd[0] = 0.5;
  const double unusual = prior_loss(std::vector<double>(4, 0.0), odd, m, 0.0, 1.0);
  CHECK(typical < m.pose_dim());
  CHECK(unusual > 10.0);
}
