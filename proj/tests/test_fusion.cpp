#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "quadfit/error.hpp"
#include "quadfit/fusion.hpp"
#include "quadfit/optim.hpp"
#include "quadfit/synth.hpp"

using namespace quadfit;

namespace {

EncoderConfig small_config() {
  EncoderConfig c;
  c.hidden = {16};
  c.feature_dim = 8;
  c.head_hidden = 12;
  return c;
}

ClipRecord clip_with_audio(const MeshModel& m, Gait g, std::uint64_t seed) {
  SynthConfig c;
  c.gait = g;
  c.seed = seed;
  c.frames = 5;
  c.crops = false;
  return make_clips(synth_sequence(m, c), 5).front();
}

void zero_tensor(RegressorParams& p, std::string_view name) {
  const Tensor& t = p.tensor(name);
  std::fill_n(p.values.begin() + static_cast<long>(t.offset), t.rows * t.cols, 0.0);
}

// x (r x in) * W (in x out) + b, row-major.
std::vector<double> dense_ref(const RegressorParams& p, const std::string& name, const std::vector<double>& x, int r) {
  const Tensor& w = p.tensor(name + ".w");
  const Tensor& b = p.tensor(name + ".b");
  std::vector<double> y(static_cast<size_t>(r * w.cols));
  for (int i = 0; i < r; ++i)
    for (int o = 0; o < w.cols; ++o) {
      double s = p.values[b.offset + static_cast<size_t>(o)];
      for (int k = 0; k < w.rows; ++k)
        s += x[static_cast<size_t>(i * w.rows + k)] * p.values[w.offset + static_cast<size_t>(k * w.cols + o)];
      y[static_cast<size_t>(i * w.cols + o)] = s;
    }
  return y;
}

std::vector<double> mlp_ref(const RegressorParams& p, const std::string& name, const std::vector<double>& x, int r) {
  auto h = dense_ref(p, name + ".l0", x, r);
  for (double& v : h) v = std::max(0.0, v);
  return dense_ref(p, name + ".l1", h, r);
}

std::vector<double> hcat(const std::vector<double>& a, int ca, const std::vector<double>& b, int cb, int r) {
  std::vector<double> out;
  for (int i = 0; i < r; ++i) {
    out.insert(out.end(), a.begin() + i * ca, a.begin() + (i + 1) * ca);
    out.insert(out.end(), b.begin() + i * cb, b.begin() + (i + 1) * cb);
  }
  return out;
}

}  // namespace

TEST_CASE("variant names") {
  CHECK(parse_variant("image") == Variant::image_only);
  CHECK(parse_variant("early_fusion") == Variant::early_fusion);
  CHECK(parse_variant("model") == Variant::model_fusion);
  CHECK(variant_name(Variant::model_fusion) == "model_fusion");
  CHECK_THROWS_AS(parse_variant("late"), Error);
}

TEST_CASE("encoder is deterministic and order-aware") {
  const MeshModel m = bundled_toy_model();
  const ClipRecord c = clip_with_audio(m, Gait::trot, 3);
  const RegressorParams p = init_params(small_config(), Variant::model_fusion, m, 5);
  const Encoded a = encode_clip(c, p, 7), b = encode_clip(c, p, 7);
  CHECK(a.visual == b.visual);
  REQUIRE(a.audio);
  CHECK(*a.audio == *b.audio);

  // Reverse the frames; a per-frame encoder would just reverse its output.
  ClipRecord r = c;
  const int t = c.frames(), k = c.keypoints();
  for (int i = 0; i < t; ++i) {
    const int j = t - 1 - i;
    r.boxes[static_cast<size_t>(i)] = c.boxes[static_cast<size_t>(j)];
    std::copy_n(c.keypoints2d.begin() + 2 * k * j, 2 * k, r.keypoints2d.begin() + 2 * k * i);
    std::copy_n(c.confidence.begin() + k * j, k, r.confidence.begin() + k * i);
  }
  r.audio.reset();
  const RegressorParams pi = init_params(small_config(), Variant::image_only, m, 5);
  const Encoded fwd = encode_clip(c, pi, 0), bwd = encode_clip(r, pi, 0);
  const int d = small_config().feature_dim;
  double diff = 0.0;
  for (int i = 0; i < t; ++i)
    for (int j = 0; j < d; ++j)
      diff = std::max(diff, std::abs(fwd.visual[static_cast<size_t>(i * d + j)] -
                                     bwd.visual[static_cast<size_t>((t - 1 - i) * d + j)]));
  CHECK(diff > 1e-6);
}

TEST_CASE("silent audio gives finite features") {
  const MeshModel m = bundled_toy_model();
  ClipRecord c = clip_with_audio(m, Gait::walk, 4);
  REQUIRE(c.audio);
  std::fill(c.audio->values.begin(), c.audio->values.end(), std::log(1e-10));
  for (Variant v : {Variant::early_fusion, Variant::model_fusion}) {
    const RegressorParams p = init_params(small_config(), v, m, 1);
    const Encoded e = encode_clip(c, p);
    REQUIRE(e.audio);
    CHECK(std::all_of(e.audio->begin(), e.audio->end(), [](double x) { return std::isfinite(x); }));
    const Prediction pr = forward(c, p);
    CHECK(std::all_of(pr.pose.theta_joints.begin(), pr.pose.theta_joints.end(), [](double x) { return std::isfinite(x); }));
  }
}

TEST_CASE("zero heads and zero iterations return the mean") {
  const MeshModel m = bundled_toy_model();
  const ClipRecord c = clip_with_audio(m, Gait::canter, 2);
  auto check_mean = [&](const RegressorParams& p) {
    const PoseState pose = forward(c, p).pose;
    for (double b : pose.beta) CHECK(b == doctest::Approx(0.0));
    for (int t = 0; t < c.frames(); ++t) {
      const auto cam = pose.cam(t);
      CHECK(cam[0] == doctest::Approx(std::exp(p.mean_cam[0])));
      CHECK(cam[1] == doctest::Approx(p.mean_cam[1]));
      CHECK(cam[2] == doctest::Approx(p.mean_cam[2]));
      const auto j = pose.joints(t, m.pose_dim());
      for (int i = 0; i < m.pose_dim(); ++i) CHECK(j[static_cast<size_t>(i)] == doctest::Approx(p.mean_pose[static_cast<size_t>(i)]));
    }
  };
  RegressorParams p = init_params(small_config(), Variant::image_only, m, 3);
  for (const char* n : {"psi.l1.w", "psi.l1.b", "phi.l1.w", "phi.l1.b"}) zero_tensor(p, n);
  check_mean(p);

  RegressorParams q = init_params(small_config(), Variant::image_only, m, 3);
  q.config.n_iter = 0;
  check_mean(q);
}

TEST_CASE("forward matches a hand-unrolled error feedback loop") {
  const MeshModel m = bundled_toy_model();
  const ClipRecord c = clip_with_audio(m, Gait::trot, 8);
  RegressorParams p = init_params(small_config(), Variant::image_only, m, 11);
  // Make the residuals large enough to matter.
  for (const char* n : {"psi.l1.w", "phi.l1.w"}) {
    const Tensor& t = p.tensor(n);
    for (int i = 0; i < t.rows * t.cols; ++i) p.values[t.offset + static_cast<size_t>(i)] *= 30.0;
  }
  const int t = c.frames(), d = p.config.feature_dim, s = p.shape_dim, pd = p.pose_dim;
  const std::vector<double> f = encode_clip(c, p, 0).visual;

  std::vector<double> state, theta;
  for (int i = 0; i < t; ++i) {
    state.insert(state.end(), static_cast<size_t>(s), 0.0);
    state.insert(state.end(), p.mean_cam.begin(), p.mean_cam.end());
    theta.insert(theta.end(), p.mean_pose.begin(), p.mean_pose.end());
  }
  for (int it = 0; it < 3; ++it) {
    const auto ds = mlp_ref(p, "psi", hcat(f, d, state, s + 3, t), t);
    const auto dt = mlp_ref(p, "phi", hcat(f, d, theta, pd, t), t);
    for (size_t i = 0; i < state.size(); ++i) state[i] += ds[i];
    for (size_t i = 0; i < theta.size(); ++i) theta[i] += dt[i];
  }
  const auto glob = dense_ref(p, "glob", f, t);

  const PoseState pose = forward(c, p).pose;
  for (int j = 0; j < s; ++j) {
    double mean = 0.0;
    for (int i = 0; i < t; ++i) mean += state[static_cast<size_t>(i * (s + 3) + j)] / t;
    CHECK(pose.beta[static_cast<size_t>(j)] == doctest::Approx(mean).epsilon(1e-10));
  }
  for (int i = 0; i < t; ++i) {
    const auto cam = pose.cam(i);
    const size_t o = static_cast<size_t>(i * (s + 3) + s);
    CHECK(cam[0] == doctest::Approx(std::exp(state[o])).epsilon(1e-10));
    CHECK(cam[1] == doctest::Approx(state[o + 1]).epsilon(1e-10));
    CHECK(cam[2] == doctest::Approx(state[o + 2]).epsilon(1e-10));
    for (int k = 0; k < 3; ++k)
      CHECK(pose.theta_global[static_cast<size_t>(3 * i + k)] == doctest::Approx(glob[static_cast<size_t>(3 * i + k)]).epsilon(1e-10));
  }
  for (size_t i = 0; i < theta.size(); ++i) CHECK(pose.theta_joints[i] == doctest::Approx(theta[i]).epsilon(1e-10));
}

TEST_CASE("audio handling per variant") {
  const MeshModel m = bundled_toy_model();
  const ClipRecord c = clip_with_audio(m, Gait::walk, 6);
  ClipRecord mute = c;
  mute.audio.reset();

  const RegressorParams img = init_params(small_config(), Variant::image_only, m, 2);
  CHECK(forward(c, img).pose.theta_joints == forward(mute, img).pose.theta_joints);
  CHECK_FALSE(forward(c, img).audio_joints);

  const RegressorParams mod = init_params(small_config(), Variant::model_fusion, m, 2);
  const Prediction with = forward(c, mod), without = forward(mute, mod);
  CHECK(with.audio_joints);
  CHECK_FALSE(without.audio_joints);
  CHECK(with.pose.theta_joints == without.pose.theta_joints);
  CHECK(with.pose.cam_weak == without.pose.cam_weak);

  const RegressorParams early = init_params(small_config(), Variant::early_fusion, m, 2);
  CHECK_NOTHROW(forward(c, early));
  try {
    forward(mute, early);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::audio_required);
  }
}

TEST_CASE("audio loss ablation") {
  const MeshModel m = bundled_toy_model();
  const ClipRecord c = clip_with_audio(m, Gait::trot, 9);
  LossWeights w;
  w.sil = 0.0;
  TrainConfig on, off;
  on.encoder = off.encoder = small_config();
  off.audio_loss = false;
  const RegressorParams mod = init_params(small_config(), Variant::model_fusion, m, 4);
  auto loss = [&](const RegressorParams& p, const TrainConfig& cfg) {
    ad::Tape tape;
    const NetView net(tape, p, false);
    return clip_loss(net, c, m, w, cfg, 0).item();
  };
  CHECK(loss(mod, on) > loss(mod, off));

  // Without the audio term, model fusion is the image-only network.
  RegressorParams img = init_params(small_config(), Variant::image_only, m, 4);
  for (const Tensor& t : img.layout) {
    const Tensor& u = mod.tensor(t.name);
    std::copy_n(mod.values.begin() + static_cast<long>(u.offset), t.rows * t.cols, img.values.begin() + static_cast<long>(t.offset));
  }
  CHECK(loss(mod, off) == loss(img, off));
}

TEST_CASE("encoder gradient matches finite differences") {
  const MeshModel m = bundled_toy_model();
  const ClipRecord c = clip_with_audio(m, Gait::trot, 10);
  LossWeights w;
  w.sil = 0.0;
  for (Variant v : {Variant::image_only, Variant::early_fusion, Variant::model_fusion}) {
    EncoderConfig cfg = small_config();
    cfg.group_norm = v == Variant::early_fusion;
    cfg.groups = 4;
    TrainConfig tc;
    tc.encoder = cfg;
    const RegressorParams p = init_params(cfg, v, m, 21);
    const opt::LossFn f = [&](ad::Tape& tape, const ad::Var& x) {
      const NetView net(tape, p, x);
      return clip_loss(net, c, m, w, tc, 3);
    };
    opt::GradCheckOptions g;
    g.tol = 1e-4;
    g.seed = 5;
    const auto r = opt::check_gradient(f, p.values, g);
    CAPTURE(variant_name(v));
    CAPTURE(r.max_rel_error);
    CHECK(r.passed);
  }
}

TEST_CASE("training overfits a single clip and is reproducible") {
  const MeshModel m = bundled_toy_model();
  const std::vector<ClipRecord> clips{clip_with_audio(m, Gait::trot, 12)};
  LossWeights w;
  w.sil = 0.0;
  TrainConfig tc;
  tc.encoder = small_config();
  tc.encoder.keypoint_noise = 0.0;
  tc.epochs = 2000;
  const TrainResult a = train(clips, Variant::image_only, m, w, tc);
  REQUIRE(a.trace.size() == 2001);
  CAPTURE(a.trace.front().mean.l_kp);
  CAPTURE(a.trace.back().mean.l_kp);
  CHECK(a.trace.back().mean.l_kp < 0.05 * a.trace.front().mean.l_kp);

  tc.epochs = 5;
  const TrainResult b = train(clips, Variant::model_fusion, m, w, tc);
  const TrainResult b2 = train(clips, Variant::model_fusion, m, w, tc);
  CHECK(b.params.values == b2.params.values);
  tc.seed = 1;
  CHECK(train(clips, Variant::model_fusion, m, w, tc).params.values != b.params.values);
}

TEST_CASE("parameters survive a save and load") {
  const MeshModel m = bundled_toy_model();
  EncoderConfig cfg = small_config();
  cfg.group_norm = true;
  cfg.groups = 4;
  RegressorParams p = init_params(cfg, Variant::early_fusion, m, 8);
  p.audio_shift = -3.25;
  p.audio_scale = 1.5;
  const auto path = std::filesystem::temp_directory_path() / "quadfit_test_net.json";
  save_params(p, path);
  const RegressorParams q = load_params(path);
  CHECK(q.values == p.values);
  CHECK(q.variant == p.variant);
  CHECK(q.mean_cam == p.mean_cam);
  CHECK(q.mean_pose == p.mean_pose);
  CHECK(q.audio_shift == p.audio_shift);
  CHECK(q.audio_scale == p.audio_scale);
  CHECK(q.config.group_norm);
  const ClipRecord c = clip_with_audio(m, Gait::walk, 1);
  CHECK(forward(c, q).pose.theta_joints == forward(c, p).pose.theta_joints);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(load_params(path), Error);
}

TEST_CASE("middle-frame stitching") {
  const MeshModel m = bundled_toy_model();
  for (int t : {3, 5, 7}) {
    const int n = 12;
    SynthConfig sc;
    sc.frames = n;
    sc.crops = false;
    sc.audio = false;
    const Sequence seq = synth_sequence(m, sc);
    std::vector<int> starts;
    std::vector<PoseState> poses;
    for (const auto& clip : make_clips(seq, t)) {
      starts.push_back(clip.start);
      poses.push_back(*clip.gt_pose);
    }
    const Stitched s = stitch_middle(starts, poses, n);
    CHECK(s.missing == 2 * (t / 2));
    for (int f = 0; f < n; ++f) {
      const bool edge = f < t / 2 || f >= n - t / 2;
      CHECK(s.frames[static_cast<size_t>(f)].has_value() == !edge);
      if (!edge) {
        const auto& fp = *s.frames[static_cast<size_t>(f)];
        const auto j = seq.all.gt_pose->joints(f, m.pose_dim());
        CHECK(std::equal(fp.theta_joints.begin(), fp.theta_joints.end(), j.begin()));
      }
    }
  }
  CHECK_THROWS_AS(stitch_middle({0}, {}, 5), Error);
}
