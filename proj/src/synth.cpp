#include "quadfit/synth.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "quadfit/error.hpp"
#include "quadfit/render.hpp"

namespace quadfit {

namespace {

constexpr const char* kLegs[4] = {"front_left", "front_right", "hind_left", "hind_right"};

int joint_index(const MeshModel& m, const std::string& name) {
  const auto it = std::find(m.joint_names.begin(), m.joint_names.end(), name);
  if (it == m.joint_names.end()) throw Error(Errc::invalid_model, "gait synthesis needs joint " + name);
  return static_cast<int>(it - m.joint_names.begin());
}

// Row of joint j inside theta_joints (the root has no row).
int pose_row(const MeshModel& m, int j) { return j > m.root() ? j - 1 : j; }

void set_z(std::vector<double>& pose, const MeshModel& m, int joint, double angle) {
  pose[static_cast<size_t>(3 * pose_row(m, joint) + 2)] = angle;
}

bool is_leg_joint(const std::string& name) {
  return name.ends_with("_upper") || name.ends_with("_knee") || name.ends_with("_fetlock");
}

}  // namespace

Gait parse_gait(std::string_view name) {
  if (name == "walk") return Gait::walk;
  if (name == "trot") return Gait::trot;
  if (name == "canter") return Gait::canter;
  throw Error(Errc::invalid_argument, "unknown gait " + std::string(name));
}

std::string_view gait_name(Gait gait) {
  switch (gait) {
    case Gait::walk: return "walk";
    case Gait::trot: return "trot";
    case Gait::canter: return "canter";
  }
  return "trot";
}

std::array<double, 4> gait_phases(Gait gait) {
  switch (gait) {
    // Four-beat lateral sequence.
    case Gait::walk: return {0.0, M_PI, 1.5 * M_PI, 0.5 * M_PI};
    // Diagonal pairs together.
    case Gait::trot: return {0.0, M_PI, M_PI, 0.0};
    // Three-beat, left lead: hind right, then the right diagonal, then front left.
    case Gait::canter: return {4.0 * M_PI / 3.0, 2.0 * M_PI / 3.0, 2.0 * M_PI / 3.0, 0.0};
  }
  return {};
}

GaitParams draw_gait_params(const MeshModel& model, Gait gait, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto around = [&](double v, double spread) { return v * (1.0 - spread + 2.0 * spread * u(rng)); };
  const int g = static_cast<int>(gait);
  const double hz[3] = {1.0, 1.6, 2.0}, swing[3] = {0.3, 0.4, 0.5}, knee[3] = {0.5, 0.7, 0.8};
  GaitParams p;
  p.gait = gait;
  p.stride_hz = around(hz[g], 0.1);
  p.phase0 = 2.0 * M_PI * u(rng);
  p.swing = around(swing[g], 0.15);
  p.knee = around(knee[g], 0.15);
  p.head = 0.03 + 0.05 * u(rng);
  p.yaw = -0.35 + 0.7 * u(rng);
  std::normal_distribution<double> n(0.0, 0.5);
  for (int i = 0; i < model.num_shape(); ++i) p.beta.push_back(std::clamp(n(rng), -1.5, 1.5));
  return p;
}

double leg_phase(const GaitParams& p, int leg, double t) {
  return 2.0 * M_PI * p.stride_hz * t + p.phase0 + gait_phases(p.gait)[static_cast<size_t>(leg)];
}

std::vector<double> gait_joint_pose(const MeshModel& model, const GaitParams& p, double t) {
  std::vector<double> pose(static_cast<size_t>(model.pose_dim()), 0.0);
  for (int l = 0; l < 4; ++l) {
    const std::string leg = kLegs[l];
    const double phi = leg_phase(p, l, t);
    // Straight, vertical leg exactly at phi = 0; flexed through the swing.
    const double flex = p.knee * (1.0 - std::cos(phi)) / 2.0;
    const double dir = l < 2 ? 1.0 : -1.0;  // carpus folds back, hock forward
    set_z(pose, model, joint_index(model, leg + "_upper"), p.swing * std::sin(phi));
    set_z(pose, model, joint_index(model, leg + "_knee"), dir * flex);
    set_z(pose, model, joint_index(model, leg + "_fetlock"), -0.5 * dir * flex);
  }
  set_z(pose, model, joint_index(model, "neck"), p.head * std::sin(4.0 * M_PI * p.stride_hz * t + p.phase0));
  return pose;
}

std::array<double, 3> gait_global_pose(const GaitParams& p, double t) {
  return {0.0, p.yaw + 0.03 * std::sin(2.0 * M_PI * 0.2 * t), 0.0};
}

std::vector<Contact> contact_times(const GaitParams& p, double duration) {
  std::vector<Contact> out;
  const double omega = 2.0 * M_PI * p.stride_hz;
  for (int l = 0; l < 4; ++l) {
    const double c = leg_phase(p, l, 0.0);
    for (double n = std::ceil(c / (2.0 * M_PI));; n += 1.0) {
      const double t = (2.0 * M_PI * n - c) / omega;
      if (t >= duration) break;
      if (t >= 0.0) out.push_back({t, l});
    }
  }
  std::sort(out.begin(), out.end(), [](const Contact& a, const Contact& b) { return a.time < b.time || (a.time == b.time && a.leg < b.leg); });
  return out;
}

audio::AudioTrack synth_audio(const std::vector<Contact>& contacts, double duration, double sample_rate,
                              std::uint64_t seed) {
  const size_t n = static_cast<size_t>(std::lround(duration * sample_rate));
  audio::AudioTrack track{std::vector<double>(n, 0.0), sample_rate};
  std::mt19937_64 rng(seed ^ 0x5eedau);
  std::normal_distribution<double> noise(0.0, 1.0);
  for (double& s : track.samples) s = 1e-3 * noise(rng);

  // Front hooves ring brighter and softer than hind ones.
  const double amp[4] = {0.3, 0.28, 0.42, 0.4};
  const double cutoff[4] = {1400.0, 1300.0, 700.0, 650.0};
  constexpr double kDecay = 0.012, kLength = 0.08;
  for (const Contact& c : contacts) {
    const size_t start = static_cast<size_t>(std::ceil(c.time * sample_rate));
    const size_t len = static_cast<size_t>(kLength * sample_rate);
    const double a = 1.0 - std::exp(-2.0 * M_PI * cutoff[c.leg] / sample_rate);
    double low = 0.0;
    for (size_t i = 0; i < len && start + i < n; ++i) {
      low += a * (noise(rng) - low);
      track.samples[start + i] += amp[c.leg] * 4.0 * low * std::exp(-static_cast<double>(i) / sample_rate / kDecay);
    }
  }
  for (double& s : track.samples) s = std::clamp(s, -1.0, 1.0);
  return track;
}

Image render_crop(const MeshModel& model, std::span<const double> vertices, std::span<const double> gamma_crop,
                  int res, std::uint64_t seed) {
  std::vector<std::array<int, 3>> body, legs;
  const int nj = model.num_joints();
  for (const auto& f : model.faces) {
    bool leg = true;
    for (int v : f) {
      const double* w = model.skin_weights.data() + static_cast<size_t>(v) * static_cast<size_t>(nj);
      const int j = static_cast<int>(std::max_element(w, w + nj) - w);
      leg = leg && is_leg_joint(model.joint_names[static_cast<size_t>(j)]);
    }
    (leg ? legs : body).push_back(f);
  }
  const auto uv = project_to_crop(vertices, gamma_crop, res);
  const Mask mb = hard_silhouette(uv, body, res, res);
  const Mask ml = hard_silhouette(uv, legs, res, res);

  Image img(res, res, 3);
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> jitter(-6, 6);
  for (int y = 0; y < res; ++y) {
    const double v = static_cast<double>(y) / res;
    for (int x = 0; x < res; ++x) {
      std::array<double, 3> c;
      if (mb.at(x, y) > 0.0) {
        c = {150.0 - 40.0 * v, 95.0 - 25.0 * v, 55.0 - 15.0 * v};
      } else if (ml.at(x, y) > 0.0) {
        c = {85.0, 58.0, 36.0};
      } else if (v < 0.45) {
        c = {150.0 + 40.0 * v, 175.0 + 20.0 * v, 200.0};
      } else {
        c = {70.0 + 30.0 * v, 120.0 + 20.0 * v, 60.0};
      }
      for (int ch = 0; ch < 3; ++ch)
        img.at(x, y, ch) = static_cast<std::uint8_t>(std::clamp(c[static_cast<size_t>(ch)] + jitter(rng), 0.0, 255.0));
    }
  }
  return img;
}

Sequence synth_sequence(const MeshModel& model, const SynthConfig& cfg) {
  validate_model(model);
  if (cfg.frames <= 0 || !(cfg.fps > 0.0)) throw Error(Errc::invalid_argument, "frames and fps must be positive");
  const GaitParams gp = draw_gait_params(model, cfg.gait, cfg.seed);
  std::mt19937_64 rng(cfg.seed * 0x9e3779b97f4a7c15ULL + 1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> n(0.0, 1.0);

  // Camera track: weak-perspective scale and offset in the crop, and a box
  // that drifts across the frame.
  const double s0 = 0.6 + 0.1 * u(rng);
  const double px0 = -0.15 + 0.02 * n(rng), py0 = 0.93 + 0.02 * n(rng);
  const double b0 = 380.0 + 180.0 * u(rng);
  const double cx0 = cfg.frame_w * (0.3 + 0.4 * u(rng)), cy0 = cfg.frame_h * (0.4 + 0.2 * u(rng));
  const double vx = -150.0 + 300.0 * u(rng);
  const double wobble = 2.0 * M_PI * u(rng);

  Sequence seq;
  seq.gait = std::string(gait_name(cfg.gait));
  ClipRecord& c = seq.all;
  c.sequence = seq.gait + "_" + std::to_string(cfg.seed);
  c.fps = cfg.fps;
  PoseState gt;
  gt.beta = gp.beta;
  const int nk = model.num_keypoints();
  const double ff = focal_full(cfg.frame_w, cfg.frame_h);

  for (int t = 0; t < cfg.frames; ++t) {
    const double time = t / cfg.fps;
    const auto joints = gait_joint_pose(model, gp, time);
    const auto global = gait_global_pose(gp, time);
    const double s = s0 * (1.0 + 0.02 * std::sin(2.0 * M_PI * 0.3 * time + wobble));
    const double px = px0 + 0.01 * std::sin(2.0 * M_PI * 0.5 * time + wobble);
    const double py = py0;
    const BBox box{std::clamp(cx0 + vx * time, 0.0, cfg.frame_w), cy0,
                   b0 * (1.0 + 0.03 * std::sin(2.0 * M_PI * 0.25 * time)), cfg.frame_w, cfg.frame_h};

    gt.theta_global.insert(gt.theta_global.end(), global.begin(), global.end());
    gt.theta_joints.insert(gt.theta_joints.end(), joints.begin(), joints.end());
    gt.cam_weak.insert(gt.cam_weak.end(), {s, px, py});
    c.boxes.push_back(box);

    const auto verts = pose_mesh(model, gp.beta, global, joints);
    const auto k3 = regress_keypoints3d(verts, model);
    c.gt_keypoints3d.insert(c.gt_keypoints3d.end(), k3.begin(), k3.end());
    const auto gf = full_camera_translation(s, px, py, box);
    const auto uv = project_points(k3, ff, gf, full_principal(box));
    c.keypoints2d.insert(c.keypoints2d.end(), uv.begin(), uv.end());
    c.confidence.insert(c.confidence.end(), static_cast<size_t>(nk), 1.0);

    const auto gc = crop_translation(s, px, py);
    const auto crop_uv = project_to_crop(verts, gc, cfg.crop_res);
    c.masks.push_back(hard_silhouette(crop_uv, model.faces, cfg.crop_res, cfg.crop_res));
    c.mask_valid.push_back(true);
    if (cfg.crops) c.crops.push_back(render_crop(model, verts, gc, kCropRes, cfg.seed * 7919ULL + static_cast<std::uint64_t>(t)));
  }
  c.gt_pose = gt;
  if (cfg.audio) {
    const double duration = cfg.frames / cfg.fps;
    seq.audio = synth_audio(contact_times(gp, duration), duration, cfg.sample_rate, cfg.seed);
  }
  return seq;
}

ClipRecord synth_gait(const MeshModel& model, Gait gait, int frames, double fps, std::uint64_t seed) {
  SynthConfig cfg;
  cfg.gait = gait;
  cfg.frames = frames;
  cfg.fps = fps;
  cfg.seed = seed;
  return make_clips(synth_sequence(model, cfg), frames).front();
}

MeshModel bundled_toy_model() {
  static const MeshModel cached = [] {
    MeshModel m = make_toy_quadruped();
    const size_t d = static_cast<size_t>(m.pose_dim());
    std::vector<std::vector<double>> samples;
    for (Gait g : {Gait::walk, Gait::trot, Gait::canter}) {
      for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const GaitParams p = draw_gait_params(m, g, 1000 + seed);
        for (int i = 0; i < 40; ++i) samples.push_back(gait_joint_pose(m, p, i / (40.0 * p.stride_hz)));
      }
    }
    std::vector<double> mean(d, 0.0), cov(d * d, 0.0);
    for (const auto& s : samples)
      for (size_t i = 0; i < d; ++i) mean[i] += s[i] / static_cast<double>(samples.size());
    for (const auto& s : samples)
      for (size_t i = 0; i < d; ++i)
        for (size_t j = 0; j < d; ++j)
          cov[i * d + j] += (s[i] - mean[i]) * (s[j] - mean[j]) / static_cast<double>(samples.size() - 1);
    // Joints the gaits never move still get some freedom.
    for (size_t i = 0; i < d; ++i) cov[i * d + i] += 1e-2;
    m.pose_mean = mean;
    m.pose_cov = cov;
    validate_model(m);
    return m;
  }();
  return cached;
}

}  // namespace quadfit
