#include "quadfit/fit.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "quadfit/camera.hpp"
#include "quadfit/error.hpp"
#include "quadfit/optim.hpp"
#include "quadfit/render.hpp"

namespace quadfit {

namespace {

struct Layout {
  int s, t, pd;
  int global() const { return s; }
  int joints() const { return s + 3 * t; }
  int cam() const { return s + 3 * t + pd * t; }
  int total() const { return s + 3 * t + pd * t + 3 * t; }
};

Layout layout_of(const MeshModel& model, int frames) { return {model.num_shape(), frames, model.pose_dim()}; }

bool any_confident(const ClipRecord& clip) {
  return std::any_of(clip.confidence.begin(), clip.confidence.end(), [](double c) { return c > 0.0; });
}

}  // namespace

int fit_param_count(const MeshModel& model, int frames) { return layout_of(model, frames).total(); }

std::vector<double> pack_pose(const PoseState& pose) {
  std::vector<double> p(pose.beta);
  p.insert(p.end(), pose.theta_global.begin(), pose.theta_global.end());
  p.insert(p.end(), pose.theta_joints.begin(), pose.theta_joints.end());
  p.insert(p.end(), pose.cam_weak.begin(), pose.cam_weak.end());
  return p;
}

PoseState unpack_pose(std::span<const double> params, const MeshModel& model, int frames) {
  const Layout l = layout_of(model, frames);
  if (static_cast<int>(params.size()) != l.total()) throw Error(Errc::shape_error, "parameter vector size");
  auto take = [&](int from, int to) { return std::vector<double>(params.begin() + from, params.begin() + to); };
  PoseState p;
  p.beta = take(0, l.global());
  p.theta_global = take(l.global(), l.joints());
  p.theta_joints = take(l.joints(), l.cam());
  p.cam_weak = take(l.cam(), l.total());
  return p;
}

SequenceObjective::SequenceObjective(const ClipRecord& clip, const MeshModel& model, const LossWeights& weights,
                                     const FitOptions& options)
    : clip_(clip), model_(model), weights_(weights), options_(options), frames_(clip.frames()) {
  validate_model(model);
  validate_weights(weights);
  validate_clip(clip);
  if (frames_ < 3) throw Error(Errc::sequence_too_short, "need at least 3 frames, got " + std::to_string(frames_));
  if (clip.keypoints() != model.num_keypoints()) throw Error(Errc::shape_error, "clip and model keypoint counts differ");
  if (options.sil_res <= 0 || !(options.sil_sigma > 0.0) || !(options.lr > 0.0) || !(options.sigma_gm > 0.0) ||
      options.grad_tol < 0.0)
    throw Error(Errc::invalid_argument, "fit options must be positive");
  use_kp_ = weights.kp > 0.0 && any_confident(clip);
  use_sil_ = weights.sil > 0.0 && std::find(clip.mask_valid.begin(), clip.mask_valid.end(), true) != clip.mask_valid.end();
  if (!use_kp_ && !use_sil_) throw Error(Errc::no_supervision, "no confident keypoints and no valid silhouettes");
  if (use_sil_)
    for (int t = 0; t < frames_; ++t) {
      const Mask& m = clip.masks[static_cast<size_t>(t)];
      targets_.push_back(clip.mask_valid[static_cast<size_t>(t)] ? downsample_mask(m, options.sil_res)
                                                                 : Mask(options.sil_res, options.sil_res));
    }
}

ad::Var SequenceObjective::operator()(ad::Tape& tape, const ad::Var& params, LossReport* report) const {
  const Layout l = layout_of(model_, frames_);
  if (params.size() != l.total()) throw Error(Errc::shape_error, "parameter vector size");
  const ad::Var beta = ad::slice_rows(params, 0, l.s);
  const ad::Var global = ad::reshape(ad::slice_rows(params, l.global(), 3 * l.t), l.t, 3);
  const ad::Var joints = ad::reshape(ad::slice_rows(params, l.joints(), l.pd * l.t), l.t, l.pd);
  const ad::Var cams = ad::reshape(ad::slice_rows(params, l.cam(), 3 * l.t), l.t, 3);

  std::vector<ad::Var> kp2d, masks, gamma_full;
  for (int t = 0; t < frames_; ++t) {
    const BBox& box = clip_.boxes[static_cast<size_t>(t)];
    const ad::Var cam = ad::slice_rows(cams, t, 1);
    const ad::Var verts = pose_mesh(model_, beta, ad::slice_rows(global, t, 1),
                                    ad::reshape(ad::slice_rows(joints, t, 1), l.pd / 3, 3));
    const ad::Var gf = full_camera_translation(cam, box);
    gamma_full.push_back(gf);
    if (use_kp_)
      kp2d.push_back(project_points(regress_keypoints3d(verts, model_), focal_full(box.frame_w, box.frame_h), gf,
                                    full_principal(box)));
    if (use_sil_) {
      if (clip_.mask_valid[static_cast<size_t>(t)])
        masks.push_back(rasterize_soft(verts, model_.faces, crop_translation(cam), options_.sil_res, options_.sil_sigma));
      else
        masks.push_back(tape.zeros(options_.sil_res, options_.sil_res));
    }
  }

  ad::Var l_kp = tape.constant(0.0), l_sil = tape.constant(0.0);
  if (use_kp_) l_kp = keypoint_loss(ad::concat_rows(kp2d), clip_.keypoints2d, clip_.confidence, options_.sigma_gm, weights_.kp);
  int skipped = 0;
  if (use_sil_) l_sil = silhouette_loss(tape, masks, targets_, clip_.mask_valid, weights_.sil, &skipped);

  const ad::Var s_gamma = smoothness_loss(ad::concat_rows(gamma_full), weights_.smooth_gamma);
  const ad::Var s_global = smoothness_loss(ad::rodrigues(global), weights_.smooth_global);
  const ad::Var s_joints =
      smoothness_loss(ad::reshape(ad::rodrigues(ad::reshape(joints, l.t * l.pd / 3, 3)), l.t, 3 * l.pd), weights_.smooth_joints);
  const ad::Var l_smooth = s_gamma + s_global + s_joints;
  const ad::Var p_beta = prior_loss(beta, tape.constant(model_.pose_mean, 1, l.pd), model_, weights_.beta_prior, 0.0);
  const ad::Var p_theta = prior_loss(tape.constant(std::vector<double>(static_cast<size_t>(l.s), 0.0), l.s, 1), joints,
                                     model_, 0.0, weights_.theta_prior);
  const ad::Var l_prior = p_beta + p_theta;
  const ad::Var total = l_kp + l_sil + l_smooth + l_prior;

  if (report) {
    *report = total_loss(l_kp.item(), l_sil.item(), l_smooth.item(), l_prior.item());
    report->smooth_gamma = s_gamma.item();
    report->smooth_global = s_global.item();
    report->smooth_joints = s_joints.item();
    report->prior_beta = p_beta.item();
    report->prior_theta = p_theta.item();
    report->sil_skipped = skipped;
  }
  return total;
}

double SequenceObjective::value(std::span<const double> params, LossReport* report) const {
  ad::Tape tape;
  const ad::Var p = tape.constant(std::vector<double>(params.begin(), params.end()), static_cast<int>(params.size()), 1);
  return (*this)(tape, p, report).item();
}

PoseState initial_pose(const ClipRecord& clip, const MeshModel& model, const FitOptions& options) {
  validate_model(model);
  validate_clip(clip);
  const int nt = clip.frames(), nk = model.num_keypoints();
  if (clip.keypoints() != nk) throw Error(Errc::shape_error, "clip and model keypoint counts differ");
  if (!any_confident(clip)) throw Error(Errc::no_supervision, "initialization needs confident keypoints");

  PoseState best;
  double best_loss = 1e300;
  for (int k = 0; k < 4; ++k) {
    const double yaw = (k == 3 ? -1 : k) * M_PI / 2.0;
    PoseState p;
    p.beta.assign(static_cast<size_t>(model.num_shape()), 0.0);
    const std::vector<double> beta = p.beta;
    const std::array<double, 3> global{0.0, yaw, 0.0};
    const auto k3 = regress_keypoints3d(pose_mesh(model, beta, global, model.pose_mean), model);
    double loss = 0.0;
    for (int t = 0; t < nt; ++t) {
      const BBox& box = clip.boxes[static_cast<size_t>(t)];
      // Weak perspective in normalized crop coordinates: q = s (X + p).
      double sw = 0.0, mx = 0.0, my = 0.0, qx = 0.0, qy = 0.0;
      std::vector<std::array<double, 5>> rows;  // w, X, Y, qx, qy
      for (int j = 0; j < nk; ++j) {
        const double w = clip.confidence[static_cast<size_t>(t * nk + j)];
        if (!(w > 0.0)) continue;
        const size_t o = static_cast<size_t>(2 * (t * nk + j));
        const auto c = full_to_crop({clip.keypoints2d[o], clip.keypoints2d[o + 1]}, box);
        const double ux = 2.0 * c[0] / kCropRes - 1.0, uy = 2.0 * c[1] / kCropRes - 1.0;
        const double x = k3[static_cast<size_t>(3 * j)], y = k3[static_cast<size_t>(3 * j + 1)];
        rows.push_back({w * w, x, y, ux, uy});
        sw += w * w, mx += w * w * x, my += w * w * y, qx += w * w * ux, qy += w * w * uy;
      }
      double s = 0.6, px = 0.0, py = 0.0;
      if (sw > 0.0) {
        mx /= sw, my /= sw, qx /= sw, qy /= sw;
        double num = 0.0, den = 0.0;
        for (const auto& r : rows) {
          num += r[0] * ((r[1] - mx) * (r[3] - qx) + (r[2] - my) * (r[4] - qy));
          den += r[0] * ((r[1] - mx) * (r[1] - mx) + (r[2] - my) * (r[2] - my));
        }
        if (den > 0.0 && num > 0.0) s = num / den;
        px = qx / s - mx;
        py = qy / s - my;
      }
      p.theta_global.insert(p.theta_global.end(), global.begin(), global.end());
      p.theta_joints.insert(p.theta_joints.end(), model.pose_mean.begin(), model.pose_mean.end());
      p.cam_weak.insert(p.cam_weak.end(), {s, px, py});
      const auto uv = project_points(k3, focal_full(box.frame_w, box.frame_h), full_camera_translation(s, px, py, box),
                                     full_principal(box));
      const size_t o = static_cast<size_t>(2 * nk * t);
      loss += keypoint_loss(uv, std::span<const double>(clip.keypoints2d).subspan(o, static_cast<size_t>(2 * nk)),
                            std::span<const double>(clip.confidence).subspan(static_cast<size_t>(nk * t), static_cast<size_t>(nk)),
                            options.sigma_gm, 1.0);
    }
    if (loss < best_loss) best_loss = loss, best = std::move(p);
  }
  return best;
}

FitResult fit_sequence(const ClipRecord& clip, const MeshModel& model, const PoseState& init, const LossWeights& weights,
                       int iters, const FitOptions& options) {
  if (iters < 0) throw Error(Errc::invalid_argument, "iters must be non-negative");
  const SequenceObjective objective(clip, model, weights, options);
  validate_pose(init, model);
  if (init.frames() != clip.frames()) throw Error(Errc::shape_error, "initial pose and clip lengths differ");

  std::vector<double> params = pack_pose(init);
  opt::Adam adam(params.size(), {.lr = options.lr});
  FitResult result;
  for (int it = 0; it <= iters; ++it) {
    ad::Tape tape;
    const ad::Var p = tape.variable(params, static_cast<int>(params.size()), 1);
    LossReport report;
    ad::Var loss;
    try {
      loss = objective(tape, p, &report);
    } catch (const Error& e) {
      if (e.code() != Errc::invalid_scale && e.code() != Errc::behind_camera) throw;
      throw Error(Errc::diverged, "iteration " + std::to_string(it) + ": " + e.what());
    }
    if (!std::isfinite(report.total)) throw Error(Errc::diverged, "iteration " + std::to_string(it));
    result.trace.push_back(report);
    if (it == iters) break;
    tape.backward(loss);
    const auto g = tape.grad(p);
    double gmax = 0.0;
    for (double v : g) gmax = std::max(gmax, std::abs(v));
    if (gmax < options.grad_tol) {
      result.converged = true;
      break;
    }
    adam.step(params, g);
  }
  result.pose = unpack_pose(params, model, clip.frames());
  canonicalize(result.pose);
  return result;
}

}  // namespace quadfit
