#include "quadfit/body_model.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "quadfit/error.hpp"

namespace quadfit {

int MeshModel::root() const {
  for (int j = 0; j < num_joints(); ++j)
    if (parents[static_cast<size_t>(j)] < 0) return j;
  throw Error(Errc::invalid_model, "kinematic_tree");
}

std::vector<int> MeshModel::joint_order() const {
  const int nj = num_joints();
  std::vector<int> order;
  std::vector<char> placed(static_cast<size_t>(nj), 0);
  order.reserve(static_cast<size_t>(nj));
  // Repeated sweeps; J is tiny.
  while (static_cast<int>(order.size()) < nj) {
    bool progress = false;
    for (int j = 0; j < nj; ++j) {
      if (placed[static_cast<size_t>(j)]) continue;
      const int p = parents[static_cast<size_t>(j)];
      if (p < 0 || placed[static_cast<size_t>(p)]) {
        order.push_back(j);
        placed[static_cast<size_t>(j)] = 1;
        progress = true;
      }
    }
    if (!progress) throw Error(Errc::invalid_model, "kinematic_tree");
  }
  return order;
}

std::vector<double> MeshModel::keypoint_matrix() const {
  const size_t nv = static_cast<size_t>(num_vertices());
  std::vector<double> m(keypoints.size() * nv, 0.0);
  for (size_t k = 0; k < keypoints.size(); ++k) {
    const auto& kp = keypoints[k];
    for (size_t i = 0; i < kp.vertices.size(); ++i) m[k * nv + static_cast<size_t>(kp.vertices[i])] += kp.weights[i];
  }
  return m;
}

std::vector<int> MeshModel::keypoints_in_region(std::string_view tag) const {
  std::vector<int> out;
  for (int k = 0; k < num_keypoints(); ++k) {
    const std::string& region = keypoints[static_cast<size_t>(k)].region;
    const bool is_leg = region.ends_with("_leg");
    bool match = region == tag || tag == "whole";
    if (tag == "legs") match = is_leg;
    if (tag == "front_legs") match = is_leg && region.starts_with("front_");
    if (tag == "hind_legs") match = is_leg && region.starts_with("hind_");
    if (match) out.push_back(k);
  }
  return out;
}

void validate_model(const MeshModel& m) {
  const size_t nv = static_cast<size_t>(m.num_vertices());
  const size_t nj = static_cast<size_t>(m.num_joints());
  const size_t ns = static_cast<size_t>(m.num_shape());
  auto fail = [](const char* field) { throw Error(Errc::invalid_model, field); };

  if (nv == 0 || m.template_vertices.size() != 3 * nv) fail("template");
  if (nj == 0) fail("kinematic_tree");
  if (m.shape_dirs.size() != 3 * nv * ns) fail("shape_dirs");
  if (m.shape_cov.size() != ns * ns) fail("shape_cov");
  if (m.joint_regressor.size() != nj * nv) fail("joint_regressor");
  if (m.skin_weights.size() != nv * nj) fail("skin_weights");
  if (!m.joint_names.empty() && m.joint_names.size() != nj) fail("joint_names");
  const size_t pd = 3 * (nj - 1);
  if (m.pose_mean.size() != pd) fail("pose_mean");
  if (m.pose_cov.size() != pd * pd) fail("pose_cov");

  for (double x : m.template_vertices)
    if (!std::isfinite(x)) fail("template");

  for (size_t i = 0; i < nv; ++i) {
    double s = 0.0;
    for (size_t j = 0; j < nj; ++j) {
      const double w = m.skin_weights[i * nj + j];
      if (!(w >= 0.0)) fail("skin_weights");
      s += w;
    }
    if (std::abs(s - 1.0) > 1e-6) fail("skin_weights");
  }

  int roots = 0;
  for (size_t j = 0; j < nj; ++j) {
    const int p = m.parents[j];
    if (p < 0) {
      ++roots;
    } else if (static_cast<size_t>(p) >= nj || static_cast<size_t>(p) == j) {
      fail("kinematic_tree");
    }
  }
  if (roots != 1) fail("kinematic_tree");
  for (size_t j = 0; j < nj; ++j) {
    int cur = static_cast<int>(j);
    size_t steps = 0;
    while (cur >= 0) {
      cur = m.parents[static_cast<size_t>(cur)];
      if (++steps > nj) fail("kinematic_tree");
    }
  }

  for (const auto& kp : m.keypoints) {
    if (kp.vertices.empty() || kp.vertices.size() != kp.weights.size()) fail("keypoint_defs");
    double s = 0.0;
    for (size_t i = 0; i < kp.vertices.size(); ++i) {
      if (kp.vertices[i] < 0 || static_cast<size_t>(kp.vertices[i]) >= nv) fail("keypoint_defs");
      s += kp.weights[i];
    }
    if (std::abs(s - 1.0) > 1e-6) fail("keypoint_defs");
  }

  for (const auto& f : m.faces)
    for (int v : f)
      if (v < 0 || static_cast<size_t>(v) >= nv) fail("faces");
}

PoseState zero_pose(const MeshModel& model, int frames) {
  PoseState p;
  p.beta.assign(static_cast<size_t>(model.num_shape()), 0.0);
  p.theta_global.assign(static_cast<size_t>(3 * frames), 0.0);
  p.theta_joints.assign(static_cast<size_t>(frames * model.pose_dim()), 0.0);
  p.cam_weak.assign(static_cast<size_t>(3 * frames), 0.0);
  for (int t = 0; t < frames; ++t) p.cam_weak[static_cast<size_t>(3 * t)] = 1.0;
  return p;
}

void validate_pose(const PoseState& pose, const MeshModel& model) {
  const int t = pose.frames();
  if (pose.cam_weak.size() != static_cast<size_t>(3 * t) || pose.theta_global.size() != static_cast<size_t>(3 * t) ||
      pose.theta_joints.size() != static_cast<size_t>(t * model.pose_dim()) ||
      pose.beta.size() != static_cast<size_t>(model.num_shape()))
    throw Error(Errc::shape_error, "pose state dimensions");
  auto check_rot = [](std::span<const double> r) {
    for (size_t i = 0; i + 2 < r.size(); i += 3) {
      const double n = std::sqrt(r[i] * r[i] + r[i + 1] * r[i + 1] + r[i + 2] * r[i + 2]);
      if (!(n < std::numbers::pi + 1e-6)) throw Error(Errc::invalid_argument, "rotation not canonical");
    }
  };
  check_rot(pose.theta_global);
  check_rot(pose.theta_joints);
  for (int f = 0; f < t; ++f)
    if (!(pose.cam_weak[static_cast<size_t>(3 * f)] > 0.0)) throw Error(Errc::invalid_scale);
}

std::array<double, 3> canonical_axis_angle(std::span<const double> r) {
  const double n = std::sqrt(r[0] * r[0] + r[1] * r[1] + r[2] * r[2]);
  if (n <= std::numbers::pi) return {r[0], r[1], r[2]};
  const double two_pi = 2.0 * std::numbers::pi;
  double wrapped = std::fmod(n, two_pi);
  if (wrapped > std::numbers::pi) wrapped -= two_pi;
  const double k = wrapped / n;
  return {r[0] * k, r[1] * k, r[2] * k};
}

void canonicalize(PoseState& pose) {
  auto fix = [](std::vector<double>& v) {
    for (size_t i = 0; i + 2 < v.size(); i += 3) {
      const auto c = canonical_axis_angle(std::span<const double>(v.data() + i, 3));
      v[i] = c[0];
      v[i + 1] = c[1];
      v[i + 2] = c[2];
    }
  };
  fix(pose.theta_global);
  fix(pose.theta_joints);
}

namespace {

ad::Var shaped_vertices(const MeshModel& model, const ad::Var& beta) {
  ad::Tape& tape = beta.tape();
  const int nv = model.num_vertices();
  const int ns = model.num_shape();
  if (beta.size() != ns) throw Error(Errc::shape_error, "beta has " + std::to_string(beta.size()) + " entries");
  const ad::Var tmpl = tape.constant(model.template_vertices, nv, 3);
  if (ns == 0) return tmpl;
  const ad::Var dirs = tape.constant(model.shape_dirs, 3 * nv, ns);
  return tmpl + ad::reshape(ad::matmul(dirs, ad::reshape(beta, ns, 1)), nv, 3);
}

ad::Var joints_of(const MeshModel& model, const ad::Var& shaped) {
  const ad::Var reg = shaped.tape().constant(model.joint_regressor, model.num_joints(), model.num_vertices());
  return ad::matmul(reg, shaped);
}

}  // namespace

ad::Var rest_joints(const MeshModel& model, const ad::Var& beta) {
  return joints_of(model, shaped_vertices(model, beta));
}

ad::Var pose_mesh(const MeshModel& model, const ad::Var& beta, const ad::Var& theta_global,
                  const ad::Var& theta_joints) {
  const int nj = model.num_joints();
  if (theta_global.size() != 3) throw Error(Errc::shape_error, "theta_global must have 3 entries");
  if (theta_joints.size() != 3 * (nj - 1)) throw Error(Errc::shape_error, "theta_joints must have 3(J-1) entries");
  ad::Tape& tape = beta.tape();

  const ad::Var shaped = shaped_vertices(model, beta);
  const ad::Var joints = joints_of(model, shaped);

  // Row j of rotvecs is joint j's local rotation; the root gets theta_global.
  const int root = model.root();
  std::vector<ad::Var> rows;
  rows.reserve(static_cast<size_t>(nj));
  const ad::Var locals = ad::reshape(theta_joints, nj - 1, 3);
  for (int j = 0, k = 0; j < nj; ++j) {
    if (j == root) {
      rows.push_back(ad::reshape(theta_global, 1, 3));
    } else {
      rows.push_back(ad::slice_rows(locals, k++, 1));
    }
  }
  const ad::Var rots = ad::rodrigues(ad::concat_rows(rows));

  // World rotation G_j and skinning offset A_j, with
  //   A_root = (I - G_root) J_root,  A_j = A_p + (G_p - G_j) J_j.
  // Written this way the identity pose yields exactly zero offsets.
  std::vector<ad::Var> world(static_cast<size_t>(nj));
  std::vector<ad::Var> offset(static_cast<size_t>(nj));
  const ad::Var eye = tape.constant({1, 0, 0, 0, 1, 0, 0, 0, 1}, 3, 3);
  for (int j : model.joint_order()) {
    const ad::Var local = ad::reshape(ad::slice_rows(rots, j, 1), 3, 3);
    const ad::Var jt = ad::reshape(ad::slice_rows(joints, j, 1), 3, 1);
    const int p = model.parents[static_cast<size_t>(j)];
    if (p < 0) {
      world[static_cast<size_t>(j)] = local;
      offset[static_cast<size_t>(j)] = ad::matmul(eye - local, jt);
    } else {
      const ad::Var& gp = world[static_cast<size_t>(p)];
      world[static_cast<size_t>(j)] = ad::matmul(gp, local);
      offset[static_cast<size_t>(j)] = offset[static_cast<size_t>(p)] + ad::matmul(gp - world[static_cast<size_t>(j)], jt);
    }
  }
  std::vector<ad::Var> packed;
  packed.reserve(static_cast<size_t>(nj));
  for (int j = 0; j < nj; ++j)
    packed.push_back(ad::concat_cols({ad::reshape(world[static_cast<size_t>(j)], 1, 9),
                                      ad::reshape(offset[static_cast<size_t>(j)], 1, 3)}));
  const ad::Var transforms = ad::concat_rows(packed);  // J x 12

  const ad::Var weights = tape.constant(model.skin_weights, model.num_vertices(), nj);
  const ad::Var blended = ad::matmul(weights, transforms);  // V x 12
  return ad::rowwise_matvec(ad::slice_cols(blended, 0, 9), shaped) + ad::slice_cols(blended, 9, 3);
}

std::vector<double> pose_mesh(const MeshModel& model, std::span<const double> beta,
                              std::span<const double> theta_global, std::span<const double> theta_joints) {
  ad::Tape tape;
  const auto b = tape.constant(std::vector<double>(beta.begin(), beta.end()), static_cast<int>(beta.size()), 1);
  const auto g = tape.constant(std::vector<double>(theta_global.begin(), theta_global.end()), 1,
                               static_cast<int>(theta_global.size()));
  const auto j = tape.constant(std::vector<double>(theta_joints.begin(), theta_joints.end()),
                               static_cast<int>(theta_joints.size()), 1);
  const auto v = pose_mesh(model, b, g, j).value();
  return {v.begin(), v.end()};
}

ad::Var regress_keypoints3d(const ad::Var& vertices, const MeshModel& model) {
  if (vertices.rows() != model.num_vertices() || vertices.cols() != 3)
    throw Error(Errc::shape_error, "vertices must be V x 3");
  const ad::Var m = vertices.tape().constant(model.keypoint_matrix(), model.num_keypoints(), model.num_vertices());
  return ad::matmul(m, vertices);
}

std::vector<double> regress_keypoints3d(std::span<const double> vertices, const MeshModel& model) {
  const size_t nv = static_cast<size_t>(model.num_vertices());
  if (vertices.size() != 3 * nv) throw Error(Errc::shape_error, "vertices must be V x 3");
  std::vector<double> out(3 * model.keypoints.size(), 0.0);
  for (size_t k = 0; k < model.keypoints.size(); ++k) {
    const auto& kp = model.keypoints[k];
    for (size_t i = 0; i < kp.vertices.size(); ++i) {
      const size_t v = static_cast<size_t>(kp.vertices[i]);
      for (size_t c = 0; c < 3; ++c) out[3 * k + c] += kp.weights[i] * vertices[3 * v + c];
    }
  }
  return out;
}

double body_length(const MeshModel& model) {
  double lo = 1e300, hi = -1e300;
  for (size_t i = 0; i < model.template_vertices.size(); i += 3) {
    lo = std::min(lo, model.template_vertices[i]);
    hi = std::max(hi, model.template_vertices[i]);
  }
  return hi - lo;
}

}  // namespace quadfit
