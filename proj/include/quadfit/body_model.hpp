#pragma once

#include <array>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "quadfit/autodiff.hpp"

namespace quadfit {

// A 3D keypoint as a convex combination of mesh vertices.
struct KeypointDef {
  std::string name;
  std::string region;  // body-region tag, e.g. "head" or "front_left_leg"
  std::vector<int> vertices;
  std::vector<double> weights;
};

// Parametric quadruped: PCA shape space, kinematic tree and linear blend
// skinning. All matrices are row-major. Immutable once validated.
struct MeshModel {
  std::vector<double> template_vertices;  // V x 3
  std::vector<double> shape_dirs;         // V x 3 x S, i.e. (3V) x S
  std::vector<double> shape_mean;         // S
  std::vector<double> shape_cov;          // S x S
  std::vector<double> joint_regressor;    // J x V
  std::vector<int> parents;               // J, root has -1
  std::vector<std::string> joint_names;   // J
  std::vector<double> skin_weights;       // V x J
  std::vector<KeypointDef> keypoints;     // K
  std::vector<double> pose_mean;          // 3(J-1)
  std::vector<double> pose_cov;           // 3(J-1) x 3(J-1)
  std::vector<std::array<int, 3>> faces;  // F

  int num_vertices() const { return static_cast<int>(template_vertices.size() / 3); }
  int num_joints() const { return static_cast<int>(parents.size()); }
  int num_shape() const { return static_cast<int>(shape_mean.size()); }
  int num_keypoints() const { return static_cast<int>(keypoints.size()); }
  int pose_dim() const { return 3 * (num_joints() - 1); }
  int root() const;
  // Joint indices ordered so that every parent precedes its children.
  std::vector<int> joint_order() const;
  // Dense K x V keypoint interpolation matrix.
  std::vector<double> keypoint_matrix() const;
  std::vector<int> keypoints_in_region(std::string_view tag) const;
};

// Throws Error(invalid_model, <field>) on the first violated invariant.
void validate_model(const MeshModel& model);

// Reads the "quadfit-model/1" JSON schema; see docs in README.
MeshModel load_model(const std::filesystem::path& path);
void save_model(const MeshModel& model, const std::filesystem::path& path);

// Per-clip parameters. Rotations are axis-angle in radians.
struct PoseState {
  std::vector<double> beta;          // S
  std::vector<double> theta_global;  // T x 3
  std::vector<double> theta_joints;  // T x (J-1) x 3
  std::vector<double> cam_weak;      // T x 3: (s, px, py)

  int frames() const { return static_cast<int>(cam_weak.size() / 3); }
  std::span<const double> global(int t) const { return {theta_global.data() + 3 * t, 3}; }
  std::span<const double> cam(int t) const { return {cam_weak.data() + 3 * t, 3}; }
  std::span<const double> joints(int t, int pose_dim) const {
    return {theta_joints.data() + static_cast<size_t>(t) * static_cast<size_t>(pose_dim), static_cast<size_t>(pose_dim)};
  }
};

PoseState zero_pose(const MeshModel& model, int frames);
void validate_pose(const PoseState& pose, const MeshModel& model);
// Wraps a rotation vector to magnitude <= pi without changing the rotation.
std::array<double, 3> canonical_axis_angle(std::span<const double> r);
void canonicalize(PoseState& pose);

// Posed vertices (V x 3) for one frame. beta is S x 1, theta_global 1 x 3,
// theta_joints (J-1) x 3. The global rotation pivots about the root joint's
// rest position.
ad::Var pose_mesh(const MeshModel& model, const ad::Var& beta, const ad::Var& theta_global,
                  const ad::Var& theta_joints);
std::vector<double> pose_mesh(const MeshModel& model, std::span<const double> beta,
                              std::span<const double> theta_global, std::span<const double> theta_joints);

// Rest-pose joint locations (J x 3) of a shaped template.
ad::Var rest_joints(const MeshModel& model, const ad::Var& beta);

ad::Var regress_keypoints3d(const ad::Var& vertices, const MeshModel& model);
std::vector<double> regress_keypoints3d(std::span<const double> vertices, const MeshModel& model);

// Procedurally generated box-limb quadruped: V=240, J=16, S=4, K=17. Its pose
// prior is a zero-mean isotropic placeholder; the synthesis module refits it.
MeshModel make_toy_quadruped();

// Nose-to-tail extent of the template along the body axis.
double body_length(const MeshModel& model);

}  // namespace quadfit
