// Box-limb toy quadruped used for desk-scale runs and tests.
//
// Model frame: x points toward the nose, y points down (ground at y = 0),
// z points away from a side-on camera. Units are meters.

#include <cmath>
#include <numbers>

#include "quadfit/body_model.hpp"

namespace quadfit {

namespace {

enum Joint : int {
  kRoot, kSpine, kNeck, kHead,
  kFlUpper, kFlKnee, kFlFetlock,
  kFrUpper, kFrKnee, kFrFetlock,
  kHlUpper, kHlKnee, kHlFetlock,
  kHrUpper, kHrKnee, kHrFetlock,
  kJointCount
};

constexpr int kShapeCount = 4;

using Weights = std::vector<std::pair<int, double>>;

struct Builder {
  MeshModel m;
  std::vector<double> shape;  // (3V) x S, filled per vertex
  std::vector<double> skin;   // V x J

  int vertex_count() const { return static_cast<int>(m.template_vertices.size() / 3); }

  // Ring of n vertices around center c, in the plane spanned by the in-plane
  // normal of direction d (in the x-y plane) and the z axis. Returns the
  // index of its first vertex.
  int ring(double cx, double cy, double cz, double dx, double dy, double ru, double rw, int n,
           const Weights& weights) {
    const double dn = std::hypot(dx, dy);
    const double ux = -dy / dn, uy = dx / dn;
    const double phase = n == 4 ? std::numbers::pi / 4 : 0.0;
    const int first = vertex_count();
    for (int i = 0; i < n; ++i) {
      const double phi = phase + 2.0 * std::numbers::pi * i / n;
      const double a = ru * std::cos(phi), b = rw * std::sin(phi);
      m.template_vertices.insert(m.template_vertices.end(), {cx + a * ux, cy + a * uy, cz + b});
      std::vector<double> row(kJointCount, 0.0);
      for (auto [j, w] : weights) row[static_cast<size_t>(j)] += w;
      skin.insert(skin.end(), row.begin(), row.end());
      shape.insert(shape.end(), 3 * kShapeCount, 0.0);
    }
    return first;
  }

  void tube(const std::vector<int>& rings, int n) {
    for (size_t r = 0; r + 1 < rings.size(); ++r) {
      const int a = rings[r], b = rings[r + 1];
      for (int i = 0; i < n; ++i) {
        const int i1 = (i + 1) % n;
        m.faces.push_back({a + i, a + i1, b + i});
        m.faces.push_back({a + i1, b + i1, b + i});
      }
    }
    for (int end : {rings.front(), rings.back()})
      for (int i = 1; i + 1 < n; ++i) m.faces.push_back({end, end + i, end + i + 1});
  }

  void set_shape(int v, int s, double x, double y, double z) {
    const size_t base = static_cast<size_t>(3 * v) * kShapeCount;
    shape[base + static_cast<size_t>(s)] = x;
    shape[base + kShapeCount + static_cast<size_t>(s)] = y;
    shape[base + 2 * kShapeCount + static_cast<size_t>(s)] = z;
  }

  void regress_joint(int joint, int first, int n) {
    for (int i = 0; i < n; ++i) joint_rows[static_cast<size_t>(joint)].push_back({first + i, 1.0 / n});
  }

  std::vector<Weights> joint_rows = std::vector<Weights>(kJointCount);
};

}  // namespace

MeshModel make_toy_quadruped() {
  Builder b;
  MeshModel& m = b.m;
  m.parents = {-1, kRoot, kSpine, kNeck,
               kSpine, kFlUpper, kFlKnee,
               kSpine, kFrUpper, kFrKnee,
               kRoot, kHlUpper, kHlKnee,
               kRoot, kHrUpper, kHrKnee};
  m.joint_names = {"root", "spine", "neck", "head",
                   "front_left_upper", "front_left_knee", "front_left_fetlock",
                   "front_right_upper", "front_right_knee", "front_right_fetlock",
                   "hind_left_upper", "hind_left_knee", "hind_left_fetlock",
                   "hind_right_upper", "hind_right_knee", "hind_right_fetlock"};

  // Torso along x; the root blends into the spine around mid-body.
  const double torso_x[8] = {-0.85, -0.55, -0.3, -0.1, 0.15, 0.4, 0.6, 0.78};
  const double torso_r[8] = {0.2, 0.27, 0.28, 0.28, 0.28, 0.28, 0.26, 0.2};
  std::vector<int> torso;
  for (int i = 0; i < 8; ++i) {
    const double x = torso_x[i];
    if (i <= 3) {
      torso.push_back(b.ring(x, -1.15, 0, 1, 0, torso_r[i], 0.85 * torso_r[i], 8, {{kRoot, 1.0}}));
    } else if (i == 4) {
      torso.push_back(b.ring(x, -1.15, 0, 1, 0, torso_r[i], 0.85 * torso_r[i], 8, {{kRoot, 0.5}, {kSpine, 0.5}}));
    } else {
      torso.push_back(b.ring(x, -1.15, 0, 1, 0, torso_r[i], 0.85 * torso_r[i], 8, {{kSpine, 1.0}}));
    }
  }
  b.tube(torso, 8);
  b.regress_joint(kRoot, torso[1], 8);
  b.regress_joint(kSpine, torso[5], 8);

  // Neck rises forward from the withers.
  std::vector<int> neck;
  const double neck_r[4] = {0.16, 0.14, 0.12, 0.11};
  for (int i = 0; i < 4; ++i) {
    const double t = i / 3.0;
    Weights w = {{kNeck, 1.0}};
    if (i == 0) w = {{kSpine, 0.5}, {kNeck, 0.5}};
    if (i == 3) w = {{kNeck, 0.5}, {kHead, 0.5}};
    neck.push_back(b.ring(0.7 + 0.3 * t, -1.3 - 0.45 * t, 0, 0.3, -0.45, neck_r[i], 0.75 * neck_r[i], 8, w));
  }
  b.tube(neck, 8);
  b.regress_joint(kNeck, neck[0], 8);
  b.regress_joint(kHead, neck[3], 8);

  std::vector<int> head;
  const double head_r[4] = {0.12, 0.12, 0.1, 0.08};
  for (int i = 0; i < 4; ++i) {
    const double t = i / 3.0;
    head.push_back(b.ring(1.0 + 0.5 * t, -1.8 + 0.3 * t, 0, 0.5, 0.3, head_r[i], 0.75 * head_r[i], 8, {{kHead, 1.0}}));
  }
  b.tube(head, 8);

  std::vector<int> tail;
  tail.push_back(b.ring(-0.9, -1.25, 0, -0.3, 0.45, 0.06, 0.06, 8, {{kRoot, 1.0}}));
  tail.push_back(b.ring(-1.2, -0.8, 0, -0.3, 0.45, 0.03, 0.03, 8, {{kRoot, 1.0}}));
  b.tube(tail, 8);

  struct Leg {
    double x, z;
    int parent, upper, knee, fetlock;
  };
  const Leg legs[4] = {{0.45, 0.17, kSpine, kFlUpper, kFlKnee, kFlFetlock},
                       {0.45, -0.17, kSpine, kFrUpper, kFrKnee, kFrFetlock},
                       {-0.55, 0.17, kRoot, kHlUpper, kHlKnee, kHlFetlock},
                       {-0.55, -0.17, kRoot, kHrUpper, kHrKnee, kHrFetlock}};
  const double leg_y[6] = {-1.2, -1.0, -0.55, -0.35, -0.15, 0.0};
  const double leg_r[6] = {0.09, 0.09, 0.07, 0.06, 0.06, 0.07};
  std::vector<std::vector<int>> leg_rings;
  for (const Leg& leg : legs) {
    std::vector<int> rings;
    for (int i = 0; i < 6; ++i) {
      Weights w = {{leg.upper, 1.0}};
      switch (i) {
        case 0: w = {{leg.parent, 0.5}, {leg.upper, 0.5}}; break;
        case 1: w = {{leg.upper, 1.0}}; break;
        case 2: w = {{leg.upper, 0.5}, {leg.knee, 0.5}}; break;
        case 3: w = {{leg.knee, 1.0}}; break;
        case 4: w = {{leg.knee, 0.5}, {leg.fetlock, 0.5}}; break;
        default: w = {{leg.fetlock, 1.0}}; break;
      }
      rings.push_back(b.ring(leg.x, leg_y[i], leg.z, 0, 1, leg_r[i], leg_r[i], 4, w));
    }
    b.tube(rings, 4);
    b.regress_joint(leg.upper, rings[1], 4);
    b.regress_joint(leg.knee, rings[2], 4);
    b.regress_joint(leg.fetlock, rings[4], 4);
    leg_rings.push_back(rings);
  }

  const int nv = b.vertex_count();

  // Shape directions: overall size, leg length, body length, girth.
  double mean_x = 0.0;
  for (int v = 0; v < nv; ++v) mean_x += m.template_vertices[static_cast<size_t>(3 * v)];
  mean_x /= nv;
  auto vx = [&](int v) { return m.template_vertices[static_cast<size_t>(3 * v)]; };
  auto vy = [&](int v) { return m.template_vertices[static_cast<size_t>(3 * v + 1)]; };
  auto vz = [&](int v) { return m.template_vertices[static_cast<size_t>(3 * v + 2)]; };
  const int leg_begin = leg_rings.front().front();
  for (int v = 0; v < nv; ++v) {
    b.set_shape(v, 0, 0.08 * (vx(v) - mean_x), 0.08 * vy(v), 0.08 * vz(v));
    const bool is_leg = v >= leg_begin;
    if (is_leg) {
      const int leg = (v - leg_begin) / 24;
      b.set_shape(v, 1, 0.0, 0.12 * (vy(v) + 1.2) / 1.2, 0.0);
      b.set_shape(v, 2, 0.08 * (legs[leg].x - mean_x), 0.0, 0.0);
    } else {
      b.set_shape(v, 2, 0.08 * (vx(v) - mean_x), 0.0, 0.0);
    }
  }
  for (size_t r = 0; r < torso.size(); ++r) {
    for (int i = 0; i < 8; ++i) {
      const int v = torso[r] + i;
      b.set_shape(v, 3, 0.0, 0.12 * (vy(v) + 1.15), 0.12 * vz(v));
    }
  }

  m.shape_dirs = b.shape;
  m.skin_weights = b.skin;
  m.joint_regressor.assign(static_cast<size_t>(kJointCount * nv), 0.0);
  for (int j = 0; j < kJointCount; ++j)
    for (auto [v, w] : b.joint_rows[static_cast<size_t>(j)]) m.joint_regressor[static_cast<size_t>(j * nv + v)] += w;

  m.shape_mean.assign(kShapeCount, 0.0);
  m.shape_cov.assign(kShapeCount * kShapeCount, 0.0);
  for (int i = 0; i < kShapeCount; ++i) m.shape_cov[static_cast<size_t>(i * kShapeCount + i)] = 1.0;

  const int pd = 3 * (kJointCount - 1);
  m.pose_mean.assign(static_cast<size_t>(pd), 0.0);
  m.pose_cov.assign(static_cast<size_t>(pd * pd), 0.0);
  for (int i = 0; i < pd; ++i) m.pose_cov[static_cast<size_t>(i * pd + i)] = 0.25;

  auto ring_mean = [](std::string name, std::string region, int first, int n) {
    KeypointDef k{std::move(name), std::move(region), {}, {}};
    for (int i = 0; i < n; ++i) {
      k.vertices.push_back(first + i);
      k.weights.push_back(1.0 / n);
    }
    return k;
  };
  // Topmost vertex of an 8-ring sits at index 4.
  m.keypoints.push_back(ring_mean("nose", "head", head[3], 8));
  m.keypoints.push_back({"poll", "head", {head[0] + 4}, {1.0}});
  m.keypoints.push_back({"withers", "body", {torso[5] + 4}, {1.0}});
  m.keypoints.push_back({"croup", "body", {torso[1] + 4}, {1.0}});
  m.keypoints.push_back(ring_mean("tail_tip", "tail", tail[1], 8));
  const char* leg_names[4] = {"front_left", "front_right", "hind_left", "hind_right"};
  for (int l = 0; l < 4; ++l) {
    const std::string region = std::string(leg_names[l]) + "_leg";
    m.keypoints.push_back(ring_mean(std::string(leg_names[l]) + "_knee", region, leg_rings[static_cast<size_t>(l)][2], 4));
    m.keypoints.push_back(ring_mean(std::string(leg_names[l]) + "_fetlock", region, leg_rings[static_cast<size_t>(l)][4], 4));
    m.keypoints.push_back(ring_mean(std::string(leg_names[l]) + "_hoof", region, leg_rings[static_cast<size_t>(l)][5], 4));
  }
  return m;
}

}  // namespace quadfit
