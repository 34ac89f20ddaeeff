#include <doctest.h>

#include <Eigen/Geometry>
#include <filesystem>
#include <fstream>
#include <numbers>

#include <json.hpp>

#include "quadfit/body_model.hpp"
#include "quadfit/error.hpp"
#include "quadfit/optim.hpp"
#include "test_util.hpp"

using namespace quadfit;

namespace {

const MeshModel& toy() {
  static const MeshModel m = make_toy_quadruped();
  return m;
}

std::vector<double> vec3(double x, double y, double z) { return {x, y, z}; }

Eigen::Matrix3d rot(const std::vector<double>& r) {
  const Eigen::Vector3d v(r[0], r[1], r[2]);
  if (v.norm() == 0.0) return Eigen::Matrix3d::Identity();
  return Eigen::AngleAxisd(v.norm(), v.normalized()).toRotationMatrix();
}

std::vector<double> axis_angle(const Eigen::Matrix3d& m) {
  const Eigen::AngleAxisd aa(m);
  const Eigen::Vector3d v = aa.axis() * aa.angle();
  return {v.x(), v.y(), v.z()};
}

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("quadfit_test_" + name);
}

std::string error_text(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.what();
  }
  return "no error";
}

}  // namespace

TEST_CASE("toy quadruped dimensions and invariants") {
  const MeshModel& m = toy();
  CHECK(m.num_vertices() == 240);
  CHECK(m.num_joints() == 16);
  CHECK(m.num_shape() == 4);
  CHECK(m.num_keypoints() == 17);
  CHECK_NOTHROW(validate_model(m));
  CHECK(m.faces.size() > 400);
  CHECK(m.keypoints_in_region("head").size() == 2);
  CHECK(m.keypoints_in_region("legs").size() == 12);
  CHECK(m.keypoints_in_region("front_left_leg").size() == 3);
  CHECK(body_length(m) > 2.0);
}

TEST_CASE("model file round trip") {
  const auto path = temp_file("roundtrip.json");
  save_model(toy(), path);
  const MeshModel back = load_model(path);
  CHECK(back.template_vertices == toy().template_vertices);
  CHECK(back.shape_dirs == toy().shape_dirs);
  CHECK(back.skin_weights == toy().skin_weights);
  CHECK(back.parents == toy().parents);
  CHECK(back.faces == toy().faces);
  CHECK(back.pose_cov == toy().pose_cov);
  CHECK(back.keypoints.size() == 17);
  CHECK(back.keypoints[0].name == "nose");
  std::filesystem::remove(path);
}

TEST_CASE("invalid and malformed model files") {
  const auto path = temp_file("bad.json");
  save_model(toy(), path);
  nlohmann::json doc;
  {
    std::ifstream in(path);
    doc = nlohmann::json::parse(in);
  }
  auto write = [&](const nlohmann::json& d) {
    std::ofstream out(path);
    out << d.dump();
  };

  SUBCASE("skin row summing to 0.9") {
    auto d = doc;
    auto& w = d["arrays"]["skin_weights"]["data"];
    for (int j = 0; j < 16; ++j) w[static_cast<size_t>(j)] = w[static_cast<size_t>(j)].get<double>() * 0.9;
    write(d);
    CHECK(error_text([&] { load_model(path); }) == "invalid model: skin_weights");
  }
  SUBCASE("two-cycle in the tree") {
    auto d = doc;
    d["kinematic_tree"][2] = 3;  // neck <-> head
    write(d);
    CHECK(error_text([&] { load_model(path); }) == "invalid model: kinematic_tree");
  }
  SUBCASE("keypoint weights off") {
    auto d = doc;
    d["keypoints"][1]["weights"][0] = 0.5;
    write(d);
    CHECK(error_text([&] { load_model(path); }) == "invalid model: keypoint_defs");
  }
  SUBCASE("schema violations") {
    auto d = doc;
    d["arrays"].erase("faces");
    write(d);
    CHECK(error_text([&] { load_model(path); }).starts_with("malformed model"));
    d = doc;
    d["format"] = "quadfit-model/0";
    write(d);
    CHECK(error_text([&] { load_model(path); }).starts_with("malformed model"));
    d = doc;
    d["arrays"]["template"]["shape"][0] = 239;
    write(d);
    CHECK(error_text([&] { load_model(path); }).starts_with("malformed model"));
    std::ofstream(path) << "{ not json";
    CHECK(error_text([&] { load_model(path); }).starts_with("malformed model"));
  }
  std::filesystem::remove(path);
}

TEST_CASE("identity pose reproduces the template exactly") {
  const MeshModel& m = toy();
  const auto v = pose_mesh(m, std::vector<double>(4, 0.0), vec3(0, 0, 0), std::vector<double>(45, 0.0));
  CHECK(v == m.template_vertices);
}

TEST_CASE("dimension mismatch is a shape error") {
  const MeshModel& m = toy();
  CHECK(error_text([&] { pose_mesh(m, std::vector<double>(3, 0.0), vec3(0, 0, 0), std::vector<double>(45, 0.0)); })
            .starts_with("shape error"));
  CHECK(error_text([&] { pose_mesh(m, std::vector<double>(4, 0.0), vec3(0, 0, 0), std::vector<double>(44, 0.0)); })
            .starts_with("shape error"));
}

TEST_CASE("global rotation is rigid about the root rest joint") {
  const MeshModel& m = toy();
  testutil::Gen gen(17);
  for (int trial = 0; trial < 100; ++trial) {
    const auto beta = gen.normals(4);
    const auto g = gen.normals(3, 0.8);
    const auto joints = gen.normals(45, 0.3);
    const auto r = gen.normals(3, 1.0);
    const Eigen::Matrix3d R = rot(r);
    const auto composed = axis_angle(R * rot(g));

    const auto base = pose_mesh(m, beta, g, joints);
    const auto moved = pose_mesh(m, beta, composed, joints);

    ad::Tape tape;
    const auto rest = rest_joints(m, tape.constant(beta, 4, 1));
    const Eigen::Vector3d pivot(rest.at(m.root(), 0), rest.at(m.root(), 1), rest.at(m.root(), 2));
    double err = 0.0;
    for (int i = 0; i < m.num_vertices(); ++i) {
      const Eigen::Vector3d b(base[3 * i], base[3 * i + 1], base[3 * i + 2]);
      const Eigen::Vector3d want = R * (b - pivot) + pivot;
      const Eigen::Vector3d got(moved[3 * i], moved[3 * i + 1], moved[3 * i + 2]);
      err = std::max(err, (want - got).norm());
    }
    CHECK(err < 1e-6);
  }
}

TEST_CASE("shape blend is linear at zero pose") {
  const MeshModel& m = toy();
  testutil::Gen gen(3);
  const auto zero_g = vec3(0, 0, 0);
  const std::vector<double> zero_j(45, 0.0);
  for (int trial = 0; trial < 20; ++trial) {
    const auto b1 = gen.normals(4), b2 = gen.normals(4);
    std::vector<double> b12(4);
    for (int i = 0; i < 4; ++i) b12[i] = b1[i] + b2[i];
    const auto v1 = pose_mesh(m, b1, zero_g, zero_j);
    const auto v2 = pose_mesh(m, b2, zero_g, zero_j);
    const auto v12 = pose_mesh(m, b12, zero_g, zero_j);
    double err = 0.0;
    for (size_t i = 0; i < v1.size(); ++i) {
      const double t = m.template_vertices[i];
      err = std::max(err, std::abs((v12[i] - t) - ((v1[i] - t) + (v2[i] - t))));
    }
    CHECK(err < 1e-6);
  }
}

TEST_CASE("single knee rotation moves a fully bound vertex about the knee") {
  const MeshModel& m = toy();
  const int knee = 5;  // front_left_knee
  REQUIRE(m.joint_names[knee] == "front_left_knee");
  // The knee joint is the mean of its regressor vertices.
  Eigen::Vector3d jk = Eigen::Vector3d::Zero();
  for (int v = 0; v < m.num_vertices(); ++v) {
    const double w = m.joint_regressor[static_cast<size_t>(knee * m.num_vertices() + v)];
    jk += w * Eigen::Vector3d(m.template_vertices[3 * v], m.template_vertices[3 * v + 1], m.template_vertices[3 * v + 2]);
  }
  int probe = -1;
  for (int v = 0; v < m.num_vertices() && probe < 0; ++v)
    if (m.skin_weights[static_cast<size_t>(v * 16 + knee)] == 1.0) probe = v;
  REQUIRE(probe >= 0);

  std::vector<double> joints(45, 0.0);
  joints[static_cast<size_t>(3 * (knee - 1) + 2)] = std::numbers::pi / 2;  // 90 degrees about z
  const auto v = pose_mesh(m, std::vector<double>(4, 0.0), vec3(0, 0, 0), joints);
  const Eigen::Vector3d p(m.template_vertices[3 * probe], m.template_vertices[3 * probe + 1],
                          m.template_vertices[3 * probe + 2]);
  // Rotating (dx, dy) by +90 degrees about z gives (-dy, dx).
  const Eigen::Vector3d d = p - jk;
  const Eigen::Vector3d want = jk + Eigen::Vector3d(-d.y(), d.x(), d.z());
  CHECK(std::abs(v[3 * probe] - want.x()) < 1e-12);
  CHECK(std::abs(v[3 * probe + 1] - want.y()) < 1e-12);
  CHECK(std::abs(v[3 * probe + 2] - want.z()) < 1e-12);
}

TEST_CASE("keypoint regression") {
  MeshModel m = toy();
  SUBCASE("nose matches a dense product oracle") {
    const auto kp = regress_keypoints3d(m.template_vertices, m);
    const auto dense = m.keypoint_matrix();
    for (int c = 0; c < 3; ++c) {
      double want = 0.0;
      for (int v = 0; v < m.num_vertices(); ++v) want += dense[static_cast<size_t>(v)] * m.template_vertices[3 * v + c];
      CHECK(std::abs(kp[static_cast<size_t>(c)] - want) < 1e-12);
    }
  }
  SUBCASE("single vertex and midpoint") {
    m.keypoints = {{"a", "head", {7}, {1.0}}, {"b", "head", {3, 9}, {0.5, 0.5}}};
    const auto kp = regress_keypoints3d(m.template_vertices, m);
    for (int c = 0; c < 3; ++c) {
      CHECK(kp[static_cast<size_t>(c)] == m.template_vertices[21 + c]);
      CHECK(kp[static_cast<size_t>(3 + c)] ==
            doctest::Approx(0.5 * (m.template_vertices[9 + c] + m.template_vertices[27 + c])));
    }
  }
  SUBCASE("commutes with rigid transforms") {
    testutil::Gen gen(8);
    for (int trial = 0; trial < 20; ++trial) {
      const Eigen::Matrix3d R = rot(gen.normals(3));
      const Eigen::Vector3d t(gen.normal(), gen.normal(), gen.normal());
      std::vector<double> moved(m.template_vertices.size());
      for (int i = 0; i < m.num_vertices(); ++i) {
        const Eigen::Vector3d p(m.template_vertices[3 * i], m.template_vertices[3 * i + 1], m.template_vertices[3 * i + 2]);
        const Eigen::Vector3d q = R * p + t;
        for (int c = 0; c < 3; ++c) moved[static_cast<size_t>(3 * i + c)] = q[c];
      }
      const auto a = regress_keypoints3d(moved, m);
      const auto b = regress_keypoints3d(m.template_vertices, m);
      double err = 0.0;
      for (int k = 0; k < m.num_keypoints(); ++k) {
        const Eigen::Vector3d q = R * Eigen::Vector3d(b[3 * k], b[3 * k + 1], b[3 * k + 2]) + t;
        for (int c = 0; c < 3; ++c) err = std::max(err, std::abs(q[c] - a[static_cast<size_t>(3 * k + c)]));
      }
      CHECK(err < 1e-12);
    }
  }
}

TEST_CASE("pose_mesh gradient matches central differences") {
  const MeshModel& m = toy();
  testutil::Gen gen(99);
  const auto weights = gen.normals(3 * 240);
  const opt::LossFn f = [&](ad::Tape& tape, const ad::Var& x) {
    const ad::Var beta = ad::slice_rows(x, 0, 4);
    const ad::Var g = ad::slice_rows(x, 4, 3);
    const ad::Var j = ad::slice_rows(x, 7, 45);
    const ad::Var v = pose_mesh(m, beta, g, j);
    const ad::Var kp = regress_keypoints3d(v, m);
    return ad::sum(v * tape.constant(weights, 240, 3)) + ad::sum(ad::square(kp));
  };
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> x = gen.normals(4);
    for (double e : gen.normals(48, 0.5)) x.push_back(e);
    CAPTURE(trial);
    CHECK(opt::check_gradient(f, x).max_rel_error < 1e-4);
  }
}

TEST_CASE("canonical axis-angle preserves rotation") {
  testutil::Gen gen(4);
  for (int trial = 0; trial < 50; ++trial) {
    const auto r = gen.normals(3, 4.0);
    const auto c = canonical_axis_angle(r);
    CHECK(std::sqrt(c[0] * c[0] + c[1] * c[1] + c[2] * c[2]) <= std::numbers::pi + 1e-12);
    CHECK(testutil::max_abs_diff(testutil::rotation_matrix(r[0], r[1], r[2]),
                                 testutil::rotation_matrix(c[0], c[1], c[2])) < 1e-9);
  }
}
