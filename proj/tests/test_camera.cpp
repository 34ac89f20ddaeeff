#include <doctest.h>

#include <cmath>

#include "quadfit/camera.hpp"
#include "quadfit/error.hpp"
#include "quadfit/optim.hpp"
#include "test_util.hpp"

using namespace quadfit;

TEST_CASE("focal_full") {
  CHECK(std::abs(focal_full(3840, 2160) - 4405.81) < 0.01);
  CHECK(focal_full(3, 4) == 5.0);
  CHECK(focal_full(1920, 1080) == focal_full(1080, 1920));
  CHECK_THROWS_AS(focal_full(0, 10), Error);
  try {
    focal_full(-1, 5);
  } catch (const Error& e) {
    CHECK(e.code() == Errc::invalid_frame);
  }
}

TEST_CASE("bbox_info") {
  const auto i = bbox_info({1000, 500, 400, 3840, 2160});
  CHECK(std::abs(i[0] - 0.22698) < 1e-4);
  CHECK(std::abs(i[1] - 0.11349) < 1e-4);
  CHECK(std::abs(i[2] - 0.09079) < 1e-4);
  const double f = focal_full(300, 400);
  const auto z = bbox_info({0, 0, f, 300, 400});
  CHECK(z[0] == 0.0);
  CHECK(z[1] == 0.0);
  CHECK(z[2] == 1.0);
  const auto a = bbox_info({100, 80, 60, 3840, 2160});
  const auto b = bbox_info({200, 160, 120, 3840, 2160});
  for (int k = 0; k < 3; ++k) CHECK(b[k] == doctest::Approx(2 * a[k]));
}

TEST_CASE("crop_translation") {
  const auto g = crop_translation(1.0, 0.0, 0.0);
  CHECK(g[0] == 0.0);
  CHECK(g[1] == 0.0);
  CHECK(std::abs(g[2] - 44.642857) < 1e-5);
  CHECK(crop_translation(2.0, 0, 0)[2] == doctest::Approx(g[2] / 2));
  const auto p = crop_translation(1.0, 0.3, -0.2);
  CHECK(p[0] == 0.3);
  CHECK(p[1] == -0.2);
  try {
    crop_translation(0.0, 0, 0);
    FAIL("expected invalid scale");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::invalid_scale);
  }
}

TEST_CASE("full_translation") {
  const auto g = full_translation(0.8, 0.1, -0.05, {1000, 500, 400, 3840, 2160});
  CHECK(std::abs(g[0] - 6.35) < 1e-3);
  CHECK(std::abs(g[1] - 3.075) < 1e-3);
  CHECK(std::abs(g[2] - 27.536) < 1e-3);
  const auto o = full_translation(1.3, 0.2, 0.4, {0, 0, 300, 1920, 1080});
  CHECK(o[0] == 0.2);
  CHECK(o[1] == 0.4);
  const auto a = full_translation(0.5, 0, 0, {10, 10, 400, 1920, 1080});
  const auto b = full_translation(2.0, 0, 0, {10, 10, 100, 1920, 1080});
  CHECK(a[2] == doctest::Approx(b[2]));
  CHECK_THROWS_AS(full_translation(-1.0, 0, 0, {10, 10, 100, 1920, 1080}), Error);
}

TEST_CASE("project_points") {
  const std::vector<double> t{0, 0, 10};
  auto uv = project_points(std::vector<double>{0, 0, 0}, 5000, t, {112, 112});
  CHECK(uv[0] == 112.0);
  CHECK(uv[1] == 112.0);
  uv = project_points(std::vector<double>{1, 0, 0}, 5000, t, {0, 0});
  CHECK(uv[0] == 500.0);
  CHECK(uv[1] == 0.0);
  const auto far = project_points(std::vector<double>{1, 0.5, 10}, 5000, t, {0, 0});
  CHECK(far[0] == doctest::Approx(250.0));
  CHECK(far[1] == doctest::Approx(125.0));
  try {
    project_points(std::vector<double>{0, 0, -10}, 5000, t, {0, 0});
    FAIL("expected behind camera");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::behind_camera);
  }
}

TEST_CASE("crop and full cameras agree on the model plane") {
  testutil::Gen gen(31);
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const double w = gen.uniform(320, 4096), h = gen.uniform(240, 2160);
    BBox box{gen.uniform(0, w), gen.uniform(0, h), gen.uniform(40, 0.9 * std::min(w, h)), w, h};
    const double s = gen.uniform(0.5, 2.0), px = gen.uniform(-1, 1), py = gen.uniform(-1, 1);
    const std::vector<double> pt{gen.uniform(-1.5, 1.5), gen.uniform(-1.5, 1.5), 0.0};
    const auto gc = crop_translation(s, px, py);
    const auto gf = full_camera_translation(s, px, py, box);
    const auto c = project_points(pt, kCropFocal, gc, crop_principal());
    const auto via_crop = crop_to_full({c[0], c[1]}, box);
    const auto direct = project_points(pt, focal_full(w, h), gf, full_principal(box));
    worst = std::max({worst, std::abs(via_crop[0] - direct[0]), std::abs(via_crop[1] - direct[1])});
  }
  CHECK(worst < 1e-3);
}

TEST_CASE("crop maps invert each other") {
  const BBox box{700, 400, 448, 1920, 1080};
  const auto c = full_to_crop({700, 400}, box);
  CHECK(c[0] == 112.0);
  CHECK(c[1] == 112.0);
  const auto corner = full_to_crop({700 - 224 + 448, 400 - 224}, box);
  CHECK(corner[0] == 224.0);
  CHECK(corner[1] == 0.0);
  testutil::Gen gen(2);
  for (int i = 0; i < 100; ++i) {
    const std::array<double, 2> p{gen.uniform(0, 1920), gen.uniform(0, 1080)};
    const auto back = crop_to_full(full_to_crop(p, box), box);
    CHECK(std::abs(back[0] - p[0]) < 1e-9);
    CHECK(std::abs(back[1] - p[1]) < 1e-9);
  }
  const BBox same{112, 112, 224, 224, 224};
  const auto id = full_to_crop({37.5, 80.25}, same);
  CHECK(id[0] == 37.5);
  CHECK(id[1] == 80.25);
}

TEST_CASE("projection and translation gradients") {
  testutil::Gen gen(12);
  const BBox box{900, 600, 500, 1920, 1080};
  const opt::LossFn f = [&](ad::Tape&, const ad::Var& x) {
    const ad::Var pts = ad::reshape(ad::slice_rows(x, 0, 12), 4, 3);
    const ad::Var cam = ad::slice_rows(x, 12, 3);
    const ad::Var uv_full = project_points(pts, focal_full(1920, 1080), full_camera_translation(cam, box), full_principal(box));
    const ad::Var uv_crop = project_points(pts, kCropFocal, crop_translation(cam), crop_principal());
    return ad::sum(ad::sin(uv_full * 0.01)) + ad::sum(ad::square(uv_crop * 0.01));
  };
  for (int trial = 0; trial < 20; ++trial) {
    auto x = gen.uniforms(12, -1, 1);
    x.push_back(gen.uniform(0.5, 2));
    x.push_back(gen.uniform(-1, 1));
    x.push_back(gen.uniform(-1, 1));
    CHECK(opt::check_gradient(f, x).max_rel_error < 1e-4);
  }
}

TEST_CASE("differentiable translations match the plain ones") {
  ad::Tape tape;
  const BBox box{1000, 500, 400, 3840, 2160};
  const ad::Var cam = tape.constant({0.8, 0.1, -0.05}, 1, 3);
  const auto a = full_camera_translation(cam, box).value();
  const auto b = full_camera_translation(0.8, 0.1, -0.05, box);
  for (int k = 0; k < 3; ++k) CHECK(a[k] == doctest::Approx(b[k]).epsilon(1e-14));
  const auto c = crop_translation(cam).value();
  const auto d = crop_translation(0.8, 0.1, -0.05);
  for (int k = 0; k < 3; ++k) CHECK(c[k] == doctest::Approx(d[k]).epsilon(1e-14));
}
