#include "quadfit/camera.hpp"

#include <cmath>
#include <string>

#include "quadfit/error.hpp"

namespace quadfit {

void validate_bbox(const BBox& box) {
  if (!(box.frame_w > 0.0) || !(box.frame_h > 0.0)) throw Error(Errc::invalid_frame);
  if (!(box.b > 0.0)) throw Error(Errc::degenerate_bbox, "box size must be positive");
  if (!(box.cx >= 0.0 && box.cx <= box.frame_w && box.cy >= 0.0 && box.cy <= box.frame_h))
    throw Error(Errc::invalid_argument, "box center outside frame");
}

double focal_full(double frame_w, double frame_h) {
  if (!(frame_w > 0.0) || !(frame_h > 0.0)) throw Error(Errc::invalid_frame);
  return std::sqrt(frame_w * frame_w + frame_h * frame_h);
}

std::array<double, 3> bbox_info(const BBox& box) {
  validate_bbox(box);
  const double f = focal_full(box.frame_w, box.frame_h);
  return {box.cx / f, box.cy / f, box.b / f};
}

std::array<double, 3> crop_translation(double s, double px, double py) {
  if (!(s > 0.0)) throw Error(Errc::invalid_scale);
  return {px, py, 2.0 * kCropFocal / (kCropRes * s)};
}

std::array<double, 3> full_translation(double s, double px, double py, const BBox& box) {
  if (!(s > 0.0)) throw Error(Errc::invalid_scale);
  const double f = focal_full(box.frame_w, box.frame_h);
  if (!(box.b > 0.0)) throw Error(Errc::degenerate_bbox, "box size must be positive");
  const double bs = box.b * s;
  return {px + 2.0 * box.cx / bs, py + 2.0 * box.cy / bs, 2.0 * f / bs};
}

std::array<double, 3> full_camera_translation(double s, double px, double py, const BBox& box) {
  BBox centered = box;
  centered.cx -= box.frame_w / 2.0;
  centered.cy -= box.frame_h / 2.0;
  return full_translation(s, px, py, centered);
}

namespace {

void check_scale(const ad::Var& cam) {
  if (cam.size() != 3) throw Error(Errc::shape_error, "camera row must have 3 entries");
  if (!(cam.value()[0] > 0.0)) throw Error(Errc::invalid_scale);
}

}  // namespace

ad::Var crop_translation(const ad::Var& cam) {
  check_scale(cam);
  const ad::Var c = ad::reshape(cam, 1, 3);
  const ad::Var s = ad::slice_cols(c, 0, 1);
  const ad::Var z = (2.0 * kCropFocal / kCropRes) * ad::pow(s, -1.0);
  return ad::concat_cols({ad::slice_cols(c, 1, 2), z});
}

ad::Var full_camera_translation(const ad::Var& cam, const BBox& box) {
  check_scale(cam);
  const double f = focal_full(box.frame_w, box.frame_h);
  const ad::Var c = ad::reshape(cam, 1, 3);
  const ad::Var inv_s = ad::pow(ad::slice_cols(c, 0, 1), -1.0);
  const double ox = 2.0 * (box.cx - box.frame_w / 2.0) / box.b;
  const double oy = 2.0 * (box.cy - box.frame_h / 2.0) / box.b;
  ad::Tape& tape = cam.tape();
  const ad::Var offsets = tape.constant({ox, oy, 2.0 * f / box.b}, 1, 3);
  const ad::Var base = ad::concat_cols({ad::slice_cols(c, 1, 2), tape.zeros(1, 1)});
  return base + offsets * inv_s;
}

std::vector<double> project_points(std::span<const double> points, double focal, std::span<const double> t,
                                   std::array<double, 2> principal) {
  if (points.size() % 3 != 0 || t.size() != 3) throw Error(Errc::shape_error, "points must be N x 3");
  const size_t n = points.size() / 3;
  std::vector<double> out(2 * n);
  for (size_t i = 0; i < n; ++i) {
    const double z = points[3 * i + 2] + t[2];
    if (!(z > 0.0)) throw Error(Errc::behind_camera, "point " + std::to_string(i));
    out[2 * i] = focal * (points[3 * i] + t[0]) / z + principal[0];
    out[2 * i + 1] = focal * (points[3 * i + 1] + t[1]) / z + principal[1];
  }
  return out;
}

ad::Var project_points(const ad::Var& points, double focal, const ad::Var& translation,
                       std::array<double, 2> principal) {
  if (points.cols() != 3 || translation.size() != 3) throw Error(Errc::shape_error, "points must be N x 3");
  const ad::Var cam = points + ad::reshape(translation, 1, 3);
  const ad::Var z = ad::slice_cols(cam, 2, 1);
  const auto zv = z.value();
  for (size_t i = 0; i < zv.size(); ++i)
    if (!(zv[i] > 0.0)) throw Error(Errc::behind_camera, "point " + std::to_string(i));
  const ad::Var uv = (focal * ad::slice_cols(cam, 0, 2)) / z;
  return uv + points.tape().constant({principal[0], principal[1]}, 1, 2);
}

std::array<double, 2> full_to_crop(std::array<double, 2> p, const BBox& box, int res) {
  const double k = res / box.b;
  return {(p[0] - (box.cx - box.b / 2.0)) * k, (p[1] - (box.cy - box.b / 2.0)) * k};
}

std::array<double, 2> crop_to_full(std::array<double, 2> p, const BBox& box, int res) {
  const double k = box.b / res;
  return {p[0] * k + box.cx - box.b / 2.0, p[1] * k + box.cy - box.b / 2.0};
}

CameraPair make_camera_pair(std::span<const double> cam_weak, std::span<const BBox> boxes) {
  if (cam_weak.size() != 3 * boxes.size()) throw Error(Errc::shape_error, "one camera row per box");
  CameraPair pair;
  pair.boxes.assign(boxes.begin(), boxes.end());
  for (size_t t = 0; t < boxes.size(); ++t) {
    const BBox& box = boxes[t];
    const double f = focal_full(box.frame_w, box.frame_h);
    if (t == 0) pair.f_full = f;
    if (f != pair.f_full) throw Error(Errc::invalid_frame, "frame size changes within clip");
    const double s = cam_weak[3 * t], px = cam_weak[3 * t + 1], py = cam_weak[3 * t + 2];
    const auto gc = crop_translation(s, px, py);
    const auto gf = full_camera_translation(s, px, py, box);
    pair.gamma_crop.insert(pair.gamma_crop.end(), gc.begin(), gc.end());
    pair.gamma_full.insert(pair.gamma_full.end(), gf.begin(), gf.end());
  }
  return pair;
}

}  // namespace quadfit
