#pragma once

#include <array>
#include <span>
#include <vector>

#include "quadfit/autodiff.hpp"

namespace quadfit {

inline constexpr double kCropFocal = 5000.0;
inline constexpr int kCropRes = 224;

// Square box in full-frame pixels.
struct BBox {
  double cx = 0.0;
  double cy = 0.0;
  double b = 1.0;
  double frame_w = 1.0;
  double frame_h = 1.0;
};

void validate_bbox(const BBox& box);

double focal_full(double frame_w, double frame_h);

// [cx, cy, b] / f_full.
std::array<double, 3> bbox_info(const BBox& box);

// [px, py, 2 f_crop / (r s)].
std::array<double, 3> crop_translation(double s, double px, double py);

// [px + 2 cx / (b s), py + 2 cy / (b s), 2 f_full / (b s)], with cx, cy taken
// literally from the box.
std::array<double, 3> full_translation(double s, double px, double py, const BBox& box);

// The same formula with the box center measured from the full-frame
// principal point (w/2, h/2). This is the translation that pairs with a
// centered full-frame camera, and the one the pipeline uses.
std::array<double, 3> full_camera_translation(double s, double px, double py, const BBox& box);

// Differentiable counterparts; cam is a 1 x 3 (s, px, py) row, result 1 x 3.
ad::Var crop_translation(const ad::Var& cam);
ad::Var full_camera_translation(const ad::Var& cam, const BBox& box);

// u = f (x + tx) / (z + tz) + principal.x, and likewise for v.
std::vector<double> project_points(std::span<const double> points, double focal, std::span<const double> translation,
                                   std::array<double, 2> principal);
// points N x 3, translation 1 x 3 -> N x 2.
ad::Var project_points(const ad::Var& points, double focal, const ad::Var& translation, std::array<double, 2> principal);

inline std::array<double, 2> crop_principal() { return {kCropRes / 2.0, kCropRes / 2.0}; }
inline std::array<double, 2> full_principal(const BBox& box) { return {box.frame_w / 2.0, box.frame_h / 2.0}; }

// Affine maps between full-frame pixels and pixels of the r x r crop of box.
std::array<double, 2> full_to_crop(std::array<double, 2> p, const BBox& box, int res = kCropRes);
std::array<double, 2> crop_to_full(std::array<double, 2> p, const BBox& box, int res = kCropRes);

// Crop and full-frame cameras for a clip.
struct CameraPair {
  double f_crop = kCropFocal;
  int r = kCropRes;
  double f_full = 0.0;
  std::vector<double> gamma_crop;  // T x 3
  std::vector<double> gamma_full;  // T x 3
  std::vector<BBox> boxes;

  int frames() const { return static_cast<int>(boxes.size()); }
};

// cam_weak is T x 3 (s, px, py); one box per frame, all in the same frame size.
CameraPair make_camera_pair(std::span<const double> cam_weak, std::span<const BBox> boxes);

}  // namespace quadfit
