#include <algorithm>
#include <cmath>

#include "quadfit/dataset.hpp"
#include "quadfit/error.hpp"

namespace quadfit {

namespace {

void require_area(const Rect& r, const char* which) {
  if (!(r.width() > 0.0) || !(r.height() > 0.0)) throw Error(Errc::degenerate_bbox, which);
}

}  // namespace

double rect_iou(const Rect& a, const Rect& b) {
  const double w = std::min(a.x1, b.x1) - std::max(a.x0, b.x0);
  const double h = std::min(a.y1, b.y1) - std::max(a.y0, b.y0);
  if (w <= 0.0 || h <= 0.0) return 0.0;
  const double inter = w * h;
  return inter / (a.area() + b.area() - inter);
}

Rect rect_union(const Rect& a, const Rect& b) {
  return {std::min(a.x0, b.x0), std::min(a.y0, b.y0), std::max(a.x1, b.x1), std::max(a.y1, b.y1)};
}

Rect rect_of(const BBox& box) {
  return {box.cx - box.b / 2.0, box.cy - box.b / 2.0, box.cx + box.b / 2.0, box.cy + box.b / 2.0};
}

BBox square_bbox(const Rect& r, double frame_w, double frame_h, double pad) {
  require_area(r, "rectangle has no area");
  return {(r.x0 + r.x1) / 2.0, (r.y0 + r.y1) / 2.0, pad * std::max(r.width(), r.height()), frame_w, frame_h};
}

Rect rect_from_points(std::span<const double> points, std::span<const double> conf, double threshold) {
  if (points.size() != 2 * conf.size()) throw Error(Errc::shape_error, "one confidence per point");
  Rect r{INFINITY, INFINITY, -INFINITY, -INFINITY};
  bool any = false;
  for (size_t i = 0; i < conf.size(); ++i) {
    if (!(conf[i] >= threshold)) continue;
    any = true;
    r.x0 = std::min(r.x0, points[2 * i]);
    r.x1 = std::max(r.x1, points[2 * i]);
    r.y0 = std::min(r.y0, points[2 * i + 1]);
    r.y1 = std::max(r.y1, points[2 * i + 1]);
  }
  if (!any) throw Error(Errc::no_supervision, "no keypoint above the confidence threshold");
  return r;
}

Rect rect_from_mask(const Mask& mask) {
  Rect r{INFINITY, INFINITY, -INFINITY, -INFINITY};
  for (int y = 0; y < mask.height; ++y)
    for (int x = 0; x < mask.width; ++x)
      if (mask.at(x, y) >= 0.5) {
        r.x0 = std::min(r.x0, static_cast<double>(x));
        r.x1 = std::max(r.x1, x + 1.0);
        r.y0 = std::min(r.y0, static_cast<double>(y));
        r.y1 = std::max(r.y1, y + 1.0);
      }
  if (!std::isfinite(r.x0)) throw Error(Errc::degenerate_bbox, "empty mask");
  return r;
}

Rect fuse_bbox(const Rect& kp, const Rect& sil, double gamma) {
  require_area(kp, "keypoint box has no area");
  require_area(sil, "silhouette box has no area");
  if (rect_iou(sil, kp) == 0.0) return kp;
  if (kp.area() / sil.area() > gamma) return kp;
  return rect_union(sil, kp);
}

BBox fuse_bbox(const BBox& kp, const BBox& sil, double gamma) {
  const Rect a = rect_of(kp), b = rect_of(sil);
  const Rect f = fuse_bbox(a, b, gamma);
  if (f.x0 == a.x0 && f.y0 == a.y0 && f.x1 == a.x1 && f.y1 == a.y1) return kp;
  return square_bbox(f, kp.frame_w, kp.frame_h);
}

Crop crop_resize(const Image& frame, const BBox& box, int res) {
  if (res <= 0) throw Error(Errc::invalid_argument, "crop resolution must be positive");
  if (!(box.b > 0.0)) throw Error(Errc::degenerate_bbox, "box size must be positive");
  Crop out;
  out.image = Image(res, res, frame.channels, 0);
  const Rect r = rect_of(box);
  out.clamped = r.x0 < 0.0 || r.y0 < 0.0 || r.x1 > frame.width || r.y1 > frame.height;

  auto sample = [&](int x, int y, int c) -> double {
    if (x < 0 || y < 0 || x >= frame.width || y >= frame.height) return 0.0;
    return frame.at(x, y, c);
  };
  for (int j = 0; j < res; ++j) {
    for (int i = 0; i < res; ++i) {
      const auto p = crop_to_full({i + 0.5, j + 0.5}, box, res);
      // Continuous pixel-index coordinates.
      const double fx = p[0] - 0.5, fy = p[1] - 0.5;
      const double x0 = std::floor(fx), y0 = std::floor(fy);
      const double ax = fx - x0, ay = fy - y0;
      const int xi = static_cast<int>(x0), yi = static_cast<int>(y0);
      for (int c = 0; c < frame.channels; ++c) {
        double v = (1 - ax) * (1 - ay) * sample(xi, yi, c);
        if (ax > 0) v += ax * (1 - ay) * sample(xi + 1, yi, c);
        if (ay > 0) v += (1 - ax) * ay * sample(xi, yi + 1, c);
        if (ax > 0 && ay > 0) v += ax * ay * sample(xi + 1, yi + 1, c);
        out.image.at(i, j, c) = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
      }
    }
  }
  return out;
}

Mask downsample_mask(const Mask& mask, int res) {
  if (res <= 0) throw Error(Errc::invalid_argument, "mask resolution must be positive");
  const double sx = static_cast<double>(mask.width) / res, sy = static_cast<double>(mask.height) / res;
  // Coverage of source index i by the output cell [lo, hi).
  auto overlap = [](double lo, double hi, int i) { return std::max(0.0, std::min(hi, i + 1.0) - std::max(lo, static_cast<double>(i))); };
  Mask out(res, res);
  for (int y = 0; y < res; ++y) {
    const double ylo = y * sy, yhi = (y + 1) * sy;
    for (int x = 0; x < res; ++x) {
      const double xlo = x * sx, xhi = (x + 1) * sx;
      double acc = 0.0;
      for (int j = static_cast<int>(ylo); j < std::min(mask.height, static_cast<int>(std::ceil(yhi))); ++j) {
        const double wy = overlap(ylo, yhi, j);
        for (int i = static_cast<int>(xlo); i < std::min(mask.width, static_cast<int>(std::ceil(xhi))); ++i)
          acc += wy * overlap(xlo, xhi, i) * mask.at(i, j);
      }
      out.at(x, y) = acc / (sx * sy);
    }
  }
  return out;
}

}  // namespace quadfit
