#include <algorithm>
#include <cmath>
#include <random>

#include "quadfit/dataset.hpp"
#include "quadfit/error.hpp"

namespace quadfit {

namespace {

// Padding around a region's keypoints, as a fraction of the bbox side.
constexpr double kRegionMargin = 0.03;

std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)); }

// Cheap deterministic per-pixel hash for occluder textures.
std::uint64_t mix(std::uint64_t x) {
  x ^= x >> 33;
  x *= 0xff51afd7ed558ccdULL;
  x ^= x >> 33;
  x *= 0xc4ceb9fe1a85ec53ULL;
  x ^= x >> 33;
  return x;
}

// Color of a stylized standing person filling [0,1] x [0,1] at (u, v).
std::array<std::uint8_t, 3> person_color(double u, double v, std::uint64_t seed) {
  const std::uint64_t h = mix(seed);
  const std::array<std::uint8_t, 3> shirt{static_cast<std::uint8_t>(40 + h % 160), static_cast<std::uint8_t>(40 + (h >> 8) % 160),
                                          static_cast<std::uint8_t>(40 + (h >> 16) % 160)};
  if (v < 0.2) {
    const double dx = (u - 0.5) / 0.22, dy = (v - 0.1) / 0.1;
    if (dx * dx + dy * dy <= 1.0) return {224, 172, 140};
    return {90, 90, 90};
  }
  if (v < 0.6) return shirt;
  return {30, 35, 70};
}

}  // namespace

void validate_occluder(const OccluderSpec& spec) {
  if (!(spec.size > 0.0 && spec.size <= 1.0)) throw Error(Errc::invalid_argument, "occluder size must be in (0, 1]");
  if (spec.anchor.empty()) throw Error(Errc::invalid_argument, "occluder anchor is empty");
}

Rect occluder_rect(const ClipRecord& clip, int t, const MeshModel& model, const OccluderSpec& spec) {
  validate_occluder(spec);
  const BBox& box = clip.boxes[static_cast<size_t>(t)];
  const double target = spec.size * box.b * box.b;
  if (spec.anchor == "whole") {
    const double half = std::sqrt(target) / 2.0;
    return {box.cx - half, box.cy - half, box.cx + half, box.cy + half};
  }
  const auto ks = model.keypoints_in_region(spec.anchor);
  if (ks.empty()) throw Error(Errc::invalid_argument, "no keypoints in region " + spec.anchor);
  const int nk = clip.keypoints();
  Rect r{INFINITY, INFINITY, -INFINITY, -INFINITY};
  for (int k : ks) {
    const double x = clip.keypoints2d[static_cast<size_t>(2 * (t * nk + k))];
    const double y = clip.keypoints2d[static_cast<size_t>(2 * (t * nk + k) + 1)];
    r = {std::min(r.x0, x), std::min(r.y0, y), std::max(r.x1, x), std::max(r.y1, y)};
  }
  const double m = kRegionMargin * box.b;
  r = {r.x0 - m, r.y0 - m, r.x1 + m, r.y1 + m};
  const double w = r.width(), h = r.height();
  if (w * h < target) {
    // Grow every side by the same amount until the area reaches the target.
    const double d = (-(w + h) + std::sqrt((w + h) * (w + h) - 4.0 * (w * h - target))) / 4.0;
    r = {r.x0 - d, r.y0 - d, r.x1 + d, r.y1 + d};
  }
  return r;
}

ClipRecord apply_occluder(const ClipRecord& clip, const MeshModel& model, const OccluderSpec& spec) {
  validate_occluder(spec);
  ClipRecord out = clip;
  const int nk = clip.keypoints();
  for (int t = 0; t < clip.frames(); ++t) {
    const Rect r = occluder_rect(clip, t, model, spec);
    for (int k = 0; k < nk; ++k) {
      const size_t i = static_cast<size_t>(t * nk + k);
      if (r.contains(clip.keypoints2d[2 * i], clip.keypoints2d[2 * i + 1])) out.confidence[i] = 0.0;
    }
    if (out.crops.empty()) continue;
    Image& img = out.crops[static_cast<size_t>(t)];
    const BBox& box = clip.boxes[static_cast<size_t>(t)];
    const auto a = full_to_crop({r.x0, r.y0}, box, img.width);
    const auto b = full_to_crop({r.x1, r.y1}, box, img.width);
    for (int y = 0; y < img.height; ++y) {
      for (int x = 0; x < img.width; ++x) {
        const double px = x + 0.5, py = y + 0.5;
        if (px < a[0] || px > b[0] || py < a[1] || py > b[1]) continue;
        std::array<std::uint8_t, 3> c{};
        if (spec.kind == OccluderKind::human_box) {
          c = person_color((px - a[0]) / (b[0] - a[0]), (py - a[1]) / (b[1] - a[1]), spec.seed);
        } else if (!spec.source.empty()) {
          const std::uint64_t off = mix(spec.seed);
          const int sx = static_cast<int>((static_cast<std::uint64_t>(x) + off % 997) % static_cast<std::uint64_t>(spec.source.width));
          const int sy = static_cast<int>((static_cast<std::uint64_t>(y) + (off >> 20) % 997) % static_cast<std::uint64_t>(spec.source.height));
          for (int ch = 0; ch < 3; ++ch) c[static_cast<size_t>(ch)] = spec.source.at(sx, sy, spec.source.channels == 3 ? ch : 0);
        } else {
          // Blocky texture, 8 px cells.
          const std::uint64_t h = mix(spec.seed ^ mix(static_cast<std::uint64_t>(x / 8) * 7919ULL + static_cast<std::uint64_t>(y / 8)));
          for (int ch = 0; ch < 3; ++ch) c[static_cast<size_t>(ch)] = static_cast<std::uint8_t>(60 + (h >> (8 * ch)) % 120);
        }
        for (int ch = 0; ch < img.channels; ++ch) img.at(x, y, ch) = c[static_cast<size_t>(img.channels == 3 ? ch : 0)];
      }
    }
  }
  return out;
}

JitterParams draw_jitter(double strength, std::uint64_t seed) {
  if (!(strength >= 0.0 && strength <= 1.0)) throw Error(Errc::invalid_argument, "jitter strength must be in [0, 1]");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  JitterParams p;
  p.brightness = 0.2 * strength * u(rng);
  p.contrast = 1.0 + 0.4 * strength * u(rng);
  p.saturation = 1.0 + 0.4 * strength * u(rng);
  p.hue = 0.1 * M_PI * strength * u(rng);
  return p;
}

Image adjust(const Image& image, const JitterParams& p) {
  Image out = image;
  const size_t n = static_cast<size_t>(image.width) * static_cast<size_t>(image.height);
  const int ch = image.channels;
  auto luma = [&](size_t i) {
    const std::uint8_t* px = image.pixels.data() + i * static_cast<size_t>(ch);
    return ch == 3 ? 0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2] : static_cast<double>(px[0]);
  };
  double mean = 0.0;
  for (size_t i = 0; i < n; ++i) mean += luma(i);
  mean /= std::max<size_t>(n, 1);

  // Rotation about the gray axis (1, 1, 1) / sqrt(3).
  const double c = std::cos(p.hue), s = std::sin(p.hue), k = (1.0 - c) / 3.0, q = s / std::sqrt(3.0);
  const double rot[3][3] = {{c + k, k - q, k + q}, {k + q, c + k, k - q}, {k - q, k + q, c + k}};

  for (size_t i = 0; i < n; ++i) {
    double v[3] = {0, 0, 0};
    for (int j = 0; j < ch; ++j) v[j] = image.pixels[i * static_cast<size_t>(ch) + static_cast<size_t>(j)];
    for (int j = 0; j < ch; ++j) v[j] = mean + p.contrast * (v[j] - mean) + 255.0 * p.brightness;
    if (ch == 3) {
      const double g = 0.299 * v[0] + 0.587 * v[1] + 0.114 * v[2];
      for (double& x : v) x = g + p.saturation * (x - g);
      const double r0 = v[0], r1 = v[1], r2 = v[2];
      for (int j = 0; j < 3; ++j) v[j] = rot[j][0] * r0 + rot[j][1] * r1 + rot[j][2] * r2;
    }
    for (int j = 0; j < ch; ++j) out.pixels[i * static_cast<size_t>(ch) + static_cast<size_t>(j)] = to_byte(v[j]);
  }
  return out;
}

ClipRecord color_jitter(const ClipRecord& clip, double strength, std::uint64_t seed) {
  const JitterParams p = draw_jitter(strength, seed);
  ClipRecord out = clip;
  for (Image& img : out.crops) img = adjust(img, p);
  return out;
}

}  // namespace quadfit
