#include "quadfit/render.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <memory>
#include <string>

#include "quadfit/error.hpp"
#include "quadfit/image.hpp"

namespace quadfit {

double Mask::sum() const {
  double s = 0.0;
  for (double v : values) s += v;
  return s;
}

double default_sigma(int res) { return 1e-4 * res; }

namespace {

// Faces whose signed distance is below -kCutoff * sigma contribute less than
// exp(-kCutoff) to the log-domain union and are skipped.
constexpr double kCutoff = 30.0;

struct Tri {
  double x[3], y[3];
  double orient = 0.0;  // +1 or -1; 0 for degenerate triangles
  // Outward unit edge normals: n . p + c is the distance outside edge k.
  double nx[3] = {0, 0, 0}, ny[3] = {0, 0, 0}, c[3] = {0, 0, 0};
};

Tri make_tri(std::span<const double> uv, const std::array<int, 3>& f) {
  Tri t;
  for (int k = 0; k < 3; ++k) {
    t.x[k] = uv[2 * static_cast<size_t>(f[static_cast<size_t>(k)])];
    t.y[k] = uv[2 * static_cast<size_t>(f[static_cast<size_t>(k)]) + 1];
  }
  const double area2 = (t.x[1] - t.x[0]) * (t.y[2] - t.y[0]) - (t.x[2] - t.x[0]) * (t.y[1] - t.y[0]);
  if (std::abs(area2) > 1e-12) t.orient = area2 > 0 ? 1.0 : -1.0;
  if (t.orient != 0.0)
    for (int k = 0; k < 3; ++k) {
      const int n = (k + 1) % 3;
      const double ex = t.x[n] - t.x[k], ey = t.y[n] - t.y[k];
      const double len = std::sqrt(ex * ex + ey * ey);
      t.nx[k] = t.orient * ey / len;
      t.ny[k] = -t.orient * ex / len;
      t.c[k] = -(t.nx[k] * t.x[k] + t.ny[k] * t.y[k]);
    }
  return t;
}

// True when the point is more than limit outside one edge line, which bounds
// its distance to the triangle from below.
bool beyond(const Tri& t, double px, double py, double limit) {
  if (t.orient == 0.0) return false;
  for (int k = 0; k < 3; ++k)
    if (t.nx[k] * px + t.ny[k] * py + t.c[k] > limit) return true;
  return false;
}

bool inside(const Tri& t, double px, double py) {
  if (t.orient == 0.0) return false;
  for (int k = 0; k < 3; ++k) {
    const int n = (k + 1) % 3;
    const double e = (t.x[n] - t.x[k]) * (py - t.y[k]) - (t.y[n] - t.y[k]) * (px - t.x[k]);
    if (t.orient * e < 0.0) return false;
  }
  return true;
}

// Signed distance from (px, py) to the triangle and its gradient with
// respect to the six vertex coordinates (x0, y0, x1, y1, x2, y2).
double signed_distance(const Tri& t, double px, double py, double* grad) {
  double best = 1e300;
  int best_k = 0;
  double best_s = 0.0, best_rx = 0.0, best_ry = 0.0;
  for (int k = 0; k < 3; ++k) {
    const int n = (k + 1) % 3;
    const double ex = t.x[n] - t.x[k], ey = t.y[n] - t.y[k];
    const double len2 = ex * ex + ey * ey;
    double s = len2 > 0.0 ? ((px - t.x[k]) * ex + (py - t.y[k]) * ey) / len2 : 0.0;
    s = std::clamp(s, 0.0, 1.0);
    const double rx = px - (t.x[k] + s * ex), ry = py - (t.y[k] + s * ey);
    const double d = std::sqrt(rx * rx + ry * ry);
    if (d < best) {
      best = d;
      best_k = k;
      best_s = s;
      best_rx = rx;
      best_ry = ry;
    }
  }
  const double sign = inside(t, px, py) ? 1.0 : -1.0;
  if (grad) {
    std::fill(grad, grad + 6, 0.0);
    if (best > 0.0) {
      const double ux = -best_rx / best * sign, uy = -best_ry / best * sign;
      const int n = (best_k + 1) % 3;
      grad[2 * best_k] += (1.0 - best_s) * ux;
      grad[2 * best_k + 1] += (1.0 - best_s) * uy;
      grad[2 * n] += best_s * ux;
      grad[2 * n + 1] += best_s * uy;
    }
  }
  return sign * best;
}

double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

struct PixelRange {
  int x0, x1, y0, y1;  // inclusive-exclusive
  bool empty() const { return x0 >= x1 || y0 >= y1; }
};

PixelRange pixel_range(const Tri& t, double margin, int width, int height) {
  const double lo_x = std::min({t.x[0], t.x[1], t.x[2]}) - margin;
  const double hi_x = std::max({t.x[0], t.x[1], t.x[2]}) + margin;
  const double lo_y = std::min({t.y[0], t.y[1], t.y[2]}) - margin;
  const double hi_y = std::max({t.y[0], t.y[1], t.y[2]}) + margin;
  // Pixel x covers centers x + 0.5 in [lo, hi].
  auto first = [](double lo) { return static_cast<int>(std::ceil(lo - 0.5)); };
  auto last = [](double hi) { return static_cast<int>(std::floor(hi - 0.5)) + 1; };
  PixelRange r{std::max(0, first(lo_x)), std::min(width, last(hi_x)), std::max(0, first(lo_y)), std::min(height, last(hi_y))};
  if (!std::isfinite(lo_x) || !std::isfinite(hi_x) || !std::isfinite(lo_y) || !std::isfinite(hi_y)) r = {0, 0, 0, 0};
  return r;
}

void check_faces(std::span<const std::array<int, 3>> faces, int nv) {
  for (const auto& f : faces)
    for (int v : f)
      if (v < 0 || v >= nv) throw Error(Errc::shape_error, "face index out of range");
}

}  // namespace

ad::Var soft_silhouette(const ad::Var& uv, std::span<const std::array<int, 3>> faces, int width, int height,
                        double sigma) {
  if (uv.cols() != 2) throw Error(Errc::shape_error, "uv must be V x 2");
  if (width <= 0 || height <= 0) throw Error(Errc::invalid_frame);
  if (!(sigma > 0.0)) throw Error(Errc::invalid_argument, "sigma must be positive");
  check_faces(faces, uv.rows());
  const size_t npix = static_cast<size_t>(width) * static_cast<size_t>(height);
  const auto p = uv.value();

  std::vector<double> total(npix, 0.0);  // sum of softplus(d / sigma)
  for (const auto& f : faces) {
    const Tri t = make_tri(p, f);
    const PixelRange r = pixel_range(t, kCutoff * sigma, width, height);
    for (int y = r.y0; y < r.y1; ++y)
      for (int x = r.x0; x < r.x1; ++x) {
        if (beyond(t, x + 0.5, y + 0.5, kCutoff * sigma)) continue;
        const double d = signed_distance(t, x + 0.5, y + 0.5, nullptr);
        if (d < -kCutoff * sigma) continue;
        total[static_cast<size_t>(y) * static_cast<size_t>(width) + static_cast<size_t>(x)] += softplus(d / sigma);
      }
  }
  auto keep = std::make_shared<std::vector<double>>(npix);  // exp(-total)
  std::vector<double> out(npix);
  for (size_t i = 0; i < npix; ++i) {
    (*keep)[i] = std::exp(-total[i]);
    out[i] = -std::expm1(-total[i]);
  }

  std::vector<std::array<int, 3>> face_copy(faces.begin(), faces.end());
  return uv.tape().record(
      "soft_silhouette", height, width, std::move(out), {uv},
      [uv, face_copy = std::move(face_copy), keep, width, height, sigma](ad::Tape& tape, std::span<const double> g) {
        auto acc = tape.accum(uv);
        if (acc.empty()) return;
        const auto pv = uv.value();
        double dd[6];
        for (const auto& f : face_copy) {
          const Tri t = make_tri(pv, f);
          const PixelRange r = pixel_range(t, kCutoff * sigma, width, height);
          double ga[6] = {0, 0, 0, 0, 0, 0};
          for (int y = r.y0; y < r.y1; ++y)
            for (int x = r.x0; x < r.x1; ++x) {
              const size_t i = static_cast<size_t>(y) * static_cast<size_t>(width) + static_cast<size_t>(x);
              if (g[i] == 0.0 || beyond(t, x + 0.5, y + 0.5, kCutoff * sigma)) continue;
              const double d = signed_distance(t, x + 0.5, y + 0.5, dd);
              if (d < -kCutoff * sigma) continue;
              const double w = g[i] * (*keep)[i] * sigmoid(d / sigma) / sigma;
              for (int k = 0; k < 6; ++k) ga[k] += w * dd[k];
            }
          for (int k = 0; k < 3; ++k) {
            acc[2 * static_cast<size_t>(f[static_cast<size_t>(k)])] += ga[2 * k];
            acc[2 * static_cast<size_t>(f[static_cast<size_t>(k)]) + 1] += ga[2 * k + 1];
          }
        }
      });
}

Mask hard_silhouette(std::span<const double> uv, std::span<const std::array<int, 3>> faces, int width, int height) {
  if (uv.size() % 2 != 0) throw Error(Errc::shape_error, "uv must be V x 2");
  if (width <= 0 || height <= 0) throw Error(Errc::invalid_frame);
  check_faces(faces, static_cast<int>(uv.size() / 2));
  Mask m(width, height);
  for (const auto& f : faces) {
    const Tri t = make_tri(uv, f);
    if (t.orient == 0.0) continue;
    const PixelRange r = pixel_range(t, 0.0, width, height);
    for (int y = r.y0; y < r.y1; ++y)
      for (int x = r.x0; x < r.x1; ++x)
        if (inside(t, x + 0.5, y + 0.5)) m.at(x, y) = 1.0;
  }
  return m;
}

ad::Var project_to_crop(const ad::Var& vertices, const ad::Var& gamma, int res) {
  const double f = kCropFocal * res / kCropRes;
  return project_points(vertices, f, gamma, {res / 2.0, res / 2.0});
}

std::vector<double> project_to_crop(std::span<const double> vertices, std::span<const double> gamma, int res) {
  const double f = kCropFocal * res / kCropRes;
  return project_points(vertices, f, gamma, {res / 2.0, res / 2.0});
}

ad::Var rasterize_soft(const ad::Var& vertices, std::span<const std::array<int, 3>> faces, const ad::Var& gamma,
                       int res, double sigma) {
  return soft_silhouette(project_to_crop(vertices, gamma, res), faces, res, res, sigma);
}

Mask rasterize_soft(std::span<const double> vertices, std::span<const std::array<int, 3>> faces,
                    const CameraPair& cam, int t, int res, double sigma) {
  if (t < 0 || t >= cam.frames()) throw Error(Errc::shape_error, "frame index out of range");
  ad::Tape tape;
  const int nv = static_cast<int>(vertices.size() / 3);
  const ad::Var v = tape.constant(std::vector<double>(vertices.begin(), vertices.end()), nv, 3);
  const ad::Var g = tape.constant(
      std::vector<double>(cam.gamma_crop.begin() + 3 * t, cam.gamma_crop.begin() + 3 * t + 3), 1, 3);
  const ad::Var m = rasterize_soft(v, faces, g, res, sigma);
  Mask out(res, res);
  std::copy(m.value().begin(), m.value().end(), out.values.begin());
  return out;
}

Mask rasterize_hard(std::span<const double> vertices, std::span<const std::array<int, 3>> faces,
                    const CameraPair& cam, int t, int res) {
  if (t < 0 || t >= cam.frames()) throw Error(Errc::shape_error, "frame index out of range");
  const auto uv = project_to_crop(vertices, std::span<const double>(cam.gamma_crop.data() + 3 * t, 3), res);
  return hard_silhouette(uv, faces, res, res);
}

void write_mask_pgm(const Mask& mask, const std::filesystem::path& path) {
  Image img(mask.width, mask.height, 1);
  for (size_t i = 0; i < mask.values.size(); ++i)
    img.pixels[i] = static_cast<std::uint8_t>(std::lround(std::clamp(mask.values[i], 0.0, 1.0) * 255.0));
  write_pnm(img, path);
}

Mask read_mask_pgm(const std::filesystem::path& path) {
  const Image img = read_pnm(path);
  if (img.channels != 1) throw Error(Errc::io_error, "mask must be a PGM: " + path.string());
  Mask m(img.width, img.height);
  for (size_t i = 0; i < img.pixels.size(); ++i) m.values[i] = img.pixels[i] / 255.0;
  return m;
}

void write_mask_raw(const Mask& mask, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::io_error, "cannot write " + path.string());
  out << "quadfit-mask/1 " << mask.width << ' ' << mask.height << " f32le\n";
  for (double v : mask.values) {
    const float f = static_cast<float>(v);
    std::uint32_t bits = std::bit_cast<std::uint32_t>(f);
    char b[4];
    for (int k = 0; k < 4; ++k) b[k] = static_cast<char>((bits >> (8 * k)) & 0xff);
    out.write(b, 4);
  }
}

Mask read_mask_raw(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::io_error, "cannot open " + path.string());
  std::string tag, fmt;
  int w = 0, h = 0;
  in >> tag >> w >> h >> fmt;
  in.get();
  if (tag != "quadfit-mask/1" || fmt != "f32le" || w <= 0 || h <= 0)
    throw Error(Errc::io_error, "bad mask header in " + path.string());
  Mask m(w, h);
  for (double& v : m.values) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4)) throw Error(Errc::io_error, "truncated mask " + path.string());
    const std::uint32_t bits = b[0] | (b[1] << 8) | (b[2] << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
    v = std::bit_cast<float>(bits);
  }
  return m;
}

}  // namespace quadfit
