#pragma once

#include <array>
#include <filesystem>
#include <span>
#include <vector>

#include "quadfit/autodiff.hpp"
#include "quadfit/camera.hpp"

namespace quadfit {

// Per-pixel occupancy in [0, 1], row-major, height rows of width values.
struct Mask {
  int width = 0;
  int height = 0;
  std::vector<double> values;

  Mask() = default;
  Mask(int w, int h, double fill = 0.0)
      : width(w), height(h), values(static_cast<size_t>(w) * static_cast<size_t>(h), fill) {}

  double& at(int x, int y) { return values[static_cast<size_t>(y) * static_cast<size_t>(width) + static_cast<size_t>(x)]; }
  double at(int x, int y) const { return values[static_cast<size_t>(y) * static_cast<size_t>(width) + static_cast<size_t>(x)]; }
  double sum() const;
};

double default_sigma(int res);

// Soft silhouette of triangles already projected to pixel coordinates
// (uv is V x 2; pixel (x, y) has its center at (x + 0.5, y + 0.5)).
// Occupancy is 1 - prod_i (1 - sigmoid(d_i / sigma)), with d_i the signed
// distance from the pixel center to triangle i, positive inside.
ad::Var soft_silhouette(const ad::Var& uv, std::span<const std::array<int, 3>> faces, int width, int height,
                        double sigma);
Mask hard_silhouette(std::span<const double> uv, std::span<const std::array<int, 3>> faces, int width, int height);

// Projects vertices (V x 3) into a res x res crop with the crop camera
// translation gamma (1 x 3). The crop camera's focal length scales with res.
ad::Var project_to_crop(const ad::Var& vertices, const ad::Var& gamma, int res);
std::vector<double> project_to_crop(std::span<const double> vertices, std::span<const double> gamma, int res);

ad::Var rasterize_soft(const ad::Var& vertices, std::span<const std::array<int, 3>> faces, const ad::Var& gamma,
                       int res, double sigma);
Mask rasterize_soft(std::span<const double> vertices, std::span<const std::array<int, 3>> faces,
                    const CameraPair& cam, int t, int res, double sigma);
Mask rasterize_hard(std::span<const double> vertices, std::span<const std::array<int, 3>> faces,
                    const CameraPair& cam, int t, int res);

// 8-bit PGM, value v stored as round(255 v).
void write_mask_pgm(const Mask& mask, const std::filesystem::path& path);
Mask read_mask_pgm(const std::filesystem::path& path);
// Text header line "quadfit-mask/1 <width> <height> f32le" then raw floats.
void write_mask_raw(const Mask& mask, const std::filesystem::path& path);
Mask read_mask_raw(const std::filesystem::path& path);

}  // namespace quadfit
