#pragma once

#include <array>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "quadfit/render.hpp"

namespace quadfit {

struct Similarity {
  double s = 1.0;
  std::array<double, 9> R{1, 0, 0, 0, 1, 0, 0, 0, 1};  // row-major, det +1
  std::array<double, 3> t{0, 0, 0};
  std::vector<double> aligned;  // N x 3, s R X + t
};

// Least-squares similarity (or rigid, with_scale = false) transform taking
// X onto Y; both N x 3.
Similarity procrustes_align(std::span<const double> X, std::span<const double> Y, bool with_scale = true);

struct Summary {
  double mean = 0.0;
  double std = 0.0;  // population standard deviation
};
Summary summarize(std::span<const double> values);

struct PmpjpeResult {
  std::vector<double> per_frame;
  Summary summary;
};

// pred, gt: T x J x 3.
PmpjpeResult p_mpjpe(std::span<const double> pred, std::span<const double> gt, int frames, bool with_scale = true);

// pred2d, gt2d: T x K x 2; conf: T x K; norm: T per-frame normalizers.
// Counts keypoints with conf >= conf_threshold whose error is < alpha * norm.
double pck(std::span<const double> pred2d, std::span<const double> gt2d, std::span<const double> conf,
           std::span<const double> norm, double alpha = 0.1, double conf_threshold = 0.5);

// Intersection over union of masks thresholded at >= threshold. Two empty
// masks give 1.
double iou_masks(const Mask& a, const Mask& b, double threshold = 0.5);

struct WilcoxonResult {
  double statistic = 0.0;  // W+, the rank sum of positive differences a - b
  double p = 1.0;          // two-sided
  int n = 0;               // non-zero differences used
  bool exact = false;
};

WilcoxonResult wilcoxon_signed_rank(std::span<const double> a, std::span<const double> b);

// Rows (clip, frame, metric, value).
struct MetricRow {
  std::string clip;
  int frame = 0;
  std::string metric;
  double value = 0.0;
};
void write_metrics_csv(const std::vector<MetricRow>& rows, const std::filesystem::path& path);

// "12.34 ± 5.67" with the given number of decimals.
std::string format_mean_std(const Summary& s, int decimals = 2);

}  // namespace quadfit
