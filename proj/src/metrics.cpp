#include "quadfit/metrics.hpp"

#include <Eigen/LU>
#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "quadfit/error.hpp"

namespace quadfit {

namespace {

using Points = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;

Eigen::Map<const Points> as_points(std::span<const double> p) {
  return {p.data(), static_cast<Eigen::Index>(p.size() / 3), 3};
}

}  // namespace

Similarity procrustes_align(std::span<const double> X, std::span<const double> Y, bool with_scale) {
  if (X.size() != Y.size() || X.size() % 3 != 0) throw Error(Errc::shape_error, "point sets must both be N x 3");
  const auto x = as_points(X);
  const auto y = as_points(Y);
  const Eigen::Index n = x.rows();
  if (n < 3) throw Error(Errc::rank_deficient, "need at least 3 points");

  const Eigen::RowVector3d mx = x.colwise().mean();
  const Eigen::RowVector3d my = y.colwise().mean();
  const Points xc = x.rowwise() - mx;
  const Points yc = y.rowwise() - my;

  const Eigen::JacobiSVD<Eigen::MatrixXd> xs(xc);
  const auto sv = xs.singularValues();
  if (!(sv(0) > 0.0) || sv(1) <= 1e-12 * sv(0)) throw Error(Errc::rank_deficient, "source points are collinear");

  const Eigen::Matrix3d cov = yc.transpose() * xc / static_cast<double>(n);
  const Eigen::JacobiSVD<Eigen::Matrix3d> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Vector3d d = Eigen::Vector3d::Ones();
  if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0.0) d(2) = -1.0;
  const Eigen::Matrix3d R = svd.matrixU() * d.asDiagonal() * svd.matrixV().transpose();
  double s = 1.0;
  if (with_scale) {
    const double var_x = xc.squaredNorm() / static_cast<double>(n);
    s = svd.singularValues().dot(d) / var_x;
  }
  const Eigen::Vector3d t = my.transpose() - s * R * mx.transpose();

  Similarity out;
  out.s = s;
  for (int i = 0; i < 3; ++i) {
    out.t[static_cast<size_t>(i)] = t(i);
    for (int j = 0; j < 3; ++j) out.R[static_cast<size_t>(3 * i + j)] = R(i, j);
  }
  out.aligned.resize(X.size());
  Eigen::Map<Points> a(out.aligned.data(), n, 3);
  a = ((s * x) * R.transpose()).rowwise() + t.transpose();
  return out;
}

Summary summarize(std::span<const double> values) {
  Summary s;
  if (values.empty()) return s;
  const double n = static_cast<double>(values.size());
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : values) ss += (v - s.mean) * (v - s.mean);
  s.std = std::sqrt(ss / n);
  return s;
}

PmpjpeResult p_mpjpe(std::span<const double> pred, std::span<const double> gt, int frames, bool with_scale) {
  if (frames <= 0 || pred.size() != gt.size() || pred.size() % (3 * static_cast<size_t>(frames)) != 0)
    throw Error(Errc::shape_error, "pred and gt must both be T x J x 3");
  const size_t per = pred.size() / static_cast<size_t>(frames);
  PmpjpeResult r;
  for (int t = 0; t < frames; ++t) {
    const auto p = pred.subspan(static_cast<size_t>(t) * per, per);
    const auto g = gt.subspan(static_cast<size_t>(t) * per, per);
    const Similarity sim = procrustes_align(p, g, with_scale);
    double err = 0.0;
    for (size_t j = 0; j < per / 3; ++j) {
      const double dx = sim.aligned[3 * j] - g[3 * j];
      const double dy = sim.aligned[3 * j + 1] - g[3 * j + 1];
      const double dz = sim.aligned[3 * j + 2] - g[3 * j + 2];
      err += std::sqrt(dx * dx + dy * dy + dz * dz);
    }
    r.per_frame.push_back(err / static_cast<double>(per / 3));
  }
  r.summary = summarize(r.per_frame);
  return r;
}

double pck(std::span<const double> pred2d, std::span<const double> gt2d, std::span<const double> conf,
           std::span<const double> norm, double alpha, double conf_threshold) {
  if (pred2d.size() != gt2d.size() || pred2d.size() != 2 * conf.size() || norm.empty() || conf.size() % norm.size() != 0)
    throw Error(Errc::shape_error, "pck inputs disagree");
  const size_t k = conf.size() / norm.size();
  int valid = 0, hits = 0;
  for (size_t i = 0; i < conf.size(); ++i) {
    if (!(conf[i] >= conf_threshold)) continue;
    const double nt = norm[i / k];
    if (!(nt > 0.0)) throw Error(Errc::invalid_argument, "pck normalizer must be positive");
    ++valid;
    const double dx = pred2d[2 * i] - gt2d[2 * i], dy = pred2d[2 * i + 1] - gt2d[2 * i + 1];
    if (std::sqrt(dx * dx + dy * dy) < alpha * nt) ++hits;
  }
  if (valid == 0) throw Error(Errc::no_supervision, "no keypoint above the confidence threshold");
  return static_cast<double>(hits) / valid;
}

double iou_masks(const Mask& a, const Mask& b, double threshold) {
  if (a.width != b.width || a.height != b.height) throw Error(Errc::shape_error, "mask resolution mismatch");
  size_t inter = 0, uni = 0;
  for (size_t i = 0; i < a.values.size(); ++i) {
    const bool x = a.values[i] >= threshold, y = b.values[i] >= threshold;
    inter += x && y;
    uni += x || y;
  }
  if (uni == 0) return 1.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

WilcoxonResult wilcoxon_signed_rank(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw Error(Errc::shape_error, "samples must have equal length");
  std::vector<double> d;
  for (size_t i = 0; i < a.size(); ++i)
    if (a[i] - b[i] != 0.0) d.push_back(a[i] - b[i]);
  if (d.empty()) throw Error(Errc::identical_samples);
  const int n = static_cast<int>(d.size());
  if (n < 5) throw Error(Errc::too_few_samples, std::to_string(n) + " non-zero differences");

  // Average ranks of |d|, ties sharing the mean rank.
  std::vector<int> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int i, int j) { return std::abs(d[static_cast<size_t>(i)]) < std::abs(d[static_cast<size_t>(j)]); });
  std::vector<double> rank(static_cast<size_t>(n));
  double tie_term = 0.0;
  for (int i = 0; i < n;) {
    int j = i;
    while (j + 1 < n && std::abs(d[static_cast<size_t>(order[static_cast<size_t>(j + 1)])]) ==
                            std::abs(d[static_cast<size_t>(order[static_cast<size_t>(i)])]))
      ++j;
    const double r = 0.5 * (i + j) + 1.0;
    for (int k = i; k <= j; ++k) rank[static_cast<size_t>(order[static_cast<size_t>(k)])] = r;
    const double t = j - i + 1;
    tie_term += t * t * t - t;
    i = j + 1;
  }

  WilcoxonResult res;
  res.n = n;
  for (int i = 0; i < n; ++i)
    if (d[static_cast<size_t>(i)] > 0.0) res.statistic += rank[static_cast<size_t>(i)];
  const double mean = n * (n + 1) / 4.0;
  const double dev = std::abs(res.statistic - mean);

  if (n <= 12) {
    res.exact = true;
    long extreme = 0;
    const long patterns = 1L << n;
    for (long m = 0; m < patterns; ++m) {
      double w = 0.0;
      for (int i = 0; i < n; ++i)
        if (m >> i & 1) w += rank[static_cast<size_t>(i)];
      if (std::abs(w - mean) >= dev - 1e-9) ++extreme;
    }
    res.p = static_cast<double>(extreme) / static_cast<double>(patterns);
  } else {
    const double var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - tie_term / 48.0;
    const double z = std::max(0.0, dev - 0.5) / std::sqrt(var);
    res.p = std::min(1.0, std::erfc(z / std::sqrt(2.0)));
  }
  return res;
}

void write_metrics_csv(const std::vector<MetricRow>& rows, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(Errc::io_error, "cannot write " + path.string());
  out.precision(10);
  out << "clip,frame,metric,value\n";
  for (const auto& r : rows) out << r.clip << ',' << r.frame << ',' << r.metric << ',' << r.value << '\n';
}

std::string format_mean_std(const Summary& s, int decimals) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "%.*f ± %.*f", decimals, s.mean, decimals, s.std);
  return buf;
}

}  // namespace quadfit
