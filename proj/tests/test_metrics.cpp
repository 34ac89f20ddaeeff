#include <doctest.h>

#include <Eigen/Geometry>
#include <cmath>

#include "quadfit/error.hpp"
#include "quadfit/metrics.hpp"
#include "test_util.hpp"

using namespace quadfit;

namespace {

Eigen::Matrix3d random_rotation(testutil::Gen& gen) {
  const Eigen::Vector3d axis(gen.normal(), gen.normal(), gen.normal());
  return Eigen::AngleAxisd(gen.uniform(-3.1, 3.1), axis.normalized()).toRotationMatrix();
}

std::vector<double> transform(const std::vector<double>& x, double s, const Eigen::Matrix3d& R, const Eigen::Vector3d& t) {
  std::vector<double> y(x.size());
  for (size_t i = 0; i < x.size() / 3; ++i) {
    const Eigen::Vector3d p = s * R * Eigen::Vector3d(x[3 * i], x[3 * i + 1], x[3 * i + 2]) + t;
    for (int c = 0; c < 3; ++c) y[3 * i + static_cast<size_t>(c)] = p[c];
  }
  return y;
}

double residual(const std::vector<double>& a, const std::vector<double>& b) {
  double r = 0.0;
  for (size_t i = 0; i < a.size(); ++i) r += (a[i] - b[i]) * (a[i] - b[i]);
  return r;
}

// Exact two-sided p by listing every sign pattern of the ranks 1..n.
double enumerate_p(const std::vector<double>& ranks, double w_obs) {
  const int n = static_cast<int>(ranks.size());
  double total = 0.0;
  for (double r : ranks) total += r;
  const double mean = total / 2.0;
  long hits = 0;
  for (long m = 0; m < (1L << n); ++m) {
    double w = 0.0;
    for (int i = 0; i < n; ++i)
      if (m & (1L << i)) w += ranks[static_cast<size_t>(i)];
    if (std::abs(w - mean) >= std::abs(w_obs - mean) - 1e-12) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(1L << n);
}

}  // namespace

TEST_CASE("procrustes on identical points") {
  testutil::Gen gen(1);
  const auto x = gen.normals(30);
  const Similarity s = procrustes_align(x, x);
  CHECK(s.s == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(residual(s.aligned, x) < 1e-20);
}

TEST_CASE("procrustes recovers random similarity transforms") {
  testutil::Gen gen(2);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = gen.integer(3, 40);
    const auto x = gen.normals(static_cast<size_t>(3 * n));
    const Eigen::Matrix3d R = random_rotation(gen);
    const double scale = gen.uniform(0.2, 5.0);
    const Eigen::Vector3d t(gen.normal(5), gen.normal(5), gen.normal(5));
    const auto y = transform(x, scale, R, t);
    const Similarity s = procrustes_align(x, y);
    CHECK(std::abs(s.s - scale) < 1e-8);
    double err = 0.0;
    for (int i = 0; i < 3; ++i) {
      err = std::max(err, std::abs(s.t[static_cast<size_t>(i)] - t[i]));
      for (int j = 0; j < 3; ++j) err = std::max(err, std::abs(s.R[static_cast<size_t>(3 * i + j)] - R(i, j)));
    }
    CHECK(err < 1e-8);
    Eigen::Matrix3d Rs;
    for (int i = 0; i < 9; ++i) Rs(i / 3, i % 3) = s.R[static_cast<size_t>(i)];
    CHECK(Rs.determinant() == doctest::Approx(1.0));
  }
}

TEST_CASE("procrustes beats a rotation grid on noisy targets") {
  testutil::Gen gen(3);
  for (int trial = 0; trial < 3; ++trial) {
    const auto x = gen.normals(12);
    auto y = transform(x, 1.0, random_rotation(gen), {0, 0, 0});
    for (double& v : y) v += gen.normal(0.1);
    const Similarity s = procrustes_align(x, y, false);
    const double analytic = residual(s.aligned, y);
    // Brute force over a 5 degree Euler grid with the optimal translation.
    double best = 1e300;
    const double step = 5.0 * M_PI / 180.0;
    Eigen::Vector3d mx(0, 0, 0), my(0, 0, 0);
    for (int i = 0; i < 4; ++i) {
      mx += Eigen::Vector3d(x[3 * i], x[3 * i + 1], x[3 * i + 2]) / 4;
      my += Eigen::Vector3d(y[3 * i], y[3 * i + 1], y[3 * i + 2]) / 4;
    }
    for (double a = -M_PI; a < M_PI; a += step)
      for (double b = -M_PI / 2; b <= M_PI / 2; b += step)
        for (double c = -M_PI; c < M_PI; c += step) {
          const Eigen::Matrix3d R = (Eigen::AngleAxisd(a, Eigen::Vector3d::UnitZ()) *
                                     Eigen::AngleAxisd(b, Eigen::Vector3d::UnitY()) *
                                     Eigen::AngleAxisd(c, Eigen::Vector3d::UnitX()))
                                        .toRotationMatrix();
          best = std::min(best, residual(transform(x, 1.0, R, my - R * mx), y));
        }
    CHECK(analytic <= best + 1e-12);
  }
}

TEST_CASE("procrustes rejects degenerate sources") {
  const std::vector<double> line{0, 0, 0, 1, 1, 1, 2, 2, 2, 3, 3, 3};
  try {
    procrustes_align(line, line);
    FAIL("expected rank deficient");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::rank_deficient);
  }
  CHECK_THROWS_AS(procrustes_align(std::vector<double>{0, 0, 0, 1, 0, 0}, std::vector<double>{0, 0, 0, 1, 0, 0}), Error);
}

TEST_CASE("p_mpjpe") {
  testutil::Gen gen(4);
  const int frames = 5, joints = 17;
  const auto gt = gen.normals(static_cast<size_t>(frames * joints * 3));
  auto r = p_mpjpe(gt, gt, frames);
  CHECK(r.summary.mean < 1e-12);
  CHECK(r.summary.std < 1e-12);

  // Any per-frame similarity applied to pred changes nothing.
  std::vector<double> moved;
  for (int t = 0; t < frames; ++t) {
    const std::vector<double> f(gt.begin() + t * joints * 3, gt.begin() + (t + 1) * joints * 3);
    const auto g = transform(f, gen.uniform(0.5, 2), random_rotation(gen), {gen.normal(), gen.normal(), gen.normal()});
    moved.insert(moved.end(), g.begin(), g.end());
  }
  r = p_mpjpe(moved, gt, frames);
  CHECK(r.summary.mean < 1e-8);

  auto noisy = gt;
  for (double& v : noisy) v += gen.normal(0.05);
  const auto base = p_mpjpe(noisy, gt, frames);
  std::vector<double> noisy_moved;
  for (int t = 0; t < frames; ++t) {
    const std::vector<double> f(noisy.begin() + t * joints * 3, noisy.begin() + (t + 1) * joints * 3);
    const auto g = transform(f, gen.uniform(0.5, 2), random_rotation(gen), {gen.normal(), gen.normal(), gen.normal()});
    noisy_moved.insert(noisy_moved.end(), g.begin(), g.end());
  }
  const auto after = p_mpjpe(noisy_moved, gt, frames);
  for (int t = 0; t < frames; ++t) CHECK(std::abs(after.per_frame[t] - base.per_frame[t]) < 1e-8);
}

// Least-squares alignment can only lower the summed squared error below the
// identity alignment's d^2, so the mean joint error is at most d / sqrt(J).
TEST_CASE("displacing one joint is bounded after alignment") {
  testutil::Gen gen(5);
  for (int trial = 0; trial < 50; ++trial) {
    const int joints = 17;
    const auto gt = gen.normals(3 * joints);
    auto pred = gt;
    const int j = gen.integer(0, joints - 1);
    const double d = gen.uniform(0.01, 2.0);
    const Eigen::Vector3d dir = Eigen::Vector3d(gen.normal(), gen.normal(), gen.normal()).normalized();
    for (int c = 0; c < 3; ++c) pred[static_cast<size_t>(3 * j + c)] += d * dir[c];
    const Similarity sim = procrustes_align(pred, gt);
    double sq = 0.0;
    for (size_t i = 0; i < gt.size(); ++i) sq += (sim.aligned[i] - gt[i]) * (sim.aligned[i] - gt[i]);
    CHECK(sq <= d * d + 1e-12);
    CHECK(p_mpjpe(pred, gt, 1).summary.mean <= d / std::sqrt(joints) + 1e-12);
  }
}

TEST_CASE("pck") {
  const std::vector<double> gt{0, 0, 10, 10, 20, 20, 30, 30};
  const std::vector<double> conf{1, 1, 1, 1};
  const std::vector<double> norm{100};
  CHECK(pck(gt, gt, conf, norm) == 1.0);
  std::vector<double> edge = gt;
  for (size_t i = 0; i < 4; ++i) edge[2 * i] += 10.0;  // exactly alpha * norm
  CHECK(pck(edge, gt, conf, norm) == 0.0);
  std::vector<double> half = gt;
  half[0] += 50;
  half[3] += 50;
  CHECK(pck(half, gt, conf, norm) == 0.5);
  // Low-confidence keypoints are ignored.
  CHECK(pck(half, gt, std::vector<double>{0.2, 1, 1, 1}, norm) == doctest::Approx(2.0 / 3.0));
  CHECK_THROWS_AS(pck(gt, gt, std::vector<double>{0, 0, 0, 0}, norm), Error);
  // Scaling everything together changes nothing.
  testutil::Gen gen(6);
  for (int trial = 0; trial < 20; ++trial) {
    const auto p = gen.normals(40, 10), g = gen.normals(40, 10), c = gen.uniforms(20, 0, 1);
    const std::vector<double> nrm{80, 120};
    const double k = gen.uniform(0.1, 10);
    std::vector<double> ps(p), gs(g), ns(nrm);
    for (double& v : ps) v *= k;
    for (double& v : gs) v *= k;
    for (double& v : ns) v *= k;
    const double a = pck(p, g, c, nrm), b = pck(ps, gs, c, ns);
    CHECK(a == b);
  }
}

TEST_CASE("iou") {
  Mask a(4, 2), b(4, 2);
  CHECK(iou_masks(a, b) == 1.0);
  a.at(0, 0) = a.at(1, 0) = 1.0;
  CHECK(iou_masks(a, a) == 1.0);
  b.at(3, 1) = 1.0;
  CHECK(iou_masks(a, b) == 0.0);
  // Two unit squares overlapping by half.
  Mask c(4, 2), d(4, 2);
  c.at(0, 0) = c.at(1, 0) = c.at(0, 1) = c.at(1, 1) = 1.0;
  d.at(1, 0) = d.at(2, 0) = d.at(1, 1) = d.at(2, 1) = 1.0;
  CHECK(iou_masks(c, d) == 1.0 / 3.0);
  CHECK(iou_masks(d, c) == iou_masks(c, d));
  CHECK_THROWS_AS(iou_masks(Mask(3, 3), Mask(3, 4)), Error);
}

TEST_CASE("wilcoxon exact cases") {
  std::vector<double> a{1.1, 2.3, 0.7, 4.2, 3.3, 2.9, 1.8, 0.4};
  std::vector<double> b(a);
  for (double& v : b) v += 0.5;
  // Differences are all equal, so every rank is the tie average.
  const auto r = wilcoxon_signed_rank(a, b);
  CHECK(r.statistic == 0.0);
  CHECK(r.exact);
  CHECK(r.p == doctest::Approx(0.0078125).epsilon(1e-12));
  const auto s = wilcoxon_signed_rank(b, a);
  CHECK(s.p == r.p);
  CHECK(s.statistic == 8 * 9 / 2.0);

  try {
    wilcoxon_signed_rank(a, a);
    FAIL("expected identical samples");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::identical_samples);
  }
  try {
    wilcoxon_signed_rank(std::vector<double>{1, 2, 3, 4, 5}, std::vector<double>{1, 2, 3, 5, 6});
    FAIL("expected too few samples");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::too_few_samples);
  }
}

TEST_CASE("wilcoxon exact p equals enumeration") {
  testutil::Gen gen(7);
  for (int n = 5; n <= 12; ++n) {
    for (int trial = 0; trial < 10; ++trial) {
      std::vector<double> a(static_cast<size_t>(n)), b(static_cast<size_t>(n));
      for (int i = 0; i < n; ++i) {
        a[static_cast<size_t>(i)] = gen.normal();
        // Draws on a coarse grid so ties occur.
        b[static_cast<size_t>(i)] = a[static_cast<size_t>(i)] + (gen.integer(-4, 4) + 0.5) * 0.25;
      }
      const auto r = wilcoxon_signed_rank(a, b);
      // Independent ranking by counting.
      std::vector<double> d(static_cast<size_t>(n)), ranks(static_cast<size_t>(n));
      for (int i = 0; i < n; ++i) d[static_cast<size_t>(i)] = a[static_cast<size_t>(i)] - b[static_cast<size_t>(i)];
      double w = 0.0;
      for (int i = 0; i < n; ++i) {
        double less = 0, equal = 0;
        for (int j = 0; j < n; ++j) {
          const double x = std::abs(d[static_cast<size_t>(j)]), y = std::abs(d[static_cast<size_t>(i)]);
          less += x < y;
          equal += x == y;
        }
        ranks[static_cast<size_t>(i)] = less + (equal + 1) / 2.0;
        if (d[static_cast<size_t>(i)] > 0) w += ranks[static_cast<size_t>(i)];
      }
      CHECK(r.statistic == doctest::Approx(w));
      CHECK(r.p == doctest::Approx(enumerate_p(ranks, w)).epsilon(1e-12));
    }
  }
}

TEST_CASE("wilcoxon normal approximation for larger samples") {
  // Thirty strictly positive differences 1..30: W+ = 465, the maximum.
  std::vector<double> a(30), b(30, 0.0);
  for (int i = 0; i < 30; ++i) a[static_cast<size_t>(i)] = i + 1;
  const auto r = wilcoxon_signed_rank(a, b);
  CHECK_FALSE(r.exact);
  CHECK(r.statistic == 465.0);
  const double mean = 30 * 31 / 4.0, sd = std::sqrt(30 * 31 * 61 / 24.0);
  const double z = (465.0 - mean - 0.5) / sd;
  CHECK(r.p == doctest::Approx(std::erfc(z / std::sqrt(2.0))));
  CHECK(r.p < 1e-5);
}

TEST_CASE("summary formatting") {
  const std::vector<double> v{1.0, 3.0};
  const Summary s = summarize(v);
  CHECK(s.mean == 2.0);
  CHECK(s.std == 1.0);
  CHECK(format_mean_std(s) == "2.00 ± 1.00");
}
