// Acceptance run: one PASS/FAIL line per criterion.

#include <CLI11.hpp>
#include <json.hpp>

#include <Eigen/Geometry>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "quadfit/audio.hpp"
#include "quadfit/camera.hpp"
#include "quadfit/dataset.hpp"
#include "quadfit/fit.hpp"
#include "quadfit/fusion.hpp"
#include "quadfit/gradsuite.hpp"
#include "quadfit/metrics.hpp"
#include "quadfit/synth.hpp"

namespace fs = std::filesystem;
using namespace quadfit;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// ---- 1 ----

Outcome gradient_suite() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto cases = run_gradient_suite(bundled_toy_model(), 20, 0);
  const double sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  int failed = 0, kinks = 0;
  double worst = 0.0, worst_raster = 0.0;
  for (const auto& c : cases) {
    failed += !c.report.passed;
    kinks += c.report.kinks;
    (c.op == "rasterize_soft" ? worst_raster : worst) =
        std::max(c.op == "rasterize_soft" ? worst_raster : worst, c.report.max_rel_error);
  }
  return {failed == 0 && sec < 120.0,
          fmt("%zu checks, %d failed; max rel err %.2e (tol 1e-4), rasterizer %.2e (tol 1e-3), %d kink samples; %.1f s",
              cases.size(), failed, worst, worst_raster, kinks, sec)};
}

// ---- 2 ----

Outcome camera_identity() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(2);
  auto u = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const double w = u(320, 4096), h = u(240, 2160);
    const BBox box{u(0, w), u(0, h), u(40, 0.9 * std::min(w, h)), w, h};
    const double s = u(0.5, 2.0), px = u(-1, 1), py = u(-1, 1);
    const std::vector<double> pt{u(-1.5, 1.5), u(-1.5, 1.5), 0.0};
    const auto c = project_points(pt, kCropFocal, crop_translation(s, px, py), crop_principal());
    const auto via_crop = crop_to_full({c[0], c[1]}, box);
    const auto direct = project_points(pt, focal_full(w, h), full_camera_translation(s, px, py, box), full_principal(box));
    worst = std::max({worst, std::abs(via_crop[0] - direct[0]), std::abs(via_crop[1] - direct[1])});
  }
  const double sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {worst < 1e-3 && sec < 1.0, fmt("1000 draws, max discrepancy %.3e px; %.3f s", worst, sec)};
}

// ---- 3 ----

Outcome formula_spots() {
  const double f = focal_full(3840, 2160);
  const auto g = crop_translation(1.0, 0.0, 0.0);
  bool ok = std::abs(f - 4405.81) <= 0.01 && std::abs(g[0]) <= 1e-5 && std::abs(g[1]) <= 1e-5 &&
            std::abs(g[2] - 44.642857) <= 1e-5 && kFuseGamma == 2.78;
  // Disjoint boxes keep the keypoint box.
  const Rect sil{100, 100, 200, 200};
  const Rect far{300, 300, 350, 350};
  const Rect a = fuse_bbox(far, sil);
  ok = ok && a.x0 == far.x0 && a.y0 == far.y0 && a.x1 == far.x1 && a.y1 == far.y1;
  // Overlapping, keypoint box more than 2.78 times the silhouette box.
  const Rect big{120, 120, 120 + 100 * std::sqrt(2.9), 120 + 100 * std::sqrt(2.9)};
  const Rect b = fuse_bbox(big, sil);
  ok = ok && b.x0 == big.x0 && b.y0 == big.y0 && b.x1 == big.x1 && b.y1 == big.y1;
  // Overlapping and at most 2.78 times: the union.
  const Rect mid{150, 150, 150 + 100 * std::sqrt(2.7), 150 + 100 * std::sqrt(2.7)};
  const Rect c = fuse_bbox(mid, sil);
  ok = ok && c.x0 == 100 && c.y0 == 100 && c.x1 == mid.x1 && c.y1 == mid.y1;
  // Random boxes against the rule restated.
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> pos(0, 400), size(5, 300);
  int mismatches = 0;
  for (int i = 0; i < 2000; ++i) {
    auto rnd = [&] {
      const double x = pos(rng), y = pos(rng);
      return Rect{x, y, x + size(rng), y + size(rng)};
    };
    const Rect kp = rnd(), sl = rnd();
    const bool overlap = kp.x0 < sl.x1 && sl.x0 < kp.x1 && kp.y0 < sl.y1 && sl.y0 < kp.y1;
    const Rect want = (!overlap || kp.area() > 2.78 * sl.area())
                          ? kp
                          : Rect{std::min(kp.x0, sl.x0), std::min(kp.y0, sl.y0), std::max(kp.x1, sl.x1), std::max(kp.y1, sl.y1)};
    const Rect got = fuse_bbox(kp, sl);
    mismatches += got.x0 != want.x0 || got.y0 != want.y0 || got.x1 != want.x1 || got.y1 != want.y1;
  }
  ok = ok && mismatches == 0;
  return {ok, fmt("focal_full %.4f, crop tz %.6f, fuse_bbox three cases ok, %d/2000 random mismatches", f, g[2], mismatches)};
}

// ---- 4 ----

double enumerate_wilcoxon(const std::vector<double>& ranks, double w_obs) {
  const int n = static_cast<int>(ranks.size());
  double total = 0.0;
  for (double r : ranks) total += r;
  long hits = 0;
  for (long m = 0; m < (1L << n); ++m) {
    double w = 0.0;
    for (int i = 0; i < n; ++i)
      if (m & (1L << i)) w += ranks[static_cast<size_t>(i)];
    if (std::abs(w - total / 2) >= std::abs(w_obs - total / 2) - 1e-12) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(1L << n);
}

Outcome metric_oracles() {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> g;
  double proc_err = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 3 + trial % 30;
    std::vector<double> x(static_cast<size_t>(3 * n)), y(x.size());
    for (double& v : x) v = g(rng);
    const Eigen::Matrix3d R =
        Eigen::AngleAxisd(std::uniform_real_distribution<double>(-3.1, 3.1)(rng), Eigen::Vector3d(g(rng), g(rng), g(rng)).normalized())
            .toRotationMatrix();
    const double s = std::uniform_real_distribution<double>(0.2, 5.0)(rng);
    const Eigen::Vector3d t(5 * g(rng), 5 * g(rng), 5 * g(rng));
    for (int i = 0; i < n; ++i) {
      const Eigen::Vector3d p = s * R * Eigen::Vector3d(x[3 * i], x[3 * i + 1], x[3 * i + 2]) + t;
      for (int k = 0; k < 3; ++k) y[static_cast<size_t>(3 * i + k)] = p[k];
    }
    const Similarity sim = procrustes_align(x, y);
    proc_err = std::max(proc_err, std::abs(sim.s - s));
    for (int i = 0; i < 3; ++i) {
      proc_err = std::max(proc_err, std::abs(sim.t[static_cast<size_t>(i)] - t[i]));
      for (int j = 0; j < 3; ++j) proc_err = std::max(proc_err, std::abs(sim.R[static_cast<size_t>(3 * i + j)] - R(i, j)));
    }
  }

  // Untied samples: the null distribution of W+ by counting subsets of
  // {1..n} per rank sum. Tied samples: brute force over sign patterns.
  double wil_err = 0.0;
  int wil_cases = 0;
  for (int n = 5; n <= 12; ++n)
    for (int trial = 0; trial < 10; ++trial, ++wil_cases) {
      const bool tied = trial % 2 == 1;
      std::vector<double> a(static_cast<size_t>(n)), b(a.size()), d(a.size()), ranks(a.size());
      for (size_t i = 0; i < a.size(); ++i) {
        a[i] = g(rng);
        b[i] = a[i] + (tied ? (std::uniform_int_distribution<int>(-4, 4)(rng) + 0.5) * 0.25 : g(rng) + 0.3);
        d[i] = a[i] - b[i];
      }
      double w = 0.0;
      for (size_t i = 0; i < d.size(); ++i) {
        double less = 0, equal = 0;
        for (size_t j = 0; j < d.size(); ++j) {
          less += std::abs(d[j]) < std::abs(d[i]);
          equal += std::abs(d[j]) == std::abs(d[i]);
        }
        ranks[i] = less + (equal + 1) / 2;
        if (d[i] > 0) w += ranks[i];
      }
      double p_ref;
      if (tied) {
        p_ref = enumerate_wilcoxon(ranks, w);
      } else {
        const int top = n * (n + 1) / 2;
        std::vector<double> count(static_cast<size_t>(top) + 1, 0.0);
        count[0] = 1.0;
        for (int k = 1; k <= n; ++k)
          for (int s = top; s >= k; --s) count[static_cast<size_t>(s)] += count[static_cast<size_t>(s - k)];
        double hits = 0.0;
        for (int s = 0; s <= top; ++s)
          if (std::abs(s - top / 2.0) >= std::abs(w - top / 2.0) - 1e-12) hits += count[static_cast<size_t>(s)];
        p_ref = hits / std::ldexp(1.0, n);
      }
      const auto r = wilcoxon_signed_rank(a, b);
      wil_err = std::max({wil_err, std::abs(r.p - p_ref), std::abs(r.statistic - w), r.exact ? 0.0 : 1.0});
    }

  Mask e1(4, 2), e2(4, 2);
  const double iou_empty = iou_masks(e1, e2);
  Mask c(4, 2), d(4, 2), far(4, 2);
  c.at(0, 0) = c.at(1, 0) = c.at(0, 1) = c.at(1, 1) = 1.0;
  d.at(1, 0) = d.at(2, 0) = d.at(1, 1) = d.at(2, 1) = 1.0;
  far.at(3, 0) = far.at(3, 1) = 1.0;
  const double iou_same = iou_masks(c, c), iou_disjoint = iou_masks(c, far), iou_third = iou_masks(c, d);
  const bool iou_ok = iou_empty == 1.0 && iou_same == 1.0 && iou_disjoint == 0.0 && iou_third == 1.0 / 3.0;
  return {proc_err < 1e-8 && wil_err < 1e-12 && iou_ok,
          fmt("procrustes max err %.2e over 200 transforms; wilcoxon vs exact null distribution max diff %.1e over %d cases "
              "(N=5..12); IoU %.0f / %.0f / %.17g",
              proc_err, wil_err, wil_cases, iou_same, iou_disjoint, iou_third)};
}

// ---- 5 ----

Outcome fitting_recovery() {
  const auto t0 = std::chrono::steady_clock::now();
  const MeshModel m = bundled_toy_model();
  const double limit = 0.1 * body_length(m);
  int ok = 0;
  std::vector<double> before, after;
  for (int i = 0; i < 20; ++i) {
    const ClipRecord c = synth_gait(m, static_cast<Gait>(i % 3), 5, 25.0, 100 + static_cast<std::uint64_t>(i));
    PoseState init = *c.gt_pose;
    std::mt19937_64 rng(static_cast<std::uint64_t>(i));
    std::normal_distribution<double> n(0.0, 0.2);
    for (double& x : init.theta_joints) x += n(rng);
    before.push_back(p_mpjpe(pose_keypoints3d(m, init), c.gt_keypoints3d, 5).summary.mean);
    const FitResult r = fit_sequence(c, m, init, LossWeights{}, 100);
    after.push_back(p_mpjpe(pose_keypoints3d(m, r.pose), c.gt_keypoints3d, 5).summary.mean);
    ok += after.back() < limit && after.back() < before.back();
  }
  const double sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {ok >= 18 && sec < 600.0,
          fmt("%d/20 clips below %.4f (10%% of body length) and below their start; P-MPJPE %.4f at init -> %.4f fitted "
              "(worst %.4f); %.1f s",
              ok, limit, summarize(before).mean, summarize(after).mean, *std::max_element(after.begin(), after.end()),
              sec)};
}

// ---- 6 ----

Outcome fusion_direction(int seeds, int epochs) {
  const auto t0 = std::chrono::steady_clock::now();
  const MeshModel m = bundled_toy_model();
  std::vector<ClipRecord> train_set, test, occluded;
  for (int s = 0; s < 40; ++s) {
    SynthConfig c;
    c.gait = static_cast<Gait>(s % 3);
    c.seed = 5000 + static_cast<std::uint64_t>(s);
    c.frames = 9;
    c.crops = false;
    for (auto& clip : make_clips(synth_sequence(m, c), 5)) train_set.push_back(std::move(clip));
  }
  const char* legs[4] = {"front_left_leg", "front_right_leg", "hind_left_leg", "hind_right_leg"};
  for (int s = 0; s < 40; ++s) {
    SynthConfig c;
    c.gait = static_cast<Gait>(s % 3);
    c.seed = 9000 + static_cast<std::uint64_t>(s);
    c.crops = false;
    test.push_back(make_clips(synth_sequence(m, c), 5).front());
    OccluderSpec o;
    o.anchor = legs[s % 4];
    o.size = 0.05;
    o.seed = static_cast<std::uint64_t>(s);
    occluded.push_back(apply_occluder(test.back(), m, o));
  }
  LossWeights w;
  w.sil = 0.0;
  std::vector<std::vector<double>> clean(3), occ(3);
  for (int seed = 0; seed < seeds; ++seed)
    for (int v = 0; v < 3; ++v) {
      TrainConfig tc;
      tc.epochs = epochs;
      tc.seed = static_cast<std::uint64_t>(seed);
      const TrainResult r = train(train_set, static_cast<Variant>(v), m, w, tc);
      for (size_t i = 0; i < test.size(); ++i) {
        clean[v].push_back(p_mpjpe(pose_keypoints3d(m, forward(test[i], r.params, i).pose), test[i].gt_keypoints3d, 5).summary.mean);
        occ[v].push_back(p_mpjpe(pose_keypoints3d(m, forward(occluded[i], r.params, i).pose), occluded[i].gt_keypoints3d, 5).summary.mean);
      }
    }
  const double sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  double cm[3], om[3];
  for (int v = 0; v < 3; ++v) cm[v] = summarize(clean[v]).mean, om[v] = summarize(occ[v]).mean;
  const auto wx = wilcoxon_signed_rank(occ[2], occ[0]);
  const double spread = std::max({cm[0], cm[1], cm[2]}) / std::min({cm[0], cm[1], cm[2]});
  const bool pass = om[2] < om[0] && wx.p < 0.05 && spread <= 1.2 && sec < 1800.0;
  return {pass, fmt("%d seeds x 40 test clips; occluded P-MPJPE image %.4f early %.4f model %.4f, Wilcoxon model vs image "
                    "p=%.2e (n=%d); clean image %.4f early %.4f model %.4f, max/min %.3f; %.0f s",
                    seeds, om[0], om[1], om[2], wx.p, wx.n, cm[0], cm[1], cm[2], spread, sec)};
}

// ---- 7 ----

Outcome audio_invariants() {
  const audio::MelConfig cfg;
  const audio::AudioTrack silent{std::vector<double>(44100, 0.0), 44100.0};
  const audio::Spectrogram s = audio::log_mel(silent, cfg);
  bool silence_ok = s.frames > 0;
  for (double v : s.values) silence_ok = silence_ok && v == std::log(cfg.floor);

  std::mt19937_64 rng(7);
  std::normal_distribution<double> g(0.0, 0.1);
  audio::AudioTrack base{std::vector<double>(20000), 44100.0};
  for (double& v : base.samples) v = g(rng);
  const audio::Spectrogram s0 = audio::log_mel(base, cfg);
  double shift_err = 0.0;
  for (double a : {0.5, 3.0, 1e-3}) {
    audio::AudioTrack scaled = base;
    for (double& v : scaled.samples) v *= a;
    const audio::Spectrogram s1 = audio::log_mel(scaled, cfg);
    for (size_t i = 0; i < s0.values.size(); ++i)
      if (s0.values[i] > std::log(cfg.floor) && s1.values[i] > std::log(cfg.floor))
        shift_err = std::max(shift_err, std::abs(s1.values[i] - s0.values[i] - 2.0 * std::log(a)));
  }

  const auto edges = audio::mel_edges(cfg.fmin, cfg.fmax, cfg.n_mels);
  int wrong = 0, bands = 0;
  for (int band = 0; band < cfg.n_mels; ++band, ++bands) {
    const double hz = edges[static_cast<size_t>(band) + 1];
    audio::AudioTrack tone{std::vector<double>(11025), 44100.0};
    for (size_t i = 0; i < tone.samples.size(); ++i) tone.samples[i] = std::sin(2.0 * M_PI * hz * static_cast<double>(i) / 44100.0);
    const audio::Spectrogram st = audio::log_mel(tone, cfg);
    for (int t = 1; t + 1 < st.frames; ++t) {
      int best = 0;
      for (int k = 1; k < st.n_mels; ++k)
        if (st.at(k, t) > st.at(best, t)) best = k;
      if (best != band) {
        ++wrong;
        break;
      }
    }
  }
  return {silence_ok && shift_err < 1e-9 && wrong == 0,
          fmt("silence %s; 2 log a shift max err %.1e; tones at band centers peak in their band for %d/%d bands",
              silence_ok ? "uniform log floor" : "NOT uniform", shift_err, bands - wrong, bands)};
}

// ---- 8 ----

std::string manifest_artifacts(const fs::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) return {};
  return nlohmann::json::parse(in).at("artifacts").dump();
}

Outcome determinism(const std::string& cli) {
  if (cli.empty() || !fs::exists(cli)) return {false, "command-line tool not found; pass --cli"};
  const fs::path root = fs::temp_directory_path() / "quadfit_acceptance_det";
  fs::remove_all(root);
  auto run = [&](const std::string& args) {
    const std::string cmd = "\"" + cli + "\" " + args + " > /dev/null";
    return std::system(cmd.c_str()) == 0;
  };
  const std::string r = root.string();
  bool ok = true;
  for (const char* tag : {"a", "b"}) {
    const std::string t(tag);
    ok = ok && run("synth --gait mixed --sequences 2 --frames 7 --seed 11 --out " + r + "/synth_" + t);
    ok = ok && run("fit " + r + "/synth_a --iters 10 --seed 3 --occlude legs:0.1 --out " + r + "/fit_" + t);
    ok = ok && run("train " + r + "/synth_a --variant model --epochs 3 --seed 5 --out " + r + "/train_" + t);
  }
  if (!ok) return {false, "a command failed"};
  std::string detail;
  for (const char* cmd : {"synth", "fit", "train"}) {
    const std::string a = manifest_artifacts(root / (std::string(cmd) + "_a"));
    const std::string b = manifest_artifacts(root / (std::string(cmd) + "_b"));
    const bool same = !a.empty() && a == b;
    ok = ok && same;
    detail += std::string(detail.empty() ? "" : ", ") + cmd + (same ? " identical" : " DIFFERS");
  }
  fs::remove_all(root);
  return {ok, detail + " (artifact hashes of two runs)"};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"quadfit acceptance run"};
  std::vector<int> only;
  std::string cli;
  int seeds = 5, epochs = 60;
  app.add_option("--only", only, "criteria to run (default all)");
  app.add_option("--cli", cli, "path of the quadfit executable");
  app.add_option("--fusion-seeds", seeds)->capture_default_str();
  app.add_option("--fusion-epochs", epochs)->capture_default_str();
  CLI11_PARSE(app, argc, argv);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient suite", gradient_suite},
      {"camera identity", camera_identity},
      {"formula spot values", formula_spots},
      {"metric oracles", metric_oracles},
      {"fitting recovery", fitting_recovery},
      {"directional fusion result", [&] { return fusion_direction(seeds, epochs); }},
      {"audio invariants", audio_invariants},
      {"determinism", [&] { return determinism(cli); }},
  };
  bool all = true;
  for (size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    all = all && o.pass;
    std::printf("%s %d %s: %s\n", o.pass ? "PASS" : "FAIL", id, criteria[i].first.c_str(), o.detail.c_str());
    std::fflush(stdout);
  }
  return all ? 0 : 1;
}
