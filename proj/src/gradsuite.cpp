#include "quadfit/gradsuite.hpp"

#include <random>

#include "quadfit/camera.hpp"
#include "quadfit/fusion.hpp"
#include "quadfit/losses.hpp"
#include "quadfit/render.hpp"
#include "quadfit/synth.hpp"

namespace quadfit {

namespace {

using Rng = std::mt19937_64;

std::vector<double> uniform(Rng& rng, size_t n, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (double& x : v) x = u(rng);
  return v;
}

std::vector<double> normal(Rng& rng, size_t n, double sigma) {
  std::normal_distribution<double> g(0.0, sigma);
  std::vector<double> v(n);
  for (double& x : v) x = g(rng);
  return v;
}

// Scalar read-out sum(w . x) so every output entry gets a distinct adjoint.
ad::Var weighted_sum(ad::Tape& tape, const ad::Var& x, const std::vector<double>& w) {
  return ad::sum(x * tape.constant(w, x.rows(), x.cols()));
}

}  // namespace

std::vector<GradCase> run_gradient_suite(const MeshModel& model, int configs_per_op, std::uint64_t seed) {
  std::vector<GradCase> out;
  Rng rng(seed);
  const int s = model.num_shape(), pd = model.pose_dim(), nv = model.num_vertices();
  auto check = [&](const std::string& op, int config, double tol, const opt::LossFn& f, const std::vector<double>& x,
                   double kink_fraction = 0.0) {
    opt::GradCheckOptions o;
    o.tol = tol;
    o.kink_fraction = kink_fraction;
    o.seed = seed ^ (static_cast<std::uint64_t>(config) * 0x9e3779b97f4a7c15ULL + out.size());
    out.push_back({op, config, tol, opt::check_gradient(f, x, o)});
  };

  for (int c = 0; c < configs_per_op; ++c) {
    const auto w = normal(rng, static_cast<size_t>(3 * nv), 1.0);
    auto x = normal(rng, static_cast<size_t>(s), 1.0);
    const auto g = normal(rng, 3, 0.8), j = normal(rng, static_cast<size_t>(pd), 0.4);
    x.insert(x.end(), g.begin(), g.end());
    x.insert(x.end(), j.begin(), j.end());
    check("pose_mesh", c, 1e-4, [&](ad::Tape& tape, const ad::Var& p) {
      const ad::Var v = pose_mesh(model, ad::slice_rows(p, 0, s), ad::reshape(ad::slice_rows(p, s, 3), 1, 3),
                                  ad::reshape(ad::slice_rows(p, s + 3, pd), pd / 3, 3));
      return weighted_sum(tape, v, w);
    }, x);
  }

  for (int c = 0; c < configs_per_op; ++c) {
    const int n = 4 + c % 9;
    const double focal = std::uniform_real_distribution<double>(500.0, 5000.0)(rng);
    const std::array<double, 2> principal{std::uniform_real_distribution<double>(0.0, 2000.0)(rng),
                                          std::uniform_real_distribution<double>(0.0, 1200.0)(rng)};
    auto x = uniform(rng, static_cast<size_t>(3 * n), -1.0, 1.0);
    auto t = uniform(rng, 3, -0.5, 0.5);
    t[2] = std::uniform_real_distribution<double>(5.0, 40.0)(rng);
    x.insert(x.end(), t.begin(), t.end());
    const auto w = normal(rng, static_cast<size_t>(2 * n), 1.0);
    check("project_points", c, 1e-4, [&, n, focal, principal](ad::Tape& tape, const ad::Var& p) {
      const ad::Var uv = project_points(ad::reshape(ad::slice_rows(p, 0, 3 * n), n, 3), focal,
                                        ad::reshape(ad::slice_rows(p, 3 * n, 3), 1, 3), principal);
      return weighted_sum(tape, uv, w);
    }, x);
  }

  for (int c = 0; c < configs_per_op; ++c) {
    const int n = 5 + c % 30;
    const auto gt = uniform(rng, static_cast<size_t>(2 * n), 0.0, 1920.0);
    auto conf = uniform(rng, static_cast<size_t>(n), 0.0, 1.0);
    for (size_t i = 0; i < conf.size(); i += 4) conf[i] = 0.0;
    conf[1] = 1.0;
    auto x = normal(rng, static_cast<size_t>(2 * n), 80.0);
    for (size_t i = 0; i < x.size(); ++i) x[i] += gt[i];
    const double sigma = std::uniform_real_distribution<double>(10.0, 100.0)(rng);
    check("keypoint_loss", c, 1e-4, [&, n, gt, conf, sigma](ad::Tape&, const ad::Var& p) {
      return keypoint_loss(ad::reshape(p, n, 2), gt, conf, sigma, 0.5);
    }, x);
  }

  for (int c = 0; c < configs_per_op; ++c) {
    const int t = 1 + c % 4, h = 6 + c % 5, wd = 5 + c % 7;
    std::vector<Mask> gt;
    std::vector<bool> valid;
    for (int i = 0; i < t; ++i) {
      Mask m(wd, h);
      for (double& v : m.values) v = std::bernoulli_distribution(0.4)(rng) ? 1.0 : 0.0;
      gt.push_back(m);
      valid.push_back(i == 0 || std::bernoulli_distribution(0.7)(rng));
    }
    const auto x = uniform(rng, static_cast<size_t>(t * h * wd), -0.5, 1.5);
    check("silhouette_loss", c, 1e-4, [&, t, h, wd, gt, valid](ad::Tape& tape, const ad::Var& p) {
      std::vector<ad::Var> pred;
      for (int i = 0; i < t; ++i) pred.push_back(ad::reshape(ad::slice_rows(p, i * h * wd, h * wd), h, wd));
      return silhouette_loss(tape, pred, gt, valid, 2.0);
    }, x);
  }

  for (int c = 0; c < configs_per_op; ++c) {
    const int t = 3 + c % 6, d = 1 + c % 9;
    const auto x = normal(rng, static_cast<size_t>(t * d), 1.0);
    check("smoothness_loss", c, 1e-4, [t, d](ad::Tape&, const ad::Var& p) {
      return smoothness_loss(ad::reshape(p, t, d), 0.7);
    }, x);
  }

  for (int c = 0; c < configs_per_op; ++c) {
    const int t = 1 + c % 5;
    auto x = normal(rng, static_cast<size_t>(s), 1.0);
    const auto j = normal(rng, static_cast<size_t>(t * pd), 0.3);
    x.insert(x.end(), j.begin(), j.end());
    check("prior_loss", c, 1e-4, [&, t](ad::Tape&, const ad::Var& p) {
      return prior_loss(ad::slice_rows(p, 0, s), ad::reshape(ad::slice_rows(p, s, t * pd), t, pd), model, 0.3, 0.02);
    }, x);
  }

  for (int c = 0; c < configs_per_op; ++c) {
    const int res = 16 + 4 * (c % 3);
    const double sigma = 0.5 + 0.1 * (c % 4);
    const auto verts = pose_mesh(model, normal(rng, static_cast<size_t>(s), 0.5), normal(rng, 3, 0.3),
                                 normal(rng, static_cast<size_t>(pd), 0.15));
    const double sc = std::uniform_real_distribution<double>(0.45, 0.8)(rng);
    const auto gamma = crop_translation(sc, std::uniform_real_distribution<double>(-0.1, 0.1)(rng),
                                        std::uniform_real_distribution<double>(-0.1, 0.1)(rng));
    std::vector<double> x(gamma.begin(), gamma.end());
    x.insert(x.end(), verts.begin(), verts.end());
    const auto w = normal(rng, static_cast<size_t>(res * res), 1.0);
    check("rasterize_soft", c, 1e-3, [&, res, sigma](ad::Tape& tape, const ad::Var& p) {
      const ad::Var m = rasterize_soft(ad::reshape(ad::slice_rows(p, 3, 3 * nv), nv, 3), model.faces,
                                       ad::reshape(ad::slice_rows(p, 0, 3), 1, 3), res, sigma);
      return weighted_sum(tape, m, w);
    }, x, 0.1);
  }

  {
    std::vector<ClipRecord> clips;
    for (int i = 0; i < 3; ++i) {
      SynthConfig sc;
      sc.gait = static_cast<Gait>(i);
      sc.seed = seed + static_cast<std::uint64_t>(i);
      sc.crops = false;
      clips.push_back(make_clips(synth_sequence(model, sc), 5).front());
    }
    LossWeights lw;
    lw.sil = 0.0;
    for (int c = 0; c < 3 * configs_per_op; ++c) {
      const Variant v = static_cast<Variant>(c % 3);
      EncoderConfig cfg;
      cfg.hidden = {16};
      cfg.feature_dim = 8;
      cfg.head_hidden = 12;
      cfg.group_norm = c % 2 == 1;
      cfg.groups = 4;
      TrainConfig tc;
      tc.encoder = cfg;
      const RegressorParams params = init_params(cfg, v, model, seed + static_cast<std::uint64_t>(c));
      const ClipRecord& clip = clips[static_cast<size_t>(c) % clips.size()];
      check(std::string("encoder_") + std::string(variant_name(v)), c, 1e-4,
            [&, tc](ad::Tape& tape, const ad::Var& p) {
              const NetView net(tape, params, p);
              return clip_loss(net, clip, model, lw, tc, static_cast<std::uint64_t>(c));
            },
            params.values);
    }
  }
  return out;
}

}  // namespace quadfit
