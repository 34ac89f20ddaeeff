#include "quadfit/losses.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>
#include <fstream>
#include <string>

#include "quadfit/error.hpp"

namespace quadfit {

void validate_weights(const LossWeights& w) {
  for (double v : {w.kp, w.sil, w.beta_prior, w.theta_prior, w.smooth_gamma, w.smooth_global, w.smooth_joints})
    if (!(v >= 0.0) || !std::isfinite(v)) throw Error(Errc::invalid_argument, "loss weights must be non-negative");
}

ad::Var keypoint_loss(const ad::Var& pred, std::span<const double> gt, std::span<const double> conf, double sigma_gm,
                      double w) {
  const int n = pred.rows();
  if (pred.cols() != 2 || gt.size() != 2 * static_cast<size_t>(n) || conf.size() != static_cast<size_t>(n))
    throw Error(Errc::shape_error, "keypoint arrays disagree");
  std::vector<double> lam2(conf.size());
  double norm = 0.0;
  for (size_t i = 0; i < conf.size(); ++i) {
    lam2[i] = conf[i] * conf[i];
    norm += lam2[i];
  }
  if (!(norm > 0.0)) throw Error(Errc::no_supervision, "all keypoint confidences are zero");
  ad::Tape& tape = pred.tape();
  const ad::Var diff = pred - tape.constant(std::vector<double>(gt.begin(), gt.end()), n, 2);
  const ad::Var rho = ad::geman_mcclure_sq(ad::sum_cols(ad::square(diff)), sigma_gm);
  return ad::dot(rho, tape.constant(std::move(lam2), n, 1)) * (w / norm);
}

double keypoint_loss(std::span<const double> pred, std::span<const double> gt, std::span<const double> conf,
                     double sigma_gm, double w) {
  ad::Tape tape;
  const int n = static_cast<int>(pred.size() / 2);
  return keypoint_loss(tape.constant(std::vector<double>(pred.begin(), pred.end()), n, 2), gt, conf, sigma_gm, w)
      .item();
}

ad::Var silhouette_loss(ad::Tape& tape, const std::vector<ad::Var>& pred, const std::vector<Mask>& gt,
                        const std::vector<bool>& valid, double w, int* skipped) {
  if (pred.size() != gt.size() || valid.size() != gt.size()) throw Error(Errc::shape_error, "mask sequence lengths");
  std::vector<ad::Var> terms;
  int skip = 0;
  for (size_t t = 0; t < pred.size(); ++t) {
    if (pred[t].rows() != gt[t].height || pred[t].cols() != gt[t].width)
      throw Error(Errc::shape_error, "mask resolution mismatch at frame " + std::to_string(t));
    if (!valid[t]) {
      ++skip;
      continue;
    }
    const ad::Var target = tape.constant(gt[t].values, gt[t].height, gt[t].width);
    terms.push_back(ad::mean(ad::smooth_l1(pred[t] - target, 1.0)));
  }
  if (skipped) *skipped = skip;
  if (terms.empty()) return tape.constant(0.0);
  return ad::sum(ad::concat_rows(terms)) * w;
}

double silhouette_loss(const std::vector<Mask>& pred, const std::vector<Mask>& gt, const std::vector<bool>& valid,
                       double w, int* skipped) {
  ad::Tape tape;
  std::vector<ad::Var> p;
  for (const Mask& m : pred) p.push_back(tape.constant(m.values, m.height, m.width));
  return silhouette_loss(tape, p, gt, valid, w, skipped).item();
}

ad::Var smoothness_loss(const ad::Var& chi, double w, int n) {
  const int t = chi.rows();
  if (t < 3) throw Error(Errc::sequence_too_short, "need at least 3 frames, got " + std::to_string(t));
  const int norm_n = n > 0 ? n : t;
  const ad::Var d2 = ad::slice_rows(chi, 2, t - 2) - 2.0 * ad::slice_rows(chi, 1, t - 2) + ad::slice_rows(chi, 0, t - 2);
  return ad::sum(ad::square(d2)) * (w / (static_cast<double>(norm_n) * (t - 2)));
}

double smoothness_loss(std::span<const double> chi, int frames, double w, int n) {
  if (frames <= 0 || chi.size() % static_cast<size_t>(frames) != 0) throw Error(Errc::shape_error, "chi must be T x D");
  ad::Tape tape;
  const int d = static_cast<int>(chi.size() / static_cast<size_t>(frames));
  return smoothness_loss(tape.constant(std::vector<double>(chi.begin(), chi.end()), frames, d), w, n).item();
}

GaussianPrior::GaussianPrior(std::span<const double> mu, std::span<const double> cov) : mean(mu.begin(), mu.end()) {
  const int d = static_cast<int>(mu.size());
  if (cov.size() != static_cast<size_t>(d) * static_cast<size_t>(d)) throw Error(Errc::invalid_prior, "covariance size");
  Eigen::MatrixXd c(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) c(i, j) = cov[static_cast<size_t>(i * d + j)];
  if (!c.allFinite() || (c - c.transpose()).cwiseAbs().maxCoeff() > 1e-9 * (1.0 + c.cwiseAbs().maxCoeff()))
    throw Error(Errc::invalid_prior, "covariance must be symmetric");
  precision.assign(static_cast<size_t>(d) * static_cast<size_t>(d), 0.0);
  if (d == 0) return;
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(c);
  const Eigen::VectorXd ev = es.eigenvalues();
  if (!(ev.minCoeff() > 1e-12 * std::max(1.0, ev.maxCoeff())))
    throw Error(Errc::invalid_prior, "covariance is singular");
  const Eigen::MatrixXd p = es.eigenvectors() * ev.cwiseInverse().asDiagonal() * es.eigenvectors().transpose();
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) precision[static_cast<size_t>(i * d + j)] = 0.5 * (p(i, j) + p(j, i));
}

ad::Var mahalanobis_sq(const ad::Var& x, const GaussianPrior& prior) {
  const int d = prior.dim();
  if (x.cols() != d) throw Error(Errc::shape_error, "prior dimension mismatch");
  ad::Tape& tape = x.tape();
  const ad::Var diff = x - tape.constant(prior.mean, 1, d);
  const ad::Var p = tape.constant(prior.precision, d, d);
  return ad::sum(diff * ad::matmul(diff, p)) * (1.0 / x.rows());
}

ad::Var prior_loss(const ad::Var& beta, const ad::Var& theta_joints, const MeshModel& model, double w_beta,
                   double w_theta) {
  const int pd = model.pose_dim();
  if (beta.size() != model.num_shape()) throw Error(Errc::shape_error, "beta dimension");
  if (theta_joints.size() % pd != 0) throw Error(Errc::shape_error, "theta_joints dimension");
  const GaussianPrior shape(model.shape_mean, model.shape_cov);
  const GaussianPrior pose(model.pose_mean, model.pose_cov);
  const ad::Var b = mahalanobis_sq(ad::reshape(beta, 1, model.num_shape()), shape);
  const ad::Var th = mahalanobis_sq(ad::reshape(theta_joints, theta_joints.size() / pd, pd), pose);
  return b * w_beta + th * w_theta;
}

double prior_loss(std::span<const double> beta, std::span<const double> theta_joints, const MeshModel& model,
                  double w_beta, double w_theta) {
  ad::Tape tape;
  const auto b = tape.constant(std::vector<double>(beta.begin(), beta.end()), static_cast<int>(beta.size()), 1);
  const auto th = tape.constant(std::vector<double>(theta_joints.begin(), theta_joints.end()),
                                static_cast<int>(theta_joints.size()), 1);
  return prior_loss(b, th, model, w_beta, w_theta).item();
}

LossReport total_loss(double l_kp, double l_sil, double l_smooth, double l_prior) {
  LossReport r;
  r.l_kp = l_kp;
  r.l_sil = l_sil;
  r.l_smooth = l_smooth;
  r.l_prior = l_prior;
  r.total = l_kp + l_sil + l_smooth + l_prior;
  return r;
}

void write_loss_csv(const std::vector<LossReport>& trace, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(Errc::io_error, "cannot write " + path.string());
  out.precision(17);
  out << "step,l_kp,l_sil,l_smooth,l_prior,total\n";
  for (size_t i = 0; i < trace.size(); ++i) {
    const LossReport& r = trace[i];
    out << i << ',' << r.l_kp << ',' << r.l_sil << ',' << r.l_smooth << ',' << r.l_prior << ',' << r.total << '\n';
  }
}

}  // namespace quadfit
