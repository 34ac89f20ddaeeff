#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "quadfit/autodiff.hpp"
#include "quadfit/body_model.hpp"
#include "quadfit/render.hpp"

namespace quadfit {

struct LossWeights {
  double kp = 0.001;
  double sil = 1e-4;
  double beta_prior = 50.0;
  double theta_prior = 0.01;
  double smooth_gamma = 0.1;
  double smooth_global = 0.2;
  double smooth_joints = 10.0;
};

void validate_weights(const LossWeights& w);

struct LossReport {
  double l_kp = 0.0;
  double l_sil = 0.0;
  double l_smooth = 0.0;
  double l_prior = 0.0;
  double total = 0.0;
  // Breakdown of the composite terms.
  double smooth_gamma = 0.0;
  double smooth_global = 0.0;
  double smooth_joints = 0.0;
  double prior_beta = 0.0;
  double prior_theta = 0.0;
  int sil_skipped = 0;
};

inline constexpr double kDefaultGemanMcClureSigma = 50.0;

// pred and gt are (T K) x 2, conf has T K entries. Returns
// w * sum(conf^2 rho(|pred - gt|)) / sum(conf^2).
ad::Var keypoint_loss(const ad::Var& pred, std::span<const double> gt, std::span<const double> conf, double sigma_gm,
                      double w);
double keypoint_loss(std::span<const double> pred, std::span<const double> gt, std::span<const double> conf,
                     double sigma_gm, double w);

// w * sum over valid frames of mean(smoothL1(pred_t - gt_t)). pred masks are
// H x W Vars; frames with valid[t] == false are skipped and counted.
ad::Var silhouette_loss(ad::Tape& tape, const std::vector<ad::Var>& pred, const std::vector<Mask>& gt,
                        const std::vector<bool>& valid, double w, int* skipped = nullptr);
double silhouette_loss(const std::vector<Mask>& pred, const std::vector<Mask>& gt, const std::vector<bool>& valid,
                       double w, int* skipped = nullptr);

// chi is T x D. w / (N (T - 2)) * sum_t |chi_t - 2 chi_{t-1} + chi_{t-2}|^2;
// n <= 0 means N = T.
ad::Var smoothness_loss(const ad::Var& chi, double w, int n = 0);
double smoothness_loss(std::span<const double> chi, int frames, double w, int n = 0);

// Gaussian prior stored as mean and precision; construction fails with
// "invalid prior" on a singular or non-symmetric covariance.
struct GaussianPrior {
  std::vector<double> mean;
  std::vector<double> precision;  // D x D

  GaussianPrior() = default;
  GaussianPrior(std::span<const double> mean, std::span<const double> cov);
  int dim() const { return static_cast<int>(mean.size()); }
};

// Squared Mahalanobis distance of each row of x (R x D), averaged over rows.
ad::Var mahalanobis_sq(const ad::Var& x, const GaussianPrior& prior);

// w_beta * M(beta) + w_theta * mean_t M(theta_joints[t]). theta_joints is
// T x 3(J-1) or a single 3(J-1) vector.
ad::Var prior_loss(const ad::Var& beta, const ad::Var& theta_joints, const MeshModel& model, double w_beta,
                   double w_theta);
double prior_loss(std::span<const double> beta, std::span<const double> theta_joints, const MeshModel& model,
                  double w_beta, double w_theta);

// Sums already-weighted terms.
LossReport total_loss(double l_kp, double l_sil, double l_smooth, double l_prior);

// One row per step: step,l_kp,l_sil,l_smooth,l_prior,total.
void write_loss_csv(const std::vector<LossReport>& trace, const std::filesystem::path& path);

}  // namespace quadfit
