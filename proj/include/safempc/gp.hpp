#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>
#include <vector>

#include "safempc/config.hpp"

namespace safempc::gp {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// Squared-exponential plus white-noise kernel
//   nu(a,b) = sigma1^2 exp(-|a-b|^2 / (2 ell^2)) + sigma2^2 [same index].
struct KernelHyp {
  double ell = 0.15;
  double sigma1 = 1.0;
  double sigma2 = 0.1;

  void validate() const {
    if (!(ell > 0) || !(sigma1 > 0) || sigma2 < 0)
      throw std::invalid_argument("gp: kernel hyperparameters out of range");
  }
};

// The Kronecker term keys on training-index identity, not coordinates.
double kernel(const Vec& a, const Vec& b, const KernelHyp& hyp, bool same_point);

// Observations (theta^i, ztilde^i); targets is n x n_c.
struct SafetyDataset {
  std::vector<Vec> inputs;
  Mat targets;

  int count() const { return static_cast<int>(inputs.size()); }
  std::string to_csv() const;
  static SafetyDataset from_csv(const std::string& text, int n_c);
};

struct GpModel {
  int constraint_index = 0;
  KernelHyp hyp;
  Mat train_x;     // n x d (normalized coordinates)
  Mat chol_lower;  // L with LL' = K + sigma2^2 I
  Vec alpha;       // (K + sigma2^2 I)^{-1} targets
  Vec targets;

  int count() const { return static_cast<int>(train_x.rows()); }
};

struct GpError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Cholesky fit of one constraint column; escalates jitter 1e-10 -> 1e-6 on
// factorization failure before giving up.
GpModel fit(const std::vector<Vec>& inputs, const Vec& targets, const KernelHyp& hyp,
            int constraint_index);

struct Prediction {
  double mu = 0.0;
  double var = 0.0;  // latent variance, observation noise excluded
};

Prediction predict(const GpModel& model, const Vec& query);

// Inverse standard normal CDF; |Phi(Phi^-1(beta)) - beta| <= 1e-10 via a
// rational initial guess polished with one Newton step on the erfc-based CDF.
double normal_quantile(double beta);
double normal_cdf(double x);

// Per-constraint surrogate set over normalized theta coordinates. An empty
// model list yields prior-only predictions (mean 0, std sigma1).
struct SafetySurrogate {
  std::vector<GpModel> models;  // one per constraint when fitted
  std::vector<KernelHyp> hyp;   // always n_c entries
  Vec scale;                    // per-coordinate normalization of theta
  int n_c = 0;

  bool fitted() const { return !models.empty(); }
  Vec normalize(const Vec& theta) const { return theta.cwiseQuotient(scale); }
};

struct GpConfig {
  double ell = 0.15;
  double sigma1_floor = 1e-2;
  double sigma2_ratio = 0.1;  // sigma2 = ratio * sigma1
  bool mll_refit = false;     // optional max-marginal-likelihood refit
  int mll_restarts = 5;
  int mll_iters = 60;
};

// Hyperparameters from the running statistics of the dataset (sigma1 =
// per-column std of ztilde, floored), then Cholesky fits for all columns.
// `parallel` switches the per-constraint loop to OpenMP.
SafetySurrogate fit_all(const SafetyDataset& data, const Vec& scale, const GpConfig& cfg,
                        bool parallel = true);
SafetySurrogate fit_all_serial(const SafetyDataset& data, const Vec& scale, const GpConfig& cfg);

// g_j(theta) = mu_j(theta) + Phi^-1(beta) sigma_j(theta); theta is in raw
// coordinates and is in the estimated safe set iff every entry is <= 0.
Vec safety_margin(const SafetySurrogate& sur, const Vec& theta, double beta);

// Analytic d g_j / d theta (n_c x d); sigma gradients are zeroed where
// sigma <= 1e-12.
Mat safety_margin_gradient(const SafetySurrogate& sur, const Vec& theta, double beta);

// Log marginal likelihood of one fitted model (used by the optional refit).
double log_marginal_likelihood(const std::vector<Vec>& inputs, const Vec& targets,
                               const KernelHyp& hyp);

GpConfig gp_config_from_config(const Config& cfg);

}  // namespace safempc::gp
