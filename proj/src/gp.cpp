#include "safempc/gp.hpp"

#include <omp.h>

#include <Eigen/Cholesky>

#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include "safempc/rng.hpp"

namespace safempc::gp {

double kernel(const Vec& a, const Vec& b, const KernelHyp& hyp, bool same_point) {
  hyp.validate();
  double d2 = (a - b).squaredNorm();
  double k = hyp.sigma1 * hyp.sigma1 * std::exp(-0.5 * d2 / (hyp.ell * hyp.ell));
  if (same_point) k += hyp.sigma2 * hyp.sigma2;
  return k;
}

GpModel fit(const std::vector<Vec>& inputs, const Vec& targets, const KernelHyp& hyp,
            int constraint_index) {
  hyp.validate();
  const int n = static_cast<int>(inputs.size());
  if (n < 1) throw GpError("gp::fit: dataset must hold at least one observation");
  if (targets.size() != n) throw GpError("gp::fit: targets/inputs length mismatch");

  GpModel m;
  m.constraint_index = constraint_index;
  m.hyp = hyp;
  m.targets = targets;
  const int d = static_cast<int>(inputs[0].size());
  m.train_x.resize(n, d);
  for (int i = 0; i < n; ++i) m.train_x.row(i) = inputs[i];

  Mat K(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j <= i; ++j) {
      double v = kernel(inputs[i], inputs[j], hyp, i == j);
      K(i, j) = v;
      K(j, i) = v;
    }

  double jitter = 0.0;
  for (int attempt = 0; attempt <= 5; ++attempt) {
    Eigen::LLT<Mat> llt(K + jitter * Mat::Identity(n, n));
    if (llt.info() == Eigen::Success) {
      m.chol_lower = llt.matrixL();
      m.alpha = llt.solve(targets);
      return m;
    }
    jitter = attempt == 0 ? 1e-10 : jitter * 10.0;
    if (jitter > 1e-6) break;
  }
  throw GpError("gp::fit: kernel matrix not positive definite after max jitter (constraint " +
                std::to_string(constraint_index) + ")");
}

Prediction predict(const GpModel& model, const Vec& query) {
  const int n = model.count();
  Vec kstar(n);
  for (int i = 0; i < n; ++i)
    kstar[i] = kernel(model.train_x.row(i).transpose(), query, model.hyp, false);
  Prediction out;
  out.mu = kstar.dot(model.alpha);
  Vec v = model.chol_lower.triangularView<Eigen::Lower>().solve(kstar);
  double prior = model.hyp.sigma1 * model.hyp.sigma1;  // latent prior variance
  out.var = std::max(0.0, prior - v.squaredNorm());
  return out;
}

namespace {

// Acklam's rational approximation to the inverse normal CDF.
double quantile_seed(double p) {
  static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                             -2.759285104469687e+02, 1.383577518672690e+02,
                             -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                             -1.556989798598866e+02, 6.680131188771972e+01,
                             -1.328068155288572e+01};
  static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                             -2.400758277161838e+00, -2.549732539343734e+00,
                             4.374664141464968e+00,  2.938163982698783e+00};
  static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                             2.445134137142996e+00, 3.754408661907416e+00};
  const double plow = 0.02425, phigh = 1 - plow;
  double q, r;
  if (p < plow) {
    q = std::sqrt(-2 * std::log(p));
    return (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
           ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
  }
  if (p > phigh) {
    q = std::sqrt(-2 * std::log(1 - p));
    return -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
           ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
  }
  q = p - 0.5;
  r = q * q;
  return (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
         (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1);
}

}  // namespace

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

double normal_quantile(double beta) {
  if (!(beta > 0.0 && beta < 1.0))
    throw std::invalid_argument("normal_quantile: beta must lie in (0, 1)");
  double x = quantile_seed(beta);
  // One Newton polish on Phi(x) - beta = 0.
  static const double inv_sqrt_2pi = 0.3989422804014327;
  double pdf = inv_sqrt_2pi * std::exp(-0.5 * x * x);
  if (pdf > 0) x -= (normal_cdf(x) - beta) / pdf;
  return x;
}

namespace {

KernelHyp column_hyp(const SafetyDataset& data, int j, const GpConfig& cfg) {
  KernelHyp hyp;
  hyp.ell = cfg.ell;
  const int n = data.count();
  double sd = 0.0;
  if (n >= 2) {
    double mean = data.targets.col(j).mean();
    sd = std::sqrt((data.targets.col(j).array() - mean).square().sum() / (n - 1));
  }
  hyp.sigma1 = std::max(sd, cfg.sigma1_floor);
  hyp.sigma2 = cfg.sigma2_ratio * hyp.sigma1;
  return hyp;
}

// Multi-start gradient-free coordinate refinement of the log marginal
// likelihood in log-hyperparameter space.
KernelHyp mll_refit(const std::vector<Vec>& inputs, const Vec& targets, const KernelHyp& start,
                    const GpConfig& cfg, std::uint64_t seed) {
  KernelHyp best = start;
  double best_mll = log_marginal_likelihood(inputs, targets, start);
  for (int restart = 0; restart < cfg.mll_restarts; ++restart) {
    double lell = std::log(start.ell) + (restart ? rng::uniform(seed, 3 * restart, -1.0, 1.0) : 0.0);
    double ls1 = std::log(start.sigma1) + (restart ? rng::uniform(seed, 3 * restart + 1, -1.0, 1.0) : 0.0);
    double ls2 = std::log(std::max(start.sigma2, 1e-4)) +
                 (restart ? rng::uniform(seed, 3 * restart + 2, -1.0, 1.0) : 0.0);
    double step = 0.3;
    double cur = -std::numeric_limits<double>::infinity();
    for (int it = 0; it < cfg.mll_iters && step > 1e-4; ++it) {
      bool improved = false;
      double* coords[3] = {&lell, &ls1, &ls2};
      for (double* c : coords) {
        for (double dir : {+1.0, -1.0}) {
          double save = *c;
          *c = save + dir * step;
          KernelHyp h{std::exp(lell), std::exp(ls1), std::exp(ls2)};
          double v = log_marginal_likelihood(inputs, targets, h);
          if (v > cur) {
            cur = v;
            improved = true;
            break;
          }
          *c = save;
        }
      }
      if (!improved) step *= 0.5;
    }
    KernelHyp h{std::exp(lell), std::exp(ls1), std::exp(ls2)};
    double v = log_marginal_likelihood(inputs, targets, h);
    if (v > best_mll) {
      best_mll = v;
      best = h;
    }
  }
  return best;
}

SafetySurrogate fit_all_impl(const SafetyDataset& data, const Vec& scale, const GpConfig& cfg,
                             bool parallel) {
  SafetySurrogate sur;
  sur.n_c = static_cast<int>(data.targets.cols());
  sur.scale = scale;
  sur.hyp.resize(sur.n_c);
  for (int j = 0; j < sur.n_c; ++j) sur.hyp[j] = column_hyp(data, j, cfg);
  if (data.count() == 0) return sur;  // prior-only surrogate

  std::vector<Vec> norm_inputs(data.inputs.size());
  for (std::size_t i = 0; i < data.inputs.size(); ++i)
    norm_inputs[i] = data.inputs[i].cwiseQuotient(scale);

  sur.models.resize(sur.n_c);
  std::exception_ptr err;
#pragma omp parallel for schedule(static) if (parallel)
  for (int j = 0; j < sur.n_c; ++j) {
    try {
      KernelHyp hyp = sur.hyp[j];
      if (cfg.mll_refit && data.count() >= 3)
        hyp = mll_refit(norm_inputs, data.targets.col(j), hyp, cfg, 0x5AFEull + j);
      sur.hyp[j] = hyp;
      sur.models[j] = fit(norm_inputs, data.targets.col(j), hyp, j);
    } catch (...) {
#pragma omp critical
      if (!err) err = std::current_exception();
    }
  }
  if (err) std::rethrow_exception(err);
  return sur;
}

}  // namespace

SafetySurrogate fit_all(const SafetyDataset& data, const Vec& scale, const GpConfig& cfg,
                        bool parallel) {
  return fit_all_impl(data, scale, cfg, parallel);
}

SafetySurrogate fit_all_serial(const SafetyDataset& data, const Vec& scale, const GpConfig& cfg) {
  return fit_all_impl(data, scale, cfg, false);
}

Vec safety_margin(const SafetySurrogate& sur, const Vec& theta, double beta) {
  double q = normal_quantile(beta);
  Vec out(sur.n_c);
  if (!sur.fitted()) {
    for (int j = 0; j < sur.n_c; ++j) out[j] = q * sur.hyp[j].sigma1;  // prior mean 0, std sigma1
    return out;
  }
  Vec nq = sur.normalize(theta);
  for (int j = 0; j < sur.n_c; ++j) {
    Prediction p = predict(sur.models[j], nq);
    out[j] = p.mu + q * std::sqrt(p.var);
  }
  return out;
}

Mat safety_margin_gradient(const SafetySurrogate& sur, const Vec& theta, double beta) {
  const int d = static_cast<int>(theta.size());
  Mat out = Mat::Zero(sur.n_c, d);
  if (!sur.fitted()) return out;  // flat prior
  double q = normal_quantile(beta);
  Vec nq = sur.normalize(theta);
  for (int j = 0; j < sur.n_c; ++j) {
    const GpModel& m = sur.models[j];
    const int n = m.count();
    Vec kstar(n);
    Mat dkstar(n, d);  // d k*_i / d theta (raw coordinates)
    for (int i = 0; i < n; ++i) {
      Vec xi = m.train_x.row(i).transpose();
      double k = kernel(xi, nq, m.hyp, false);
      kstar[i] = k;
      // d/dnq of sigma1^2 exp(-|nq-xi|^2/(2 ell^2)) = -k (nq-xi)/ell^2,
      // chain rule through nq = theta ./ scale.
      Vec dk = (-k / (m.hyp.ell * m.hyp.ell)) * (nq - xi);
      dkstar.row(i) = dk.cwiseQuotient(sur.scale).transpose();
    }
    Vec grad_mu = dkstar.transpose() * m.alpha;
    Vec kinv_kstar = m.chol_lower.triangularView<Eigen::Lower>().solve(kstar);
    kinv_kstar =
        m.chol_lower.transpose().triangularView<Eigen::Upper>().solve(kinv_kstar);
    double var = std::max(0.0, m.hyp.sigma1 * m.hyp.sigma1 - kstar.dot(kinv_kstar));
    double sigma = std::sqrt(var);
    Vec grad_sigma = Vec::Zero(d);
    if (sigma > 1e-12) grad_sigma = (-1.0 / sigma) * (dkstar.transpose() * kinv_kstar);
    out.row(j) = (grad_mu + q * grad_sigma).transpose();
  }
  return out;
}

double log_marginal_likelihood(const std::vector<Vec>& inputs, const Vec& targets,
                               const KernelHyp& hyp) {
  const int n = static_cast<int>(inputs.size());
  Mat K(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j <= i; ++j) {
      double v = kernel(inputs[i], inputs[j], hyp, i == j);
      K(i, j) = v;
      K(j, i) = v;
    }
  Eigen::LLT<Mat> llt(K + 1e-10 * Mat::Identity(n, n));
  if (llt.info() != Eigen::Success) return -std::numeric_limits<double>::infinity();
  Vec alpha = llt.solve(targets);
  double logdet = 0.0;
  for (int i = 0; i < n; ++i) logdet += std::log(llt.matrixL()(i, i));
  return -0.5 * targets.dot(alpha) - logdet - 0.5 * n * std::log(2.0 * std::numbers::pi);
}

std::string SafetyDataset::to_csv() const {
  std::ostringstream out;
  out.precision(17);
  const int d = inputs.empty() ? 0 : static_cast<int>(inputs[0].size());
  const int nc = static_cast<int>(targets.cols());
  for (int k = 0; k < d; ++k) out << (k ? "," : "") << "theta" << k;
  for (int j = 0; j < nc; ++j) out << ",z" << j;
  out << "\n";
  for (int i = 0; i < count(); ++i) {
    for (int k = 0; k < d; ++k) out << (k ? "," : "") << inputs[i][k];
    for (int j = 0; j < nc; ++j) out << ',' << targets(i, j);
    out << "\n";
  }
  return out.str();
}

SafetyDataset SafetyDataset::from_csv(const std::string& text, int n_c) {
  SafetyDataset ds;
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw GpError("SafetyDataset: empty CSV");
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::istringstream ls(line);
    std::string tok;
    while (std::getline(ls, tok, ',')) row.push_back(std::stod(tok));
    rows.push_back(std::move(row));
  }
  if (rows.empty()) {
    ds.targets.resize(0, n_c);
    return ds;
  }
  const int d = static_cast<int>(rows[0].size()) - n_c;
  if (d <= 0) throw GpError("SafetyDataset: CSV has fewer columns than constraints");
  ds.targets.resize(static_cast<int>(rows.size()), n_c);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (static_cast<int>(rows[i].size()) != d + n_c)
      throw GpError("SafetyDataset: ragged CSV row");
    Vec x(d);
    for (int k = 0; k < d; ++k) x[k] = rows[i][k];
    ds.inputs.push_back(x);
    for (int j = 0; j < n_c; ++j) ds.targets(static_cast<int>(i), j) = rows[i][d + j];
  }
  return ds;
}

GpConfig gp_config_from_config(const Config& cfg) {
  GpConfig g;
  g.ell = cfg.get_double("gp.ell", g.ell);
  g.sigma1_floor = cfg.get_double("gp.sigma1_floor", g.sigma1_floor);
  g.sigma2_ratio = cfg.get_double("gp.sigma2_ratio", g.sigma2_ratio);
  g.mll_refit = cfg.get_bool("gp.mll_refit", g.mll_refit);
  g.mll_restarts = cfg.get_int("gp.mll_restarts", g.mll_restarts);
  g.mll_iters = cfg.get_int("gp.mll_iters", g.mll_iters);
  return g;
}

}  // namespace safempc::gp
