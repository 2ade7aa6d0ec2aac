#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "safempc/gp.hpp"
#include "safempc/rng.hpp"

using namespace safempc;
using gp::Mat;
using gp::Vec;

namespace {

Vec v3(double a, double b, double c) {
  Vec v(3);
  v << a, b, c;
  return v;
}

// Bisection on the erfc-based CDF, independent of the rational approximation.
double quantile_oracle(double beta) {
  double lo = -10, hi = 10;
  for (int i = 0; i < 200; ++i) {
    double mid = 0.5 * (lo + hi);
    (gp::normal_cdf(mid) < beta ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace

TEST_CASE("kernel values: same index, decay, unit evaluation") {
  gp::KernelHyp hyp{1.0, 1.0, 0.3};
  Vec a = v3(0.2, -0.1, 0.5);
  CHECK(gp::kernel(a, a, hyp, true) == doctest::Approx(1.0 + 0.09).epsilon(1e-15));
  CHECK(gp::kernel(a, a, hyp, false) == doctest::Approx(1.0).epsilon(1e-15));

  Vec far = v3(100, 0, 0);
  CHECK(gp::kernel(a, far, hyp, false) <= 1e-300);

  // |a-b|^2 = 2, ell = 1, sigma1 = 1, distinct indices -> exp(-1)
  Vec b = v3(0.2 + std::sqrt(2.0), -0.1, 0.5);
  CHECK(gp::kernel(a, b, hyp, false) == doctest::Approx(std::exp(-1.0)).epsilon(1e-12));

  CHECK_THROWS(gp::kernel(a, b, gp::KernelHyp{-1.0, 1.0, 0.0}, false));
}

TEST_CASE("fit: single point, duplicates, reconstruction") {
  gp::KernelHyp hyp{0.5, 1.2, 0.4};
  gp::GpModel one = gp::fit({v3(0, 0, 0)}, Vec::Constant(1, 2.0), hyp, 0);
  CHECK(one.chol_lower(0, 0) ==
        doctest::Approx(std::sqrt(1.2 * 1.2 + 0.4 * 0.4)).epsilon(1e-12));

  // duplicated inputs are fine with noise
  std::vector<Vec> dup{v3(1, 1, 1), v3(1, 1, 1)};
  Vec y2(2);
  y2 << 1.0, -1.0;
  CHECK_NOTHROW(gp::fit(dup, y2, hyp, 1));

  rng::Stream st(8);
  std::vector<Vec> xs;
  Vec y(4);
  for (int i = 0; i < 4; ++i) {
    xs.push_back(v3(st.u(-1, 1), st.u(-1, 1), st.u(-1, 1)));
    y[i] = st.u(-1, 1);
  }
  gp::GpModel m = gp::fit(xs, y, hyp, 2);
  Mat K(4, 4);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) K(i, j) = gp::kernel(xs[i], xs[j], hyp, i == j);
  Mat rebuilt = m.chol_lower * m.chol_lower.transpose();
  CHECK((rebuilt - K).cwiseAbs().maxCoeff() <= 1e-10);
}

TEST_CASE("predict: closed-form single-point conditioning") {
  double s1 = 1.3, s2 = 0.5, ztil = 0.8;
  gp::KernelHyp hyp{0.7, s1, s2};
  gp::GpModel m = gp::fit({v3(0.1, 0.2, 0.3)}, Vec::Constant(1, ztil), hyp, 0);
  gp::Prediction p = gp::predict(m, v3(0.1, 0.2, 0.3));
  double s1sq = s1 * s1, s2sq = s2 * s2;
  CHECK(p.mu == doctest::Approx(s1sq / (s1sq + s2sq) * ztil).epsilon(1e-12));
  CHECK(p.var == doctest::Approx(s1sq - s1sq * s1sq / (s1sq + s2sq)).epsilon(1e-12));
}

TEST_CASE("predict: noise-free interpolation at training inputs") {
  gp::KernelHyp hyp{0.6, 1.0, 0.0};
  rng::Stream st(17);
  std::vector<Vec> xs;
  Vec y(5);
  for (int i = 0; i < 5; ++i) {
    xs.push_back(v3(st.u(-1, 1), st.u(-1, 1), st.u(-1, 1)));
    y[i] = st.u(-2, 2);
  }
  gp::GpModel m = gp::fit(xs, y, hyp, 0);
  for (int i = 0; i < 5; ++i) {
    gp::Prediction p = gp::predict(m, xs[i]);
    CHECK(p.mu == doctest::Approx(y[i]).epsilon(1e-8));
    CHECK(p.var <= 1e-7);
  }
}

TEST_CASE("predict matches the dense-inverse oracle") {
  gp::KernelHyp hyp{0.4, 0.9, 0.2};
  rng::Stream st(23);
  std::vector<Vec> xs;
  Vec y(5);
  for (int i = 0; i < 5; ++i) {
    xs.push_back(v3(st.u(-1, 1), st.u(-1, 1), st.u(-1, 1)));
    y[i] = st.u(-1, 1);
  }
  gp::GpModel m = gp::fit(xs, y, hyp, 0);
  Mat K(5, 5);
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 5; ++j) K(i, j) = gp::kernel(xs[i], xs[j], hyp, i == j);
  Mat Ki = K.inverse();
  for (int t = 0; t < 5; ++t) {
    Vec q = v3(st.u(-1.5, 1.5), st.u(-1.5, 1.5), st.u(-1.5, 1.5));
    Vec kstar(5);
    for (int i = 0; i < 5; ++i) kstar[i] = gp::kernel(xs[i], q, hyp, false);
    gp::Prediction p = gp::predict(m, q);
    CHECK(std::abs(p.mu - kstar.dot(Ki * y)) <= 1e-8);
    CHECK(std::abs(p.var - (0.81 - kstar.dot(Ki * kstar))) <= 1e-8);
  }
}

TEST_CASE("normal quantile: symmetry, tabulated values, round trip, domain") {
  CHECK(gp::normal_quantile(0.5) == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(gp::normal_quantile(0.9) == doctest::Approx(1.2815515655).epsilon(1e-9));
  CHECK(gp::normal_quantile(0.975) == doctest::Approx(1.9599639845).epsilon(1e-9));
  for (double beta : {0.01, 0.1, 0.33, 0.5, 0.77, 0.9, 0.99}) {
    CHECK(std::abs(gp::normal_cdf(gp::normal_quantile(beta)) - beta) <= 1e-10);
    CHECK(gp::normal_quantile(beta) == doctest::Approx(quantile_oracle(beta)).epsilon(1e-9));
  }
  CHECK_THROWS(gp::normal_quantile(0.0));
  CHECK_THROWS(gp::normal_quantile(1.0));
  CHECK_THROWS(gp::normal_quantile(-0.3));
}

namespace {

gp::SafetySurrogate small_surrogate(int n_points, rng::Stream& st, double target_lo = -1.0,
                                    double target_hi = 1.0) {
  gp::SafetyDataset ds;
  ds.targets.resize(n_points, 2);
  for (int i = 0; i < n_points; ++i) {
    ds.inputs.push_back(v3(st.u(-1, 1), st.u(-1, 1), st.u(-1, 1)));
    ds.targets(i, 0) = st.u(target_lo, target_hi);
    ds.targets(i, 1) = st.u(target_lo, target_hi);
  }
  gp::GpConfig cfg;
  return gp::fit_all(ds, Vec::Ones(3), cfg);
}

}  // namespace

TEST_CASE("safety margins: mean at beta = 0.5, monotone in beta, prior-only") {
  rng::Stream st(71);
  gp::SafetySurrogate sur = small_surrogate(6, st);
  Vec q = v3(0.3, -0.2, 0.1);
  Vec m50 = gp::safety_margin(sur, q, 0.5);
  for (int j = 0; j < 2; ++j) {
    gp::Prediction p = gp::predict(sur.models[j], q);
    CHECK(m50[j] == doctest::Approx(p.mu).epsilon(1e-12));
  }
  double prev = -1e300;
  for (double beta : {0.1, 0.3, 0.5, 0.7, 0.9, 0.99}) {
    double v = gp::safety_margin(sur, q, beta).maxCoeff();
    CHECK(v >= prev);
    prev = v;
  }

  gp::SafetyDataset empty;
  empty.targets.resize(0, 3);
  gp::GpConfig cfg;
  gp::SafetySurrogate prior = gp::fit_all(empty, Vec::Ones(3), cfg);
  Vec pm = gp::safety_margin(prior, q, 0.9);
  for (int j = 0; j < 3; ++j)
    CHECK(pm[j] == doctest::Approx(gp::normal_quantile(0.9) * cfg.sigma1_floor).epsilon(1e-12));
}

TEST_CASE("margin gradients: flat far field, symmetry, finite differences") {
  rng::Stream st(99);
  gp::SafetySurrogate sur = small_surrogate(5, st);
  Mat g_far = gp::safety_margin_gradient(sur, v3(50, 50, 50), 0.9);
  CHECK(g_far.cwiseAbs().maxCoeff() <= 1e-12);

  // symmetric two-point dataset with equal targets: mean gradient vanishes
  // along the connecting axis at the midpoint
  gp::SafetyDataset ds;
  ds.targets.resize(2, 1);
  ds.inputs.push_back(v3(-0.05, 0, 0));
  ds.inputs.push_back(v3(0.05, 0, 0));
  ds.targets(0, 0) = 0.4;
  ds.targets(1, 0) = 0.4;
  gp::GpConfig cfg;
  gp::SafetySurrogate sym = gp::fit_all(ds, Vec::Ones(3), cfg);
  Mat gm = gp::safety_margin_gradient(sym, v3(0, 0, 0), 0.5);  // beta=0.5: mean only
  CHECK(std::abs(gm(0, 0)) <= 1e-12);

  // central differences on a random configuration
  Vec q = v3(0.2, 0.1, -0.3);
  for (double beta : {0.5, 0.9}) {
    Mat g = gp::safety_margin_gradient(sur, q, beta);
    for (int k = 0; k < 3; ++k) {
      double h = 1e-6;
      Vec qp = q, qm = q;
      qp[k] += h;
      qm[k] -= h;
      Vec fp = gp::safety_margin(sur, qp, beta);
      Vec fm = gp::safety_margin(sur, qm, beta);
      for (int j = 0; j < 2; ++j) {
        double fd = (fp[j] - fm[j]) / (2 * h);
        CHECK(std::abs(g(j, k) - fd) <= 1e-5 * std::max(1.0, std::abs(fd)));
      }
    }
  }
}

TEST_CASE("normalization scales enter predictions and gradients consistently") {
  gp::SafetyDataset ds;
  ds.targets.resize(1, 1);
  ds.inputs.push_back(v3(9.81, 0.7, 0.0));
  ds.targets(0, 0) = 0.5;
  gp::GpConfig cfg;
  Vec scale = v3(9.81, 0.7, 1.0);
  gp::SafetySurrogate sur = gp::fit_all(ds, scale, cfg);
  // same normalized distance in each raw coordinate gives the same margin
  double m_g = gp::safety_margin(sur, v3(9.81 * 1.1, 0.7, 0.0), 0.5)[0];
  double m_k = gp::safety_margin(sur, v3(9.81, 0.7 * 1.1, 0.0), 0.5)[0];
  CHECK(m_g == doctest::Approx(m_k).epsilon(1e-12));
}

TEST_CASE("posterior variance never increases as data accumulates") {
  gp::KernelHyp hyp{0.5, 1.0, 0.2};
  rng::Stream st(2024);
  std::vector<Vec> xs;
  std::vector<double> ys;
  Vec q = v3(0.2, 0.2, 0.2);
  double prev = hyp.sigma1 * hyp.sigma1;
  for (int n = 1; n <= 8; ++n) {
    xs.push_back(v3(st.u(-1, 1), st.u(-1, 1), st.u(-1, 1)));
    ys.push_back(st.u(-1, 1));
    gp::GpModel m = gp::fit(xs, Eigen::Map<Vec>(ys.data(), n), hyp, 0);
    double var = gp::predict(m, q).var;
    CHECK(var <= prev + 1e-9);
    prev = var;
  }
}

TEST_CASE("parallel and serial multi-constraint fits agree bitwise") {
  rng::Stream st(303);
  gp::SafetyDataset ds;
  ds.targets.resize(6, 16);
  for (int i = 0; i < 6; ++i) {
    ds.inputs.push_back(v3(st.u(-1, 1), st.u(-1, 1), st.u(-1, 1)));
    for (int j = 0; j < 16; ++j) ds.targets(i, j) = st.u(-1, 1);
  }
  gp::GpConfig cfg;
  gp::SafetySurrogate a = gp::fit_all(ds, Vec::Ones(3), cfg, true);
  gp::SafetySurrogate b = gp::fit_all_serial(ds, Vec::Ones(3), cfg);
  REQUIRE(a.models.size() == b.models.size());
  for (std::size_t j = 0; j < a.models.size(); ++j) {
    CHECK((a.models[j].alpha - b.models[j].alpha).cwiseAbs().maxCoeff() == 0.0);
    CHECK((a.models[j].chol_lower - b.models[j].chol_lower).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("optional marginal-likelihood refit never worsens the fit") {
  rng::Stream st(555);
  gp::SafetyDataset ds;
  ds.targets.resize(8, 1);
  for (int i = 0; i < 8; ++i) {
    Vec x = v3(st.u(-1, 1), st.u(-1, 1), st.u(-1, 1));
    ds.inputs.push_back(x);
    ds.targets(i, 0) = std::sin(2.0 * x[0]) + 0.05 * st.u(-1, 1);
  }
  gp::GpConfig base;
  gp::GpConfig refit = base;
  refit.mll_refit = true;
  gp::SafetySurrogate s0 = gp::fit_all(ds, Vec::Ones(3), base);
  gp::SafetySurrogate s1 = gp::fit_all(ds, Vec::Ones(3), refit);
  std::vector<Vec> norm;
  for (const auto& x : ds.inputs) norm.push_back(x);
  double mll0 = gp::log_marginal_likelihood(norm, ds.targets.col(0), s0.hyp[0]);
  double mll1 = gp::log_marginal_likelihood(norm, ds.targets.col(0), s1.hyp[0]);
  CHECK(mll1 >= mll0 - 1e-9);
}

TEST_CASE("dataset CSV round trip") {
  rng::Stream st(31415);
  gp::SafetyDataset ds;
  ds.targets.resize(3, 4);
  for (int i = 0; i < 3; ++i) {
    ds.inputs.push_back(v3(st.u(-1, 1), st.u(-1, 1), st.u(-1, 1)));
    for (int j = 0; j < 4; ++j) ds.targets(i, j) = st.u(-1, 1);
  }
  gp::SafetyDataset back = gp::SafetyDataset::from_csv(ds.to_csv(), 4);
  REQUIRE(back.count() == 3);
  for (int i = 0; i < 3; ++i) {
    CHECK((back.inputs[i] - ds.inputs[i]).cwiseAbs().maxCoeff() == 0.0);
    CHECK((back.targets.row(i) - ds.targets.row(i)).cwiseAbs().maxCoeff() == 0.0);
  }
}
