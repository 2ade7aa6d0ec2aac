#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>

#include "safempc/checks.hpp"
#include "safempc/qp.hpp"
#include "safempc/rng.hpp"

using namespace safempc;
using qp::Mat;
using qp::Vec;

namespace {

qp::QpProblem one_dim_bound() {
  // min 1/2 z^2  s.t. z >= 1
  Mat H(1, 1);
  H << 1.0;
  Vec g = Vec::Zero(1);
  Mat Ai(1, 1);
  Ai << -1.0;
  Vec bi(1);
  bi << -1.0;
  return qp::QpProblem::from_dense(H, g, Mat(0, 1), Vec(0), Ai, bi);
}

qp::QpProblem random_strictly_convex(rng::Stream& st, int n, int me, int mi) {
  Mat M(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) M(i, j) = st.u(-1, 1);
  Mat H = M.transpose() * M + 0.5 * Mat::Identity(n, n);
  Vec g(n), z_feas(n);
  for (int i = 0; i < n; ++i) {
    g[i] = st.u(-2, 2);
    z_feas[i] = st.u(-1, 1);
  }
  Mat Ae(me, n);
  Vec be(me);
  for (int r = 0; r < me; ++r) {
    for (int c = 0; c < n; ++c) Ae(r, c) = st.u(-1, 1);
    be[r] = Ae.row(r).dot(z_feas);
  }
  Mat Ai(mi, n);
  Vec bi(mi);
  for (int r = 0; r < mi; ++r) {
    for (int c = 0; c < n; ++c) Ai(r, c) = st.u(-1, 1);
    bi[r] = Ai.row(r).dot(z_feas) + st.u(0.05, 1.0);
  }
  return qp::QpProblem::from_dense(H, g, Ae, be, Ai, bi);
}

}  // namespace

TEST_CASE("one-dimensional bound: z* = 1, mu = 1, value = 0.5") {
  qp::QpSolution sol = qp::solve_qp(one_dim_bound());
  REQUIRE(sol.status == qp::QpStatus::Optimal);
  CHECK(sol.z[0] == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(sol.mu_in[0] == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(sol.value == doctest::Approx(0.5).epsilon(1e-9));
}

TEST_CASE("equality projection: min |z|^2 with [1 1]z = 2") {
  Mat H = 2.0 * Mat::Identity(2, 2);  // 1/2 z'Hz = |z|^2
  Mat Ae(1, 2);
  Ae << 1.0, 1.0;
  Vec be(1);
  be << 2.0;
  qp::QpProblem p = qp::QpProblem::from_dense(H, Vec::Zero(2), Ae, be, Mat(0, 2), Vec(0));
  qp::QpSolution sol = qp::solve_qp(p);
  REQUIRE(sol.status == qp::QpStatus::Optimal);
  CHECK(sol.z[0] == doctest::Approx(1.0).epsilon(1e-10));
  CHECK(sol.z[1] == doctest::Approx(1.0).epsilon(1e-10));
  CHECK(sol.value == doctest::Approx(2.0).epsilon(1e-10));
}

TEST_CASE("random 5-variable QP with 3 box constraints matches enumeration") {
  rng::Stream st(11);
  for (int trial = 0; trial < 20; ++trial) {
    Mat M(5, 5);
    for (int i = 0; i < 5; ++i)
      for (int j = 0; j < 5; ++j) M(i, j) = st.u(-1, 1);
    Mat H = M.transpose() * M + Mat::Identity(5, 5);
    Vec g(5);
    for (int i = 0; i < 5; ++i) g[i] = st.u(-3, 3);
    // box constraints on the first three coordinates (upper bounds)
    Mat Ai = Mat::Zero(3, 5);
    Vec bi(3);
    for (int r = 0; r < 3; ++r) {
      Ai(r, r) = 1.0;
      bi[r] = st.u(-0.5, 0.5);
    }
    qp::QpProblem p = qp::QpProblem::from_dense(H, g, Mat(0, 5), Vec(0), Ai, bi);
    qp::QpSolution oracle = checks::active_set_enumeration(p);
    REQUIRE(oracle.status == qp::QpStatus::Optimal);
    qp::QpSolution sol = qp::solve_qp(p);
    REQUIRE(sol.status == qp::QpStatus::Optimal);
    CHECK((sol.z - oracle.z).cwiseAbs().maxCoeff() <= 1e-6);
    CHECK(std::abs(sol.value - oracle.value) <= 1e-6);
  }
}

TEST_CASE("kkt_residual on analytic and perturbed solutions") {
  qp::QpProblem p = one_dim_bound();
  qp::QpSolution exact;
  exact.z = Vec::Constant(1, 1.0);
  exact.lambda_eq = Vec(0);
  exact.mu_in = Vec::Constant(1, 1.0);
  CHECK(qp::kkt_residual(p, exact) <= 1e-12);

  qp::QpSolution perturbed = exact;
  perturbed.z[0] += 1e-3;
  CHECK(qp::kkt_residual(p, perturbed) >= 9e-4);

  // zero-constraint QP: z* = -H^{-1} g
  rng::Stream st(5);
  Mat M(4, 4);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) M(i, j) = st.u(-1, 1);
  Mat H = M.transpose() * M + Mat::Identity(4, 4);
  Vec g(4);
  for (int i = 0; i < 4; ++i) g[i] = st.u(-1, 1);
  qp::QpProblem up = qp::QpProblem::unconstrained(H, g);
  qp::QpSolution free;
  free.z = -H.ldlt().solve(g);
  free.lambda_eq = Vec(0);
  free.mu_in = Vec(0);
  CHECK(qp::kkt_residual(up, free) <= 1e-10);
}

TEST_CASE("optimal solutions satisfy the KKT invariants") {
  rng::Stream st(77);
  for (int trial = 0; trial < 30; ++trial) {
    int n = 2 + static_cast<int>(st.u01() * 5);
    int me = std::min(static_cast<int>(st.u01() * 2.0), n - 1);
    int mi = 1 + static_cast<int>(st.u01() * 6.0);
    qp::QpProblem p = random_strictly_convex(st, n, me, mi);
    qp::QpSolution sol = qp::solve_qp(p);
    REQUIRE(sol.status == qp::QpStatus::Optimal);
    CHECK(sol.kkt_residual <= 1e-8);
    CHECK(sol.mu_in.minCoeff() >= -1e-9);
    Vec slack = p.b_in - qp::SpMat(p.A_in) * sol.z;
    CHECK(sol.mu_in.cwiseProduct(slack).cwiseAbs().maxCoeff() <= 1e-6);
  }
}

TEST_CASE("infeasible constraints are certified, not silently misreported") {
  // z >= 1 and z <= -1
  Mat H(1, 1);
  H << 1.0;
  Mat Ai(2, 1);
  Ai << -1.0, 1.0;
  Vec bi(2);
  bi << -1.0, -1.0;
  qp::QpProblem p = qp::QpProblem::from_dense(H, Vec::Zero(1), Mat(0, 1), Vec(0), Ai, bi);
  qp::QpSolution sol = qp::solve_qp(p);
  CHECK(sol.status == qp::QpStatus::Infeasible);
}

TEST_CASE("structured errors for malformed problems") {
  Mat H(2, 2);
  H << 1.0, 0.5, -0.5, 1.0;  // asymmetric beyond 1e-8
  qp::QpProblem bad = qp::QpProblem::unconstrained(H, Vec::Zero(2));
  CHECK_THROWS_AS(qp::solve_qp(bad), qp::QpError);

  qp::QpProblem dims = one_dim_bound();
  dims.b_in = Vec::Zero(2);  // mismatched inequality rows
  CHECK_THROWS_AS(qp::solve_qp(dims), qp::QpError);

  CHECK_THROWS_AS(qp::solve_qp(one_dim_bound(), {.tol = -1.0}), qp::QpError);
}

TEST_CASE("determinism: identical inputs give bit-identical solutions") {
  rng::Stream st(99);
  qp::QpProblem p = random_strictly_convex(st, 5, 1, 4);
  qp::QpSolution a = qp::solve_qp(p);
  qp::QpSolution b = qp::solve_qp(p);
  REQUIRE(a.z.size() == b.z.size());
  CHECK(std::memcmp(a.z.data(), b.z.data(), sizeof(double) * a.z.size()) == 0);
  CHECK(std::memcmp(a.mu_in.data(), b.mu_in.data(), sizeof(double) * a.mu_in.size()) == 0);
  CHECK(a.value == b.value);
}

namespace {

// z >= theta[0], objective 1/2 z^2
qp::ParametricQp parametric_bound() {
  qp::ParametricQp pqp;
  pqp.param_dim = 1;
  pqp.builder = [](const Vec& theta) {
    Mat H(1, 1);
    H << 1.0;
    Mat Ai(1, 1);
    Ai << -1.0;
    Vec bi(1);
    bi << -theta[0];
    return qp::QpProblem::from_dense(H, Vec::Zero(1), Mat(0, 1), Vec(0), Ai, bi);
  };
  return pqp;
}

qp::ParametricQp random_parametric(rng::Stream& st, int n, int mi, int d) {
  // data affine in theta with fixed random coefficient tensors
  Mat M(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) M(i, j) = st.u(-1, 1);
  Mat H0 = M.transpose() * M + Mat::Identity(n, n);
  Mat G0(n, d + 1);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j <= d; ++j) G0(i, j) = st.u(-1, 1);
  Mat A0(mi, n);
  Mat B0(mi, d + 1);
  for (int r = 0; r < mi; ++r) {
    for (int c = 0; c < n; ++c) A0(r, c) = st.u(-1, 1);
    B0(r, 0) = st.u(0.5, 2.0);
    for (int j = 1; j <= d; ++j) B0(r, j) = st.u(-0.3, 0.3);
  }
  qp::ParametricQp pqp;
  pqp.param_dim = d;
  pqp.builder = [=](const Vec& theta) {
    Vec ext(d + 1);
    ext[0] = 1.0;
    ext.tail(d) = theta;
    Vec g = G0 * ext;
    Vec bi = B0 * ext;
    return qp::QpProblem::from_dense(H0, g, Mat(0, n), Vec(0), A0, bi);
  };
  return pqp;
}

}  // namespace

TEST_CASE("value sensitivity: active bound gives dV/dtheta = mu = theta") {
  qp::ParametricQp pqp = parametric_bound();
  Vec theta = Vec::Constant(1, 1.0);
  qp::QpSolution sol = qp::solve_qp(pqp.builder(theta));
  REQUIRE(sol.status == qp::QpStatus::Optimal);
  qp::ValueSensitivity vs = qp::value_sensitivity(pqp, theta, sol);
  CHECK(!vs.degenerate);
  CHECK(vs.dvalue[0] == doctest::Approx(1.0).epsilon(1e-7));  // value = theta^2/2
}

TEST_CASE("value sensitivity: unconstrained shifted quadratic has zero slope") {
  qp::ParametricQp pqp;
  pqp.param_dim = 1;
  pqp.builder = [](const Vec& theta) {
    // 1/2 (z - theta)^2 = 1/2 z^2 - theta z + const; constant dropped, so
    // value(theta) = -theta^2/2 and the Lagrangian gradient must match.
    Mat H(1, 1);
    H << 1.0;
    Vec g(1);
    g << -theta[0];
    return qp::QpProblem::unconstrained(H, g);
  };
  Vec theta = Vec::Constant(1, 0.7);
  qp::QpSolution sol = qp::solve_qp(pqp.builder(theta));
  qp::ValueSensitivity vs = qp::value_sensitivity(pqp, theta, sol);
  CHECK(vs.dvalue[0] == doctest::Approx(-0.7).epsilon(1e-7));
}

TEST_CASE("value sensitivity matches central differences of the solved value") {
  rng::Stream st(314);
  for (int trial = 0; trial < 10; ++trial) {
    qp::ParametricQp pqp = random_parametric(st, 4, 4, 3);
    Vec theta(3);
    for (int k = 0; k < 3; ++k) theta[k] = st.u(-0.5, 0.5);
    qp::QpSolution sol = qp::solve_qp(pqp.builder(theta));
    REQUIRE(sol.status == qp::QpStatus::Optimal);
    qp::ValueSensitivity vs = qp::value_sensitivity(pqp, theta, sol);
    if (vs.degenerate) continue;
    for (int k = 0; k < 3; ++k) {
      double h = 1e-6 * (1.0 + std::abs(theta[k]));
      Vec tp = theta, tm = theta;
      tp[k] += h;
      tm[k] -= h;
      double vp = qp::solve_qp(pqp.builder(tp)).value;
      double vm = qp::solve_qp(pqp.builder(tm)).value;
      double fd = (vp - vm) / (2 * h);
      CHECK(std::abs(vs.dvalue[k] - fd) <= 1e-4 * std::max(1.0, std::abs(fd)));
    }
  }
}

TEST_CASE("solution sensitivity: active parametric bound tracks theta exactly") {
  qp::ParametricQp pqp = parametric_bound();
  Vec theta = Vec::Constant(1, 1.0);
  qp::QpSolution sol = qp::solve_qp(pqp.builder(theta));
  qp::SolutionSensitivity ss = qp::solution_sensitivity(pqp, theta, sol);
  CHECK(ss.dz(0, 0) == doctest::Approx(1.0).epsilon(1e-7));
}

TEST_CASE("solution sensitivity: unconstrained dz/dtheta = -H^{-1}") {
  rng::Stream st(21);
  Mat M(3, 3);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) M(i, j) = st.u(-1, 1);
  Mat H = M.transpose() * M + Mat::Identity(3, 3);
  qp::ParametricQp pqp;
  pqp.param_dim = 3;
  pqp.builder = [H](const Vec& theta) { return qp::QpProblem::unconstrained(H, theta); };
  Vec theta(3);
  theta << 0.3, -0.2, 0.5;
  qp::QpSolution sol = qp::solve_qp(pqp.builder(theta));
  qp::SolutionSensitivity ss = qp::solution_sensitivity(pqp, theta, sol);
  Mat expected = -H.inverse();
  CHECK((ss.dz - expected).cwiseAbs().maxCoeff() <= 1e-6);
}

TEST_CASE("solution sensitivity matches central differences") {
  rng::Stream st(2718);
  int done = 0;
  for (int trial = 0; trial < 12 && done < 5; ++trial) {
    qp::ParametricQp pqp = random_parametric(st, 4, 3, 2);
    Vec theta(2);
    for (int k = 0; k < 2; ++k) theta[k] = st.u(-0.5, 0.5);
    qp::QpSolution sol = qp::solve_qp(pqp.builder(theta));
    REQUIRE(sol.status == qp::QpStatus::Optimal);
    qp::ValueSensitivity probe = qp::value_sensitivity(pqp, theta, sol);
    if (probe.degenerate) continue;
    qp::SolutionSensitivity ss = qp::solution_sensitivity(pqp, theta, sol);
    bool near_change = false;
    Mat fd(4, 2);
    for (int k = 0; k < 2; ++k) {
      double h = 1e-6 * (1.0 + std::abs(theta[k]));
      Vec tp = theta, tm = theta;
      tp[k] += h;
      tm[k] -= h;
      qp::QpSolution sp = qp::solve_qp(pqp.builder(tp));
      qp::QpSolution sm = qp::solve_qp(pqp.builder(tm));
      // skip stencils that straddle an active-set change
      for (int i = 0; i < 3; ++i)
        if ((sp.mu_in[i] > 1e-7) != (sm.mu_in[i] > 1e-7)) near_change = true;
      fd.col(k) = (sp.z - sm.z) / (2 * h);
    }
    if (near_change) continue;
    ++done;
    double scale = std::max(1.0, fd.cwiseAbs().maxCoeff());
    CHECK((ss.dz - fd).cwiseAbs().maxCoeff() <= 1e-4 * scale);
  }
  CHECK(done >= 3);
}

TEST_CASE("value hessian recovers the known quadratic coefficient") {
  // min_z 1/2 z'z + (M theta)'z has value -1/2 |M theta|^2, hessian -M'M
  rng::Stream st(808);
  Mat M(3, 3);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) M(i, j) = st.u(-1, 1);
  qp::ParametricQp pqp;
  pqp.param_dim = 3;
  pqp.builder = [M](const Vec& theta) {
    return qp::QpProblem::unconstrained(Mat::Identity(3, 3), M * theta);
  };
  Vec theta(3);
  theta << 0.4, -0.1, 0.2;
  qp::ValueHessian vh = qp::value_hessian(pqp, theta);
  Mat expected = -(M.transpose() * M);
  CHECK((vh.d2value - expected).cwiseAbs().maxCoeff() <=
        1e-3 * std::max(1.0, expected.cwiseAbs().maxCoeff()));
  CHECK((vh.d2value - vh.d2value.transpose()).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("degenerate strict complementarity is flagged, not fatal") {
  // z >= 0 with unconstrained optimum exactly at the bound: mu = slack = 0
  Mat H(1, 1);
  H << 1.0;
  Mat Ai(1, 1);
  Ai << -1.0;
  qp::ParametricQp pqp;
  pqp.param_dim = 1;
  pqp.builder = [](const Vec& theta) {
    Mat Hh(1, 1);
    Hh << 1.0;
    Mat A(1, 1);
    A << -1.0;
    Vec b(1);
    b << theta[0];  // z >= -theta; at theta = 0 the bound is weakly active
    return qp::QpProblem::from_dense(Hh, Vec::Zero(1), Mat(0, 1), Vec(0), A, b);
  };
  Vec theta = Vec::Zero(1);
  qp::QpSolution sol = qp::solve_qp(pqp.builder(theta));
  REQUIRE(sol.status == qp::QpStatus::Optimal);
  qp::ValueSensitivity vs = qp::value_sensitivity(pqp, theta, sol);
  CHECK(vs.degenerate);
}
