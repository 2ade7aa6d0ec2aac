#include "safempc/qp.hpp"

#include <Eigen/SparseCholesky>

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <vector>

namespace safempc::qp {

namespace {

constexpr double kPrimalReg = 1e-10;  // added to diag(H) before factorization
constexpr double kDualReg = 1e-10;    // quasi-definite shift on constraint blocks
constexpr double kComplTol = 1e-7;    // strict-complementarity margin

SpMat symmetrized(const SpMat& H) {
  SpMat Ht = SpMat(H.transpose());
  return 0.5 * (H + Ht);
}

double max_abs(const Vec& v) { return v.size() == 0 ? 0.0 : v.cwiseAbs().maxCoeff(); }

// Sparse KKT
//   [ Hs + rI   A_eq'     A_in'  ]
//   [ A_eq      -dI       0      ]
//   [ A_in      0         -D     ]
// with D updated every interior-point iteration. Only the lower triangle is
// stored for the LDL' factorization.
class KktSystem {
 public:
  KktSystem(const SpMat& Hs, const SpMat& A_eq, const SpMat& A_in)
      : n_(static_cast<int>(Hs.rows())),
        me_(static_cast<int>(A_eq.rows())),
        mi_(static_cast<int>(A_in.rows())),
        Hs_(&Hs),
        A_eq_(&A_eq),
        A_in_(&A_in) {
    const int N = n_ + me_ + mi_;
    std::vector<Eigen::Triplet<double>> trips;
    trips.reserve(Hs.nonZeros() + A_eq.nonZeros() + A_in.nonZeros() + N);
    for (int c = 0; c < n_; ++c)
      for (SpMat::InnerIterator it(Hs, c); it; ++it)
        if (it.row() >= c) trips.emplace_back(static_cast<int>(it.row()), c, it.value());
    for (int i = 0; i < n_; ++i) trips.emplace_back(i, i, kPrimalReg);
    for (int c = 0; c < n_; ++c)
      for (SpMat::InnerIterator it(A_eq, c); it; ++it)
        trips.emplace_back(n_ + static_cast<int>(it.row()), c, it.value());
    for (int j = 0; j < me_; ++j) trips.emplace_back(n_ + j, n_ + j, -kDualReg);
    for (int c = 0; c < n_; ++c)
      for (SpMat::InnerIterator it(A_in, c); it; ++it)
        trips.emplace_back(n_ + me_ + static_cast<int>(it.row()), c, it.value());
    for (int i = 0; i < mi_; ++i) trips.emplace_back(n_ + me_ + i, n_ + me_ + i, -1.0);
    K_.resize(N, N);
    K_.setFromTriplets(trips.begin(), trips.end());
    K_.makeCompressed();
    ldlt_.analyzePattern(K_);
  }

  // D = diag(s_i/mu_i); empty vector means the init system with D = I.
  bool factorize(const Vec& d) {
    for (int i = 0; i < mi_; ++i) {
      double di = d.size() ? std::min(d[i], 1e16) : 1.0;
      K_.coeffRef(n_ + me_ + i, n_ + me_ + i) = -(di + kDualReg);
    }
    d_ = d;
    ldlt_.factorize(K_);
    return ldlt_.info() == Eigen::Success;
  }

  // One step of iterative refinement against the unregularized system.
  Vec solve(const Vec& rhs) const {
    Vec x = ldlt_.solve(rhs);
    Vec r = rhs - apply_exact(x);
    x += ldlt_.solve(r);
    return x;
  }

  int n() const { return n_; }
  int me() const { return me_; }
  int mi() const { return mi_; }

 private:
  Vec apply_exact(const Vec& x) const {
    Vec y(n_ + me_ + mi_);
    auto x1 = x.head(n_);
    y.head(n_) = (*Hs_) * x1;
    if (me_ > 0) {
      y.head(n_) += A_eq_->transpose() * x.segment(n_, me_);
      y.segment(n_, me_) = (*A_eq_) * x1;
    }
    if (mi_ > 0) {
      auto x3 = x.tail(mi_);
      y.head(n_) += A_in_->transpose() * x3;
      Vec d = d_.size() ? d_ : Vec::Ones(mi_);
      y.tail(mi_) = (*A_in_) * x1 - d.cwiseMin(1e16).cwiseProduct(x3);
    }
    return y;
  }

  int n_, me_, mi_;
  const SpMat* Hs_;
  const SpMat* A_eq_;
  const SpMat* A_in_;
  SpMat K_;
  Vec d_;
  Eigen::SimplicialLDLT<SpMat, Eigen::Lower> ldlt_;
};

double objective(const SpMat& Hs, const Vec& g, const Vec& z) {
  return 0.5 * z.dot(Hs * z) + g.dot(z);
}

// Equality-constrained KKT solve used for the pure-equality path, the
// interior-point starting point and the polish step.
struct EqKkt {
  Vec z, lam;
  bool ok = false;
};

EqKkt solve_eq_kkt(const SpMat& Hs, const Vec& g, const SpMat& A, const Vec& b,
                   double primal_shift) {
  const int n = static_cast<int>(Hs.rows());
  const int m = static_cast<int>(A.rows());
  std::vector<Eigen::Triplet<double>> trips;
  for (int c = 0; c < n; ++c)
    for (SpMat::InnerIterator it(Hs, c); it; ++it)
      if (it.row() >= c) trips.emplace_back(static_cast<int>(it.row()), c, it.value());
  for (int i = 0; i < n; ++i) trips.emplace_back(i, i, primal_shift);
  for (int c = 0; c < n; ++c)
    for (SpMat::InnerIterator it(A, c); it; ++it)
      trips.emplace_back(n + static_cast<int>(it.row()), c, it.value());
  for (int j = 0; j < m; ++j) trips.emplace_back(n + j, n + j, -kDualReg);
  SpMat K(n + m, n + m);
  K.setFromTriplets(trips.begin(), trips.end());
  Eigen::SimplicialLDLT<SpMat, Eigen::Lower> ldlt(K);
  EqKkt out;
  if (ldlt.info() != Eigen::Success) return out;
  Vec rhs(n + m);
  rhs.head(n) = -g;
  rhs.tail(m) = b;
  Vec x = ldlt.solve(rhs);
  for (int pass = 0; pass < 2; ++pass) {
    Vec r(n + m);
    r.head(n) = -g - Hs * x.head(n);
    if (m > 0) {
      r.head(n) -= A.transpose() * x.tail(m);
      r.tail(m) = b - A * x.head(n);
    }
    x += ldlt.solve(r);
  }
  out.z = x.head(n);
  out.lam = x.tail(m);
  out.ok = true;
  return out;
}

// Active-set polish: re-solve with the apparently active inequalities pinned
// as equalities, then clean the set up by dropping negative-multiplier rows
// and adding violated ones. Accepts only candidates with a better true KKT
// residual.
void try_polish(const QpProblem& qp, const SpMat& Hs, QpSolution& sol) {
  const int mi = qp.m_in();
  const int me = qp.m_eq();
  Vec slack = qp.b_in - qp.A_in * sol.z;
  std::vector<int> active;
  for (int i = 0; i < mi; ++i)
    if (sol.mu_in[i] > slack[i] || slack[i] < 1e-7 * (1.0 + std::abs(qp.b_in[i])))
      active.push_back(i);

  for (int round = 0; round < 5; ++round) {
    const int na = static_cast<int>(active.size());
    SpMat A_all(me + na, qp.n());
    {
      std::vector<Eigen::Triplet<double>> trips;
      for (int c = 0; c < qp.n(); ++c)
        for (SpMat::InnerIterator it(qp.A_eq, c); it; ++it)
          trips.emplace_back(static_cast<int>(it.row()), c, it.value());
      for (int c = 0; c < qp.n(); ++c)
        for (SpMat::InnerIterator it(qp.A_in, c); it; ++it) {
          auto pos = std::lower_bound(active.begin(), active.end(), static_cast<int>(it.row()));
          if (pos != active.end() && *pos == static_cast<int>(it.row()))
            trips.emplace_back(me + static_cast<int>(pos - active.begin()), c, it.value());
        }
      A_all.setFromTriplets(trips.begin(), trips.end());
    }
    Vec b_all(me + na);
    b_all.head(me) = qp.b_eq;
    for (int k = 0; k < na; ++k) b_all[me + k] = qp.b_in[active[k]];

    EqKkt eq = solve_eq_kkt(Hs, qp.g, A_all, b_all, kPrimalReg);
    if (!eq.ok) return;

    QpSolution cand = sol;
    cand.z = eq.z;
    cand.lambda_eq = eq.lam.head(me);
    cand.mu_in = Vec::Zero(mi);
    for (int k = 0; k < na; ++k) cand.mu_in[active[k]] = std::max(eq.lam[me + k], 0.0);
    cand.value = objective(Hs, qp.g, cand.z);
    cand.kkt_residual = kkt_residual(qp, cand);
    if (cand.kkt_residual <= sol.kkt_residual) sol = cand;

    // clean up the working set for another round
    bool changed = false;
    double worst_neg = -1e-9;
    int drop = -1;
    for (int k = 0; k < na; ++k)
      if (eq.lam[me + k] < worst_neg) {
        worst_neg = eq.lam[me + k];
        drop = active[k];
      }
    if (drop >= 0) {
      active.erase(std::find(active.begin(), active.end(), drop));
      changed = true;
    } else if (mi > 0) {
      Vec viol = qp.A_in * eq.z - qp.b_in;
      double worst = 1e-9;
      int add = -1;
      for (int i = 0; i < mi; ++i) {
        if (std::binary_search(active.begin(), active.end(), i)) continue;
        if (viol[i] > worst) {
          worst = viol[i];
          add = i;
        }
      }
      if (add >= 0) {
        active.insert(std::upper_bound(active.begin(), active.end(), add), add);
        changed = true;
      }
    }
    if (!changed) return;
  }
}

}  // namespace

QpProblem QpProblem::from_dense(const Mat& H, const Vec& g, const Mat& A_eq, const Vec& b_eq,
                                const Mat& A_in, const Vec& b_in) {
  QpProblem qp;
  qp.H = H.sparseView(0.0, 0.0);
  qp.g = g;
  qp.A_eq = A_eq.sparseView(0.0, 0.0);
  if (A_eq.rows() == 0) qp.A_eq.resize(0, H.rows());
  qp.b_eq = b_eq;
  qp.A_in = A_in.sparseView(0.0, 0.0);
  if (A_in.rows() == 0) qp.A_in.resize(0, H.rows());
  qp.b_in = b_in;
  return qp;
}

QpProblem QpProblem::unconstrained(const Mat& H, const Vec& g) {
  return from_dense(H, g, Mat(0, H.rows()), Vec(0), Mat(0, H.rows()), Vec(0));
}

void QpProblem::validate() const {
  const int nn = n();
  if (H.rows() != nn || H.cols() != nn)
    throw QpError("QpProblem: H is " + std::to_string(H.rows()) + "x" + std::to_string(H.cols()) +
                  " but g has length " + std::to_string(nn));
  if (A_eq.rows() != b_eq.size() || (A_eq.rows() > 0 && A_eq.cols() != nn) ||
      (A_eq.rows() == 0 && A_eq.cols() != nn && A_eq.cols() != 0))
    throw QpError("QpProblem: equality block dimension mismatch");
  if (A_in.rows() != b_in.size() || (A_in.rows() > 0 && A_in.cols() != nn) ||
      (A_in.rows() == 0 && A_in.cols() != nn && A_in.cols() != 0))
    throw QpError("QpProblem: inequality block dimension mismatch");
  SpMat diff = SpMat(H.transpose()) - H;
  double asym = 0.0, scale = 0.0;
  for (int c = 0; c < diff.outerSize(); ++c)
    for (SpMat::InnerIterator it(diff, c); it; ++it) asym = std::max(asym, std::abs(it.value()));
  for (int c = 0; c < H.outerSize(); ++c)
    for (SpMat::InnerIterator it(H, c); it; ++it) scale = std::max(scale, std::abs(it.value()));
  if (asym > 1e-8 * (1.0 + scale))
    throw QpError("QpProblem: H asymmetric beyond tolerance (max |H-H'| = " + std::to_string(asym) +
                  ")");
}

const char* to_string(QpStatus s) {
  switch (s) {
    case QpStatus::Optimal: return "Optimal";
    case QpStatus::Infeasible: return "Infeasible";
    case QpStatus::MaxIterations: return "MaxIterations";
  }
  return "?";
}

double kkt_residual(const QpProblem& qp, const QpSolution& sol) {
  const int me = qp.m_eq(), mi = qp.m_in();
  Vec stat = 0.5 * (qp.H * sol.z) + 0.5 * (SpMat(qp.H.transpose()) * sol.z) + qp.g;
  if (me > 0) stat += qp.A_eq.transpose() * sol.lambda_eq;
  if (mi > 0) stat += qp.A_in.transpose() * sol.mu_in;
  double res = max_abs(stat);
  if (me > 0) res = std::max(res, max_abs(Vec(qp.A_eq * sol.z - qp.b_eq)));
  if (mi > 0) {
    Vec viol = qp.A_in * sol.z - qp.b_in;
    res = std::max(res, viol.maxCoeff() > 0 ? viol.maxCoeff() : 0.0);
    res = std::max(res, sol.mu_in.minCoeff() < 0 ? -sol.mu_in.minCoeff() : 0.0);
    res = std::max(res, max_abs(Vec(sol.mu_in.cwiseProduct(viol))));
  }
  return res;
}

QpSolution solve_qp(const QpProblem& qp, const SolveOptions& opts) {
  qp.validate();
  if (opts.tol <= 0) throw QpError("solve_qp: tol must be positive");
  const int n = qp.n(), me = qp.m_eq(), mi = qp.m_in();
  SpMat Hs = symmetrized(qp.H);

  QpSolution sol;
  sol.z = Vec::Zero(n);
  sol.lambda_eq = Vec::Zero(me);
  sol.mu_in = Vec::Zero(mi);

  if (mi == 0) {
    EqKkt eq = solve_eq_kkt(Hs, qp.g, qp.A_eq, qp.b_eq, kPrimalReg);
    if (!eq.ok) throw QpError("solve_qp: KKT factorization failed");
    sol.z = eq.z;
    sol.lambda_eq = eq.lam;
    sol.value = objective(Hs, qp.g, sol.z);
    sol.kkt_residual = kkt_residual(qp, sol);
    double eq_res = me > 0 ? max_abs(Vec(qp.A_eq * sol.z - qp.b_eq)) : 0.0;
    if (sol.kkt_residual <= opts.tol)
      sol.status = QpStatus::Optimal;
    else
      sol.status = eq_res > opts.tol ? QpStatus::Infeasible : QpStatus::MaxIterations;
    return sol;
  }

  // Starting point: equality-constrained solve, slacks pushed interior.
  Vec z, lam, mu, s;
  bool warm = opts.warm && opts.warm->z.size() == n && opts.warm->mu_in.size() == mi &&
              opts.warm->lambda_eq.size() == me;
  if (warm) {
    z = opts.warm->z;
    lam = opts.warm->lambda_eq;
    mu = opts.warm->mu_in.cwiseMax(1e-6);
    s = (qp.b_in - qp.A_in * z).cwiseMax(1e-6);
  } else {
    EqKkt eq = solve_eq_kkt(Hs, qp.g, qp.A_eq, qp.b_eq, 1e-8);
    z = eq.ok ? eq.z : Vec::Zero(n);
    lam = eq.ok && me > 0 ? eq.lam : Vec::Zero(me);
    Vec s_raw = qp.b_in - qp.A_in * z;
    s = s_raw.cwiseMax(1.0);
    mu = Vec::Ones(mi);
  }

  KktSystem kkt(Hs, qp.A_eq, qp.A_in);
  std::vector<double> primal_hist;
  primal_hist.reserve(opts.max_iter + 1);
  bool infeasible = false;

  for (int iter = 0; iter < opts.max_iter; ++iter) {
    Vec rd = Hs * z + qp.g;
    if (me > 0) rd += qp.A_eq.transpose() * lam;
    rd += qp.A_in.transpose() * mu;
    Vec re = me > 0 ? Vec(qp.A_eq * z - qp.b_eq) : Vec(0);
    Vec ri = qp.A_in * z + s - qp.b_in;
    double comp = max_abs(Vec(s.cwiseProduct(mu)));
    double primal_inf = std::max(max_abs(re), max_abs(ri));
    double res = std::max({max_abs(rd), primal_inf, comp});
    sol.iterations = iter;
    primal_hist.push_back(primal_inf);
    if (res <= 0.5 * opts.tol) break;
    if (iter >= 20 && primal_inf > 100.0 * opts.tol &&
        primal_inf >= (1.0 - 1e-12) * primal_hist[iter - 20]) {
      infeasible = true;
      break;
    }
    // Degenerate active sets stall the superlinear phase; polish can still
    // land on an exact solution from a merely good iterate.
    if (iter >= 30 && iter % 10 == 0 && res < 1e-2) {
      QpSolution cur;
      cur.z = z;
      cur.lambda_eq = lam;
      cur.mu_in = mu.cwiseMax(0.0);
      cur.value = objective(Hs, qp.g, cur.z);
      cur.kkt_residual = kkt_residual(qp, cur);
      try_polish(qp, Hs, cur);
      if (cur.kkt_residual <= opts.tol) {
        cur.status = QpStatus::Optimal;
        cur.iterations = iter;
        return cur;
      }
    }

    Vec d = s.cwiseQuotient(mu);
    if (!kkt.factorize(d)) throw QpError("solve_qp: KKT factorization failed");

    const int N = n + me + mi;
    Vec rhs(N);
    rhs.head(n) = -rd;
    if (me > 0) rhs.segment(n, me) = -re;
    rhs.tail(mi) = -ri + s;  // predictor: rc = -s.*mu
    Vec step = kkt.solve(rhs);
    Vec dz = step.head(n);
    Vec dmu = step.tail(mi);
    Vec ds = -ri - qp.A_in * dz;

    auto max_step = [](const Vec& v, const Vec& dv) {
      double a = 1.0;
      for (int i = 0; i < v.size(); ++i)
        if (dv[i] < 0) a = std::min(a, -v[i] / dv[i]);
      return a;
    };
    double ap = max_step(s, ds), ad = max_step(mu, dmu);
    double mu_bar = s.dot(mu) / mi;
    double mu_aff = (s + ap * ds).dot(mu + ad * dmu) / mi;
    double sigma = std::clamp(std::pow(mu_aff / mu_bar, 3.0), 0.0, 1.0);

    // corrector: rc_i = -s_i mu_i - ds_i dmu_i + sigma*mu_bar
    Vec rc = -s.cwiseProduct(mu) - ds.cwiseProduct(dmu) + Vec::Constant(mi, sigma * mu_bar);
    rhs.tail(mi) = -ri - rc.cwiseQuotient(mu);
    step = kkt.solve(rhs);
    dz = step.head(n);
    Vec dlam = me > 0 ? Vec(step.segment(n, me)) : Vec(0);
    dmu = step.tail(mi);
    ds = -ri - qp.A_in * dz;

    double eta = std::max(0.995, 1.0 - 1e3 * mu_bar);
    eta = std::min(eta, 1.0 - 1e-10);
    ap = std::min(1.0, eta * max_step(s, ds));
    ad = std::min(1.0, eta * max_step(mu, dmu));
    z += ap * dz;
    s += ap * ds;
    if (me > 0) lam += ad * dlam;
    mu += ad * dmu;
  }

  sol.z = z;
  sol.lambda_eq = lam;
  sol.mu_in = mu.cwiseMax(0.0);
  sol.value = objective(Hs, qp.g, sol.z);
  sol.kkt_residual = kkt_residual(qp, sol);
  if (infeasible) {
    sol.status = QpStatus::Infeasible;
    return sol;
  }
  try_polish(qp, Hs, sol);
  sol.value = objective(Hs, qp.g, sol.z);
  sol.status = sol.kkt_residual <= opts.tol ? QpStatus::Optimal : QpStatus::MaxIterations;
  if (sol.status == QpStatus::MaxIterations && warm) {
    // Retry cold; warm starts occasionally stall near the boundary.
    SolveOptions cold = opts;
    cold.warm = nullptr;
    return solve_qp(qp, cold);
  }
  return sol;
}

namespace {

double lagrangian(const QpProblem& p, const Vec& z, const Vec& lam, const Vec& mu) {
  double L = 0.5 * z.dot(p.H * z) + p.g.dot(z);
  if (p.m_eq() > 0) L += lam.dot(p.A_eq * z - p.b_eq);
  if (p.m_in() > 0) L += mu.dot(p.A_in * z - p.b_in);
  return L;
}

bool strict_complementarity_violated(const QpProblem& p, const QpSolution& sol) {
  if (p.m_in() == 0) return false;
  Vec slack = p.b_in - p.A_in * sol.z;
  for (int i = 0; i < p.m_in(); ++i)
    if (sol.mu_in[i] < kComplTol && slack[i] < kComplTol) return true;
  return false;
}

}  // namespace

ValueSensitivity value_sensitivity(const ParametricQp& pqp, const Vec& theta,
                                   const QpSolution& sol) {
  ValueSensitivity out;
  out.dvalue = Vec::Zero(pqp.param_dim);
  QpProblem base = pqp.builder(theta);
  out.degenerate = strict_complementarity_violated(base, sol);
  for (int k = 0; k < pqp.param_dim; ++k) {
    double h = 1e-6 * (1.0 + std::abs(theta[k]));
    Vec tp = theta, tm = theta;
    tp[k] += h;
    tm[k] -= h;
    QpProblem pp = pqp.builder(tp);
    QpProblem pm = pqp.builder(tm);
    out.dvalue[k] =
        (lagrangian(pp, sol.z, sol.lambda_eq, sol.mu_in) -
         lagrangian(pm, sol.z, sol.lambda_eq, sol.mu_in)) /
        (2.0 * h);
  }
  return out;
}

SolutionSensitivity solution_sensitivity(const ParametricQp& pqp, const Vec& theta,
                                         const QpSolution& sol) {
  QpProblem base = pqp.builder(theta);
  const int n = base.n(), me = base.m_eq(), mi = base.m_in();
  SolutionSensitivity out;
  out.degenerate = strict_complementarity_violated(base, sol);

  Vec slack = mi > 0 ? Vec(base.b_in - base.A_in * sol.z) : Vec(0);
  std::vector<int> active;
  for (int i = 0; i < mi; ++i)
    if (sol.mu_in[i] > std::max(slack[i], 1e-9)) active.push_back(i);
  const int na = static_cast<int>(active.size());

  Mat H = 0.5 * (Mat(base.H) + Mat(base.H).transpose());
  Mat M = Mat::Zero(n + me + na, n + me + na);
  M.topLeftCorner(n, n) = H;
  if (me > 0) {
    Mat Ae = Mat(base.A_eq);
    M.block(n, 0, me, n) = Ae;
    M.block(0, n, n, me) = Ae.transpose();
  }
  Mat Aa(na, n);
  for (int k = 0; k < na; ++k) Aa.row(k) = Mat(base.A_in).row(active[k]);
  if (na > 0) {
    M.block(n + me, 0, na, n) = Aa;
    M.block(0, n + me, n, na) = Aa.transpose();
  }
  Eigen::FullPivLU<Mat> lu(M);
  lu.setThreshold(1e-10);
  if (!lu.isInvertible()) {
    std::ostringstream msg;
    msg << "solution_sensitivity: reduced KKT matrix singular (n=" << n << ", m_eq=" << me
        << ", active inequality rows:";
    for (int i : active) msg << ' ' << i;
    msg << ")";
    throw QpError(msg.str());
  }

  Vec mu_act(na);
  for (int k = 0; k < na; ++k) mu_act[k] = sol.mu_in[active[k]];

  out.dz = Mat::Zero(n, pqp.param_dim);
  for (int k = 0; k < pqp.param_dim; ++k) {
    double h = 1e-6 * (1.0 + std::abs(theta[k]));
    Vec tp = theta, tm = theta;
    tp[k] += h;
    tm[k] -= h;
    QpProblem pp = pqp.builder(tp);
    QpProblem pm = pqp.builder(tm);
    Mat dH = (Mat(pp.H) - Mat(pm.H)) / (2.0 * h);
    Vec dg = (pp.g - pm.g) / (2.0 * h);
    Vec rhs = Vec::Zero(n + me + na);
    rhs.head(n) = -(0.5 * (dH + dH.transpose()) * sol.z + dg);
    if (me > 0) {
      Mat dAe = (Mat(pp.A_eq) - Mat(pm.A_eq)) / (2.0 * h);
      Vec dbe = (pp.b_eq - pm.b_eq) / (2.0 * h);
      rhs.head(n) -= dAe.transpose() * sol.lambda_eq;
      rhs.segment(n, me) = dbe - dAe * sol.z;
    }
    if (na > 0) {
      Mat dAi = (Mat(pp.A_in) - Mat(pm.A_in)) / (2.0 * h);
      Vec dbi = (pp.b_in - pm.b_in) / (2.0 * h);
      Mat dAa(na, n);
      Vec dba(na);
      for (int j = 0; j < na; ++j) {
        dAa.row(j) = dAi.row(active[j]);
        dba[j] = dbi[active[j]];
      }
      rhs.head(n) -= dAa.transpose() * mu_act;
      rhs.segment(n + me, na) = dba - dAa * sol.z;
    }
    Vec x = lu.solve(rhs);
    out.dz.col(k) = x.head(n);
  }
  return out;
}

ValueHessian value_hessian(const ParametricQp& pqp, const Vec& theta, const SolveOptions& opts,
                           const QpSolution* base_in) {
  ValueHessian out;
  const int d = pqp.param_dim;
  out.d2value = Mat::Zero(d, d);
  QpSolution base;
  if (!base_in) {
    base = solve_qp(pqp.builder(theta), opts);
    base_in = &base;
  }
  if (base_in->status != QpStatus::Optimal)
    throw QpError(std::string("value_hessian: base solve not optimal (") +
                  to_string(base_in->status) + ")");
  SolveOptions warm_opts = opts;
  warm_opts.warm = base_in;
  for (int k = 0; k < d; ++k) {
    double h = 1e-4 * (1.0 + std::abs(theta[k]));
    Vec tp = theta, tm = theta;
    tp[k] += h;
    tm[k] -= h;
    QpSolution sp = solve_qp(pqp.builder(tp), warm_opts);
    QpSolution sm = solve_qp(pqp.builder(tm), warm_opts);
    if (sp.status != QpStatus::Optimal || sm.status != QpStatus::Optimal)
      throw QpError("value_hessian: stencil solve not optimal");
    ValueSensitivity gp = value_sensitivity(pqp, tp, sp);
    ValueSensitivity gm = value_sensitivity(pqp, tm, sm);
    out.degenerate = out.degenerate || gp.degenerate || gm.degenerate;
    out.d2value.col(k) = (gp.dvalue - gm.dvalue) / (2.0 * h);
  }
  out.d2value = 0.5 * (out.d2value + out.d2value.transpose()).eval();
  return out;
}

}  // namespace safempc::qp
