#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <functional>
#include <stdexcept>
#include <string>

namespace safempc::qp {

using SpMat = Eigen::SparseMatrix<double>;
using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// Convex quadratic program
//   min  1/2 z'Hz + g'z
//   s.t. A_eq z = b_eq,  A_in z <= b_in.
// H must be symmetric to 1e-8; positive semidefiniteness is the builder's
// responsibility (the solver adds 1e-10 diagonal regularization before
// factorization).
struct QpProblem {
  SpMat H;
  Vec g;
  SpMat A_eq;
  Vec b_eq;
  SpMat A_in;
  Vec b_in;

  int n() const { return static_cast<int>(g.size()); }
  int m_eq() const { return static_cast<int>(b_eq.size()); }
  int m_in() const { return static_cast<int>(b_in.size()); }

  static QpProblem from_dense(const Mat& H, const Vec& g, const Mat& A_eq, const Vec& b_eq,
                              const Mat& A_in, const Vec& b_in);
  // Unconstrained / equality-only conveniences.
  static QpProblem unconstrained(const Mat& H, const Vec& g);

  // Throws QpError on dimension mismatch or asymmetric H.
  void validate() const;
};

enum class QpStatus { Optimal, Infeasible, MaxIterations };

const char* to_string(QpStatus s);

struct QpSolution {
  Vec z;            // primal optimum
  Vec lambda_eq;    // equality multipliers
  Vec mu_in;        // inequality multipliers (>= 0 at optimality)
  double value = 0.0;
  QpStatus status = QpStatus::MaxIterations;
  double kkt_residual = 0.0;
  int iterations = 0;
};

struct SolveOptions {
  double tol = 1e-8;
  int max_iter = 100;
  // Optional warm start (primal/dual estimates); used by repeated
  // nearby solves inside finite-difference stencils.
  const QpSolution* warm = nullptr;
};

struct QpError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

QpSolution solve_qp(const QpProblem& qp, const SolveOptions& opts = {});

// Max of stationarity, primal feasibility, dual feasibility and
// complementarity infinity norms at (z, lambda_eq, mu_in).
double kkt_residual(const QpProblem& qp, const QpSolution& sol);

// A QP whose data is a differentiable function of a parameter vector; the
// builder must be deterministic and keep output dimensions fixed.
struct ParametricQp {
  std::function<QpProblem(const Vec& theta)> builder;
  int param_dim = 0;
};

struct ValueSensitivity {
  Vec dvalue;        // d(optimal value)/d(theta)
  bool degenerate = false;  // strict complementarity violated at the optimum
};

struct SolutionSensitivity {
  Mat dz;            // d(z*)/d(theta), n x param_dim
  bool degenerate = false;
};

// Gradient of the optimal value via the Lagrangian envelope: the multipliers
// are held fixed and the problem data is differentiated by central
// differences with step 1e-6*(1+|theta_k|).
ValueSensitivity value_sensitivity(const ParametricQp& pqp, const Vec& theta,
                                   const QpSolution& sol);

// d z*/d theta from the linearized KKT system with the active inequalities
// treated as equalities. Throws QpError naming the offending block if the
// reduced KKT matrix is singular.
SolutionSensitivity solution_sensitivity(const ParametricQp& pqp, const Vec& theta,
                                         const QpSolution& sol);

// Hessian of the optimal value by central differences of value_sensitivity,
// symmetrized as (M + M')/2. `degenerate` is set if any stencil point was
// flagged. A precomputed solution at `theta` may be supplied to warm the
// stencil solves.
struct ValueHessian {
  Mat d2value;
  bool degenerate = false;
};
ValueHessian value_hessian(const ParametricQp& pqp, const Vec& theta,
                           const SolveOptions& opts = {}, const QpSolution* base = nullptr);

}  // namespace safempc::qp
