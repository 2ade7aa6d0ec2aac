#pragma once

#include <Eigen/Dense>

#include <string>
#include <vector>

#include "safempc/config.hpp"
#include "safempc/qp.hpp"
#include "safempc/quadrotor.hpp"

namespace safempc::mpc {

using quad::Action;
using quad::State;

// Learnable controller parameters theta = [g_hat, k_z_hat, delta].
struct MpcParams {
  double g_hat = 9.81;
  double k_z_hat = 0.7;
  double delta = 0.0;  // constraint backoff; (1+delta) scales the box rows

  Eigen::Vector3d to_vector() const { return {g_hat, k_z_hat, delta}; }
  static MpcParams from_vector(const Eigen::Vector3d& v) { return {v[0], v[1], v[2]}; }
  std::vector<std::string> validate() const;
};

// Non-learnable model entries, wrongly initialized in learning experiments.
struct FixedModel {
  double d_pitch = 8.0;
  double d_roll = 8.0;
  double d_pitch_rate = 10.0;
  double d_roll_rate = 10.0;
  double k_pitch = 9.0;
  double k_roll = 9.0;
};

struct MpcConfig {
  int horizon = 10;  // N
  Eigen::Matrix<double, 10, 1> q_diag = Eigen::Matrix<double, 10, 1>::Ones();
  Eigen::Vector3d r_diag{0.01, 0.01, 0.01};
  Eigen::Matrix<double, 10, 1> qf_diag = Eigen::Matrix<double, 10, 1>::Constant(20.0);
  double slack_weight = 300.0;
  double terminal_slack_weight = 300.0;
  double slack_reg = 1e-8;  // keeps the QP strictly convex in the slacks
  // Numerical inset on the raw bounds before the (1+delta) scaling, so
  // actions returned at a saturated bound stay inside the task box despite
  // solver tolerance.
  double bound_margin = 0.01;
  double ts = 0.1;
  FixedModel fixed;
  double gamma = 0.9792;
  quad::TaskSpec task;
  double solver_tol = 1e-8;
  int solver_max_iter = 100;

  std::vector<std::string> validate() const;
};

// Decision-vector layout of the horizon QP: all inputs, then all error
// states, then all slacks.
struct Layout {
  int N;
  explicit Layout(int horizon) : N(horizon) {}
  int n_u() const { return 3 * N; }
  int n_x() const { return 10 * (N + 1); }
  int n_s() const { return quad::kNumConstraints * N + 10; }
  int n_dec() const { return n_u() + n_x() + n_s(); }
  int u_off(int k) const { return 3 * k; }
  int x_off(int k) const { return n_u() + 10 * k; }
  int s_off(int k) const { return n_u() + n_x() + quad::kNumConstraints * k; }
  int sN_off() const { return n_u() + n_x() + quad::kNumConstraints * N; }
  int m_eq() const { return 10 * (N + 1); }
  int m_in() const { return 2 * n_s(); }
  // inequality row blocks: stage backoff, terminal backoff, slack >= 0
  int in_stage_off(int k) const { return quad::kNumConstraints * k; }
  int in_term_off() const { return quad::kNumConstraints * N; }
  int in_slack_off() const { return quad::kNumConstraints * N + 10; }
};

struct MpcSolution {
  double value = 0.0;
  Action first_action = Action::Zero();
  qp::QpSolution qp_solution;
  bool degenerate = false;
  double max_slack = 0.0;
};

// Parametric QP for the horizon value problem at state s; decision vector
// stacks (u, x - s_f, sigma) so the QP objective equals the MPC cost exactly.
qp::ParametricQp build_value_problem(const State& s, const MpcConfig& cfg);

// Same problem plus the first-action pinning constraint u_0 = a.
qp::ParametricQp build_action_value_problem(const State& s, const Action& a,
                                            const MpcConfig& cfg);

MpcSolution evaluate_value(const State& s, const MpcParams& theta, const MpcConfig& cfg);
MpcSolution evaluate_action_value(const State& s, const Action& a, const MpcParams& theta,
                                  const MpcConfig& cfg);

Action policy(const State& s, const MpcParams& theta, const MpcConfig& cfg);

struct Gradient {
  Eigen::Vector3d value = Eigen::Vector3d::Zero();
  bool degenerate = false;
};

// d Q_theta(s,a) / d theta from the Lagrangian of the action-value QP;
// degenerate optima fall back to a one-sided difference of solved values.
Gradient action_value_gradient(const State& s, const Action& a, const MpcParams& theta,
                               const MpcConfig& cfg);

struct Hessian {
  Eigen::Matrix3d value = Eigen::Matrix3d::Zero();
  bool degenerate = false;
};

// d^2 Q / d theta^2 by central differences of the exact first-order
// sensitivity, symmetrized.
Hessian action_value_hessian(const State& s, const Action& a, const MpcParams& theta,
                             const MpcConfig& cfg);

MpcConfig mpc_config_from_config(const Config& cfg, const quad::TaskSpec& task);

}  // namespace safempc::mpc
