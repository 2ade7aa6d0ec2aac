#include "safempc/mpc.hpp"

#include <cmath>
#include <vector>

namespace safempc::mpc {

using quad::kNumBounded;
using quad::kNumConstraints;
namespace idx = quad::idx;

std::vector<std::string> MpcParams::validate() const {
  std::vector<std::string> errs;
  if (k_z_hat == 0) errs.push_back("mpc: k_z_hat must be nonzero");
  if (!(delta > -1.0)) errs.push_back("mpc: delta must stay above -1");
  return errs;
}

std::vector<std::string> MpcConfig::validate() const {
  std::vector<std::string> errs;
  if (horizon < 1) errs.push_back("mpc: horizon must be >= 1");
  if (q_diag.minCoeff() < 0 || qf_diag.minCoeff() < 0)
    errs.push_back("mpc: tracking weights must be nonnegative");
  if (r_diag.minCoeff() <= 0) errs.push_back("mpc: action weights must be positive");
  if (slack_weight <= 0 || terminal_slack_weight <= 0)
    errs.push_back("mpc: slack weights must be positive");
  if (!(gamma > 0 && gamma <= 1)) errs.push_back("mpc: gamma must lie in (0, 1]");
  if (!(ts > 0)) errs.push_back("mpc: sampling time must be positive");
  if (solver_tol <= 0) errs.push_back("mpc: solver tolerance must be positive");
  return errs;
}

namespace {

// Column index and offset of bounded quantity q at stage k, with its constant
// part (the target component for state quantities, the hover reference for
// actions).
struct BoundedRef {
  int col;
  double shift;
};

BoundedRef bounded_ref(const Layout& lay, const quad::TaskSpec& task, const Action& u_ref,
                       int k, int q) {
  static const int state_comp[5] = {idx::px, idx::py, idx::pz, idx::ap, idx::ar};
  if (q < 5) return {lay.x_off(k) + state_comp[q], task.target[state_comp[q]]};
  return {lay.u_off(k) + (q - 5), u_ref[q - 5]};
}

qp::QpProblem build_horizon_qp(const State& s, const Eigen::Vector3d& theta, const MpcConfig& cfg,
                               const Action* pinned_action) {
  const Layout lay(cfg.horizon);
  const int N = cfg.horizon;
  const double g_hat = theta[0], k_z_hat = theta[1], delta = theta[2];
  const double scale = 1.0 + delta;
  const quad::TaskSpec& task = cfg.task;

  quad::Dynamics dyn =
      quad::assemble_dynamics(cfg.ts, g_hat, cfg.fixed.d_pitch, cfg.fixed.d_roll,
                              cfg.fixed.d_pitch_rate, cfg.fixed.d_roll_rate, cfg.fixed.k_pitch,
                              cfg.fixed.k_roll, k_z_hat);
  // Tracking costs in both states and actions: error coordinates
  // xt = x - s_f and ut = u - u_ref around the model's hover action, so
  // xt+ = A xt + B ut + r with r = A s_f + B u_ref + G - s_f.
  Action u_ref(0.0, 0.0, g_hat / k_z_hat);
  State r = dyn.A * task.target + dyn.B * u_ref + dyn.G - task.target;

  qp::QpProblem p;
  const int n = lay.n_dec();
  const int me = lay.m_eq() + (pinned_action ? 3 : 0);
  const int mi = lay.m_in();

  std::vector<Eigen::Triplet<double>> Ht, Et, It;
  p.g = qp::Vec::Zero(n);
  p.b_eq = qp::Vec::Zero(me);
  p.b_in = qp::Vec::Zero(mi);

  double disc = 1.0;
  for (int k = 0; k <= N; ++k) {
    if (k < N) {
      for (int i = 0; i < 10; ++i)
        Ht.emplace_back(lay.x_off(k) + i, lay.x_off(k) + i, 2.0 * disc * cfg.q_diag[i]);
      for (int i = 0; i < 3; ++i)
        Ht.emplace_back(lay.u_off(k) + i, lay.u_off(k) + i, 2.0 * disc * cfg.r_diag[i]);
      for (int j = 0; j < kNumConstraints; ++j) {
        Ht.emplace_back(lay.s_off(k) + j, lay.s_off(k) + j, cfg.slack_reg);
        p.g[lay.s_off(k) + j] = disc * cfg.slack_weight;
      }
    } else {
      for (int i = 0; i < 10; ++i)
        Ht.emplace_back(lay.x_off(N) + i, lay.x_off(N) + i, 2.0 * disc * cfg.qf_diag[i]);
      for (int j = 0; j < 10; ++j) {
        Ht.emplace_back(lay.sN_off() + j, lay.sN_off() + j, cfg.slack_reg);
        p.g[lay.sN_off() + j] = disc * cfg.terminal_slack_weight;
      }
    }
    disc *= cfg.gamma;
  }

  // x0 = s - s_f
  for (int i = 0; i < 10; ++i) {
    Et.emplace_back(i, lay.x_off(0) + i, 1.0);
    p.b_eq[i] = s[i] - task.target[i];
  }
  // dynamics rows
  for (int k = 0; k < N; ++k) {
    int row = 10 * (k + 1);
    for (int i = 0; i < 10; ++i) {
      Et.emplace_back(row + i, lay.x_off(k + 1) + i, 1.0);
      for (int j = 0; j < 10; ++j)
        if (dyn.A(i, j) != 0.0) Et.emplace_back(row + i, lay.x_off(k) + j, -dyn.A(i, j));
      for (int j = 0; j < 3; ++j)
        if (dyn.B(i, j) != 0.0) Et.emplace_back(row + i, lay.u_off(k) + j, -dyn.B(i, j));
      p.b_eq[row + i] = r[i];
    }
  }
  if (pinned_action) {
    int row = lay.m_eq();
    for (int i = 0; i < 3; ++i) {
      Et.emplace_back(row + i, lay.u_off(0) + i, 1.0);
      p.b_eq[row + i] = (*pinned_action)[i] - u_ref[i];
    }
  }

  // (1+delta) h(x_k, u_k) <= sigma_k
  const double eps = cfg.bound_margin;
  for (int k = 0; k < N; ++k) {
    int base = lay.in_stage_off(k);
    for (int q = 0; q < kNumBounded; ++q) {
      BoundedRef ref = bounded_ref(lay, task, u_ref, k, q);
      int rlo = base + 2 * q, rhi = base + 2 * q + 1;
      It.emplace_back(rlo, ref.col, -scale);
      It.emplace_back(rlo, lay.s_off(k) + 2 * q, -1.0);
      p.b_in[rlo] = scale * (ref.shift - task.bound_lo[q] - eps);
      It.emplace_back(rhi, ref.col, scale);
      It.emplace_back(rhi, lay.s_off(k) + 2 * q + 1, -1.0);
      p.b_in[rhi] = scale * (task.bound_hi[q] - eps - ref.shift);
    }
  }
  // terminal state-only rows
  for (int q = 0; q < 5; ++q) {
    BoundedRef ref = bounded_ref(lay, task, u_ref, N, q);
    int rlo = lay.in_term_off() + 2 * q, rhi = rlo + 1;
    It.emplace_back(rlo, ref.col, -scale);
    It.emplace_back(rlo, lay.sN_off() + 2 * q, -1.0);
    p.b_in[rlo] = scale * (ref.shift - task.bound_lo[q] - eps);
    It.emplace_back(rhi, ref.col, scale);
    It.emplace_back(rhi, lay.sN_off() + 2 * q + 1, -1.0);
    p.b_in[rhi] = scale * (task.bound_hi[q] - eps - ref.shift);
  }
  // sigma >= 0
  for (int j = 0; j < lay.n_s(); ++j) {
    int row = lay.in_slack_off() + j;
    It.emplace_back(row, lay.n_u() + lay.n_x() + j, -1.0);
    p.b_in[row] = 0.0;
  }

  p.H.resize(n, n);
  p.H.setFromTriplets(Ht.begin(), Ht.end());
  p.A_eq.resize(me, n);
  p.A_eq.setFromTriplets(Et.begin(), Et.end());
  p.A_in.resize(mi, n);
  p.A_in.setFromTriplets(It.begin(), It.end());
  return p;
}

MpcSolution finish_solution(const MpcConfig& cfg, const Eigen::Vector3d& theta,
                            qp::QpSolution qpsol) {
  const Layout lay(cfg.horizon);
  if (qpsol.status == qp::QpStatus::MaxIterations)
    throw std::runtime_error("mpc: QP solver hit iteration limit (kkt residual " +
                             std::to_string(qpsol.kkt_residual) + ")");
  if (qpsol.status == qp::QpStatus::Infeasible)
    throw std::runtime_error("mpc: QP reported infeasible; slack formulation should prevent this");
  MpcSolution out;
  out.value = qpsol.value;
  out.first_action =
      Action(qpsol.z.segment<3>(lay.u_off(0))) + Action(0.0, 0.0, theta[0] / theta[1]);
  out.max_slack = qpsol.z.segment(lay.n_u() + lay.n_x(), lay.n_s()).maxCoeff();
  out.qp_solution = std::move(qpsol);
  return out;
}

}  // namespace

qp::ParametricQp build_value_problem(const State& s, const MpcConfig& cfg) {
  qp::ParametricQp pqp;
  pqp.param_dim = 3;
  pqp.builder = [s, cfg](const qp::Vec& theta) {
    return build_horizon_qp(s, Eigen::Vector3d(theta), cfg, nullptr);
  };
  return pqp;
}

qp::ParametricQp build_action_value_problem(const State& s, const Action& a,
                                            const MpcConfig& cfg) {
  qp::ParametricQp pqp;
  pqp.param_dim = 3;
  pqp.builder = [s, a, cfg](const qp::Vec& theta) {
    return build_horizon_qp(s, Eigen::Vector3d(theta), cfg, &a);
  };
  return pqp;
}

MpcSolution evaluate_value(const State& s, const MpcParams& theta, const MpcConfig& cfg) {
  qp::QpProblem p = build_horizon_qp(s, theta.to_vector(), cfg, nullptr);
  qp::SolveOptions opts;
  opts.tol = cfg.solver_tol;
  opts.max_iter = cfg.solver_max_iter;
  return finish_solution(cfg, theta.to_vector(), qp::solve_qp(p, opts));
}

MpcSolution evaluate_action_value(const State& s, const Action& a, const MpcParams& theta,
                                  const MpcConfig& cfg) {
  qp::QpProblem p = build_horizon_qp(s, theta.to_vector(), cfg, &a);
  qp::SolveOptions opts;
  opts.tol = cfg.solver_tol;
  opts.max_iter = cfg.solver_max_iter;
  return finish_solution(cfg, theta.to_vector(), qp::solve_qp(p, opts));
}

Action policy(const State& s, const MpcParams& theta, const MpcConfig& cfg) {
  return evaluate_value(s, theta, cfg).first_action;
}

Gradient action_value_gradient(const State& s, const Action& a, const MpcParams& theta,
                               const MpcConfig& cfg) {
  qp::ParametricQp pqp = build_action_value_problem(s, a, cfg);
  qp::SolveOptions opts;
  opts.tol = cfg.solver_tol;
  opts.max_iter = cfg.solver_max_iter;
  Eigen::Vector3d tv = theta.to_vector();
  qp::QpSolution sol = qp::solve_qp(pqp.builder(tv), opts);
  if (sol.status != qp::QpStatus::Optimal)
    throw std::runtime_error("mpc: action-value solve failed during sensitivity");
  qp::ValueSensitivity vs = qp::value_sensitivity(pqp, tv, sol);
  Gradient grad;
  grad.degenerate = vs.degenerate;
  if (!vs.degenerate) {
    grad.value = vs.dvalue;
    return grad;
  }
  // Degenerate active set: one-sided difference of solved values.
  qp::SolveOptions warm = opts;
  warm.warm = &sol;
  for (int k = 0; k < 3; ++k) {
    double h = 1e-6 * (1.0 + std::abs(tv[k]));
    qp::Vec tp = tv;
    tp[k] += h;
    qp::QpSolution sp = qp::solve_qp(pqp.builder(tp), warm);
    if (sp.status != qp::QpStatus::Optimal)
      throw std::runtime_error("mpc: degenerate-fallback solve failed");
    grad.value[k] = (sp.value - sol.value) / h;
  }
  return grad;
}

Hessian action_value_hessian(const State& s, const Action& a, const MpcParams& theta,
                             const MpcConfig& cfg) {
  qp::ParametricQp pqp = build_action_value_problem(s, a, cfg);
  qp::SolveOptions opts;
  opts.tol = cfg.solver_tol;
  opts.max_iter = cfg.solver_max_iter;
  qp::ValueHessian vh = qp::value_hessian(pqp, theta.to_vector(), opts);
  Hessian out;
  out.value = vh.d2value;
  out.degenerate = vh.degenerate;
  return out;
}

MpcConfig mpc_config_from_config(const Config& cfg, const quad::TaskSpec& task) {
  MpcConfig m;
  m.task = task;
  m.gamma = task.gamma;
  m.horizon = cfg.get_int("mpc.horizon", m.horizon);
  m.ts = cfg.get_double("env.sampling_time", m.ts);
  auto qd = cfg.get_vector("mpc.q_diag", std::vector<double>(10, 1.0));
  auto qf = cfg.get_vector("mpc.qf_diag", std::vector<double>(10, 20.0));
  if (qd.size() != 10 || qf.size() != 10)
    throw ConfigError("mpc.q_diag/qf_diag: expected 10 values");
  for (int i = 0; i < 10; ++i) {
    m.q_diag[i] = qd[i];
    m.qf_diag[i] = qf[i];
  }
  auto rd = cfg.get_vector("mpc.r_diag", {0.01, 0.01, 0.01});
  if (rd.size() != 3) throw ConfigError("mpc.r_diag: expected 3 values");
  for (int i = 0; i < 3; ++i) m.r_diag[i] = rd[i];
  m.slack_weight = cfg.get_double("mpc.slack_weight", m.slack_weight);
  m.terminal_slack_weight = cfg.get_double("mpc.terminal_slack_weight", m.terminal_slack_weight);
  m.slack_reg = cfg.get_double("mpc.slack_reg", m.slack_reg);
  m.bound_margin = cfg.get_double("mpc.bound_margin", m.bound_margin);
  m.solver_tol = cfg.get_double("mpc.solver_tol", m.solver_tol);
  m.solver_max_iter = cfg.get_int("mpc.solver_max_iter", m.solver_max_iter);
  // True-model defaults for the fixed entries; learning runs overwrite them
  // with the per-run wrong initialization.
  m.fixed.d_pitch = cfg.get_double("env.d_pitch", m.fixed.d_pitch);
  m.fixed.d_roll = cfg.get_double("env.d_roll", m.fixed.d_roll);
  m.fixed.d_pitch_rate = cfg.get_double("env.d_pitch_rate", m.fixed.d_pitch_rate);
  m.fixed.d_roll_rate = cfg.get_double("env.d_roll_rate", m.fixed.d_roll_rate);
  m.fixed.k_pitch = cfg.get_double("env.k_pitch", m.fixed.k_pitch);
  m.fixed.k_roll = cfg.get_double("env.k_roll", m.fixed.k_roll);
  return m;
}

}  // namespace safempc::mpc
