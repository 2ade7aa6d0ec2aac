#include "safempc/agent.hpp"

#include <omp.h>

#include <cmath>
#include <limits>
#include <sstream>

#include "safempc/rng.hpp"

namespace safempc::agent {

using Eigen::Matrix3d;
using Eigen::Vector3d;

std::vector<std::string> AgentConfig::validate() const {
  std::vector<std::string> errs;
  if (!(alpha > 0)) errs.push_back("agent: alpha must be positive");
  if (!(beta_target > 0 && beta_target < 1)) errs.push_back("agent: beta_target must lie in (0,1)");
  if (!(rho > 0 && rho < 1)) errs.push_back("agent: rho must lie in (0,1)");
  if (max_backtracks < 0) errs.push_back("agent: max_backtracks must be >= 0");
  if (batch_size < 0) errs.push_back("agent: batch_size must be >= 0");
  if (update_every < 1) errs.push_back("agent: update_every must be >= 1");
  if (hessian_floor_rel <= 0) errs.push_back("agent: hessian floor must be positive");
  if (!(delta_min > -1.0) || !(delta_max > delta_min))
    errs.push_back("agent: delta domain must satisfy -1 < delta_min < delta_max");
  if (!(max_step_rel > 0)) errs.push_back("agent: max_step_rel must be positive");
  return errs;
}

double td_error(const Transition& tr, const MpcParams& theta, const MpcConfig& cfg) {
  double v_next = mpc::evaluate_value(tr.s_next, theta, cfg).value;
  double q = mpc::evaluate_action_value(tr.s, tr.a, theta, cfg).value;
  return tr.stage_cost + cfg.gamma * v_next - q;
}

namespace {

struct SampleTerm {
  double delta = 0.0;
  Vector3d grad = Vector3d::Zero();
  Matrix3d hess = Matrix3d::Zero();
  bool hess_valid = false;
  bool degenerate = false;
};

SampleTerm compute_sample(const Transition& tr, const Vector3d& tv, const MpcConfig& cfg) {
  qp::SolveOptions opts;
  opts.tol = cfg.solver_tol;
  opts.max_iter = cfg.solver_max_iter;

  qp::ParametricQp v_pqp = mpc::build_value_problem(tr.s_next, cfg);
  qp::QpSolution vsol = qp::solve_qp(v_pqp.builder(tv), opts);
  qp::ParametricQp q_pqp = mpc::build_action_value_problem(tr.s, tr.a, cfg);
  qp::QpSolution qsol = qp::solve_qp(q_pqp.builder(tv), opts);
  if (vsol.status != qp::QpStatus::Optimal || qsol.status != qp::QpStatus::Optimal)
    throw std::runtime_error("assemble_update: MPC solve failed on a batch sample");

  SampleTerm st;
  st.delta = tr.stage_cost + cfg.gamma * vsol.value - qsol.value;

  qp::ValueSensitivity vs = qp::value_sensitivity(q_pqp, tv, qsol);
  st.degenerate = vs.degenerate;
  if (!vs.degenerate) {
    st.grad = vs.dvalue;
  } else {
    // one-sided value difference fallback
    qp::SolveOptions warm = opts;
    warm.warm = &qsol;
    for (int k = 0; k < 3; ++k) {
      double h = 1e-6 * (1.0 + std::abs(tv[k]));
      qp::Vec tp = tv;
      tp[k] += h;
      qp::QpSolution sp = qp::solve_qp(q_pqp.builder(tp), warm);
      if (sp.status != qp::QpStatus::Optimal)
        throw std::runtime_error("assemble_update: degenerate-fallback solve failed");
      st.grad[k] = (sp.value - qsol.value) / h;
    }
  }

  if (!st.degenerate) {
    try {
      qp::ValueHessian vh = qp::value_hessian(q_pqp, tv, opts, &qsol);
      if (!vh.degenerate) {
        st.hess = vh.d2value;
        st.hess_valid = true;
      }
    } catch (const qp::QpError&) {
      st.hess_valid = false;
    }
  }
  return st;
}

UpdateTerms reduce_terms(const std::vector<SampleTerm>& terms) {
  UpdateTerms out;
  out.samples = static_cast<int>(terms.size());
  for (const SampleTerm& st : terms) {
    out.p -= st.delta * st.grad;
    out.H += st.grad * st.grad.transpose();
    if (st.hess_valid)
      out.H -= st.delta * st.hess;
    else
      ++out.degenerate_samples;
  }
  return out;
}

}  // namespace

UpdateTerms assemble_update(const std::vector<Transition>& batch, const MpcParams& theta,
                            const MpcConfig& cfg, bool parallel) {
  if (batch.empty()) throw std::invalid_argument("assemble_update: batch must be non-empty");
  const Vector3d tv = theta.to_vector();
  std::vector<SampleTerm> terms(batch.size());
  std::exception_ptr err;
#pragma omp parallel for schedule(dynamic) if (parallel)
  for (int i = 0; i < static_cast<int>(batch.size()); ++i) {
    try {
      terms[i] = compute_sample(batch[i], tv, cfg);
    } catch (...) {
#pragma omp critical
      if (!err) err = std::current_exception();
    }
  }
  if (err) std::rethrow_exception(err);
  UpdateTerms out = reduce_terms(terms);
  if (out.degenerate_samples == out.samples)
    throw std::runtime_error(
        "assemble_update: every sample was sensitivity-degenerate; use a larger batch");
  return out;
}

UpdateTerms assemble_update_serial(const std::vector<Transition>& batch, const MpcParams& theta,
                                   const MpcConfig& cfg) {
  return assemble_update(batch, theta, cfg, false);
}

Matrix3d make_positive_definite(const Matrix3d& H, double floor) {
  Matrix3d Hs = 0.5 * (H + H.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix3d> es(Hs);
  if (es.eigenvalues().minCoeff() >= floor) return Hs;
  Vector3d ev = es.eigenvalues().cwiseMax(floor);
  Matrix3d out = es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
  return 0.5 * (out + out.transpose());
}

namespace {

MpcParams clamp_params(MpcParams t, const AgentConfig& cfg, bool* clamped) {
  Eigen::Vector3d v = t.to_vector();
  Eigen::Vector3d before = v;
  v = v.cwiseMax(cfg.theta_lo).cwiseMin(cfg.theta_hi);
  t = MpcParams::from_vector(v);
  bool changed = (v - before).cwiseAbs().maxCoeff() > 0;
  if (std::abs(t.k_z_hat) < cfg.k_z_min) {
    double sign = t.k_z_hat >= 0 ? 1.0 : -1.0;
    t.k_z_hat = sign * cfg.k_z_min;
    changed = true;
  }
  if (t.delta < cfg.delta_min) {
    t.delta = cfg.delta_min;
    changed = true;
  }
  if (t.delta > cfg.delta_max) {
    t.delta = cfg.delta_max;
    changed = true;
  }
  if (clamped && changed) *clamped = true;
  return t;
}

Vector3d coordinate_scale(const Vector3d& theta, const Vector3d& scale) {
  Vector3d s;
  for (int i = 0; i < 3; ++i)
    s[i] = scale[i] > 0 ? scale[i] : std::max(std::abs(theta[i]), 1.0);
  return s;
}

Vector3d step_cap(const Vector3d& theta, double max_step_rel, const Vector3d& scale) {
  return max_step_rel * coordinate_scale(theta, scale);
}

}  // namespace

MpcParams unconstrained_update(const MpcParams& theta, const Vector3d& p, const Matrix3d& H,
                               double alpha, const AgentConfig& cfg, bool* clamped) {
  Vector3d step = alpha * H.llt().solve(p);
  Vector3d cap = step_cap(theta.to_vector(), cfg.max_step_rel, cfg.step_scale);
  bool clipped = false;
  for (int i = 0; i < 3; ++i) {
    if (std::abs(step[i]) > cap[i]) {
      step[i] = step[i] > 0 ? cap[i] : -cap[i];
      clipped = true;
    }
  }
  if (clamped && clipped) *clamped = true;
  Vector3d tv = theta.to_vector() + step;
  return clamp_params(MpcParams::from_vector(tv), cfg, clamped);
}

ConstrainedStep solve_constrained_step(const Vector3d& theta, const Vector3d& p, const Matrix3d& H,
                                       double alpha, const gp::SafetySurrogate& sur, double beta,
                                       const StepLimits& limits) {
  ConstrainedStep out;
  const Vector3d scale = coordinate_scale(theta, limits.scale);
  const Vector3d cap = limits.max_step_rel * scale;
  Vector3d newton = alpha * H.llt().solve(p);
  const double radius = 2.0 * newton.norm();
  const double margin_tol = 1e-6;

  if (radius < 1e-12) {
    // zero-length trust region: the only candidate is theta itself
    out.theta_plus = theta;
    out.feasible = (gp::safety_margin(sur, theta, beta).maxCoeff() <= margin_tol);
    return out;
  }

  auto objective = [&](const Vector3d& y) {
    Vector3d d = y - theta;
    return 0.5 * d.dot(H * d) - alpha * p.dot(d);
  };
  auto worst_margin = [&](const Vector3d& y) {
    return gp::safety_margin(sur, y, beta).maxCoeff();
  };
  const double merit_weight = 1e4 * (1.0 + std::abs(H.trace()));
  auto merit = [&](const Vector3d& y) {
    return objective(y) + merit_weight * std::max(0.0, worst_margin(y));
  };

  // Start from the capped unconstrained optimum. theta itself is a GP
  // training input where the margin gradient vanishes, so a linearization
  // there carries no escape direction.
  for (int i = 0; i < 3; ++i) newton[i] = std::clamp(newton[i], -cap[i], cap[i]);
  Vector3d y = (theta + newton).cwiseMax(limits.theta_lo).cwiseMin(limits.theta_hi);

  // If that start sits on a flat positive-margin plateau, pick the best of
  // the axis nudges so the first linearization carries slope.
  if (worst_margin(y) > margin_tol) {
    double best = worst_margin(y);
    Vector3d best_y = y;
    for (int i = 0; i < 3; ++i) {
      double esc = 2.0 * std::max(limits.min_escape_rel * scale[i], radius);
      for (double dir : {+1.0, -1.0}) {
        Vector3d cand = y;
        cand[i] = std::clamp(cand[i] + dir * esc, limits.theta_lo[i], limits.theta_hi[i]);
        double worst = worst_margin(cand);
        if (worst < best - 1e-15) {
          best = worst;
          best_y = cand;
        }
      }
    }
    y = best_y;
  }

  Vector3d half_width;
  for (int i = 0; i < 3; ++i)
    half_width[i] = std::min(std::max(radius, limits.min_escape_rel * scale[i]), 2.0 * cap[i]);

  bool have_best = false;
  Vector3d best_feasible = y;
  double best_feasible_obj = std::numeric_limits<double>::infinity();
  auto consider = [&](const Vector3d& cand) {
    if (worst_margin(cand) <= margin_tol) {
      double obj = objective(cand);
      if (!have_best || obj < best_feasible_obj) {
        have_best = true;
        best_feasible = cand;
        best_feasible_obj = obj;
      }
    }
  };
  consider(y);

  qp::Mat Hd = H;
  bool converged = false;
  for (int it = 0; it < 30 && !converged; ++it) {
    out.iterations = it + 1;
    qp::Vec m = gp::safety_margin(sur, y, beta);
    qp::Mat G = gp::safety_margin_gradient(sur, y, beta);
    const int nc = static_cast<int>(m.size());

    Vector3d box_hi = (y + half_width).cwiseMin(limits.theta_hi);
    Vector3d box_lo = (y - half_width).cwiseMax(limits.theta_lo);
    qp::Mat A_in(nc + 6, 3);
    qp::Vec b_in(nc + 6);
    A_in.topRows(nc) = G;
    b_in.head(nc) = G * y - m;
    A_in.block(nc, 0, 3, 3) = qp::Mat::Identity(3, 3);
    b_in.segment(nc, 3) = box_hi;
    A_in.block(nc + 3, 0, 3, 3) = -qp::Mat::Identity(3, 3);
    b_in.tail(3) = -box_lo;

    qp::Vec g = -(H * theta + alpha * p);
    qp::QpProblem sub = qp::QpProblem::from_dense(Hd, g, qp::Mat(0, 3), qp::Vec(0), A_in, b_in);
    qp::SolveOptions opts;
    opts.tol = 1e-10;
    qp::QpSolution sol = qp::solve_qp(sub, opts);
    if (sol.status != qp::QpStatus::Optimal) {
      // elastic relaxation: a shared slack on the margin rows keeps the
      // iteration moving when the linearization is locally infeasible
      qp::Mat He = qp::Mat::Zero(4, 4);
      He.topLeftCorner(3, 3) = Hd;
      He(3, 3) = 1e-8;
      qp::Vec ge(4);
      ge.head(3) = g;
      ge[3] = merit_weight;
      qp::Mat Ae = qp::Mat::Zero(nc + 7, 4);
      qp::Vec be(nc + 7);
      Ae.block(0, 0, nc, 3) = G;
      Ae.col(3).head(nc).setConstant(-1.0);
      be.head(nc) = G * y - m;
      Ae.block(nc, 0, 3, 3) = qp::Mat::Identity(3, 3);
      be.segment(nc, 3) = box_hi;
      Ae.block(nc + 3, 0, 3, 3) = -qp::Mat::Identity(3, 3);
      be.segment(nc + 3, 3) = -box_lo;
      Ae(nc + 6, 3) = -1.0;  // slack >= 0
      be[nc + 6] = 0.0;
      qp::QpProblem esub =
          qp::QpProblem::from_dense(He, ge, qp::Mat(0, 4), qp::Vec(0), Ae, be);
      sol = qp::solve_qp(esub, opts);
      if (sol.status != qp::QpStatus::Optimal) break;
    }
    Vector3d y_cand = sol.z.head(3);
    if ((y_cand - y).cwiseAbs().maxCoeff() <= 1e-8) {
      converged = true;
      consider(y_cand);
      y = y_cand;
      break;
    }
    // backtracking line search on an l1 merit of objective and violation
    double merit_y = merit(y);
    double taken = -1.0;
    for (double t : {1.0, 0.5, 0.25, 0.125}) {
      Vector3d y_t = y + t * (y_cand - y);
      if (merit(y_t) < merit_y - 1e-12) {
        taken = t;
        y = y_t;
        break;
      }
    }
    if (taken < 0) {
      converged = true;  // no descent direction left at this linearization
      break;
    }
    consider(y);
  }

  if (have_best) {
    out.theta_plus = best_feasible;
    out.feasible = true;
    out.warning = !converged;
    return out;
  }
  out.theta_plus = y;
  out.feasible = false;
  return out;
}

UpdateRecord safe_update(const MpcParams& theta, const std::vector<Transition>& batch,
                         const gp::SafetySurrogate& sur, const AgentConfig& cfg,
                         const MpcConfig& mpc_cfg) {
  UpdateTerms terms = assemble_update(batch, theta, mpc_cfg, true);
  Matrix3d Hs = 0.5 * (terms.H + terms.H.transpose());
  double floor = cfg.hessian_floor_rel * std::max(1.0, std::abs(Hs.trace()) / 3.0);
  Matrix3d H = make_positive_definite(Hs, floor);

  UpdateRecord rec;
  rec.theta_before = theta;
  rec.theta_after = theta;
  rec.p = terms.p;
  rec.H = H;
  rec.beta_target = cfg.beta_target;
  rec.degenerate_samples = terms.degenerate_samples;

  if (sur.n_c == 0) {
    // Unconstrained variant (unsafe mode): plain second-order step.
    rec.theta_after = unconstrained_update(theta, terms.p, H, cfg.alpha, cfg, &rec.clamped);
    rec.feasible = true;
    rec.backtrack_steps = 0;
    return rec;
  }

  StepLimits limits;
  limits.max_step_rel = cfg.max_step_rel;
  limits.min_escape_rel = cfg.min_escape_rel;
  limits.theta_lo = cfg.theta_lo;
  limits.theta_hi = cfg.theta_hi;
  limits.scale = cfg.step_scale;
  limits.theta_lo[2] = std::max(limits.theta_lo[2], cfg.delta_min);
  limits.theta_hi[2] = std::min(limits.theta_hi[2], cfg.delta_max);
  for (int k = 0; k <= cfg.max_backtracks; ++k) {
    double beta = cfg.beta_target * std::pow(cfg.rho, k);
    ConstrainedStep step =
        solve_constrained_step(theta.to_vector(), terms.p, H, cfg.alpha, sur, beta, limits);
    if (!step.feasible) continue;
    bool clamped = false;
    MpcParams cand = clamp_params(MpcParams::from_vector(step.theta_plus), cfg, &clamped);
    // Post-hoc margin check on the applied parameters (clamps included).
    if (gp::safety_margin(sur, cand.to_vector(), beta).maxCoeff() > 1e-6) continue;
    rec.theta_after = cand;
    rec.beta_used = beta;
    rec.backtrack_steps = k;
    rec.feasible = true;
    rec.warning = step.warning;
    rec.clamped = clamped;
    return rec;
  }
  rec.beta_used = cfg.beta_target * std::pow(cfg.rho, cfg.max_backtracks);
  rec.backtrack_steps = cfg.max_backtracks;
  rec.feasible = false;
  return rec;
}

const char* to_string(Mode m) {
  switch (m) {
    case Mode::Safe: return "safe";
    case Mode::SafeWithPrior: return "safe_with_prior";
    case Mode::Unsafe: return "unsafe";
    case Mode::Baseline: return "baseline";
  }
  return "?";
}

std::optional<Mode> mode_from_string(const std::string& s) {
  if (s == "safe") return Mode::Safe;
  if (s == "safe_with_prior") return Mode::SafeWithPrior;
  if (s == "unsafe") return Mode::Unsafe;
  if (s == "baseline") return Mode::Baseline;
  return std::nullopt;
}

RunLog learning_loop(const LearnSetup& setup, int n_episodes, std::uint64_t seed, Mode mode,
                     const gp::SafetyDataset* prior) {
  RunLog log;
  log.mode = mode;
  log.seed = seed;

  const bool learning = mode != Mode::Baseline;
  const bool safe_mode = mode == Mode::Safe || mode == Mode::SafeWithPrior;

  // Wrong initialization: all eight model parameters scaled per run.
  std::uint64_t init_seed = rng::substream(seed, 3);
  auto factor = [&](int i) {
    return learning
               ? rng::uniform(init_seed, i, 1.0 - setup.wrong_init_spread,
                              1.0 + setup.wrong_init_spread)
               : 1.0;
  };
  MpcConfig cfg = setup.mpc_cfg;
  MpcParams theta{setup.true_params.g * factor(0), setup.true_params.k_z * factor(1), 0.0};
  AgentConfig acfg = setup.agent_cfg;
  for (int i = 0; i < 2; ++i) {
    double a = theta.to_vector()[i] * (1.0 - acfg.theta_box_rel);
    double b = theta.to_vector()[i] * (1.0 + acfg.theta_box_rel);
    acfg.theta_lo[i] = std::min(a, b);
    acfg.theta_hi[i] = std::max(a, b);
  }
  acfg.theta_lo[2] = acfg.delta_min;
  acfg.theta_hi[2] = acfg.delta_max;
  cfg.fixed.d_pitch = setup.true_params.d_pitch * factor(2);
  cfg.fixed.d_roll = setup.true_params.d_roll * factor(3);
  cfg.fixed.d_pitch_rate = setup.true_params.d_pitch_rate * factor(4);
  cfg.fixed.d_roll_rate = setup.true_params.d_roll_rate * factor(5);
  cfg.fixed.k_pitch = setup.true_params.k_pitch * factor(6);
  cfg.fixed.k_roll = setup.true_params.k_roll * factor(7);

  // GP inputs normalized by the initial parameter magnitudes; the same
  // scale bounds the update steps.
  gp::Vec scale(3);
  Eigen::Vector3d t0 = theta.to_vector();
  for (int i = 0; i < 3; ++i) scale[i] = std::abs(t0[i]) > 1e-6 ? std::abs(t0[i]) : 1.0;
  acfg.step_scale = Eigen::Vector3d(scale[0], scale[1], scale[2]);

  gp::SafetyDataset dataset;
  dataset.targets.resize(0, quad::kNumConstraints);
  if (safe_mode && prior) dataset = *prior;

  gp::SafetySurrogate sur;
  sur.n_c = safe_mode ? quad::kNumConstraints : 0;
  if (safe_mode) sur = gp::fit_all(dataset, scale, setup.gp_cfg);

  for (int i = 0; i < n_episodes; ++i) {
    EpisodeRecord rec;
    rec.episode = i;
    rec.theta = theta;

    std::uint64_t ep_seed = rng::substream(seed, 100 + static_cast<std::uint64_t>(i));
    std::uint64_t explore_seed = rng::substream(ep_seed, 2);
    int call_count = 0;
    quad::Policy pol = [&](const State& s) {
      Action u = mpc::policy(s, theta, cfg);
      if (acfg.explore) {
        for (int d = 0; d < 3; ++d)
          u[d] += acfg.explore_mag *
                  (2.0 * rng::uniform01(explore_seed, 3 * call_count + d) - 1.0);
      }
      ++call_count;
      return u;
    };

    quad::Episode ep;
    try {
      ep = quad::run_episode(pol, setup.task, setup.true_params, ep_seed);
    } catch (const quad::EpisodeError& e) {
      rec.aborted = true;
      rec.abort_reason = e.what();
      ++log.aborted_episodes;
      log.episodes.push_back(rec);
      continue;
    }

    rec.j_disc = ep.cumulative_cost;
    rec.j_undisc = ep.undiscounted_cost;
    rec.z = quad::max_violation(ep);
    rec.unsafe = rec.z.maxCoeff() > 0.0;
    rec.max_altitude_violation =
        std::max(rec.z[quad::kAltitudeLo], rec.z[quad::kAltitudeHi]);

    if (learning) {
      if (safe_mode) {
        dataset.inputs.push_back(theta.to_vector());
        dataset.targets.conservativeResize(dataset.count(), quad::kNumConstraints);
        dataset.targets.row(dataset.count() - 1) = rec.z.transpose();
        sur = gp::fit_all(dataset, scale, setup.gp_cfg);
      }
      if ((i + 1) % acfg.update_every == 0) {
        std::vector<Transition> batch;
        int m = acfg.batch_size;
        int T = static_cast<int>(ep.actions.size());
        int start = (m > 0 && m < T) ? T - m : 0;
        for (int t = start; t < T; ++t)
          batch.push_back({ep.states[t], ep.actions[t], ep.states[t + 1], ep.stage_costs[t]});
        try {
          rec.update = safe_update(theta, batch, sur, acfg, cfg);
          rec.updated = true;
          theta = rec.update.theta_after;
        } catch (const std::exception& e) {
          rec.aborted = true;
          rec.abort_reason = e.what();
          ++log.aborted_episodes;
        }
      }
    }
    log.episodes.push_back(rec);
  }
  log.theta_final = theta;
  return log;
}

std::string RunLog::to_jsonl() const {
  std::ostringstream out;
  out.precision(17);
  for (const EpisodeRecord& e : episodes) {
    out << "{\"mode\":\"" << to_string(mode) << "\",\"seed\":" << seed
        << ",\"episode\":" << e.episode << ",\"theta\":[" << e.theta.g_hat << ','
        << e.theta.k_z_hat << ',' << e.theta.delta << "],\"j_disc\":" << e.j_disc
        << ",\"j_undisc\":" << e.j_undisc << ",\"unsafe\":" << (e.unsafe ? "true" : "false")
        << ",\"max_altitude_violation\":" << e.max_altitude_violation << ",\"z\":[";
    for (int j = 0; j < quad::kNumConstraints; ++j) out << (j ? "," : "") << e.z[j];
    out << "],\"aborted\":" << (e.aborted ? "true" : "false")
        << ",\"updated\":" << (e.updated ? "true" : "false");
    if (e.updated) {
      out << ",\"feasible\":" << (e.update.feasible ? "true" : "false") << ",\"beta_used\":";
      if (std::isnan(e.update.beta_used))
        out << "null";
      else
        out << e.update.beta_used;
      out << ",\"backtrack_steps\":" << e.update.backtrack_steps << ",\"theta_after\":["
          << e.update.theta_after.g_hat << ',' << e.update.theta_after.k_z_hat << ','
          << e.update.theta_after.delta << "]";
    }
    out << "}\n";
  }
  return out.str();
}

AgentConfig agent_config_from_config(const Config& cfg) {
  AgentConfig a;
  a.alpha = cfg.get_double("agent.alpha", a.alpha);
  a.beta_target = cfg.get_double("agent.beta_target", a.beta_target);
  a.rho = cfg.get_double("agent.rho", a.rho);
  a.max_backtracks = cfg.get_int("agent.max_backtracks", a.max_backtracks);
  a.batch_size = cfg.get_int("agent.batch_size", a.batch_size);
  a.hessian_floor_rel = cfg.get_double("agent.hessian_floor_rel", a.hessian_floor_rel);
  a.update_every = cfg.get_int("agent.update_every", a.update_every);
  a.explore = cfg.get_bool("agent.explore", a.explore);
  a.explore_mag = cfg.get_double("agent.explore_mag", a.explore_mag);
  a.k_z_min = cfg.get_double("agent.k_z_min", a.k_z_min);
  a.delta_min = cfg.get_double("agent.delta_min", a.delta_min);
  a.delta_max = cfg.get_double("agent.delta_max", a.delta_max);
  a.max_step_rel = cfg.get_double("agent.max_step_rel", a.max_step_rel);
  a.theta_box_rel = cfg.get_double("agent.theta_box_rel", a.theta_box_rel);
  a.min_escape_rel = cfg.get_double("agent.min_escape_rel", a.min_escape_rel);
  return a;
}

LearnSetup learn_setup_from_config(const Config& cfg) {
  LearnSetup s;
  s.true_params = quad::quad_params_from_config(cfg);
  s.task = quad::task_from_config(cfg);
  s.mpc_cfg = mpc::mpc_config_from_config(cfg, s.task);
  s.agent_cfg = agent_config_from_config(cfg);
  s.gp_cfg = gp::gp_config_from_config(cfg);
  s.wrong_init_spread = cfg.get_double("agent.wrong_init_spread", s.wrong_init_spread);
  return s;
}

}  // namespace safempc::agent
