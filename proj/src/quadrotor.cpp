#include "safempc/quadrotor.hpp"

#include <cmath>
#include <sstream>

#include "safempc/rng.hpp"

namespace safempc::quad {

std::vector<std::string> QuadParams::validate() const {
  std::vector<std::string> errs;
  if (!(ts > 0)) errs.push_back("env: sampling time must be positive");
  if (k_z == 0) errs.push_back("env: k_z must be nonzero");
  for (int r : {idx::vx, idx::vy, idx::vz, idx::rp, idx::rr})
    if (wind_gain.row(r).cwiseAbs().maxCoeff() != 0.0)
      errs.push_back("env: wind_gain row " + std::to_string(r) +
                     " must be zero (velocity/rate rows carry no gust term)");
  if (!wind_gain.allFinite() || !gust_altitude.allFinite())
    errs.push_back("env: wind parameters must be finite");
  return errs;
}

std::vector<std::string> TaskSpec::validate() const {
  std::vector<std::string> errs;
  if (steps < 1) errs.push_back("task: episode length T must be >= 1");
  if (!(gamma > 0 && gamma <= 1)) errs.push_back("task: gamma must lie in (0, 1]");
  if (action_weight < 0) errs.push_back("task: c1 must be nonnegative");
  if (violation_weight.minCoeff() < 0) errs.push_back("task: c2 must be nonnegative");
  for (int q = 0; q < kNumBounded; ++q)
    if (!(bound_lo[q] < bound_hi[q]))
      errs.push_back("task: bound " + std::to_string(q) + " has lo >= hi");
  if (!target.allFinite() || !x0.allFinite()) errs.push_back("task: target/x0 must be finite");
  return errs;
}

Dynamics assemble_dynamics(double ts, double g, double d_pitch, double d_roll,
                           double d_pitch_rate, double d_roll_rate, double k_pitch,
                           double k_roll, double k_z) {
  Dynamics d;
  Eigen::Matrix<double, 10, 10> Ac = Eigen::Matrix<double, 10, 10>::Zero();
  Ac(idx::px, idx::vx) = 1.0;
  Ac(idx::py, idx::vy) = 1.0;
  Ac(idx::pz, idx::vz) = 1.0;
  Ac(idx::vx, idx::ap) = g;
  Ac(idx::vy, idx::ar) = g;
  Ac(idx::ap, idx::ap) = -d_pitch;
  Ac(idx::ap, idx::rp) = 1.0;
  Ac(idx::ar, idx::ar) = -d_roll;
  Ac(idx::ar, idx::rr) = 1.0;
  Ac(idx::rp, idx::ap) = -d_pitch_rate;
  Ac(idx::rr, idx::ar) = -d_roll_rate;
  d.A = Eigen::Matrix<double, 10, 10>::Identity() + ts * Ac;

  Eigen::Matrix<double, 10, 3> Bc = Eigen::Matrix<double, 10, 3>::Zero();
  Bc(idx::vz, 2) = k_z;
  Bc(idx::rp, 0) = k_pitch;
  Bc(idx::rr, 1) = k_roll;
  d.B = ts * Bc;

  d.G = State::Zero();
  d.G[idx::vz] = -ts * g;
  return d;
}

Eigen::Vector3d wind_effect(const State& x, const QuadParams& p) {
  Eigen::Vector3d psi;
  for (int i = 0; i < 3; ++i) {
    double dz = x[idx::pz] - p.gust_altitude[i];
    psi[i] = std::exp(-dz * dz);
  }
  return psi;
}

State step(const State& x, const Action& u, double w, const QuadParams& p) {
  Dynamics d = assemble_dynamics(p.ts, p.g, p.d_pitch, p.d_roll, p.d_pitch_rate, p.d_roll_rate,
                                 p.k_pitch, p.k_roll, p.k_z);
  return d.A * x + d.B * u + p.ts * (p.wind_gain * wind_effect(x, p)) * w + d.G;
}

Eigen::Matrix<double, kNumConstraints, 1> constraint_values(const State& x, const Action& u,
                                                            const TaskSpec& task) {
  Eigen::Matrix<double, kNumBounded, 1> q;
  q << x[idx::px], x[idx::py], x[idx::pz], x[idx::ap], x[idx::ar], u[0], u[1], u[2];
  Eigen::Matrix<double, kNumConstraints, 1> h;
  for (int i = 0; i < kNumBounded; ++i) {
    h[2 * i] = task.bound_lo[i] - q[i];
    h[2 * i + 1] = q[i] - task.bound_hi[i];
  }
  return h;
}

double stage_cost(const State& x, const Action& u, const TaskSpec& task) {
  double tracking = (x - task.target).squaredNorm();
  double effort = task.action_weight * u.squaredNorm();
  auto h = constraint_values(x, u, task);
  double viol = task.violation_weight.dot(h.cwiseMax(0.0));
  return tracking + effort + viol;
}

Episode run_episode(const Policy& policy, const TaskSpec& task, const QuadParams& params,
                    std::uint64_t seed) {
  Episode ep;
  ep.seed = seed;
  ep.states.reserve(task.steps + 1);
  ep.actions.reserve(task.steps);
  ep.stage_costs.reserve(task.steps);
  ep.constraint_values.reserve(task.steps);
  ep.states.push_back(task.x0);
  double disc = 1.0;
  for (int t = 0; t < task.steps; ++t) {
    const State& x = ep.states.back();
    Action u;
    try {
      u = policy(x);
    } catch (const std::exception& e) {
      throw EpisodeError("policy failed at step " + std::to_string(t) + ": " + e.what(), ep);
    }
    if (!u.allFinite())
      throw EpisodeError("policy returned non-finite action at step " + std::to_string(t), ep);
    double w = rng::uniform01(seed, static_cast<std::uint64_t>(t));
    State xn = step(x, u, w, params);
    double cost = stage_cost(x, u, task);
    ep.actions.push_back(u);
    ep.states.push_back(xn);
    ep.stage_costs.push_back(cost);
    ep.constraint_values.push_back(constraint_values(xn, u, task));
    ep.cumulative_cost += disc * cost;
    ep.undiscounted_cost += cost;
    disc *= task.gamma;
  }
  return ep;
}

Eigen::Matrix<double, kNumConstraints, 1> max_violation(const Episode& ep) {
  if (ep.constraint_values.empty())
    throw std::invalid_argument("max_violation: episode has no recorded steps");
  auto z = ep.constraint_values.front();
  for (const auto& h : ep.constraint_values) z = z.cwiseMax(h);
  return z;
}

std::string Episode::to_csv() const {
  std::ostringstream out;
  out.precision(17);
  out << "t,px,py,pz,vx,vy,vz,ap,ar,rp,rr,up,ur,uz,stage_cost";
  for (int j = 0; j < kNumConstraints; ++j) out << ",h" << j;
  out << "\n";
  for (std::size_t t = 0; t < actions.size(); ++t) {
    out << t;
    for (int i = 0; i < 10; ++i) out << ',' << states[t][i];
    for (int i = 0; i < 3; ++i) out << ',' << actions[t][i];
    out << ',' << stage_costs[t];
    for (int j = 0; j < kNumConstraints; ++j) out << ',' << constraint_values[t][j];
    out << "\n";
  }
  return out.str();
}

std::string Episode::to_json() const {
  std::ostringstream out;
  out.precision(17);
  out << "{\"seed\":" << seed << ",\"cumulative_cost\":" << cumulative_cost
      << ",\"undiscounted_cost\":" << undiscounted_cost << ",\"steps\":" << actions.size()
      << ",\"states\":[";
  for (std::size_t t = 0; t < states.size(); ++t) {
    if (t) out << ',';
    out << '[';
    for (int i = 0; i < 10; ++i) out << (i ? "," : "") << states[t][i];
    out << ']';
  }
  out << "],\"actions\":[";
  for (std::size_t t = 0; t < actions.size(); ++t) {
    if (t) out << ',';
    out << '[' << actions[t][0] << ',' << actions[t][1] << ',' << actions[t][2] << ']';
  }
  out << "],\"stage_costs\":[";
  for (std::size_t t = 0; t < stage_costs.size(); ++t)
    out << (t ? "," : "") << stage_costs[t];
  out << "],\"constraint_values\":[";
  for (std::size_t t = 0; t < constraint_values.size(); ++t) {
    if (t) out << ',';
    out << '[';
    for (int j = 0; j < kNumConstraints; ++j) out << (j ? "," : "") << constraint_values[t][j];
    out << ']';
  }
  out << "]}";
  return out.str();
}

QuadParams quad_params_from_config(const Config& cfg) {
  QuadParams p;
  p.ts = cfg.get_double("env.sampling_time", p.ts);
  p.g = cfg.get_double("env.gravity", p.g);
  p.d_pitch = cfg.get_double("env.d_pitch", p.d_pitch);
  p.d_roll = cfg.get_double("env.d_roll", p.d_roll);
  p.d_pitch_rate = cfg.get_double("env.d_pitch_rate", p.d_pitch_rate);
  p.d_roll_rate = cfg.get_double("env.d_roll_rate", p.d_roll_rate);
  p.k_pitch = cfg.get_double("env.k_pitch", p.k_pitch);
  p.k_roll = cfg.get_double("env.k_roll", p.k_roll);
  p.k_z = cfg.get_double("env.k_z", p.k_z);
  auto b = cfg.get_vector("env.gust_altitudes",
                          {p.gust_altitude[0], p.gust_altitude[1], p.gust_altitude[2]});
  if (b.size() != 3) throw ConfigError("env.gust_altitudes: expected 3 values");
  p.gust_altitude = Eigen::Vector3d(b[0], b[1], b[2]);
  // Frozen draw of the c_ij coefficients; see configs/default.cfg.
  static const char* row_keys[5] = {"env.wind_gain_px", "env.wind_gain_py", "env.wind_gain_pz",
                                    "env.wind_gain_pitch", "env.wind_gain_roll"};
  static const int rows[5] = {idx::px, idx::py, idx::pz, idx::ap, idx::ar};
  static const double defaults[5][3] = {{0.36, -0.24, 0.30},
                                        {-0.28, 0.33, 0.22},
                                        {2.50, 3.00, 0.80},
                                        {0.04, -0.03, 0.05},
                                        {-0.05, 0.04, 0.03}};
  for (int r = 0; r < 5; ++r) {
    auto row = cfg.get_vector(row_keys[r], {defaults[r][0], defaults[r][1], defaults[r][2]});
    if (row.size() != 3) throw ConfigError(std::string(row_keys[r]) + ": expected 3 values");
    for (int j = 0; j < 3; ++j) p.wind_gain(rows[r], j) = row[j];
  }
  return p;
}

TaskSpec task_from_config(const Config& cfg) {
  TaskSpec t;
  t.steps = cfg.get_int("task.steps", t.steps);
  t.gamma = cfg.get_double("task.gamma", t.gamma);
  t.action_weight = cfg.get_double("task.action_weight", t.action_weight);
  double c2 = cfg.get_double("task.violation_weight", 300.0);
  t.violation_weight.setConstant(c2);
  auto tg = cfg.get_vector("task.target", {2.0, 2.0, 3.0});
  auto x0 = cfg.get_vector("task.x0", {0.0, 0.0, -3.0});
  t.target = State::Zero();
  t.x0 = State::Zero();
  for (std::size_t i = 0; i < tg.size() && i < 10; ++i) t.target[static_cast<int>(i)] = tg[i];
  for (std::size_t i = 0; i < x0.size() && i < 10; ++i) t.x0[static_cast<int>(i)] = x0[i];
  auto lo = cfg.get_vector("task.bound_lo", {-6.0, -6.0, -5.0, -0.26, -0.26, -0.26, -0.26, 0.0});
  auto hi = cfg.get_vector("task.bound_hi", {6.0, 6.0, 3.3, 0.26, 0.26, 0.26, 0.26, 28.0});
  if (lo.size() != kNumBounded || hi.size() != kNumBounded)
    throw ConfigError("task.bound_lo/bound_hi: expected 8 values");
  for (int q = 0; q < kNumBounded; ++q) {
    t.bound_lo[q] = lo[q];
    t.bound_hi[q] = hi[q];
  }
  return t;
}

}  // namespace safempc::quad
