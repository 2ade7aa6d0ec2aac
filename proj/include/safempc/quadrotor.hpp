#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "safempc/config.hpp"

namespace safempc::quad {

using State = Eigen::Matrix<double, 10, 1>;   // [px py pz vx vy vz ap ar rp rr]
using Action = Eigen::Vector3d;               // [up ur uz]
using Vec = Eigen::VectorXd;

// State vector layout.
namespace idx {
inline constexpr int px = 0, py = 1, pz = 2;
inline constexpr int vx = 3, vy = 4, vz = 5;
inline constexpr int ap = 6, ar = 7;          // pitch / roll attitude
inline constexpr int rp = 8, rr = 9;          // pitch / roll rate
}  // namespace idx

// Bounded quantities, in the canonical order used by constraint_values:
// px, py, pz, pitch, roll, u_pitch, u_roll, u_z. Each contributes a lower
// and an upper residual, so n_c = 16.
inline constexpr int kNumBounded = 8;
inline constexpr int kNumConstraints = 2 * kNumBounded;

struct QuadParams {
  double ts = 0.1;               // sampling time [s]
  double g = 9.81;               // gravitational constant [m/s^2]
  double d_pitch = 8.0;          // pitch attitude coefficient
  double d_roll = 8.0;           // roll attitude coefficient
  double d_pitch_rate = 10.0;    // pitch rate coefficient
  double d_roll_rate = 10.0;     // roll rate coefficient
  double k_pitch = 9.0;          // pitch gain
  double k_roll = 9.0;           // roll gain
  double k_z = 0.7;              // vertical thrust gain
  // Wind influence coefficients c_ij (scaled by ts in the dynamics); rows
  // 4-6 and 9-10 of the 10x3 influence matrix are structurally zero.
  Eigen::Matrix<double, 10, 3> wind_gain = Eigen::Matrix<double, 10, 3>::Zero();
  Eigen::Vector3d gust_altitude{-2.0, 0.0, 2.0};

  std::vector<std::string> validate() const;
};

struct Dynamics {
  Eigen::Matrix<double, 10, 10> A;
  Eigen::Matrix<double, 10, 3> B;
  State G;
};

// Discrete-time model x+ = A x + B u + G around hover; wind enters separately.
Dynamics assemble_dynamics(double ts, double g, double d_pitch, double d_roll,
                           double d_pitch_rate, double d_roll_rate, double k_pitch,
                           double k_roll, double k_z);

struct TaskSpec {
  int steps = 50;                              // episode length T
  State target = State::Zero();                // s_f
  State x0 = State::Zero();
  double action_weight = 0.01;                 // c1
  Eigen::Matrix<double, kNumConstraints, 1> violation_weight =
      Eigen::Matrix<double, kNumConstraints, 1>::Constant(300.0);  // c2
  Eigen::Matrix<double, kNumBounded, 1> bound_lo;
  Eigen::Matrix<double, kNumBounded, 1> bound_hi;
  double gamma = 0.9792;

  std::vector<std::string> validate() const;
};

struct Episode {
  std::vector<State> states;                   // length T+1
  std::vector<Action> actions;                 // length T
  std::vector<double> stage_costs;             // length T
  std::vector<Eigen::Matrix<double, kNumConstraints, 1>> constraint_values;  // length T
  std::uint64_t seed = 0;
  double cumulative_cost = 0.0;                // sum_t gamma^t L_t
  double undiscounted_cost = 0.0;

  std::string to_csv() const;
  std::string to_json() const;
};

struct EpisodeError : std::runtime_error {
  Episode partial;
  EpisodeError(const std::string& msg, Episode ep)
      : std::runtime_error(msg), partial(std::move(ep)) {}
};

// Gust basis Psi_i = exp(-(p_z - b_i)^2).
Eigen::Vector3d wind_effect(const State& x, const QuadParams& p);

// One step of x+ = A x + B u + C Psi(x) w + G with w in [0,1].
State step(const State& x, const Action& u, double w, const QuadParams& p);

// Box residuals in h <= 0 form: rows (2q, 2q+1) = (lo_q - val_q, val_q - hi_q).
Eigen::Matrix<double, kNumConstraints, 1> constraint_values(const State& x, const Action& u,
                                                            const TaskSpec& task);

// L(s,a) = |s - s_f|^2 + c1 |a|^2 + c2' max(0, h(s,a)).
double stage_cost(const State& x, const Action& u, const TaskSpec& task);

using Policy = std::function<Action(const State&)>;

// Closed-loop rollout; w_t drawn i.i.d. U(0,1) from the counter-based
// stream of `seed`. Constraint values are recorded at (x_{t+1}, u_t).
Episode run_episode(const Policy& policy, const TaskSpec& task, const QuadParams& params,
                    std::uint64_t seed);

// Elementwise max over time of the recorded constraint values (z tilde).
Eigen::Matrix<double, kNumConstraints, 1> max_violation(const Episode& ep);

// Indices of the altitude rows of h (lower, upper).
inline constexpr int kAltitudeLo = 4, kAltitudeHi = 5;

QuadParams quad_params_from_config(const Config& cfg);
TaskSpec task_from_config(const Config& cfg);

}  // namespace safempc::quad
