#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "safempc/config.hpp"
#include "safempc/gp.hpp"
#include "safempc/mpc.hpp"
#include "safempc/quadrotor.hpp"

namespace safempc::agent {

using mpc::MpcConfig;
using mpc::MpcParams;
using quad::Action;
using quad::State;

struct Transition {
  State s;
  Action a;
  State s_next;
  double stage_cost;
};

struct AgentConfig {
  double alpha = 0.15;          // learning rate
  double beta_target = 0.9;     // requested safety probability
  double rho = 0.95;            // backtrack factor
  int max_backtracks = 40;
  int batch_size = 0;           // m; 0 means the whole episode (m = T)
  double hessian_floor_rel = 1e-4;
  int update_every = 1;         // episodes between updates
  bool explore = false;         // optional zero-mean perturbation on u0
  double explore_mag = 0.0;
  double k_z_min = 0.05;        // |k_z_hat| clamp floor
  double delta_min = -0.3;      // learnable backoff domain
  double delta_max = 1.0;
  // Per-coordinate step cap |dtheta_i| <= max_step_rel * max(|theta_i|, 1);
  // floored Hessian directions would otherwise produce unbounded steps.
  double max_step_rel = 0.1;
  // Search domain for theta. learning_loop derives the g/k_z entries from
  // the initial parameters via theta_box_rel; delta uses delta_min/max.
  double theta_box_rel = 0.5;
  Eigen::Vector3d theta_lo =
      Eigen::Vector3d::Constant(-std::numeric_limits<double>::infinity());
  Eigen::Vector3d theta_hi =
      Eigen::Vector3d::Constant(std::numeric_limits<double>::infinity());
  // Minimum per-coordinate trust width so an infeasible theta can still
  // escape when the Newton step collapses.
  double min_escape_rel = 0.05;
  // Parameter scale for caps and GP normalization; zero = auto from theta.
  Eigen::Vector3d step_scale = Eigen::Vector3d::Zero();

  std::vector<std::string> validate() const;
};

// delta_i = L(s,a) + gamma V(s') - Q(s,a).
double td_error(const Transition& tr, const MpcParams& theta, const MpcConfig& cfg);

struct UpdateTerms {
  Eigen::Vector3d p = Eigen::Vector3d::Zero();
  Eigen::Matrix3d H = Eigen::Matrix3d::Zero();
  int degenerate_samples = 0;
  int samples = 0;
};

// p = -sum_i delta_i grad Q_i, H = sum_i grad Q_i grad Q_i' - delta_i hess Q_i.
// Degenerate samples keep only their Gauss-Newton term in H. The parallel
// variant distributes samples over OpenMP threads; the reduction order is
// fixed so results match the serial reference bit for bit.
UpdateTerms assemble_update(const std::vector<Transition>& batch, const MpcParams& theta,
                            const MpcConfig& cfg, bool parallel = true);
UpdateTerms assemble_update_serial(const std::vector<Transition>& batch, const MpcParams& theta,
                                   const MpcConfig& cfg);

// Eigenvalue clamp at `floor`; inputs already PD with margin pass through
// unchanged.
Eigen::Matrix3d make_positive_definite(const Eigen::Matrix3d& H, double floor);

// theta+ = theta + alpha H^{-1} p, with the parameter-domain clamps applied.
MpcParams unconstrained_update(const MpcParams& theta, const Eigen::Vector3d& p,
                               const Eigen::Matrix3d& H, double alpha, const AgentConfig& cfg,
                               bool* clamped = nullptr);

struct ConstrainedStep {
  bool feasible = false;
  Eigen::Vector3d theta_plus = Eigen::Vector3d::Zero();
  bool warning = false;  // SQP hit its iteration cap on a feasible iterate
  int iterations = 0;
};

// min 1/2 (t-theta)'H(t-theta) - alpha p'(t-theta) s.t. GP margins <= 0 and
// theta_lo <= t <= theta_hi, by SQP with linearized margins and a box trust
// region of radius 2 alpha |H^{-1}p|_2 (capped and floored per coordinate)
// around the current iterate. Locally infeasible subproblems fall back to an
// elastic relaxation so the iteration can walk out of positive-margin
// regions.
struct StepLimits {
  double max_step_rel = 0.1;
  double min_escape_rel = 0.05;
  Eigen::Vector3d theta_lo =
      Eigen::Vector3d::Constant(-std::numeric_limits<double>::infinity());
  Eigen::Vector3d theta_hi =
      Eigen::Vector3d::Constant(std::numeric_limits<double>::infinity());
  // Per-coordinate parameter scale; zero entries fall back to max(|theta_i|, 1).
  Eigen::Vector3d scale = Eigen::Vector3d::Zero();
};
ConstrainedStep solve_constrained_step(const Eigen::Vector3d& theta, const Eigen::Vector3d& p,
                                       const Eigen::Matrix3d& H, double alpha,
                                       const gp::SafetySurrogate& sur, double beta,
                                       const StepLimits& limits = {});

struct UpdateRecord {
  MpcParams theta_before;
  MpcParams theta_after;
  Eigen::Vector3d p = Eigen::Vector3d::Zero();
  Eigen::Matrix3d H = Eigen::Matrix3d::Zero();
  double beta_target = 0.9;
  double beta_used = std::numeric_limits<double>::quiet_NaN();
  int backtrack_steps = 0;
  bool feasible = false;
  bool warning = false;
  bool clamped = false;
  int degenerate_samples = 0;
};

// One full update: assemble, PD-modify, then the beta-backtracking loop of
// constrained steps. beta resets to beta_target on every call. A surrogate
// with n_c == 0 dispatches to unconstrained_update (the unconstrained
// variant used by the unsafe mode).
UpdateRecord safe_update(const MpcParams& theta, const std::vector<Transition>& batch,
                         const gp::SafetySurrogate& sur, const AgentConfig& cfg,
                         const MpcConfig& mpc_cfg);

enum class Mode { Safe, SafeWithPrior, Unsafe, Baseline };
const char* to_string(Mode m);
std::optional<Mode> mode_from_string(const std::string& s);

struct EpisodeRecord {
  int episode = 0;
  MpcParams theta;  // parameters that generated the episode
  double j_disc = 0.0;
  double j_undisc = 0.0;
  bool unsafe = false;
  double max_altitude_violation = 0.0;
  Eigen::Matrix<double, quad::kNumConstraints, 1> z =
      Eigen::Matrix<double, quad::kNumConstraints, 1>::Zero();
  bool aborted = false;
  std::string abort_reason;
  bool updated = false;
  UpdateRecord update;
};

struct RunLog {
  Mode mode = Mode::Baseline;
  std::uint64_t seed = 0;
  std::vector<EpisodeRecord> episodes;
  MpcParams theta_final;
  int aborted_episodes = 0;

  std::string to_jsonl() const;  // one JSON object per episode
};

struct LearnSetup {
  quad::QuadParams true_params;
  quad::TaskSpec task;
  MpcConfig mpc_cfg;       // true-model template; runs apply the wrong init
  AgentConfig agent_cfg;
  gp::GpConfig gp_cfg;
  double wrong_init_spread = 0.2;  // each model parameter scaled by U(1-s, 1+s)
};

// Algorithm: per episode, roll out pi_theta, observe ztilde, augment the
// dataset and refit the GPs (safe modes), then perform one update from the
// episode's transitions. Aborted episodes are recorded and learning
// continues with theta unchanged.
RunLog learning_loop(const LearnSetup& setup, int n_episodes, std::uint64_t seed, Mode mode,
                     const gp::SafetyDataset* prior = nullptr);

LearnSetup learn_setup_from_config(const Config& cfg);
AgentConfig agent_config_from_config(const Config& cfg);

}  // namespace safempc::agent
