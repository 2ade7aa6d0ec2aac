#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "safempc/agent.hpp"
#include "safempc/checks.hpp"
#include "safempc/config.hpp"
#include "safempc/experiment.hpp"
#include "safempc/gp.hpp"
#include "safempc/quadrotor.hpp"
#include "safempc/rng.hpp"

namespace {

using namespace safempc;

Config load_config(const std::string& path) {
  if (path.empty()) return Config{};
  return Config::from_file(path);
}

int cmd_run(const Config& cfg) {
  harness::ExperimentConfig ecfg = harness::experiment_config_from_config(cfg);
  gp::SafetyDataset pool;
  auto summaries = harness::run_experiment(ecfg, &pool);
  auto agg = harness::aggregate(summaries);
  harness::emit_report(agg, summaries, ecfg, pool, ecfg.output_dir);
  double failed = harness::failed_fraction(summaries);
  std::printf("wrote %s (%zu runs, %.0f%% failed)\n", ecfg.output_dir.c_str(), summaries.size(),
              100.0 * failed);
  return failed > 0.10 ? 1 : 0;
}

int cmd_episode(const Config& cfg, std::uint64_t seed, const std::string& out_dir) {
  quad::TaskSpec task = quad::task_from_config(cfg);
  quad::QuadParams params = quad::quad_params_from_config(cfg);
  mpc::MpcConfig mcfg = mpc::mpc_config_from_config(cfg, task);
  mpc::MpcParams theta{params.g, params.k_z, 0.0};  // true-model controller
  quad::Policy pol = [&](const quad::State& s) { return mpc::policy(s, theta, mcfg); };
  quad::Episode ep = quad::run_episode(pol, task, params, seed);
  if (out_dir.empty()) {
    std::cout << ep.to_csv();
  } else {
    std::filesystem::create_directories(out_dir);
    std::ofstream(out_dir + "/episode.csv", std::ios::binary) << ep.to_csv();
    std::ofstream(out_dir + "/episode.json", std::ios::binary) << ep.to_json();
    std::printf("wrote %s/episode.csv and episode.json (J = %.6f)\n", out_dir.c_str(),
                ep.cumulative_cost);
  }
  return 0;
}

int cmd_check(const Config& cfg) {
  auto results = checks::run_all(cfg);
  bool all = true;
  for (const auto& r : results) {
    std::printf("[%s] %-30s %6.2fs  %s\n", r.pass ? "PASS" : "FAIL", r.name.c_str(), r.seconds,
                r.detail.c_str());
    all = all && r.pass;
  }
  return all ? 0 : 1;
}

int cmd_gp_dump(const Config& cfg, std::uint64_t seed, int episodes, int grid,
                const std::string& out_dir) {
  agent::LearnSetup setup = agent::learn_setup_from_config(cfg);
  agent::RunLog log = agent::learning_loop(setup, episodes, seed, agent::Mode::Safe);

  gp::SafetyDataset ds;
  ds.targets.resize(0, quad::kNumConstraints);
  Eigen::Vector3d t0 = log.episodes.front().theta.to_vector();
  gp::Vec scale(3);
  for (int i = 0; i < 3; ++i) scale[i] = std::abs(t0[i]) > 1e-6 ? std::abs(t0[i]) : 1.0;
  Eigen::Vector3d lo = t0, hi = t0;
  for (const auto& e : log.episodes) {
    if (e.aborted) continue;
    ds.inputs.push_back(e.theta.to_vector());
    ds.targets.conservativeResize(ds.count(), quad::kNumConstraints);
    ds.targets.row(ds.count() - 1) = e.z.transpose();
    lo = lo.cwiseMin(e.theta.to_vector());
    hi = hi.cwiseMax(e.theta.to_vector());
  }
  gp::SafetySurrogate sur = gp::fit_all(ds, scale, setup.gp_cfg);
  Eigen::Vector3d span = (hi - lo).cwiseMax(0.2 * scale);
  lo -= 0.5 * span;
  hi += 0.5 * span;

  std::ostringstream out;
  out.precision(10);
  out << "g_hat,k_z_hat,delta,margin_max";
  for (int j = 0; j < quad::kNumConstraints; ++j) out << ",margin" << j;
  out << "\n";
  double beta = setup.agent_cfg.beta_target;
  for (int i = 0; i < grid; ++i)
    for (int j = 0; j < grid; ++j)
      for (int k = 0; k < grid; ++k) {
        Eigen::Vector3d t(lo[0] + (hi[0] - lo[0]) * i / (grid - 1.0),
                          lo[1] + (hi[1] - lo[1]) * j / (grid - 1.0),
                          lo[2] + (hi[2] - lo[2]) * k / (grid - 1.0));
        gp::Vec m = gp::safety_margin(sur, t, beta);
        out << t[0] << ',' << t[1] << ',' << t[2] << ',' << m.maxCoeff();
        for (int c = 0; c < quad::kNumConstraints; ++c) out << ',' << m[c];
        out << "\n";
      }
  std::filesystem::create_directories(out_dir);
  std::ofstream(out_dir + "/margins.csv", std::ios::binary) << out.str();
  std::printf("wrote %s/margins.csv (%d^3 grid, %d observations, beta %.3f)\n", out_dir.c_str(),
              grid, ds.count(), beta);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Safe MPC-based reinforcement learning benchmark"};
  app.require_subcommand(1);
  std::string config_path;
  app.add_option("--config", config_path, "configuration file (key = value)");

  auto* run = app.add_subcommand("run", "run the seeded multi-run experiment batch");
  int runs = -1, episodes = -1, jobs = -1;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string modes, out_dir;
  run->add_option("--runs", runs, "runs per mode");
  run->add_option("--episodes", episodes, "learning episodes per run");
  run->add_option("--modes", modes, "comma/space separated subset of safe,safe_with_prior,unsafe,baseline");
  run->add_option_function<std::uint64_t>(
      "--seed", [&](std::uint64_t v) { seed = v; seed_set = true; }, "base seed");
  run->add_option("--out", out_dir, "output directory");
  run->add_option("--jobs", jobs, "worker threads (default: all)");

  auto* episode = app.add_subcommand("episode", "dump one seeded true-model episode");
  std::uint64_t ep_seed = 0;
  std::string ep_out;
  episode->add_option("--seed", ep_seed, "episode seed");
  episode->add_option("--out", ep_out, "output directory (default: CSV to stdout)");

  auto* check = app.add_subcommand("check", "run the invariant/property suites");

  auto* gpdump = app.add_subcommand("gp-dump", "fit safety GPs on a short run and dump margins");
  std::uint64_t gd_seed = 1;
  int gd_episodes = 8, gd_grid = 12;
  std::string gd_out = "out";
  gpdump->add_option("--seed", gd_seed, "run seed");
  gpdump->add_option("--episodes", gd_episodes, "episodes used to build the dataset");
  gpdump->add_option("--grid", gd_grid, "grid points per parameter axis");
  gpdump->add_option("--out", gd_out, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    Config cfg = load_config(config_path);
    if (run->parsed()) {
      if (runs > 0) cfg.set("experiment.runs", std::to_string(runs));
      if (episodes > 0) cfg.set("experiment.episodes", std::to_string(episodes));
      if (seed_set) cfg.set("experiment.seed", std::to_string(seed));
      if (jobs > 0) cfg.set("experiment.jobs", std::to_string(jobs));
      if (!out_dir.empty()) cfg.set("experiment.output_dir", out_dir);
      if (!modes.empty()) {
        for (auto& ch : modes)
          if (ch == ',') ch = ' ';
        cfg.set("experiment.modes", modes);
      }
      return cmd_run(cfg);
    }
    if (episode->parsed()) return cmd_episode(cfg, ep_seed, ep_out);
    if (check->parsed()) return cmd_check(cfg);
    if (gpdump->parsed()) return cmd_gp_dump(cfg, gd_seed, gd_episodes, gd_grid, gd_out);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 2;
}
