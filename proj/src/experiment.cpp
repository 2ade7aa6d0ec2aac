#include "safempc/experiment.hpp"

#include <omp.h>

#include <json.hpp>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "safempc/rng.hpp"

namespace safempc::harness {

using agent::Mode;
using nlohmann::json;

std::vector<std::string> ExperimentConfig::validate() const {
  std::vector<std::string> errs;
  if (n_runs < 1) errs.push_back("experiment: n_runs must be >= 1");
  if (n_episodes < 1) errs.push_back("experiment: n_episodes must be >= 1");
  if (prior_points < 0) errs.push_back("experiment: prior_points must be >= 0");
  if (pool_runs < 1) errs.push_back("experiment: pool_runs must be >= 1");
  if (modes.empty()) errs.push_back("experiment: at least one mode required");
  auto v1 = setup.true_params.validate();
  auto v2 = setup.task.validate();
  auto v3 = setup.mpc_cfg.validate();
  auto v4 = setup.agent_cfg.validate();
  errs.insert(errs.end(), v1.begin(), v1.end());
  errs.insert(errs.end(), v2.begin(), v2.end());
  errs.insert(errs.end(), v3.begin(), v3.end());
  errs.insert(errs.end(), v4.begin(), v4.end());
  return errs;
}

namespace {

int log_level() {
  const char* v = std::getenv("SAFE_MPC_RL_LOG");
  if (!v) return 0;
  try {
    return std::stoi(v);
  } catch (...) {
    return std::string(v) == "debug" ? 2 : (std::string(v) == "info" ? 1 : 0);
  }
}

RunSummary summarize(agent::RunLog log, Mode mode, int run_index, std::uint64_t seed) {
  RunSummary s;
  s.mode = mode;
  s.run_index = run_index;
  s.seed = seed;
  int cum = 0;
  for (const auto& e : log.episodes) {
    if (e.aborted) {
      s.j_disc.push_back(std::numeric_limits<double>::quiet_NaN());
      s.j_undisc.push_back(std::numeric_limits<double>::quiet_NaN());
      s.unsafe_flag.push_back(-1);
      s.alt_violation.push_back(std::numeric_limits<double>::quiet_NaN());
    } else {
      s.j_disc.push_back(e.j_disc);
      s.j_undisc.push_back(e.j_undisc);
      s.unsafe_flag.push_back(e.unsafe ? 1 : 0);
      if (e.unsafe) ++cum;
      s.alt_violation.push_back(e.max_altitude_violation);
    }
    s.unsafe_cum.push_back(cum);
    s.beta_used.push_back(e.updated ? e.update.beta_used
                                    : std::numeric_limits<double>::quiet_NaN());
  }
  s.aborted = log.aborted_episodes;
  s.log = std::move(log);
  return s;
}

gp::SafetyDataset build_prior_pool(const ExperimentConfig& cfg) {
  gp::SafetyDataset pool;
  pool.targets.resize(0, quad::kNumConstraints);
  for (int k = 0; k < cfg.pool_runs; ++k) {
    std::uint64_t seed = rng::substream(cfg.base_seed, 900 + static_cast<std::uint64_t>(k));
    agent::RunLog log =
        agent::learning_loop(cfg.setup, cfg.n_episodes, seed, Mode::Unsafe, nullptr);
    for (const auto& e : log.episodes) {
      if (e.aborted) continue;
      pool.inputs.push_back(e.theta.to_vector());
      pool.targets.conservativeResize(pool.count(), quad::kNumConstraints);
      pool.targets.row(pool.count() - 1) = e.z.transpose();
    }
  }
  return pool;
}

gp::SafetyDataset sample_prior(const gp::SafetyDataset& pool, int points, std::uint64_t seed) {
  gp::SafetyDataset prior;
  prior.targets.resize(0, quad::kNumConstraints);
  if (pool.count() == 0 || points == 0) return prior;
  std::uint64_t s = rng::substream(seed, 4);
  for (int i = 0; i < points; ++i) {
    int idx = std::min(pool.count() - 1,
                       static_cast<int>(rng::uniform01(s, i) * pool.count()));
    prior.inputs.push_back(pool.inputs[idx]);
    prior.targets.conservativeResize(prior.count(), quad::kNumConstraints);
    prior.targets.row(prior.count() - 1) = pool.targets.row(idx);
  }
  return prior;
}

std::string fmt(double v) {
  std::ostringstream out;
  out.precision(17);
  out << v;
  return out.str();
}

}  // namespace

std::vector<RunSummary> run_experiment(const ExperimentConfig& cfg, gp::SafetyDataset* pool_out) {
  auto errs = cfg.validate();
  if (!errs.empty()) {
    std::string msg = "invalid experiment configuration:";
    for (const auto& e : errs) msg += "\n  - " + e;
    throw ConfigError(msg);
  }

  bool wants_prior = false;
  for (Mode m : cfg.modes) wants_prior = wants_prior || m == Mode::SafeWithPrior;
  gp::SafetyDataset pool;
  pool.targets.resize(0, quad::kNumConstraints);
  if (wants_prior && cfg.prior_points > 0) {
    if (log_level() >= 1) std::fprintf(stderr, "[safempc] generating prior pool...\n");
    pool = build_prior_pool(cfg);
  }
  if (pool_out) *pool_out = pool;

  struct Task {
    Mode mode;
    int run;
  };
  std::vector<Task> tasks;
  for (Mode m : cfg.modes)
    for (int r = 0; r < cfg.n_runs; ++r) tasks.push_back({m, r});

  std::vector<RunSummary> out(tasks.size());
  int jobs = cfg.jobs > 0 ? cfg.jobs : omp_get_max_threads();
#pragma omp parallel for schedule(dynamic) num_threads(jobs)
  for (int t = 0; t < static_cast<int>(tasks.size()); ++t) {
    const Task& task = tasks[t];
    std::uint64_t seed = cfg.base_seed + static_cast<std::uint64_t>(task.run);
    auto t0 = std::chrono::steady_clock::now();
    try {
      gp::SafetyDataset prior;
      prior.targets.resize(0, quad::kNumConstraints);
      const gp::SafetyDataset* prior_ptr = nullptr;
      if (task.mode == Mode::SafeWithPrior) {
        prior = sample_prior(pool, cfg.prior_points, seed);
        prior_ptr = &prior;
      }
      agent::RunLog log =
          agent::learning_loop(cfg.setup, cfg.n_episodes, seed, task.mode, prior_ptr);
      out[t] = summarize(std::move(log), task.mode, task.run, seed);
    } catch (const std::exception& e) {
      RunSummary s;
      s.mode = task.mode;
      s.run_index = task.run;
      s.seed = seed;
      s.failed = true;
      s.error = e.what();
      out[t] = std::move(s);
    }
    out[t].wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (log_level() >= 1)
      std::fprintf(stderr, "[safempc] %s run %d done (%.1fs)%s\n", agent::to_string(task.mode),
                   task.run, out[t].wall_seconds, out[t].failed ? " FAILED" : "");
  }
  return out;
}

double failed_fraction(const std::vector<RunSummary>& summaries) {
  if (summaries.empty()) return 0.0;
  int failed = 0;
  for (const auto& s : summaries) failed += s.failed ? 1 : 0;
  return static_cast<double>(failed) / static_cast<double>(summaries.size());
}

std::vector<AggregateRow> aggregate(const std::vector<RunSummary>& summaries) {
  static const char* metrics[] = {"j_disc", "j_undisc", "unsafe_cum", "alt_violation",
                                  "beta_used"};
  static const Mode mode_order[] = {Mode::Safe, Mode::SafeWithPrior, Mode::Unsafe,
                                    Mode::Baseline};
  std::vector<AggregateRow> rows;
  std::size_t max_ep = 0;
  for (const auto& s : summaries)
    if (!s.failed) max_ep = std::max(max_ep, s.j_disc.size());

  for (const char* metric : metrics) {
    for (Mode mode : mode_order) {
      bool present = false;
      for (const auto& s : summaries) present = present || (!s.failed && s.mode == mode);
      if (!present) continue;
      for (std::size_t e = 0; e < max_ep; ++e) {
        std::vector<double> vals;
        for (const auto& s : summaries) {
          if (s.failed || s.mode != mode || e >= s.j_disc.size()) continue;
          double v;
          std::string m(metric);
          if (m == "j_disc") v = s.j_disc[e];
          else if (m == "j_undisc") v = s.j_undisc[e];
          else if (m == "unsafe_cum") v = static_cast<double>(s.unsafe_cum[e]);
          else if (m == "alt_violation") v = s.alt_violation[e];
          else v = s.beta_used[e];
          if (!std::isnan(v)) vals.push_back(v);
        }
        if (vals.empty()) continue;
        double mean = 0;
        for (double v : vals) mean += v;
        mean /= static_cast<double>(vals.size());
        double sd = 0;
        if (vals.size() >= 2) {
          for (double v : vals) sd += (v - mean) * (v - mean);
          sd = std::sqrt(sd / static_cast<double>(vals.size() - 1));
        }
        rows.push_back({static_cast<int>(e), mode, metric, mean, sd,
                        static_cast<int>(vals.size())});
      }
    }
  }
  return rows;
}

Headline headline_from_aggregates(const std::vector<AggregateRow>& agg, int n_episodes,
                                  int final_window) {
  Headline h;
  auto mean_over = [&](Mode mode, const std::string& metric, int from, int to) {
    double sum = 0;
    int n = 0;
    for (const auto& r : agg)
      if (r.mode == mode && r.metric == metric && r.episode >= from && r.episode < to) {
        sum += r.mean;
        ++n;
      }
    return n > 0 ? sum / n : std::numeric_limits<double>::quiet_NaN();
  };
  auto last_value = [&](Mode mode, const std::string& metric) {
    double v = std::numeric_limits<double>::quiet_NaN();
    int best = -1;
    for (const auto& r : agg)
      if (r.mode == mode && r.metric == metric && r.episode > best) {
        best = r.episode;
        v = r.mean;
      }
    return v;
  };

  h.baseline_mean_j = mean_over(Mode::Baseline, "j_disc", 0, n_episodes);
  int from = std::max(0, n_episodes - final_window);
  for (Mode m : {Mode::Safe, Mode::SafeWithPrior, Mode::Unsafe}) {
    double fj = mean_over(m, "j_disc", from, n_episodes);
    if (!std::isnan(fj) && h.baseline_mean_j > 0)
      h.final_j_ratio.emplace_back(agent::to_string(m), fj / h.baseline_mean_j);
    double total = last_value(m, "unsafe_cum");
    if (!std::isnan(total)) h.unsafe_total.emplace_back(agent::to_string(m), total);
  }
  double unsafe_total = std::numeric_limits<double>::quiet_NaN();
  for (auto& [name, v] : h.unsafe_total)
    if (name == std::string("unsafe")) unsafe_total = v;
  if (!std::isnan(unsafe_total) && unsafe_total > 0) {
    for (auto& [name, v] : h.unsafe_total)
      if (name != std::string("unsafe"))
        h.unsafe_reduction_pct.emplace_back(name, 100.0 * (1.0 - v / unsafe_total));
  }
  for (Mode m : {Mode::Safe, Mode::SafeWithPrior}) {
    double early = mean_over(m, "beta_used", 0, 3);
    double late = mean_over(m, "beta_used", std::max(0, n_episodes - 3), n_episodes);
    if (!std::isnan(early)) h.beta_early_mean.emplace_back(agent::to_string(m), early);
    if (!std::isnan(late)) h.beta_late_mean.emplace_back(agent::to_string(m), late);
  }
  return h;
}

void emit_report(const std::vector<AggregateRow>& agg, const std::vector<RunSummary>& summaries,
                 const ExperimentConfig& cfg, const gp::SafetyDataset& pool,
                 const std::string& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw std::runtime_error("emit_report: cannot create directory " + dir);

  auto write_file = [&](const std::string& name, const std::string& content) {
    std::ofstream out(dir + "/" + name, std::ios::binary);
    if (!out) throw std::runtime_error("emit_report: cannot write " + dir + "/" + name);
    out << content;
  };

  auto csv_for = [&](std::initializer_list<const char*> metrics, bool safe_modes_only) {
    std::ostringstream out;
    out.precision(17);
    out << "episode,mode,metric,mean,std,count\n";
    for (const char* metric : metrics)
      for (const auto& r : agg) {
        if (r.metric != metric) continue;
        if (safe_modes_only && r.mode != Mode::Safe && r.mode != Mode::SafeWithPrior) continue;
        out << r.episode << ',' << agent::to_string(r.mode) << ',' << r.metric << ',' << r.mean
            << ',' << r.stddev << ',' << r.count << "\n";
      }
    return out.str();
  };

  write_file("performance.csv", csv_for({"j_disc", "j_undisc"}, false));
  write_file("safety.csv", csv_for({"unsafe_cum", "alt_violation"}, false));
  write_file("beta.csv", csv_for({"beta_used"}, true));

  Headline h = headline_from_aggregates(agg, cfg.n_episodes);
  json summary;
  summary["baseline_mean_j"] = h.baseline_mean_j;
  for (auto& [k, v] : h.final_j_ratio) summary["final_j_ratio"][k] = v;
  for (auto& [k, v] : h.unsafe_total) summary["unsafe_episode_total"][k] = v;
  for (auto& [k, v] : h.unsafe_reduction_pct) summary["unsafe_reduction_pct"][k] = v;
  for (auto& [k, v] : h.beta_early_mean) summary["beta_early_mean"][k] = v;
  for (auto& [k, v] : h.beta_late_mean) summary["beta_late_mean"][k] = v;
  int failed = 0;
  for (const auto& s : summaries) failed += s.failed ? 1 : 0;
  summary["runs_failed"] = failed;
  write_file("summary.json", summary.dump(2) + "\n");

  json manifest;
  manifest["n_runs"] = cfg.n_runs;
  manifest["n_episodes"] = cfg.n_episodes;
  manifest["base_seed"] = cfg.base_seed;
  manifest["prior_points"] = cfg.prior_points;
  manifest["pool_runs"] = cfg.pool_runs;
  json modes = json::array();
  for (Mode m : cfg.modes) modes.push_back(agent::to_string(m));
  manifest["modes"] = modes;
  json cfg_echo;
  for (const auto& [k, v] : cfg.raw.entries()) cfg_echo[k] = v;
  manifest["config"] = cfg_echo;
  json seeds = json::array();
  for (const auto& s : summaries) seeds.push_back(s.seed);
  manifest["run_seeds"] = seeds;
  write_file("manifest.json", manifest.dump(2) + "\n");

  std::ostringstream jsonl;
  for (const auto& s : summaries) {
    if (s.failed) {
      jsonl << "{\"mode\":\"" << agent::to_string(s.mode) << "\",\"run\":" << s.run_index
            << ",\"failed\":true}\n";
      continue;
    }
    jsonl << s.log.to_jsonl();
  }
  write_file("runs.jsonl", jsonl.str());

  if (pool.count() > 0) write_file("prior_pool.csv", pool.to_csv());

  // Wall-clock diagnostics; machine-dependent, not part of the data files.
  std::ostringstream timings;
  timings << "mode,run,wall_seconds\n";
  for (const auto& s : summaries)
    timings << agent::to_string(s.mode) << ',' << s.run_index << ',' << fmt(s.wall_seconds)
            << "\n";
  write_file("timings.csv", timings.str());
}

ExperimentConfig experiment_config_from_config(const Config& cfg) {
  ExperimentConfig e;
  e.setup = agent::learn_setup_from_config(cfg);
  e.n_runs = cfg.get_int("experiment.runs", e.n_runs);
  e.n_episodes = cfg.get_int("experiment.episodes", e.n_episodes);
  e.base_seed = static_cast<std::uint64_t>(cfg.get_int("experiment.seed", 1));
  e.prior_points = cfg.get_int("experiment.prior_points", e.prior_points);
  e.pool_runs = cfg.get_int("experiment.pool_runs", e.pool_runs);
  e.output_dir = cfg.get_string("experiment.output_dir", e.output_dir);
  e.jobs = cfg.get_int("experiment.jobs", e.jobs);
  std::string modes = cfg.get_string("experiment.modes", "safe safe_with_prior unsafe baseline");
  e.modes.clear();
  std::istringstream in(modes);
  std::string tok;
  while (in >> tok) {
    auto m = agent::mode_from_string(tok);
    if (!m) throw ConfigError("experiment.modes: unknown mode '" + tok + "'");
    e.modes.push_back(*m);
  }
  e.raw = cfg;
  return e;
}

}  // namespace safempc::harness
