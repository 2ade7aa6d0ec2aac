#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "safempc/agent.hpp"
#include "safempc/config.hpp"
#include "safempc/gp.hpp"

namespace safempc::harness {

struct ExperimentConfig {
  int n_runs = 20;
  int n_episodes = 25;
  std::uint64_t base_seed = 1;
  std::vector<agent::Mode> modes = {agent::Mode::Safe, agent::Mode::SafeWithPrior,
                                    agent::Mode::Unsafe, agent::Mode::Baseline};
  int prior_points = 5;   // D_0 size for safe_with_prior
  int pool_runs = 2;      // unsafe runs that generate the prior pool
  std::string output_dir = "out";
  int jobs = 0;           // 0 = all hardware threads
  agent::LearnSetup setup;
  Config raw;             // echoed into the manifest

  std::vector<std::string> validate() const;
};

struct RunSummary {
  agent::Mode mode = agent::Mode::Baseline;
  int run_index = 0;
  std::uint64_t seed = 0;
  std::vector<double> j_disc;
  std::vector<double> j_undisc;
  std::vector<int> unsafe_flag;      // -1 where the episode aborted
  std::vector<int> unsafe_cum;
  std::vector<double> alt_violation;
  std::vector<double> beta_used;     // NaN where not applicable
  int aborted = 0;
  bool failed = false;
  std::string error;
  double wall_seconds = 0.0;         // diagnostic; kept out of the data files
  agent::RunLog log;
};

// Seeded multi-run batch over the requested modes; run r of every mode uses
// seed base_seed + r so wind realizations pair across modes. Fan-out is an
// OpenMP loop over (mode, run) tasks.
std::vector<RunSummary> run_experiment(const ExperimentConfig& cfg,
                                       gp::SafetyDataset* pool_out = nullptr);

double failed_fraction(const std::vector<RunSummary>& summaries);

struct AggregateRow {
  int episode;
  agent::Mode mode;
  std::string metric;
  double mean;
  double stddev;  // unbiased; 0 for a single sample
  int count;
};

std::vector<AggregateRow> aggregate(const std::vector<RunSummary>& summaries);

// Writes performance.csv, safety.csv, beta.csv, summary.json, manifest.json,
// runs.jsonl (+ prior_pool.csv when a pool was generated, timings.csv as a
// non-deterministic diagnostic) under `dir`.
void emit_report(const std::vector<AggregateRow>& agg, const std::vector<RunSummary>& summaries,
                 const ExperimentConfig& cfg, const gp::SafetyDataset& pool,
                 const std::string& dir);

// Headline numbers computed from aggregate rows (the same data behind the
// CSVs): per-mode final-window J ratio vs baseline and unsafe-episode
// reduction percentages.
struct Headline {
  double baseline_mean_j = 0.0;
  std::vector<std::pair<std::string, double>> final_j_ratio;
  std::vector<std::pair<std::string, double>> unsafe_total;
  std::vector<std::pair<std::string, double>> unsafe_reduction_pct;
  std::vector<std::pair<std::string, double>> beta_early_mean;
  std::vector<std::pair<std::string, double>> beta_late_mean;
};
Headline headline_from_aggregates(const std::vector<AggregateRow>& agg, int n_episodes,
                                  int final_window = 5);

ExperimentConfig experiment_config_from_config(const Config& cfg);

}  // namespace safempc::harness
