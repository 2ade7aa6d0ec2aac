#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "safempc/experiment.hpp"

using namespace safempc;
using agent::Mode;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

harness::RunSummary fixture_run(Mode mode, int idx, std::vector<double> j,
                                std::vector<int> unsafe) {
  harness::RunSummary s;
  s.mode = mode;
  s.run_index = idx;
  s.seed = 100 + idx;
  s.j_disc = j;
  s.j_undisc = j;
  int cum = 0;
  for (std::size_t e = 0; e < j.size(); ++e) {
    s.unsafe_flag.push_back(unsafe[e]);
    cum += unsafe[e];
    s.unsafe_cum.push_back(cum);
    s.alt_violation.push_back(unsafe[e] ? 0.1 : -0.2);
    s.beta_used.push_back(mode == Mode::Safe || mode == Mode::SafeWithPrior
                              ? 0.9 - 0.1 * unsafe[e]
                              : std::numeric_limits<double>::quiet_NaN());
  }
  return s;
}

}  // namespace

TEST_CASE("aggregate: single run has zero std, identical runs too") {
  std::vector<harness::RunSummary> one{fixture_run(Mode::Baseline, 0, {10, 20}, {0, 0})};
  auto rows = harness::aggregate(one);
  for (const auto& r : rows) {
    if (r.metric != "j_disc") continue;
    CHECK(r.stddev == 0.0);
    CHECK(r.count == 1);
  }

  std::vector<harness::RunSummary> two{fixture_run(Mode::Baseline, 0, {10, 20}, {0, 0}),
                                       fixture_run(Mode::Baseline, 1, {10, 20}, {0, 0})};
  for (const auto& r : harness::aggregate(two)) {
    if (r.metric != "j_disc") continue;
    CHECK(r.stddev == 0.0);
    CHECK(r.count == 2);
    CHECK((r.episode == 0 ? r.mean == 10.0 : r.mean == 20.0));
  }
}

TEST_CASE("aggregate matches a hand-computed three-run fixture") {
  std::vector<harness::RunSummary> runs{fixture_run(Mode::Unsafe, 0, {1.0}, {1}),
                                        fixture_run(Mode::Unsafe, 1, {2.0}, {0}),
                                        fixture_run(Mode::Unsafe, 2, {3.0}, {1})};
  auto rows = harness::aggregate(runs);
  bool saw_j = false, saw_cum = false;
  for (const auto& r : rows) {
    if (r.metric == "j_disc" && r.episode == 0) {
      saw_j = true;
      CHECK(r.mean == doctest::Approx(2.0));
      CHECK(r.stddev == doctest::Approx(1.0));  // sample std of {1,2,3}
      CHECK(r.count == 3);
    }
    if (r.metric == "unsafe_cum" && r.episode == 0) {
      saw_cum = true;
      CHECK(r.mean == doctest::Approx(2.0 / 3.0));
    }
  }
  CHECK(saw_j);
  CHECK(saw_cum);
}

TEST_CASE("aggregate skips aborted episodes but keeps the count column honest") {
  harness::RunSummary ok = fixture_run(Mode::Safe, 0, {5.0, 6.0}, {0, 0});
  harness::RunSummary ragged = fixture_run(Mode::Safe, 1, {5.0, 6.0}, {0, 0});
  ragged.j_disc[1] = std::numeric_limits<double>::quiet_NaN();  // aborted episode
  ragged.unsafe_flag[1] = -1;
  auto rows = harness::aggregate({ok, ragged});
  for (const auto& r : rows) {
    if (r.metric != "j_disc") continue;
    CHECK(r.count == (r.episode == 0 ? 2 : 1));
  }
}

TEST_CASE("headline: reduction percentages are internally consistent") {
  std::vector<harness::RunSummary> runs;
  for (int i = 0; i < 4; ++i) runs.push_back(fixture_run(Mode::Unsafe, i, {1, 1, 1}, {1, 1, 0}));
  for (int i = 0; i < 4; ++i) runs.push_back(fixture_run(Mode::Safe, i, {1, 1, 1}, {1, 0, 0}));
  for (int i = 0; i < 4; ++i) runs.push_back(fixture_run(Mode::Baseline, i, {1, 1, 1}, {0, 0, 0}));
  auto agg = harness::aggregate(runs);
  harness::Headline h = harness::headline_from_aggregates(agg, 3);
  double unsafe_total = 0, safe_total = 0, reduction = -1;
  for (auto& [k, v] : h.unsafe_total) {
    if (k == "unsafe") unsafe_total = v;
    if (k == "safe") safe_total = v;
  }
  for (auto& [k, v] : h.unsafe_reduction_pct)
    if (k == "safe") reduction = v;
  CHECK(unsafe_total == doctest::Approx(2.0));
  CHECK(safe_total == doctest::Approx(1.0));
  CHECK(reduction == doctest::Approx(100.0 * (1.0 - safe_total / unsafe_total)));
}

TEST_CASE("emit_report: empty aggregates give header-only CSVs and valid JSON") {
  harness::ExperimentConfig cfg;
  cfg.setup = agent::learn_setup_from_config(Config{});
  gp::SafetyDataset pool;
  pool.targets.resize(0, quad::kNumConstraints);
  std::string dir = (std::filesystem::temp_directory_path() / "safempc_empty_report").string();
  std::filesystem::remove_all(dir);
  harness::emit_report({}, {}, cfg, pool, dir);
  CHECK(slurp(dir + "/performance.csv") == "episode,mode,metric,mean,std,count\n");
  CHECK(slurp(dir + "/safety.csv") == "episode,mode,metric,mean,std,count\n");
  CHECK(slurp(dir + "/beta.csv") == "episode,mode,metric,mean,std,count\n");
  auto summary = nlohmann::json::parse(slurp(dir + "/summary.json"));
  CHECK(summary.contains("runs_failed"));
  auto manifest = nlohmann::json::parse(slurp(dir + "/manifest.json"));
  CHECK(manifest["n_runs"] == cfg.n_runs);
  std::filesystem::remove_all(dir);
}

TEST_CASE("emit_report fixture matches the golden CSV") {
  harness::ExperimentConfig cfg;
  cfg.setup = agent::learn_setup_from_config(Config{});
  cfg.n_episodes = 2;
  std::vector<harness::RunSummary> runs{fixture_run(Mode::Unsafe, 0, {4.0, 2.0}, {1, 0}),
                                        fixture_run(Mode::Unsafe, 1, {6.0, 2.0}, {1, 1})};
  auto agg = harness::aggregate(runs);
  gp::SafetyDataset pool;
  pool.targets.resize(0, quad::kNumConstraints);
  std::string dir = (std::filesystem::temp_directory_path() / "safempc_fixture_report").string();
  std::filesystem::remove_all(dir);
  harness::emit_report(agg, runs, cfg, pool, dir);
  std::string expected =
      "episode,mode,metric,mean,std,count\n"
      "0,unsafe,j_disc,5,1.4142135623730951,2\n"
      "1,unsafe,j_disc,2,0,2\n"
      "0,unsafe,j_undisc,5,1.4142135623730951,2\n"
      "1,unsafe,j_undisc,2,0,2\n";
  CHECK(slurp(dir + "/performance.csv") == expected);
  std::filesystem::remove_all(dir);
}

TEST_CASE("failed_fraction counts failures") {
  std::vector<harness::RunSummary> runs{fixture_run(Mode::Baseline, 0, {1.0}, {0})};
  harness::RunSummary bad;
  bad.failed = true;
  runs.push_back(bad);
  CHECK(harness::failed_fraction(runs) == doctest::Approx(0.5));
}

TEST_CASE("tiny experiment is reproducible byte for byte") {
  Config cfg;
  cfg.set("experiment.runs", "1");
  cfg.set("experiment.episodes", "2");
  cfg.set("experiment.modes", "baseline");
  cfg.set("experiment.seed", "5");
  harness::ExperimentConfig ecfg = harness::experiment_config_from_config(cfg);

  auto run_once = [&](const std::string& dir) {
    std::filesystem::remove_all(dir);
    gp::SafetyDataset pool;
    auto summaries = harness::run_experiment(ecfg, &pool);
    auto agg = harness::aggregate(summaries);
    harness::emit_report(agg, summaries, ecfg, pool, dir);
  };
  std::string d1 = (std::filesystem::temp_directory_path() / "safempc_det1").string();
  std::string d2 = (std::filesystem::temp_directory_path() / "safempc_det2").string();
  run_once(d1);
  run_once(d2);
  for (const char* f :
       {"performance.csv", "safety.csv", "beta.csv", "summary.json", "manifest.json",
        "runs.jsonl"}) {
    CHECK(slurp(d1 + "/" + f) == slurp(d2 + "/" + f));
  }
  std::filesystem::remove_all(d1);
  std::filesystem::remove_all(d2);
}

TEST_CASE("experiment config validation reports every violation") {
  Config cfg;
  cfg.set("experiment.runs", "0");
  cfg.set("task.gamma", "7");
  harness::ExperimentConfig ecfg = harness::experiment_config_from_config(cfg);
  auto errs = ecfg.validate();
  CHECK(errs.size() >= 2);
  CHECK_THROWS_AS(harness::run_experiment(ecfg), ConfigError);
}

TEST_CASE("unknown experiment mode is rejected") {
  Config cfg;
  cfg.set("experiment.modes", "safe bogus");
  CHECK_THROWS_AS(harness::experiment_config_from_config(cfg), ConfigError);
}
