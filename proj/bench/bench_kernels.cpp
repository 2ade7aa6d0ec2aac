// Serial vs OpenMP comparison of the hot kernels: batch sensitivity
// assembly, multi-constraint GP fitting, and the underlying QP solve.

#include <benchmark/benchmark.h>

#include "safempc/agent.hpp"
#include "safempc/gp.hpp"
#include "safempc/mpc.hpp"
#include "safempc/rng.hpp"

using namespace safempc;

namespace {

struct Fixture {
  mpc::MpcConfig cfg;
  mpc::MpcParams theta{9.9, 0.68, 0.02};
  std::vector<agent::Transition> batch;
  gp::SafetyDataset dataset;
  gp::GpConfig gp_cfg;

  Fixture() : cfg(mpc::mpc_config_from_config(Config{}, quad::task_from_config(Config{}))) {
    quad::QuadParams params = quad::quad_params_from_config(Config{});
    quad::State s = cfg.task.x0;
    for (int t = 0; t < 8; ++t) {
      quad::Action a = mpc::policy(s, theta, cfg);
      quad::State sn = quad::step(s, a, rng::uniform01(1, t), params);
      batch.push_back({s, a, sn, quad::stage_cost(s, a, cfg.task)});
      s = sn;
    }
    rng::Stream st(2);
    dataset.targets.resize(12, quad::kNumConstraints);
    for (int i = 0; i < 12; ++i) {
      gp::Vec x(3);
      x << st.u(-1, 1), st.u(-1, 1), st.u(-1, 1);
      dataset.inputs.push_back(x);
      for (int j = 0; j < quad::kNumConstraints; ++j) dataset.targets(i, j) = st.u(-1, 1);
    }
  }
};

Fixture& fixture() {
  static Fixture f;
  return f;
}

}  // namespace

static void BM_AssembleUpdateSerial(benchmark::State& state) {
  Fixture& f = fixture();
  for (auto _ : state) {
    auto terms = agent::assemble_update_serial(f.batch, f.theta, f.cfg);
    benchmark::DoNotOptimize(terms.p);
  }
}
BENCHMARK(BM_AssembleUpdateSerial)->Unit(benchmark::kMillisecond);

static void BM_AssembleUpdateOpenMP(benchmark::State& state) {
  Fixture& f = fixture();
  for (auto _ : state) {
    auto terms = agent::assemble_update(f.batch, f.theta, f.cfg, true);
    benchmark::DoNotOptimize(terms.p);
  }
}
BENCHMARK(BM_AssembleUpdateOpenMP)->Unit(benchmark::kMillisecond);

static void BM_GpFitAllSerial(benchmark::State& state) {
  Fixture& f = fixture();
  for (auto _ : state) {
    auto sur = gp::fit_all_serial(f.dataset, gp::Vec::Ones(3), f.gp_cfg);
    benchmark::DoNotOptimize(sur.models.size());
  }
}
BENCHMARK(BM_GpFitAllSerial)->Unit(benchmark::kMicrosecond);

static void BM_GpFitAllOpenMP(benchmark::State& state) {
  Fixture& f = fixture();
  for (auto _ : state) {
    auto sur = gp::fit_all(f.dataset, gp::Vec::Ones(3), f.gp_cfg, true);
    benchmark::DoNotOptimize(sur.models.size());
  }
}
BENCHMARK(BM_GpFitAllOpenMP)->Unit(benchmark::kMicrosecond);

static void BM_HorizonQpSolve(benchmark::State& state) {
  Fixture& f = fixture();
  qp::ParametricQp pqp = mpc::build_value_problem(f.cfg.task.x0, f.cfg);
  qp::QpProblem p = pqp.builder(f.theta.to_vector());
  qp::SolveOptions opts;
  opts.tol = f.cfg.solver_tol;
  for (auto _ : state) {
    auto sol = qp::solve_qp(p, opts);
    benchmark::DoNotOptimize(sol.value);
  }
}
BENCHMARK(BM_HorizonQpSolve)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
