#pragma once

#include <string>
#include <vector>

#include "safempc/config.hpp"
#include "safempc/qp.hpp"

namespace safempc::checks {

struct CheckResult {
  std::string name;
  bool pass = false;
  std::string detail;
  double seconds = 0.0;
};

// Exhaustive active-set enumeration for small strictly convex QPs: solves the
// equality-constrained subproblem of every inequality subset and returns the
// feasible candidate with optimal multiplier signs. Independent of the
// interior-point path.
qp::QpSolution active_set_enumeration(const qp::QpProblem& problem);

// The property suites behind the `check` subcommand: QP-vs-enumeration,
// gradient finite differences, GP dense-inverse and variance monotonicity,
// quantile round-trip, Bellman consistency, max-violation equivalence,
// hover fixed point, beta arithmetic, and the post-hoc margin smoke batch.
std::vector<CheckResult> run_all(const Config& cfg);

}  // namespace safempc::checks
