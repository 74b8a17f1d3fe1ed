#pragma once

#include <vector>

#include "ilqc/problem.hpp"
#include "ilqc/riccati.hpp"

namespace ilqc {

// Independent ground-truth solvers used to validate the synthesizer. Neither
// knows anything about regularity; they approach the problem by brute force.
enum class OracleMethod { perturbation, discretized_qp };

struct OracleResult {
  OracleMethod method = OracleMethod::perturbation;
  double optimal_cost = 0.0;
  double eps = 0.0;  // perturbation only
  int n_steps = 0;   // discretized_qp only
  TimeGrid grid;
  // perturbation: one control per grid node (closed-loop values);
  // discretized_qp: one zero-order-hold control per grid interval
  std::vector<Vec> control_grid;
};

// Replaces R by the strictly positive definite R + eps I and solves the now
// regular problem by Riccati integration. Returns the perturbed value
// x0' P_eps(t0) x0; as eps decreases the value is nonincreasing and tends to
// the singular problem's value from above.
OracleResult perturbation_solve(const LqProblem& p, double eps,
                                const RiccatiOptions& opts = {});

// Direct transcription: zero-order-hold controls on an n_steps grid, exact
// per-interval discretization of the dynamics (matrix exponential of the
// midpoint-frozen coefficients), trapezoid state-cost weights, and a
// minimum-norm least-squares solve of the resulting convex quadratic in the
// stacked controls. A singular R makes the quadratic singular; all minimizers
// share one cost, which is what the returned value is. Guarded against
// problems too large for a dense solve (m * n_steps <= 20000).
OracleResult discretized_qp_solve(const LqProblem& p, int n_steps,
                                  const RiccatiOptions& opts = {});

}  // namespace ilqc
