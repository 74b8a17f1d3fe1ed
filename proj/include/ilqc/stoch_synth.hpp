#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ilqc/det_synth.hpp"
#include "ilqc/problem.hpp"
#include "ilqc/regularity.hpp"
#include "ilqc/riccati.hpp"

namespace ilqc {

struct StochSynthOptions {
  double rank_tol = kRankTol;
  double residual_tol = 1e-6;
  double escape_bound = 1e12;
  // proceed past a failed pseudoinverse-compatibility check instead of
  // throwing Assumption2Violated; the synthesized controller is then only
  // heuristic
  bool warn_assumption2 = false;
};

// Stochastic feedback with a free-direction term:
//   u(t, x) = -feedback_gain(t) x + free_projector(t) z(t),
//   z(t) = injection(t) u1(t),
// where feedback_gain = pinv(Ubar) Gbar with Ubar = R + Bbar' Pbar Bbar and
// Gbar = B' Pbar + Bbar' Pbar Abar, and free_projector = I - pinv(Ubar) Ubar.
// The injection picks z so that the free components of the transformed input
// equal u1 (u1 = Upsilon_T0 z), which is what the terminal steering plans.
struct StochController {
  enum class Kind { regular, irregular };
  Kind kind = Kind::regular;
  MatrixGrid feedback_gain;
  MatrixGrid free_projector;
  MatrixGrid injection;
  std::string z_map;
  TimeGrid u1_grid;
  std::vector<Vec> u1;
  double predicted_cost = 0.0;  // x0' Pbar(t0) x0

  Vec u1_at(double t) const;
  Vec eval(double t, const Vec& x) const;
};

// Steers the mean of the closed loop d E[x] = (A1 E[x] + B1 u1) dt so that
// P1(T) E[x(T)] = 0, through the same minimum-energy Gramian plan as the
// deterministic path. Only supported when the u1 channel does not excite the
// diffusion (node-wise Bbar1 ~ 0) and the diffusion the loop does carry is
// annihilated by P1(T) Phi(T, s); then the mean plan pins the terminal value
// pathwise. Requires fill_closed_loop() to have run on the report.
// Throws UnsupportedNoiseCoupling outside that class, TerminalUnreachable
// when the Gramian cannot reach the required direction.
SteeringSolution steer_mean(const LqProblem& p, const Mat& p1_terminal,
                            const RegularityReport& report, const Vec& x0,
                            const StochSynthOptions& opts = {});

// Builds the controller from the modified-cost solution. Verifies that the
// modified cost is regular (NotRegularizable otherwise, including a failed
// free-direction constraint check) and that the pseudoinverse compatibility
// conditions hold (Assumption2Violated unless warn_assumption2).
StochController synthesize_stochastic(const LqProblem& p, const MatrixGrid& pbar,
                                      const MatrixGrid& p1,
                                      const RegularityReport& report,
                                      const StochSynthOptions& opts = {});

// Euler-Maruyama on the problem grid driven by a scalar Brownian motion.
// Increments come from a counter generator keyed by (seed, path, step), so a
// given call is bit-reproducible and paths are independent of evaluation
// order. Each trace records its increments and realized cost. path_offset
// shifts the path index: simulating [0, n) in batches of any size gives the
// same ensemble as one call, which keeps large studies out of memory.
std::vector<SimulationTrace> simulate_em(const LqProblem& p,
                                         const StochController& c,
                                         std::uint64_t seed, int n_paths,
                                         int path_offset = 0,
                                         double escape_bound = 1e12);

struct McSummary {
  double mean = 0.0;
  double half_width_95 = 0.0;  // 1.96 * sample stddev / sqrt(n)
  int n_paths = 0;
};

McSummary monte_carlo_cost(const std::vector<double>& costs);
McSummary monte_carlo_cost(const std::vector<SimulationTrace>& traces);

/// Costates reconstructed along one realized path:
//   theta = P1 x,  theta_bar = P1 [Abar1 x + Bbar1 u1],
//   p = P x + theta,  q = P [Abar x + Bbar u] + theta_bar.
// u1 is recovered from the stored controls through the free-direction rows of
// the input transform.
struct CostateTrace {
  std::vector<Vec> theta;
  std::vector<Vec> theta_bar;
  std::vector<Vec> p;
  std::vector<Vec> q;
};

CostateTrace reconstruct_costates(const LqProblem& p,
                                  const SimulationTrace& trace,
                                  const MatrixGrid& P, const MatrixGrid& p1,
                                  const RegularityReport& report,
                                  double rank_tol = kRankTol);

// Residuals of the optimality system along simulated paths:
//   stationarity: || R u + B' p + Bbar' q ||            (node-wise)
//   constraint:   || C0 x + B0' theta + Bbar0' theta_bar ||
//   drift:        || dtheta + [A0' theta + Abar0' theta_bar + C0' u1] h
//                    - theta_bar dW ||                  (step-wise)
//   terminal:     || P1(T) x(T) ||
// means average over paths and nodes, maxima are global.
struct FbsdeReport {
  double stationarity_max = 0.0, stationarity_mean = 0.0;
  double constraint_max = 0.0, constraint_mean = 0.0;
  double drift_max = 0.0, drift_mean = 0.0;
  double terminal_max = 0.0, terminal_mean = 0.0;
};

FbsdeReport verify_fbsde(const LqProblem& p,
                         const std::vector<SimulationTrace>& traces,
                         const MatrixGrid& P, const MatrixGrid& p1,
                         const RegularityReport& report,
                         double rank_tol = kRankTol);

}  // namespace ilqc
