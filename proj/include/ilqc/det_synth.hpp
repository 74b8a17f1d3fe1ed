#pragma once

#include <vector>

#include "ilqc/problem.hpp"
#include "ilqc/regularity.hpp"
#include "ilqc/riccati.hpp"

namespace ilqc {

struct SynthOptions {
  double rank_tol = kRankTol;
  double residual_tol = 1e-6;
  double escape_bound = 1e12;
};

// State feedback plus an open-loop injection in the cost-free control
// directions: u(t, x) = -K(t) x + G0(t) u1(t). Regular problems carry no
// injection (the u1 table is empty).
struct Controller {
  enum class Kind { regular, irregular };
  Kind kind = Kind::regular;
  MatrixGrid feedback_gain;  // K, m x n
  MatrixGrid injection;      // G0, m x (m - m0)
  TimeGrid u1_grid;
  std::vector<Vec> u1;
  double predicted_cost = 0.0;  // x0' [P + P1](t0) x0

  Vec u1_at(double t) const;
  Vec eval(double t, const Vec& x) const;
};

// Open-loop plan steering the correction layer to P1(T) x(T) = 0 with the
// smallest L2 input energy:
//   u1(s) = -B0'(s) Phi'(T, s) P1'(T) lambda,
//   lambda = [P1(T) W P1'(T)]^+ P1(T) Phi(T, t0) x0,
//   W = integral of Phi(T, s) B0(s) B0'(s) Phi'(T, s) ds.
struct SteeringSolution {
  Mat gramian;
  Vec multiplier;
  // ||(I - M M^+) P1(T) Phi(T, t0) x0|| with M = P1(T) W P1'(T); the part of
  // the target no input can reach
  double feasibility_residual = 0.0;
  TimeGrid grid;
  std::vector<Vec> u1;
  MatrixGrid phi;  // Phi(T, .) of the steered dynamics
};

// acl is the closed-loop drift the steering acts through; b0 the free-direction
// input map. Both should be tabulated on a refinement of p.grid so the
// quadrature and transition integration stay sample-exact. Throws
// TerminalUnreachable when the required terminal direction is outside the
// Gramian's range.
SteeringSolution min_energy_u1(const LqProblem& p, const Mat& p1_terminal,
                               const CoefficientFn& acl, const MatrixGrid& b0,
                               const Vec& x0, const SynthOptions& opts = {});

// Builds the modified-cost controller. Requires classify() output and the
// correction layer p1; re-verifies that the modified cost is regular and
// throws NotRegularizable otherwise.
Controller synthesize(const LqProblem& p, const MatrixGrid& P,
                      const MatrixGrid& p1, const RegularityReport& report,
                      const SynthOptions& opts = {});

// Forward RK4 of the closed loop on the problem grid. Deterministic problems
// only.
SimulationTrace simulate(const LqProblem& p, const Controller& c,
                         const SynthOptions& opts = {});

// First-order optimality residuals of a realized trace against the costate
// reconstruction p = [P + P1] x.
struct VerificationReport {
  double stationarity = 0.0;  // max_t ||R u + B' p||
  double adjoint = 0.0;       // max_t central-difference residual of the costate law
  double terminal = 0.0;      // ||p(T) - H x(T)||
  double terminal_p1x = 0.0;  // ||P1(T) x(T)||
  double cost_gap = 0.0;      // |realized - predicted|
  double realized_cost = 0.0;
  double predicted_cost = 0.0;
};

VerificationReport verify_optimality(const LqProblem& p,
                                     const SimulationTrace& trace,
                                     const MatrixGrid& P, const MatrixGrid& p1,
                                     const SynthOptions& opts = {});

}  // namespace ilqc
