#pragma once

#include <vector>

#include "ilqc/problem.hpp"
#include "ilqc/riccati.hpp"

namespace ilqc {

// Node-wise regularity verdict. The weight below is R(t) for deterministic
// problems and Upsilon0(t) = R + Bbar' P Bbar for stochastic ones; the gain
// matrix is B'P resp. Gamma0 = B'P + Bbar' P Abar. The problem is regular at
// a node when Range[gain] is contained in Range[weight].
struct NodeClassification {
  double t = 0.0;
  bool irregular = false;
  Eigen::Index m0 = 0;       // rank of the weight
  double range_residual = 0.0;
};

// Everything classify() learns about a problem, plus the open-loop coefficient
// grids ("denotations") sampled on a refined design grid so that later RK4
// passes evaluate them exactly at their stage points.
struct RegularityReport {
  bool stochastic = false;
  bool irregular = false;
  Eigen::Index m0 = 0;  // weight rank at the initial node
  std::vector<NodeClassification> nodes;

  bool rank_profile_changed = false;
  std::vector<double> rank_change_times;

  RowTransform transform;  // at t0

  // sampled on the design grid (p.grid refined `refine` times)
  MatrixGrid P;                    // base Riccati solution
  MatrixGrid B0, G0;               // free-direction input map and injector
  MatrixGrid Bbar0, C0;            // stochastic only
  MatrixGrid Upsilon0, Gamma0;     // stochastic only
  CoefficientFn A0, D0;            // open-loop drift and quadratic kernel
  CoefficientFn Abar0, Dbar0, F0, Fbar0;  // stochastic only

  // closed-loop coefficients, present after fill_closed_loop
  bool closed_loop_filled = false;
  CoefficientFn A1, B1, Abar1, Bbar1;

  const TimeGrid& design_grid() const { return B0.grid; }
  Eigen::Index free_dim() const { return B0.values.front().cols(); }
};

struct ClassifyOptions {
  double rank_tol = kRankTol;
  double residual_tol = 1e-6;
  int refine = 4;  // design grid refinement relative to the problem grid
  PivotRule pivot = PivotRule::largest_abs;
  double escape_bound = 1e12;
};

// Classifies the problem node by node against the passed Riccati solution
// (tabulated on the problem grid) and tabulates the denotations on the design
// grid from an internal re-integration. m0 is assumed constant in time; a
// change is recorded in rank_profile_changed, not raised.
RegularityReport classify(const LqProblem& p, const MatrixGrid& P,
                          const ClassifyOptions& opts = {});

// Terminal value selection for the correction layer:
// P1(T) = -H + (I - Pi) H (I - Pi) with Pi the orthogonal projector onto
// Range[B0(T)]. This is the member of the admissible family
// { -H + K : B0'(T) (H + K... ) = 0 } closest to pure -H on Range[B0(T)].
struct TerminalSelection {
  Mat p1_terminal;
  double constraint_residual = 0.0;  // ||B0'(T) (H + P1(T))||_F
  int family_dimension = 0;          // s(s+1)/2, s = n - rank B0(T)
};

TerminalSelection select_p1_terminal(const LqProblem& p,
                                     const RegularityReport& report,
                                     double rank_tol = kRankTol);

// Checks that the terminal-modified cost is regular: the free directions of
// the weight no longer see the gain, [I - W W^+] gain = 0 along the grid
// (W = R, gain = B'Pbar deterministically; W = R + Bbar' Pbar Bbar,
// gain = B'Pbar + Bbar' Pbar Abar stochastically).
struct RegularizedCheck {
  bool ok = false;
  double max_residual = 0.0;
  double worst_t = 0.0;
};

RegularizedCheck check_regularized(const LqProblem& p, const MatrixGrid& pbar,
                                   double tol = 1e-6,
                                   double rank_tol = kRankTol);

// Pseudoinverse compatibility conditions required by the stochastic synthesis
// (trivial for deterministic problems). res35/res36 are indexed by the tested
// coefficient L in {B, Abar, Bbar}.
struct Assumption2Report {
  double res35[3] = {0.0, 0.0, 0.0};
  double res36[3] = {0.0, 0.0, 0.0};
  double res37 = 0.0;
  double worst_t = 0.0;
  double max_residual() const;
  bool holds(double tol) const { return max_residual() <= tol; }
};

Assumption2Report check_assumption2(const LqProblem& p,
                                    const RegularityReport& report,
                                    const MatrixGrid& p1,
                                    double rank_tol = kRankTol);

// Residual of the algebraic constraint coupling the correction layer to the
// free directions: max_t || C0 + B0'P1 + Bbar0' (I - P1 Fbar0)^+ P1
// (Abar0 + Dbar0 P1) ||_F. Stochastic reports only.
double check_pz2(const RegularityReport& report, const MatrixGrid& p1,
                 double rank_tol = kRankTol);

// Tabulates the closed-loop coefficients A1, B1, Abar1, Bbar1 on p1's grid.
void fill_closed_loop(RegularityReport& report, const MatrixGrid& p1,
                      double rank_tol = kRankTol);

}  // namespace ilqc
