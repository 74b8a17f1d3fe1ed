#pragma once

#include <iosfwd>
#include <vector>

#include "ilqc/problem.hpp"

namespace ilqc {

struct RegularityReport;

// Matrix-valued function tabulated on a uniform grid. at() interpolates
// linearly and evaluates exactly at the grid nodes.
struct MatrixGrid {
  TimeGrid grid;
  std::vector<Mat> values;
  // max over steps of || (y_k - y_{k-1})/h - f(t_mid, y_mid) ||, a midpoint
  // consistency diagnostic recorded by the integrators
  double step_residual = 0.0;

  const Mat& node(int i) const { return values[static_cast<size_t>(i)]; }
  const Mat& front() const { return values.front(); }
  const Mat& back() const { return values.back(); }
  Mat at(double t) const;
  CoefficientFn as_coefficient() const;
  // keeps every factor-th node; grid.n_steps must be divisible by factor
  MatrixGrid downsample(int factor) const;
};

void write_matrix_grid_csv(std::ostream& os, const MatrixGrid& g);

struct RiccatiOptions {
  double rank_tol = kRankTol;
  double escape_bound = 1e12;
};

// Backward flows, integrated with classical RK4 from T down to t0 and
// symmetrized after every step. A solution leaving the escape bound throws
// FiniteEscape with the offending time.
//
// integrate_p:    standard flow with terminal value H. For stochastic
//                 problems the quadratic term uses the noise-augmented
//                 weight pinv(R + Bbar' P Bbar).
// integrate_pbar: same flow started from the modified terminal H + P1_T.
// integrate_p1:   flow of the terminal-layer correction; its coefficients
//                 are the open-loop denotations carried by a RegularityReport
//                 (see regularity.hpp), so classify() must run first.
MatrixGrid integrate_p(const LqProblem& p, const RiccatiOptions& opts = {});
MatrixGrid integrate_p(const LqProblem& p, const TimeGrid& grid,
                       const RiccatiOptions& opts = {});
MatrixGrid integrate_pbar(const LqProblem& p, const Mat& p1_terminal,
                          const RiccatiOptions& opts = {});
MatrixGrid integrate_pbar(const LqProblem& p, const Mat& p1_terminal,
                          const TimeGrid& grid, const RiccatiOptions& opts = {});

struct P1Result {
  MatrixGrid grid;
  // times where the numeric rank of (I - P1 Fbar0) changed between steps;
  // the pseudoinverse is discontinuous there and the flow is suspect
  std::vector<double> pinv_discontinuities;
};

P1Result integrate_p1(const LqProblem& p, const Mat& p1_terminal,
                      const RegularityReport& report,
                      const RiccatiOptions& opts = {});
P1Result integrate_p1(const LqProblem& p, const Mat& p1_terminal,
                      const RegularityReport& report, const TimeGrid& grid,
                      const RiccatiOptions& opts = {});

// max over shared nodes of ||pbar - p - p1||_F; grids must coincide.
double check_pbar_identity(const MatrixGrid& p, const MatrixGrid& p1,
                           const MatrixGrid& pbar);

// State transition of dx = acl(t) x: returns Phi(T, t) per node, integrated
// backward from Phi(T, T) = I.
MatrixGrid transition_matrix(const CoefficientFn& acl, const TimeGrid& grid,
                             const RiccatiOptions& opts = {});

}  // namespace ilqc
