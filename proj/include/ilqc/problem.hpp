#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "ilqc/linalg.hpp"

namespace ilqc {

// Uniform grid on [t0, T]. All integrators, traces, and sampled coefficients
// in this library live on such grids.
struct TimeGrid {
  double t0 = 0.0;
  double T = 1.0;
  int n_steps = 2000;

  TimeGrid() = default;
  TimeGrid(double t0_, double T_, int n_steps_);

  double step() const { return (T - t0) / n_steps; }
  int nodes() const { return n_steps + 1; }
  // node(n_steps) == T exactly
  double node(int i) const {
    return t0 + (T - t0) * (static_cast<double>(i) / n_steps);
  }
  TimeGrid refined(int factor) const { return {t0, T, n_steps * factor}; }
  bool operator==(const TimeGrid&) const = default;
};

// Time-varying matrix coefficient: either a constant value or node samples on
// a uniform grid with linear interpolation between nodes. The sampled form
// evaluates exactly at its own nodes; that is what the integrators rely on.
class CoefficientFn {
 public:
  CoefficientFn() = default;
  static CoefficientFn constant(Mat value);
  static CoefficientFn sampled(const TimeGrid& grid, std::vector<Mat> samples);

  Mat operator()(double t) const;
  Eigen::Index rows() const { return rows_; }
  Eigen::Index cols() const { return cols_; }
  bool is_constant() const { return constant_; }
  bool empty() const { return rows_ == 0 && cols_ == 0; }
  const TimeGrid& sample_grid() const { return grid_; }
  const std::vector<Mat>& samples() const { return samples_; }

 private:
  bool constant_ = true;
  Eigen::Index rows_ = 0;
  Eigen::Index cols_ = 0;
  Mat value_;
  TimeGrid grid_;
  std::vector<Mat> samples_;
};

enum class ProblemKind { deterministic, stochastic };

// Finite-horizon linear-quadratic problem. The control weight R is only
// required to be positive semidefinite; a singular R is the case of interest.
// Stochastic problems add state and control multiplicative noise (Abar, Bbar)
// driven by a scalar Brownian motion.
struct LqProblem {
  ProblemKind kind = ProblemKind::deterministic;
  TimeGrid grid;
  Vec x0;
  CoefficientFn A, B, Q, R;
  CoefficientFn Abar, Bbar;  // stochastic only
  Mat H;

  Eigen::Index state_dim() const { return A.rows(); }
  Eigen::Index control_dim() const { return B.cols(); }
  bool is_stochastic() const { return kind == ProblemKind::stochastic; }
};

struct ValidationReport {
  std::vector<std::string> violations;
  bool ok() const { return violations.empty(); }
};

// Checks dimensions, symmetry and positive semidefiniteness of Q, R, H
// (eigenvalues >= -tol * scale), and presence of the noise coefficients for
// stochastic problems.
ValidationReport validate(const LqProblem& p, double tol = 1e-9);

// One realized state/control path on the problem grid. cost_to_date[i] is the
// running integral of the quadratic stage cost through times[i]; the final
// entry also includes the terminal cost and equals realized_cost.
struct SimulationTrace {
  std::vector<double> times;
  std::vector<Vec> states;
  std::vector<Vec> controls;
  std::vector<double> noise_increments;  // empty for deterministic traces
  std::vector<double> cost_to_date;
  double realized_cost = 0.0;
};

// Trapezoidal quadrature of the stage cost plus terminal cost. Throws
// TraceMismatch when the trace is not aligned with the problem grid.
double evaluate_cost(const LqProblem& p, const SimulationTrace& trace);

// Fills trace.cost_to_date and trace.realized_cost in place.
void fill_running_cost(const LqProblem& p, SimulationTrace& trace);

LqProblem load_problem(const std::string& json_text);
LqProblem load_problem_file(const std::string& path);
std::string save_problem(const LqProblem& p);
void save_problem_file(const LqProblem& p, const std::string& path);

// CSV with header t,x_0..x_{n-1},u_0..u_{m-1},cost_to_date.
void write_trace_csv(std::ostream& os, const SimulationTrace& trace);
SimulationTrace read_trace_csv(std::istream& is);

}  // namespace ilqc
