#include "ilqc/riccati.hpp"

#include <cmath>
#include <iomanip>
#include <ostream>
#include <utility>

#include "ilqc/errors.hpp"
#include "ilqc/regularity.hpp"

namespace ilqc {

Mat MatrixGrid::at(double t) const {
  const double h = grid.step();
  double s = (t - grid.t0) / h;
  if (s <= 0.0) return values.front();
  if (s >= grid.n_steps) return values.back();
  int i = static_cast<int>(std::floor(s));
  double theta = s - i;
  if (theta < 1e-9) return values[i];
  if (theta > 1.0 - 1e-9) return values[i + 1];
  return (1.0 - theta) * values[i] + theta * values[i + 1];
}

CoefficientFn MatrixGrid::as_coefficient() const {
  return CoefficientFn::sampled(grid, values);
}

MatrixGrid MatrixGrid::downsample(int factor) const {
  if (factor < 1 || grid.n_steps % factor != 0)
    throw Error(ErrorCode::generic,
                "MatrixGrid::downsample: factor must divide n_steps");
  MatrixGrid out;
  out.grid = TimeGrid(grid.t0, grid.T, grid.n_steps / factor);
  out.step_residual = step_residual;
  out.values.reserve(out.grid.nodes());
  for (int i = 0; i < out.grid.nodes(); ++i)
    out.values.push_back(values[static_cast<size_t>(i) * factor]);
  return out;
}

void write_matrix_grid_csv(std::ostream& os, const MatrixGrid& g) {
  if (g.values.empty()) throw Error(ErrorCode::generic, "empty matrix grid");
  const Eigen::Index r = g.values.front().rows();
  const Eigen::Index c = g.values.front().cols();
  os << "t";
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) os << ",P_" << i << j;
  os << "\n" << std::setprecision(17);
  for (int k = 0; k < g.grid.nodes(); ++k) {
    os << g.grid.node(k);
    for (Eigen::Index i = 0; i < r; ++i)
      for (Eigen::Index j = 0; j < c; ++j) os << "," << g.values[k](i, j);
    os << "\n";
  }
}

namespace {

// Classical RK4 from T down to t0. Records the midpoint consistency residual
// and throws FiniteEscape when the flow leaves the escape bound.
template <class Rhs>
MatrixGrid integrate_backward(const TimeGrid& grid, const Mat& terminal,
                              Rhs&& f, bool sym, double escape_bound) {
  const int n = grid.n_steps;
  const double h = grid.step();
  MatrixGrid out;
  out.grid = grid;
  out.values.assign(grid.nodes(), Mat());
  Mat y = sym ? symmetrize(terminal) : terminal;
  out.values[n] = y;
  double worst = 0.0;
  for (int k = n; k > 0; --k) {
    const double t = grid.node(k);
    const Mat k1 = f(t, y);
    const Mat k2 = f(t - 0.5 * h, y - 0.5 * h * k1);
    const Mat k3 = f(t - 0.5 * h, y - 0.5 * h * k2);
    const Mat k4 = f(t - h, y - h * k3);
    Mat next = y - (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    if (sym) next = symmetrize(next);
    if (!next.allFinite() || next.cwiseAbs().maxCoeff() > escape_bound)
      throw FiniteEscape(grid.node(k - 1),
                         "backward flow left the escape bound at t = " +
                             std::to_string(grid.node(k - 1)));
    const Mat mid = 0.5 * (y + next);
    worst = std::max(worst, ((y - next) / h - f(t - 0.5 * h, mid)).norm());
    y = std::move(next);
    out.values[k - 1] = y;
  }
  out.step_residual = worst;
  return out;
}

Mat base_rhs_det(const LqProblem& p, double rank_tol, double t, const Mat& P) {
  const Mat A = p.A(t);
  const Mat BtP = p.B(t).transpose() * P;
  return -(A.transpose() * P + P * A + p.Q(t) -
           BtP.transpose() * pinv(p.R(t), rank_tol) * BtP);
}

Mat base_rhs_stoch(const LqProblem& p, double rank_tol, double t,
                   const Mat& P) {
  const Mat A = p.A(t);
  const Mat Ab = p.Abar(t);
  const Mat ups = p.R(t) + p.Bbar(t).transpose() * P * p.Bbar(t);
  const Mat gam = p.B(t).transpose() * P + p.Bbar(t).transpose() * P * Ab;
  return -(A.transpose() * P + P * A + Ab.transpose() * P * Ab + p.Q(t) -
           gam.transpose() * pinv(ups, rank_tol) * gam);
}

MatrixGrid integrate_base(const LqProblem& p, const Mat& terminal,
                          const TimeGrid& grid, const RiccatiOptions& opts) {
  if (p.is_stochastic()) {
    return integrate_backward(
        grid, terminal,
        [&](double t, const Mat& P) -> Mat {
          return base_rhs_stoch(p, opts.rank_tol, t, P);
        },
        true, opts.escape_bound);
  }
  return integrate_backward(
      grid, terminal,
      [&](double t, const Mat& P) -> Mat {
        return base_rhs_det(p, opts.rank_tol, t, P);
      },
      true, opts.escape_bound);
}

}  // namespace

MatrixGrid integrate_p(const LqProblem& p, const RiccatiOptions& opts) {
  return integrate_p(p, p.grid, opts);
}

MatrixGrid integrate_p(const LqProblem& p, const TimeGrid& grid,
                       const RiccatiOptions& opts) {
  return integrate_base(p, p.H, grid, opts);
}

MatrixGrid integrate_pbar(const LqProblem& p, const Mat& p1_terminal,
                          const RiccatiOptions& opts) {
  return integrate_pbar(p, p1_terminal, p.grid, opts);
}

MatrixGrid integrate_pbar(const LqProblem& p, const Mat& p1_terminal,
                          const TimeGrid& grid, const RiccatiOptions& opts) {
  if (p1_terminal.rows() != p.state_dim() ||
      p1_terminal.cols() != p.state_dim())
    throw InvalidMatrix("integrate_pbar: terminal correction must be n x n");
  return integrate_base(p, Mat(p.H + p1_terminal), grid, opts);
}

P1Result integrate_p1(const LqProblem& p, const Mat& p1_terminal,
                      const RegularityReport& report,
                      const RiccatiOptions& opts) {
  return integrate_p1(p, p1_terminal, report, p.grid, opts);
}

P1Result integrate_p1(const LqProblem& p, const Mat& p1_terminal,
                      const RegularityReport& report, const TimeGrid& grid,
                      const RiccatiOptions& opts) {
  if (p1_terminal.rows() != p.state_dim() ||
      p1_terminal.cols() != p.state_dim())
    throw InvalidMatrix("integrate_p1: terminal value must be n x n");

  P1Result res;
  if (!p.is_stochastic()) {
    res.grid = integrate_backward(
        grid, p1_terminal,
        [&](double t, const Mat& p1) -> Mat {
          const Mat a0 = report.A0(t);
          return -(p1 * a0 + a0.transpose() * p1 + p1 * report.D0(t) * p1);
        },
        true, opts.escape_bound);
    return res;
  }

  const Eigen::Index n = p.state_dim();
  const Mat eye = Mat::Identity(n, n);
  res.grid = integrate_backward(
      grid, p1_terminal,
      [&](double t, const Mat& p1) -> Mat {
        const Mat a0 = report.A0(t);
        const Mat ab0 = report.Abar0(t);
        const Mat resolvent = pinv(eye - p1 * report.Fbar0(t), opts.rank_tol);
        return -(p1 * a0 + a0.transpose() * p1 + p1 * report.D0(t) * p1 +
                 (ab0.transpose() + p1 * report.F0(t)) * resolvent * p1 *
                     (ab0 + report.Dbar0(t) * p1));
      },
      true, opts.escape_bound);

  // flag nodes where the resolvent's numeric rank jumps
  Eigen::Index prev_rank = -1;
  for (int k = grid.n_steps; k >= 0; --k) {
    const double t = grid.node(k);
    const Eigen::Index r =
        rank_of(eye - res.grid.node(k) * report.Fbar0(t), opts.rank_tol);
    if (prev_rank >= 0 && r != prev_rank)
      res.pinv_discontinuities.push_back(t);
    prev_rank = r;
  }
  return res;
}

double check_pbar_identity(const MatrixGrid& p, const MatrixGrid& p1,
                           const MatrixGrid& pbar) {
  if (!(p.grid == p1.grid) || !(p.grid == pbar.grid))
    throw Error(ErrorCode::generic,
                "check_pbar_identity: grids must coincide");
  double worst = 0.0;
  for (size_t k = 0; k < p.values.size(); ++k)
    worst = std::max(worst,
                     (pbar.values[k] - p.values[k] - p1.values[k]).norm());
  return worst;
}

MatrixGrid transition_matrix(const CoefficientFn& acl, const TimeGrid& grid,
                             const RiccatiOptions& opts) {
  const Eigen::Index n = acl.rows();
  if (n == 0 || acl.cols() != n)
    throw InvalidMatrix("transition_matrix: need a square coefficient");
  // d/dt Phi(T, t) = -Phi(T, t) acl(t), Phi(T, T) = I
  return integrate_backward(
      grid, Mat::Identity(n, n),
      [&](double t, const Mat& phi) -> Mat { return -phi * acl(t); }, false,
      opts.escape_bound);
}

}  // namespace ilqc
