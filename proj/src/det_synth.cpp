#include "ilqc/det_synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <utility>

#include "ilqc/errors.hpp"

namespace ilqc {

namespace {

// same clamp-and-snap rule as MatrixGrid::at
Vec interp_vec(const TimeGrid& grid, const std::vector<Vec>& values, double t) {
  double theta = (t - grid.t0) / (grid.T - grid.t0) * grid.n_steps;
  theta = std::clamp(theta, 0.0, static_cast<double>(grid.n_steps));
  const double nearest = std::round(theta);
  if (std::abs(theta - nearest) < 1e-9)
    return values[static_cast<std::size_t>(nearest)];
  const auto i = static_cast<std::size_t>(std::floor(theta));
  const double w = theta - std::floor(theta);
  return (1.0 - w) * values[i] + w * values[i + 1];
}

}  // namespace

Vec Controller::u1_at(double t) const {
  if (u1.empty()) throw InvalidMatrix("Controller::u1_at: no injection plan");
  return interp_vec(u1_grid, u1, t);
}

Vec Controller::eval(double t, const Vec& x) const {
  Vec u = -(feedback_gain.at(t) * x);
  if (!u1.empty()) u += injection.at(t) * u1_at(t);
  return u;
}

SteeringSolution min_energy_u1(const LqProblem& p, const Mat& p1_terminal,
                               const CoefficientFn& acl, const MatrixGrid& b0,
                               const Vec& x0, const SynthOptions& opts) {
  const Eigen::Index n = p.state_dim();
  if (p1_terminal.rows() != n || p1_terminal.cols() != n)
    throw InvalidMatrix("min_energy_u1: p1_terminal is not n x n");
  if (x0.size() != n) throw InvalidMatrix("min_energy_u1: x0 is not n-dimensional");

  RiccatiOptions ropts;
  ropts.rank_tol = opts.rank_tol;
  ropts.escape_bound = opts.escape_bound;

  SteeringSolution sol;
  sol.grid = p.grid.refined(2);
  sol.phi = transition_matrix(acl, sol.grid, ropts);

  // Gramian by Simpson's rule; refined(2) always has an even step count.
  const double h = sol.grid.step();
  Mat w = Mat::Zero(n, n);
  for (int j = 0; j <= sol.grid.n_steps; ++j) {
    const Mat f = sol.phi.node(j) * b0.at(sol.grid.node(j));
    double weight = (j == 0 || j == sol.grid.n_steps) ? 1.0 : (j % 2 == 1 ? 4.0 : 2.0);
    w += (weight * h / 3.0) * f * f.transpose();
  }
  sol.gramian = symmetrize(w);

  const Mat m = p1_terminal * sol.gramian * p1_terminal.transpose();
  const Vec target = p1_terminal * (sol.phi.front() * x0);
  sol.multiplier = pinv(m, opts.rank_tol) * target;
  sol.feasibility_residual = (target - m * sol.multiplier).norm();
  if (sol.feasibility_residual > opts.residual_tol * (1.0 + x0.norm()))
    throw TerminalUnreachable(
        "min_energy_u1: required terminal direction lies outside the steering "
        "Gramian's range (residual " +
        std::to_string(sol.feasibility_residual) + ")");

  sol.u1.reserve(static_cast<std::size_t>(sol.grid.n_steps) + 1);
  const Vec co_terminal = p1_terminal.transpose() * sol.multiplier;
  for (int j = 0; j <= sol.grid.n_steps; ++j) {
    const Mat b0j = b0.at(sol.grid.node(j));
    sol.u1.push_back(-(b0j.transpose() * (sol.phi.node(j).transpose() * co_terminal)));
  }
  return sol;
}

Controller synthesize(const LqProblem& p, const MatrixGrid& P,
                      const MatrixGrid& p1, const RegularityReport& report,
                      const SynthOptions& opts) {
  if (p.is_stochastic())
    throw Error(ErrorCode::generic,
                "synthesize: deterministic problems only; use synthesize_stochastic");
  const Eigen::Index n = p.state_dim();
  if (p1.values.empty() || p1.back().rows() != n || p1.back().cols() != n)
    throw InvalidMatrix("synthesize: p1 grid does not match the state dimension");

  const Mat p1_term = p1.back();

  RiccatiOptions ropts;
  ropts.rank_tol = opts.rank_tol;
  ropts.escape_bound = opts.escape_bound;

  // The feedback acts through the modified value P + P1; re-integrating it as
  // one flow is cheaper and better conditioned than adding two grids.
  const TimeGrid fine = p.grid.refined(4);
  const MatrixGrid pbar = integrate_pbar(p, p1_term, fine, ropts);

  const RegularizedCheck reg = check_regularized(p, pbar, opts.residual_tol, opts.rank_tol);
  if (!reg.ok)
    throw NotRegularizable(
        "synthesize: modified cost is still irregular (residual " +
        std::to_string(reg.max_residual) + " at t=" + std::to_string(reg.worst_t) + ")");

  Controller c;
  c.kind = report.irregular ? Controller::Kind::irregular : Controller::Kind::regular;

  // Gain table on the half-step grid so a forward RK4 on the problem grid
  // evaluates it exactly at every stage point.
  const TimeGrid half = p.grid.refined(2);
  std::vector<Mat> gains;
  gains.reserve(static_cast<std::size_t>(half.n_steps) + 1);
  for (int j = 0; j <= half.n_steps; ++j) {
    const double t = half.node(j);
    gains.push_back(pinv(p.R(t), opts.rank_tol) * p.B(t).transpose() * pbar.node(2 * j));
  }
  c.feedback_gain = MatrixGrid{half, std::move(gains)};

  const TimeGrid& dg = report.design_grid();
  if (dg.n_steps % half.n_steps != 0)
    throw InvalidMatrix("synthesize: report design grid does not refine the problem grid");
  c.injection = report.G0.downsample(dg.n_steps / half.n_steps);

  if (c.kind == Controller::Kind::irregular) {
    // Drift seen by the injection: the loop already closed by the feedback.
    std::vector<Mat> acl;
    acl.reserve(static_cast<std::size_t>(fine.n_steps) + 1);
    for (int j = 0; j <= fine.n_steps; ++j) {
      const double t = fine.node(j);
      acl.push_back(p.A(t) -
                    p.B(t) * (pinv(p.R(t), opts.rank_tol) * p.B(t).transpose() * pbar.node(j)));
    }
    SteeringSolution steer = min_energy_u1(p, p1_term, CoefficientFn::sampled(fine, std::move(acl)),
                                           report.B0, p.x0, opts);
    c.u1_grid = steer.grid;
    c.u1 = std::move(steer.u1);
  } else {
    c.u1_grid = half;
  }

  c.predicted_cost = p.x0.dot((P.front() + p1.front()) * p.x0);
  return c;
}

SimulationTrace simulate(const LqProblem& p, const Controller& c,
                         const SynthOptions& opts) {
  if (p.is_stochastic())
    throw Error(ErrorCode::generic,
                "simulate: deterministic problems only; use simulate_em");

  const auto rhs = [&](double t, const Vec& x) -> Vec {
    return p.A(t) * x + p.B(t) * c.eval(t, x);
  };

  SimulationTrace tr;
  const int n_steps = p.grid.n_steps;
  const double h = p.grid.step();
  tr.times.reserve(static_cast<std::size_t>(n_steps) + 1);
  tr.states.reserve(static_cast<std::size_t>(n_steps) + 1);
  tr.controls.reserve(static_cast<std::size_t>(n_steps) + 1);

  Vec x = p.x0;
  for (int k = 0; k < n_steps; ++k) {
    const double t = p.grid.node(k);
    tr.times.push_back(t);
    tr.states.push_back(x);
    tr.controls.push_back(c.eval(t, x));
    const Vec k1 = rhs(t, x);
    const Vec k2 = rhs(t + 0.5 * h, x + (0.5 * h) * k1);
    const Vec k3 = rhs(t + 0.5 * h, x + (0.5 * h) * k2);
    const Vec k4 = rhs(t + h, x + h * k3);
    x += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    if (!x.allFinite() || x.cwiseAbs().maxCoeff() > opts.escape_bound)
      throw FiniteEscape(p.grid.node(k + 1), "simulate: closed-loop state escaped");
  }
  tr.times.push_back(p.grid.T);
  tr.states.push_back(x);
  tr.controls.push_back(c.eval(p.grid.T, x));
  fill_running_cost(p, tr);
  return tr;
}

VerificationReport verify_optimality(const LqProblem& p,
                                     const SimulationTrace& trace,
                                     const MatrixGrid& P, const MatrixGrid& p1,
                                     const SynthOptions& opts) {
  (void)opts;
  if (p.is_stochastic())
    throw Error(ErrorCode::generic,
                "verify_optimality: deterministic problems only; use verify_fbsde");
  const auto count = static_cast<std::size_t>(p.grid.n_steps) + 1;
  if (trace.times.size() != count || trace.states.size() != count ||
      trace.controls.size() != count)
    throw TraceMismatch("verify_optimality: trace is not aligned with the problem grid");

  VerificationReport rep;
  rep.realized_cost = evaluate_cost(p, trace);
  rep.predicted_cost = p.x0.dot((P.at(p.grid.t0) + p1.at(p.grid.t0)) * p.x0);
  rep.cost_gap = std::abs(rep.realized_cost - rep.predicted_cost);

  // Costate reconstruction along the trace; with p = [P + P1] x the
  // maximum-principle system reads u-stationarity Ru + B'p = 0,
  // dp/dt = -A'p - Qx, p(T) = H x(T) + P1(T) x(T).
  std::vector<Vec> costate(count);
  for (std::size_t k = 0; k < count; ++k) {
    const double t = trace.times[k];
    costate[k] = (P.at(t) + p1.at(t)) * trace.states[k];
  }

  for (std::size_t k = 0; k < count; ++k) {
    const double t = trace.times[k];
    const double res =
        (p.R(t) * trace.controls[k] + p.B(t).transpose() * costate[k]).norm();
    rep.stationarity = std::max(rep.stationarity, res);
  }

  const double h = p.grid.step();
  for (std::size_t k = 1; k + 1 < count; ++k) {
    const double t = trace.times[k];
    const Vec res = (costate[k + 1] - costate[k - 1]) / (2.0 * h) +
                    p.A(t).transpose() * costate[k] + p.Q(t) * trace.states[k];
    rep.adjoint = std::max(rep.adjoint, res.norm());
  }

  rep.terminal = (costate.back() - p.H * trace.states.back()).norm();
  rep.terminal_p1x = (p1.back() * trace.states.back()).norm();
  return rep;
}

}  // namespace ilqc
