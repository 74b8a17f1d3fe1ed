#include "ilqc/stoch_synth.hpp"

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

std::uint64_t splitmix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// One N(0,1) draw per (seed, path, step), by hashing the counter triple.
// Evaluation order never matters, so paths can be replayed or reordered
// without changing a single bit.
double normal_draw(std::uint64_t seed, std::uint64_t path, std::uint64_t step) {
  const std::uint64_t key = splitmix64(splitmix64(seed) ^
                                       (path + 1) * 0x9e3779b97f4a7c15ULL);
  const std::uint64_t s = splitmix64(key ^ (step + 1) * 0xbf58476d1ce4e5b9ULL);
  const std::uint64_t r1 = splitmix64(s);
  const std::uint64_t r2 = splitmix64(r1);
  // (0,1) uniforms from the top 53 bits
  const double w1 = (static_cast<double>(r1 >> 11) + 0.5) * 0x1.0p-53;
  const double w2 = (static_cast<double>(r2 >> 11) + 0.5) * 0x1.0p-53;
  return std::sqrt(-2.0 * std::log(w1)) *
         std::cos(2.0 * 3.14159265358979323846 * w2);
}

}  // namespace

Vec StochController::u1_at(double t) const {
  if (u1.empty()) throw InvalidMatrix("StochController::u1_at: no injection plan");
  return interp_vec(u1_grid, u1, t);
}

Vec StochController::eval(double t, const Vec& x) const {
  Vec u = -(feedback_gain.at(t) * x);
  if (!u1.empty())
    u += free_projector.at(t) * (injection.at(t) * u1_at(t));
  return u;
}

SteeringSolution steer_mean(const LqProblem& p, const Mat& p1_terminal,
                            const RegularityReport& report, const Vec& x0,
                            const StochSynthOptions& opts) {
  if (!report.stochastic)
    throw Error(ErrorCode::generic,
                "steer_mean: stochastic reports only; use min_energy_u1");
  if (!report.closed_loop_filled)
    throw Error(ErrorCode::generic,
                "steer_mean: fill_closed_loop must run on the report first");

  // The plan only controls the mean, so the steered channel must not feed the
  // diffusion.
  double bbar1_max = 0.0;
  for (const Mat& v : report.Bbar1.samples())
    bbar1_max = std::max(bbar1_max, v.norm());
  double bbar_scale = 0.0;
  const TimeGrid& cg = report.Bbar1.sample_grid();
  for (int k = 0; k <= cg.n_steps; ++k)
    bbar_scale = std::max(bbar_scale, p.Bbar(cg.node(k)).norm());
  if (bbar1_max > opts.residual_tol * (1.0 + bbar_scale))
    throw UnsupportedNoiseCoupling(
        "steer_mean: the steered channel drives the diffusion (max ||Bbar1|| " +
        std::to_string(bbar1_max) + "); only mean steering is provided");

  SynthOptions sopts;
  sopts.rank_tol = opts.rank_tol;
  sopts.residual_tol = opts.residual_tol;
  sopts.escape_bound = opts.escape_bound;
  MatrixGrid b1{report.B1.sample_grid(), report.B1.samples()};
  SteeringSolution sol = min_energy_u1(p, p1_terminal, report.A1, b1, x0, sopts);

  // Pathwise the terminal value picks up the noise integral of
  // P1(T) Phi(T, s) [Abar1 x + Bbar1 u1]; the mean plan pins it only when
  // that operator vanishes along the loop.
  double leak = 0.0;
  double abar1_scale = 0.0;
  for (int j = 0; j <= sol.grid.n_steps; ++j) {
    const Mat ab1 = report.Abar1(sol.grid.node(j));
    abar1_scale = std::max(abar1_scale, ab1.norm());
    leak = std::max(leak, (p1_terminal * sol.phi.node(j) * ab1).norm());
  }
  if (leak > opts.residual_tol * (1.0 + p1_terminal.norm()) * (1.0 + abar1_scale))
    throw UnsupportedNoiseCoupling(
        "steer_mean: closed-loop noise leaks into the constrained terminal "
        "directions (residual " + std::to_string(leak) +
        "); the mean plan cannot pin the terminal value pathwise");

  return sol;
}

StochController synthesize_stochastic(const LqProblem& p, const MatrixGrid& pbar,
                                      const MatrixGrid& p1,
                                      const RegularityReport& report,
                                      const StochSynthOptions& opts) {
  if (!p.is_stochastic())
    throw Error(ErrorCode::generic,
                "synthesize_stochastic: stochastic problems only; use synthesize");
  if (!report.stochastic)
    throw InvalidMatrix("synthesize_stochastic: report was built for a deterministic problem");
  const Eigen::Index n = p.state_dim();
  const Eigen::Index m = p.control_dim();
  if (p1.values.empty() || p1.back().rows() != n || p1.back().cols() != n)
    throw InvalidMatrix("synthesize_stochastic: p1 grid does not match the state dimension");
  if (pbar.values.empty() || pbar.back().rows() != n)
    throw InvalidMatrix("synthesize_stochastic: pbar grid does not match the state dimension");

  const RegularizedCheck reg =
      check_regularized(p, pbar, opts.residual_tol, opts.rank_tol);
  if (!reg.ok)
    throw NotRegularizable(
        "synthesize_stochastic: modified cost is still irregular (residual " +
        std::to_string(reg.max_residual) + " at t=" + std::to_string(reg.worst_t) + ")");

  double c0_scale = 0.0;
  for (const Mat& v : report.C0.values) c0_scale = std::max(c0_scale, v.norm());
  const double zres = check_pz2(report, p1, opts.rank_tol);
  if (zres > opts.residual_tol * (1.0 + c0_scale))
    throw NotRegularizable(
        "synthesize_stochastic: free-direction constraint residual " +
        std::to_string(zres) + " exceeds tolerance");

  const Assumption2Report a2 = check_assumption2(p, report, p1, opts.rank_tol);
  if (!a2.holds(opts.residual_tol) && !opts.warn_assumption2)
    throw Assumption2Violated(
        "synthesize_stochastic: pseudoinverse compatibility residual " +
        std::to_string(a2.max_residual()) + " at t=" + std::to_string(a2.worst_t) +
        "; pass warn_assumption2 to proceed anyway");

  StochController c;
  c.kind = report.irregular ? StochController::Kind::irregular
                            : StochController::Kind::regular;

  // Gain and projector tables on the half-step grid so the path integrators
  // evaluate them exactly at every stage point.
  const TimeGrid half = p.grid.refined(2);
  const Mat eye_m = Mat::Identity(m, m);
  std::vector<Mat> gains, projs;
  gains.reserve(static_cast<std::size_t>(half.n_steps) + 1);
  projs.reserve(static_cast<std::size_t>(half.n_steps) + 1);
  for (int j = 0; j <= half.n_steps; ++j) {
    const double t = half.node(j);
    const Mat pb = pbar.at(t);
    const Mat b = p.B(t);
    const Mat bb = p.Bbar(t);
    const Mat ubar = symmetrize(p.R(t) + bb.transpose() * pb * bb);
    const Mat gbar = b.transpose() * pb + bb.transpose() * pb * p.Abar(t);
    const Mat ubar_p = pinv(ubar, opts.rank_tol);
    gains.push_back(ubar_p * gbar);
    projs.push_back(symmetrize(eye_m - ubar_p * ubar));
  }
  c.feedback_gain = MatrixGrid{half, std::move(gains)};
  c.free_projector = MatrixGrid{half, std::move(projs)};

  const TimeGrid& dg = report.design_grid();
  if (dg.n_steps % half.n_steps != 0)
    throw InvalidMatrix(
        "synthesize_stochastic: report design grid does not refine the problem grid");
  c.injection = report.G0.downsample(dg.n_steps / half.n_steps);
  c.z_map =
      "z(t) = G0(t) u1(t); the free rows of the input transform recover "
      "u1 = Upsilon_T0 z";

  if (c.kind == StochController::Kind::irregular) {
    SteeringSolution steer;
    if (report.closed_loop_filled) {
      steer = steer_mean(p, p1.back(), report, p.x0, opts);
    } else {
      RegularityReport filled = report;
      fill_closed_loop(filled, p1, opts.rank_tol);
      steer = steer_mean(p, p1.back(), filled, p.x0, opts);
    }
    c.u1_grid = steer.grid;
    c.u1 = std::move(steer.u1);
  } else {
    c.u1_grid = half;
  }

  c.predicted_cost = p.x0.dot(pbar.at(p.grid.t0) * p.x0);
  return c;
}

std::vector<SimulationTrace> simulate_em(const LqProblem& p,
                                         const StochController& c,
                                         std::uint64_t seed, int n_paths,
                                         int path_offset, double escape_bound) {
  if (!p.is_stochastic())
    throw Error(ErrorCode::generic,
                "simulate_em: stochastic problems only; use simulate");
  if (n_paths < 1)
    throw Error(ErrorCode::generic, "simulate_em: n_paths must be positive");

  const int n_steps = p.grid.n_steps;
  const double h = p.grid.step();
  const double sqrt_h = std::sqrt(h);

  // per-node coefficient tables, shared by every path
  std::vector<Mat> a(static_cast<std::size_t>(n_steps)),
      b(static_cast<std::size_t>(n_steps)), abar(static_cast<std::size_t>(n_steps)),
      bbar(static_cast<std::size_t>(n_steps));
  for (int k = 0; k < n_steps; ++k) {
    const double t = p.grid.node(k);
    a[static_cast<std::size_t>(k)] = p.A(t);
    b[static_cast<std::size_t>(k)] = p.B(t);
    abar[static_cast<std::size_t>(k)] = p.Abar(t);
    bbar[static_cast<std::size_t>(k)] = p.Bbar(t);
  }

  std::vector<SimulationTrace> out;
  out.reserve(static_cast<std::size_t>(n_paths));
  for (int i = 0; i < n_paths; ++i) {
    const int path = path_offset + i;
    SimulationTrace tr;
    tr.times.reserve(static_cast<std::size_t>(n_steps) + 1);
    tr.states.reserve(static_cast<std::size_t>(n_steps) + 1);
    tr.controls.reserve(static_cast<std::size_t>(n_steps) + 1);
    tr.noise_increments.reserve(static_cast<std::size_t>(n_steps));

    Vec x = p.x0;
    for (int k = 0; k < n_steps; ++k) {
      const auto ks = static_cast<std::size_t>(k);
      const double t = p.grid.node(k);
      const Vec u = c.eval(t, x);
      const double dw =
          sqrt_h * normal_draw(seed, static_cast<std::uint64_t>(path),
                               static_cast<std::uint64_t>(k));
      tr.times.push_back(t);
      tr.states.push_back(x);
      tr.controls.push_back(u);
      tr.noise_increments.push_back(dw);
      x += h * (a[ks] * x + b[ks] * u) + dw * (abar[ks] * x + bbar[ks] * u);
      if (!x.allFinite() || x.cwiseAbs().maxCoeff() > escape_bound)
        throw FiniteEscape(p.grid.node(k + 1),
                           "simulate_em: path " + std::to_string(path) + " escaped");
    }
    tr.times.push_back(p.grid.T);
    tr.states.push_back(x);
    tr.controls.push_back(c.eval(p.grid.T, x));
    fill_running_cost(p, tr);
    out.push_back(std::move(tr));
  }
  return out;
}

McSummary monte_carlo_cost(const std::vector<double>& costs) {
  if (costs.size() < 2)
    throw Error(ErrorCode::generic,
                "monte_carlo_cost: at least two samples are required");
  McSummary s;
  s.n_paths = static_cast<int>(costs.size());
  for (double cost : costs) s.mean += cost;
  s.mean /= s.n_paths;
  double var = 0.0;
  for (double cost : costs) {
    const double d = cost - s.mean;
    var += d * d;
  }
  var /= (s.n_paths - 1);
  s.half_width_95 = 1.96 * std::sqrt(var / s.n_paths);
  return s;
}

McSummary monte_carlo_cost(const std::vector<SimulationTrace>& traces) {
  std::vector<double> costs;
  costs.reserve(traces.size());
  for (const auto& tr : traces) costs.push_back(tr.realized_cost);
  return monte_carlo_cost(costs);
}

namespace {

// node-wise operators shared by the costate reconstruction and the residual
// sweep, tabulated once on the problem grid
struct FbsdeNode {
  Mat P, P1;
  Mat rec;               // u1 from u: bottom transform rows after projecting
  Mat a0, abar0;         // open-loop drift pair
  Mat c0, b0, bbar0;     // constraint row and free-direction maps
  Mat abar1, bbar1;      // closed-loop diffusion pair
  Mat r, b, bbar, abar;  // problem coefficients
};

std::vector<FbsdeNode> fbsde_nodes(const LqProblem& p, const MatrixGrid& P,
                                   const MatrixGrid& p1,
                                   const RegularityReport& report,
                                   double rank_tol) {
  if (!report.stochastic)
    throw Error(ErrorCode::generic,
                "verify_fbsde: stochastic reports only; use verify_optimality");
  if (!report.closed_loop_filled)
    throw Error(ErrorCode::generic,
                "verify_fbsde: fill_closed_loop must run on the report first");

  const Eigen::Index m = p.control_dim();
  const Mat eye_m = Mat::Identity(m, m);
  std::vector<FbsdeNode> nodes;
  nodes.reserve(static_cast<std::size_t>(p.grid.n_steps) + 1);
  for (int k = 0; k <= p.grid.n_steps; ++k) {
    const double t = p.grid.node(k);
    FbsdeNode nd;
    nd.P = P.at(t);
    nd.P1 = p1.at(t);
    const Mat ups = report.Upsilon0.at(t);
    const Mat proj = symmetrize(eye_m - pinv(ups, rank_tol) * ups);
    const RowTransform tr = zero_row_transform(proj, rank_tol);
    if (tr.m0 != report.m0)
      throw Error(ErrorCode::generic,
                  "verify_fbsde: weight rank profile changes along the horizon");
    nd.rec = tr.upsilon_t0 * proj;
    nd.a0 = report.A0(t);
    nd.abar0 = report.Abar0(t);
    nd.c0 = report.C0.at(t);
    nd.b0 = report.B0.at(t);
    nd.bbar0 = report.Bbar0.at(t);
    nd.abar1 = report.Abar1(t);
    nd.bbar1 = report.Bbar1(t);
    nd.r = p.R(t);
    nd.b = p.B(t);
    nd.bbar = p.Bbar(t);
    nd.abar = p.Abar(t);
    nodes.push_back(std::move(nd));
  }
  return nodes;
}

void check_trace_shape(const LqProblem& p, const SimulationTrace& trace) {
  const auto count = static_cast<std::size_t>(p.grid.n_steps) + 1;
  if (trace.times.size() != count || trace.states.size() != count ||
      trace.controls.size() != count || trace.noise_increments.size() + 1 != count)
    throw TraceMismatch("verify_fbsde: trace is not aligned with the problem grid");
}

}  // namespace

CostateTrace reconstruct_costates(const LqProblem& p,
                                  const SimulationTrace& trace,
                                  const MatrixGrid& P, const MatrixGrid& p1,
                                  const RegularityReport& report,
                                  double rank_tol) {
  const std::vector<FbsdeNode> nodes = fbsde_nodes(p, P, p1, report, rank_tol);
  check_trace_shape(p, trace);

  CostateTrace ct;
  const std::size_t count = nodes.size();
  ct.theta.reserve(count);
  ct.theta_bar.reserve(count);
  ct.p.reserve(count);
  ct.q.reserve(count);
  for (std::size_t k = 0; k < count; ++k) {
    const FbsdeNode& nd = nodes[k];
    const Vec& x = trace.states[k];
    const Vec& u = trace.controls[k];
    const Vec u1 = nd.rec * u;
    const Vec theta = nd.P1 * x;
    const Vec theta_bar = nd.P1 * (nd.abar1 * x + nd.bbar1 * u1);
    ct.theta.push_back(theta);
    ct.theta_bar.push_back(theta_bar);
    ct.p.push_back(nd.P * x + theta);
    ct.q.push_back(nd.P * (nd.abar * x + nd.bbar * u) + theta_bar);
  }
  return ct;
}

FbsdeReport verify_fbsde(const LqProblem& p,
                         const std::vector<SimulationTrace>& traces,
                         const MatrixGrid& P, const MatrixGrid& p1,
                         const RegularityReport& report, double rank_tol) {
  if (traces.empty())
    throw Error(ErrorCode::generic, "verify_fbsde: no traces given");
  const std::vector<FbsdeNode> nodes = fbsde_nodes(p, P, p1, report, rank_tol);
  const std::size_t count = nodes.size();
  const double h = p.grid.step();

  FbsdeReport rep;
  std::size_t n_node = 0, n_step = 0;
  for (const auto& trace : traces) {
    check_trace_shape(p, trace);

    std::vector<Vec> theta(count), theta_bar(count), u1(count);
    for (std::size_t k = 0; k < count; ++k) {
      const FbsdeNode& nd = nodes[k];
      const Vec& x = trace.states[k];
      u1[k] = nd.rec * trace.controls[k];
      theta[k] = nd.P1 * x;
      theta_bar[k] = nd.P1 * (nd.abar1 * x + nd.bbar1 * u1[k]);
    }

    for (std::size_t k = 0; k < count; ++k) {
      const FbsdeNode& nd = nodes[k];
      const Vec& x = trace.states[k];
      const Vec& u = trace.controls[k];
      const Vec costate = nd.P * x + theta[k];
      const Vec q = nd.P * (nd.abar * x + nd.bbar * u) + theta_bar[k];
      const double s_res =
          (nd.r * u + nd.b.transpose() * costate + nd.bbar.transpose() * q).norm();
      const double c_res =
          (nd.c0 * x + nd.b0.transpose() * theta[k] +
           nd.bbar0.transpose() * theta_bar[k]).norm();
      rep.stationarity_max = std::max(rep.stationarity_max, s_res);
      rep.stationarity_mean += s_res;
      rep.constraint_max = std::max(rep.constraint_max, c_res);
      rep.constraint_mean += c_res;
      ++n_node;
    }

    for (std::size_t k = 0; k + 1 < count; ++k) {
      const FbsdeNode& nd = nodes[k];
      const Vec drift =
          -(nd.a0.transpose() * theta[k] + nd.abar0.transpose() * theta_bar[k] +
            nd.c0.transpose() * u1[k]);
      const Vec res = theta[k + 1] - theta[k] - h * drift -
                      trace.noise_increments[k] * theta_bar[k];
      rep.drift_max = std::max(rep.drift_max, res.norm());
      rep.drift_mean += res.norm();
      ++n_step;
    }

    const double term = theta.back().norm();
    rep.terminal_max = std::max(rep.terminal_max, term);
    rep.terminal_mean += term;
  }

  rep.stationarity_mean /= static_cast<double>(n_node);
  rep.constraint_mean /= static_cast<double>(n_node);
  rep.drift_mean /= static_cast<double>(n_step);
  rep.terminal_mean /= static_cast<double>(traces.size());
  return rep;
}

}  // namespace ilqc
