#include "ilqc/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include <unsupported/Eigen/MatrixFunctions>

#include "ilqc/errors.hpp"

namespace ilqc {

namespace {

// Factor L with L'L = w (w symmetric PSD), one row per eigenvalue above the
// relative cutoff; zero weights contribute no rows at all.
Mat psd_sqrt_rows(const Mat& w, double rank_tol) {
  Eigen::SelfAdjointEigenSolver<Mat> es(symmetrize(w));
  const Vec& ev = es.eigenvalues();
  const double cutoff = std::max(ev.cwiseAbs().maxCoeff(), 0.0) * rank_tol;
  Eigen::Index rows = 0;
  for (Eigen::Index i = 0; i < ev.size(); ++i)
    if (ev(i) > cutoff) ++rows;
  Mat fac(rows, w.rows());
  Eigen::Index r = 0;
  for (Eigen::Index i = 0; i < ev.size(); ++i)
    if (ev(i) > cutoff)
      fac.row(r++) = std::sqrt(ev(i)) * es.eigenvectors().col(i).transpose();
  return fac;
}

}  // namespace

OracleResult perturbation_solve(const LqProblem& p, double eps,
                                const RiccatiOptions& opts) {
  if (p.is_stochastic())
    throw Error(ErrorCode::generic, "perturbation_solve: deterministic problems only");
  if (!(eps > 0.0))
    throw Error(ErrorCode::generic, "perturbation_solve: eps must be positive");

  const Eigen::Index m = p.control_dim();
  const Mat shift = eps * Mat::Identity(m, m);

  // The perturbed flow has a boundary layer of rate about |B|^2 |P| /
  // lambda_min(R + eps I) near T; pick an internal substep that resolves it
  // instead of trusting the problem grid.
  double a_max = 0.0, b_max = 0.0, q_max = 0.0;
  double r_min = 1e300;
  const int stride = std::max(1, p.grid.n_steps / 100);
  for (int k = 0; k <= p.grid.n_steps; k += stride) {
    const double t = p.grid.node(k);
    a_max = std::max(a_max, p.A(t).norm());
    b_max = std::max(b_max, p.B(t).norm());
    q_max = std::max(q_max, p.Q(t).norm());
    Eigen::SelfAdjointEigenSolver<Mat> es(p.R(t));
    r_min = std::min(r_min, es.eigenvalues().minCoeff());
  }
  r_min = std::max(r_min, 0.0) + eps;
  const double tau = p.grid.T - p.grid.t0;
  const double p_scale =
      std::exp(std::min(2.0 * a_max * tau, 40.0)) * (p.H.norm() + tau * q_max) + 1.0;
  const double rate = 2.0 * a_max + b_max * b_max * p_scale / r_min;

  const TimeGrid half = p.grid.refined(2);
  int sub = static_cast<int>(std::ceil(rate * half.step() / 0.1));
  sub = std::clamp(sub, 1, std::max(1, 4000000 / std::max(1, half.n_steps)));
  const double hs = half.step() / sub;

  const auto rhs = [&](double t, const Mat& pm) -> Mat {
    const Mat gain = p.B(t).transpose() * pm;
    const Mat w = p.R(t) + shift;
    return -(p.A(t).transpose() * pm + pm * p.A(t) + p.Q(t) -
             gain.transpose() * w.llt().solve(gain));
  };

  std::vector<Mat> pv(static_cast<std::size_t>(half.nodes()));
  Mat pm = symmetrize(p.H);
  pv[static_cast<std::size_t>(half.n_steps)] = pm;
  for (int k = half.n_steps; k > 0; --k) {
    for (int s = 0; s < sub; ++s) {
      const double t = half.node(k) - s * hs;
      const Mat k1 = rhs(t, pm);
      const Mat k2 = rhs(t - 0.5 * hs, pm - (0.5 * hs) * k1);
      const Mat k3 = rhs(t - 0.5 * hs, pm - (0.5 * hs) * k2);
      const Mat k4 = rhs(t - hs, pm - hs * k3);
      pm = symmetrize(pm - (hs / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4));
      if (!pm.allFinite() || pm.cwiseAbs().maxCoeff() > opts.escape_bound)
        throw FiniteEscape(t - hs, "perturbation_solve: perturbed flow escaped");
    }
    pv[static_cast<std::size_t>(k) - 1] = pm;
  }
  MatrixGrid pbar{half, std::move(pv)};

  const auto ctrl = [&](double t, const Vec& x) -> Vec {
    const Mat w = p.R(t) + shift;
    return -(w.llt().solve(p.B(t).transpose() * (pbar.at(t) * x)));
  };
  const auto xrhs = [&](double t, const Vec& x) -> Vec {
    return p.A(t) * x + p.B(t) * ctrl(t, x);
  };

  OracleResult res;
  res.method = OracleMethod::perturbation;
  res.eps = eps;
  res.grid = p.grid;
  res.optimal_cost = p.x0.dot(pbar.front() * p.x0);
  res.control_grid.reserve(static_cast<std::size_t>(p.grid.nodes()));

  Vec x = p.x0;
  const double hf = p.grid.step() / (2 * sub);
  for (int k = 0; k < p.grid.n_steps; ++k) {
    res.control_grid.push_back(ctrl(p.grid.node(k), x));
    for (int s = 0; s < 2 * sub; ++s) {
      const double t = p.grid.node(k) + s * hf;
      const Vec k1 = xrhs(t, x);
      const Vec k2 = xrhs(t + 0.5 * hf, x + (0.5 * hf) * k1);
      const Vec k3 = xrhs(t + 0.5 * hf, x + (0.5 * hf) * k2);
      const Vec k4 = xrhs(t + hf, x + hf * k3);
      x += (hf / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
      if (!x.allFinite() || x.cwiseAbs().maxCoeff() > opts.escape_bound)
        throw FiniteEscape(t + hf, "perturbation_solve: closed loop escaped");
    }
  }
  res.control_grid.push_back(ctrl(p.grid.T, x));
  return res;
}

OracleResult discretized_qp_solve(const LqProblem& p, int n_steps,
                                  const RiccatiOptions& opts) {
  if (p.is_stochastic())
    throw Error(ErrorCode::generic, "discretized_qp_solve: deterministic problems only");
  if (n_steps < 1)
    throw Error(ErrorCode::generic, "discretized_qp_solve: n_steps must be positive");
  const Eigen::Index n = p.state_dim();
  const Eigen::Index m = p.control_dim();
  const Eigen::Index unknowns = m * n_steps;
  if (unknowns > 20000)
    throw TooLarge("discretized_qp_solve: " + std::to_string(unknowns) +
                   " unknowns exceed the dense-solve guard of 20000");

  const TimeGrid g(p.grid.t0, p.grid.T, n_steps);
  const double h = g.step();

  // Exact interval maps of the midpoint-frozen dynamics: the top rows of
  // exp(h [[A, B], [0, 0]]) give x+ = Ad x + Bd u for constant u.
  std::vector<Mat> ad(static_cast<std::size_t>(n_steps));
  std::vector<Mat> bd(static_cast<std::size_t>(n_steps));
  std::vector<Mat> rfac(static_cast<std::size_t>(n_steps));
  Mat z = Mat::Zero(n + m, n + m);
  for (int k = 0; k < n_steps; ++k) {
    const double tm = g.t0 + (k + 0.5) * h;
    z.topLeftCorner(n, n) = p.A(tm);
    z.topRightCorner(n, m) = p.B(tm);
    const Mat e = (h * z).exp();
    ad[static_cast<std::size_t>(k)] = e.topLeftCorner(n, n);
    bd[static_cast<std::size_t>(k)] = e.topRightCorner(n, m);
    rfac[static_cast<std::size_t>(k)] = psd_sqrt_rows(h * p.R(tm), opts.rank_tol);
  }

  // Trapezoid weights on the state cost; the terminal node also carries H.
  std::vector<Mat> qfac(static_cast<std::size_t>(n_steps) + 1);
  for (int k = 0; k <= n_steps; ++k) {
    Mat w = (k == 0 || k == n_steps ? 0.5 * h : h) * p.Q(g.node(k));
    if (k == n_steps) w += p.H;
    qfac[static_cast<std::size_t>(k)] = psd_sqrt_rows(w, opts.rank_tol);
  }

  std::vector<Eigen::Index> qoff(static_cast<std::size_t>(n_steps) + 2, 0);
  for (int k = 0; k <= n_steps; ++k)
    qoff[static_cast<std::size_t>(k) + 1] =
        qoff[static_cast<std::size_t>(k)] + qfac[static_cast<std::size_t>(k)].rows();
  const Eigen::Index state_rows = qoff.back();
  std::vector<Eigen::Index> coff(static_cast<std::size_t>(n_steps) + 1, state_rows);
  for (int k = 0; k < n_steps; ++k)
    coff[static_cast<std::size_t>(k) + 1] =
        coff[static_cast<std::size_t>(k)] + rfac[static_cast<std::size_t>(k)].rows();
  const Eigen::Index total_rows = coff.back();

  // Stacked least squares || L U - rhs ||^2 over the ZOH controls U; the
  // minimum-norm solution of the (possibly rank-deficient) system is the
  // pseudoinverse minimizer of the quadratic.
  Mat ls = Mat::Zero(total_rows, unknowns);
  Vec rhs = Vec::Zero(total_rows);

  std::vector<Vec> d(static_cast<std::size_t>(n_steps) + 1);
  d[0] = p.x0;
  for (int k = 0; k < n_steps; ++k)
    d[static_cast<std::size_t>(k) + 1] =
        ad[static_cast<std::size_t>(k)] * d[static_cast<std::size_t>(k)];

  if (qfac[0].rows() > 0)
    rhs.segment(qoff[0], qfac[0].rows()) = -(qfac[0] * d[0]);

  // transfer[j] holds Phi(k, j+1) Bd_j for the current node k
  std::vector<Mat> transfer;
  transfer.reserve(static_cast<std::size_t>(n_steps));
  for (int k = 1; k <= n_steps; ++k) {
    for (Mat& tj : transfer) tj = ad[static_cast<std::size_t>(k) - 1] * tj;
    transfer.push_back(bd[static_cast<std::size_t>(k) - 1]);
    const Mat& fac = qfac[static_cast<std::size_t>(k)];
    if (fac.rows() == 0) continue;
    for (int j = 0; j < k; ++j)
      ls.block(qoff[static_cast<std::size_t>(k)], j * m, fac.rows(), m) =
          fac * transfer[static_cast<std::size_t>(j)];
    rhs.segment(qoff[static_cast<std::size_t>(k)], fac.rows()) =
        -(fac * d[static_cast<std::size_t>(k)]);
  }
  for (int k = 0; k < n_steps; ++k) {
    const Mat& fac = rfac[static_cast<std::size_t>(k)];
    if (fac.rows() > 0)
      ls.block(coff[static_cast<std::size_t>(k)], k * m, fac.rows(), m) = fac;
  }

  Vec u = Vec::Zero(unknowns);
  if (total_rows > 0 && unknowns > 0) {
    Eigen::CompleteOrthogonalDecomposition<Mat> cod;
    cod.setThreshold(opts.rank_tol);
    cod.compute(ls);
    u = cod.solve(rhs);
  }
  if (!u.allFinite())
    throw Error(ErrorCode::numeric_escape, "discretized_qp_solve: solve produced non-finite controls");

  OracleResult res;
  res.method = OracleMethod::discretized_qp;
  res.n_steps = n_steps;
  res.grid = g;
  res.optimal_cost = (ls * u - rhs).squaredNorm();
  res.control_grid.reserve(static_cast<std::size_t>(n_steps));
  for (int k = 0; k < n_steps; ++k)
    res.control_grid.push_back(u.segment(k * m, m));
  return res;
}

}  // namespace ilqc
