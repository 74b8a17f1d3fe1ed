#include "ilqc/regularity.hpp"

#include <algorithm>
#include <cmath>

#include "ilqc/errors.hpp"

namespace ilqc {

namespace {

// Weight and gain whose range inclusion decides regularity.
Mat weight_at(const LqProblem& p, double t, const Mat& P) {
  if (p.is_stochastic())
    return symmetrize(p.R(t) + p.Bbar(t).transpose() * P * p.Bbar(t));
  return p.R(t);
}

Mat gain_at(const LqProblem& p, double t, const Mat& P) {
  if (p.is_stochastic())
    return p.B(t).transpose() * P + p.Bbar(t).transpose() * P * p.Abar(t);
  return p.B(t).transpose() * P;
}

}  // namespace

RegularityReport classify(const LqProblem& p, const MatrixGrid& P,
                          const ClassifyOptions& opts) {
  RegularityReport rep;
  rep.stochastic = p.is_stochastic();

  // node-wise verdicts against the caller's Riccati solution
  rep.nodes.reserve(P.values.size());
  for (int k = 0; k < P.grid.nodes(); ++k) {
    const double t = P.grid.node(k);
    const Mat w = weight_at(p, t, P.node(k));
    const Mat g = gain_at(p, t, P.node(k));
    NodeClassification nc;
    nc.t = t;
    nc.m0 = rank_of(w, opts.rank_tol);
    nc.range_residual = range_residual(g, w, opts.rank_tol);
    nc.irregular = nc.range_residual > opts.residual_tol * std::max(1.0, g.norm());
    rep.irregular = rep.irregular || nc.irregular;
    rep.nodes.push_back(nc);
  }

  // denotations on the design grid, from a fresh fine integration so that the
  // samples are RK4-stage-exact for the correction-layer flows
  const TimeGrid dg = p.grid.refined(opts.refine);
  RiccatiOptions ropts;
  ropts.rank_tol = opts.rank_tol;
  ropts.escape_bound = opts.escape_bound;
  rep.P = integrate_p(p, dg, ropts);

  const Eigen::Index m = p.control_dim();
  const Eigen::Index n = p.state_dim();
  const Mat eye_m = Mat::Identity(m, m);

  std::vector<Mat> b0, g0, bbar0, c0, ups_g, gam_g;
  std::vector<Mat> a0, d0, abar0, dbar0, f0, fbar0;
  Eigen::Index free_dim = 0;

  for (int j = 0; j < dg.nodes(); ++j) {
    const double t = dg.node(j);
    const Mat& Pj = rep.P.node(j);
    const Mat w = weight_at(p, t, Pj);
    const Mat g = gain_at(p, t, Pj);
    const Mat wp = pinv(w, opts.rank_tol);
    const Mat proj = symmetrize(eye_m - wp * w);
    const RowTransform tr = zero_row_transform(proj, opts.rank_tol, opts.pivot);

    if (j == 0) {
      rep.transform = tr;
      rep.m0 = tr.m0;
      free_dim = m - tr.m0;
    } else if (tr.m0 != rep.m0) {
      rep.rank_profile_changed = true;
      rep.rank_change_times.push_back(t);
    }

    const Mat b = p.B(t);
    b0.push_back((b * proj * tr.t0_inv).rightCols(free_dim));
    g0.push_back(tr.t0_inv.rightCols(free_dim));

    const Mat wpg = wp * g;
    a0.push_back(p.A(t) - b * wpg);
    d0.push_back(-b * wp * b.transpose());

    if (rep.stochastic) {
      const Mat bb = p.Bbar(t);
      bbar0.push_back((bb * proj * tr.t0_inv).rightCols(free_dim));
      c0.push_back((g.transpose() * proj * tr.t0_inv).rightCols(free_dim).transpose());
      ups_g.push_back(w);
      gam_g.push_back(g);
      abar0.push_back(p.Abar(t) - bb * wpg);
      dbar0.push_back(-bb * wp * b.transpose());
      f0.push_back(-b * wp * bb.transpose());
      fbar0.push_back(-bb * wp * bb.transpose());
    }
  }

  auto grid_of = [&dg](std::vector<Mat>& v) {
    MatrixGrid g;
    g.grid = dg;
    g.values = std::move(v);
    return g;
  };
  rep.B0 = grid_of(b0);
  rep.G0 = grid_of(g0);
  rep.A0 = CoefficientFn::sampled(dg, std::move(a0));
  rep.D0 = CoefficientFn::sampled(dg, std::move(d0));
  if (rep.stochastic) {
    rep.Bbar0 = grid_of(bbar0);
    rep.C0 = grid_of(c0);
    rep.Upsilon0 = grid_of(ups_g);
    rep.Gamma0 = grid_of(gam_g);
    rep.Abar0 = CoefficientFn::sampled(dg, std::move(abar0));
    rep.Dbar0 = CoefficientFn::sampled(dg, std::move(dbar0));
    rep.F0 = CoefficientFn::sampled(dg, std::move(f0));
    rep.Fbar0 = CoefficientFn::sampled(dg, std::move(fbar0));
  }
  return rep;
}

TerminalSelection select_p1_terminal(const LqProblem& p,
                                     const RegularityReport& report,
                                     double rank_tol) {
  const Eigen::Index n = p.state_dim();
  const Mat eye = Mat::Identity(n, n);
  TerminalSelection sel;

  if (!report.irregular) {
    sel.p1_terminal = Mat::Zero(n, n);
    sel.constraint_residual = 0.0;
    sel.family_dimension = static_cast<int>(n * (n + 1) / 2);
    return sel;
  }

  const Mat b0t = report.B0.back();
  const Mat pi = b0t * pinv(Mat(b0t.transpose() * b0t), rank_tol) * b0t.transpose();
  sel.p1_terminal = symmetrize(-p.H + (eye - pi) * p.H * (eye - pi));
  sel.constraint_residual =
      (b0t.transpose() * (p.H + sel.p1_terminal)).norm();
  const Eigen::Index s = n - rank_of(b0t, rank_tol);
  sel.family_dimension = static_cast<int>(s * (s + 1) / 2);
  return sel;
}

RegularizedCheck check_regularized(const LqProblem& p, const MatrixGrid& pbar,
                                   double tol, double rank_tol) {
  RegularizedCheck out;
  for (int k = 0; k < pbar.grid.nodes(); ++k) {
    const double t = pbar.grid.node(k);
    const Mat w = weight_at(p, t, pbar.node(k));
    const Mat g = gain_at(p, t, pbar.node(k));
    const Mat res = g - w * pinv(w, rank_tol) * g;
    if (res.norm() > out.max_residual) {
      out.max_residual = res.norm();
      out.worst_t = t;
    }
  }
  out.ok = out.max_residual <= tol;
  return out;
}

double Assumption2Report::max_residual() const {
  double worst = res37;
  for (int i = 0; i < 3; ++i)
    worst = std::max({worst, res35[i], res36[i]});
  return worst;
}

Assumption2Report check_assumption2(const LqProblem& p,
                                    const RegularityReport& report,
                                    const MatrixGrid& p1, double rank_tol) {
  Assumption2Report out;
  if (!report.stochastic) return out;  // trivially satisfied

  const Eigen::Index n = p.state_dim();
  const Mat eye = Mat::Identity(n, n);
  double running_worst = -1.0;

  for (int k = 0; k < p1.grid.nodes(); ++k) {
    const double t = p1.grid.node(k);
    const Mat& P1 = p1.node(k);
    const Mat bbar = p.Bbar(t);
    const Mat fb0 = report.Fbar0(t);
    const Mat resolvent = pinv(Mat(eye - P1 * fb0), rank_tol);
    const Mat ups = report.Upsilon0.at(t);
    const Mat ups_p = pinv(ups, rank_tol);

    const Mat ls[3] = {p.B(t), p.Abar(t), bbar};
    double node_worst = 0.0;
    for (int i = 0; i < 3; ++i) {
      const Mat lt = ls[i].transpose();
      const double r35 = (lt - lt * resolvent * (eye - P1 * fb0)).norm();
      const Mat lhs36 =
          pinv(Mat(ups + bbar.transpose() * P1 * bbar), rank_tol) * lt;
      const Mat rhs36 =
          (Mat::Identity(ups.rows(), ups.cols()) -
           ups_p * bbar.transpose() * resolvent * P1 * bbar) *
          ups_p * lt;
      const double r36 = (lhs36 - rhs36).norm();
      out.res35[i] = std::max(out.res35[i], r35);
      out.res36[i] = std::max(out.res36[i], r36);
      node_worst = std::max({node_worst, r35, r36});
    }
    const Mat bb0 = report.Bbar0.at(t);
    const double r37 = (bb0.transpose() * resolvent * P1 * bb0).norm();
    out.res37 = std::max(out.res37, r37);
    node_worst = std::max(node_worst, r37);
    if (node_worst > running_worst) {
      running_worst = node_worst;
      out.worst_t = t;
    }
  }
  return out;
}

double check_pz2(const RegularityReport& report, const MatrixGrid& p1,
                 double rank_tol) {
  if (!report.stochastic)
    throw Error(ErrorCode::generic,
                "check_pz2: defined for stochastic reports only");
  const Eigen::Index n = report.A0.rows();
  const Mat eye = Mat::Identity(n, n);
  double worst = 0.0;
  for (int k = 0; k < p1.grid.nodes(); ++k) {
    const double t = p1.grid.node(k);
    const Mat& P1 = p1.node(k);
    const Mat resolvent = pinv(Mat(eye - P1 * report.Fbar0(t)), rank_tol);
    const Mat res = report.C0.at(t) + report.B0.at(t).transpose() * P1 +
                    report.Bbar0.at(t).transpose() * resolvent * P1 *
                        (report.Abar0(t) + report.Dbar0(t) * P1);
    worst = std::max(worst, res.norm());
  }
  return worst;
}

void fill_closed_loop(RegularityReport& report, const MatrixGrid& p1,
                      double rank_tol) {
  const Eigen::Index n = report.A0.rows();
  const Mat eye = Mat::Identity(n, n);
  const TimeGrid& g = p1.grid;

  std::vector<Mat> a1, b1, abar1, bbar1;
  a1.reserve(g.nodes());
  for (int k = 0; k < g.nodes(); ++k) {
    const double t = g.node(k);
    const Mat& P1 = p1.node(k);
    const Mat a0 = report.A0(t);
    const Mat d0 = report.D0(t);
    const Mat b0 = report.B0.at(t);
    if (!report.stochastic) {
      a1.push_back(a0 + d0 * P1);
      b1.push_back(b0);
      abar1.push_back(Mat::Zero(n, n));
      bbar1.push_back(Mat::Zero(b0.rows(), b0.cols()));
      continue;
    }
    const Mat ab0 = report.Abar0(t);
    const Mat db0 = report.Dbar0(t);
    const Mat f0 = report.F0(t);
    const Mat fb0 = report.Fbar0(t);
    const Mat bb0 = report.Bbar0.at(t);
    const Mat z = pinv(Mat(eye - P1 * fb0), rank_tol) * P1;
    const Mat open = ab0 + db0 * P1;
    a1.push_back(a0 + d0 * P1 + f0 * z * open);
    b1.push_back(b0 + f0 * z * bb0);
    abar1.push_back(ab0 + db0 * P1 + fb0 * z * open);
    bbar1.push_back(bb0 + fb0 * z * bb0);
  }
  report.A1 = CoefficientFn::sampled(g, std::move(a1));
  report.B1 = CoefficientFn::sampled(g, std::move(b1));
  report.Abar1 = CoefficientFn::sampled(g, std::move(abar1));
  report.Bbar1 = CoefficientFn::sampled(g, std::move(bbar1));
  report.closed_loop_filled = true;
}

}  // namespace ilqc
