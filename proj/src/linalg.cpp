#include "ilqc/linalg.hpp"

#include <Eigen/SVD>
#include <cmath>

#include "ilqc/errors.hpp"

namespace ilqc {

Mat pinv(const Mat& m, double rank_tol) {
  if (!m.allFinite()) throw InvalidMatrix("pinv: input has non-finite entries");
  if (rank_tol <= 0.0) throw InvalidMatrix("pinv: rank tolerance must be positive");
  if (m.rows() == 0 || m.cols() == 0) return Mat::Zero(m.cols(), m.rows());

  Eigen::JacobiSVD<Mat> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Vec& sv = svd.singularValues();
  const double cutoff = rank_tol * sv(0);
  Vec inv = Vec::Zero(sv.size());
  for (Eigen::Index i = 0; i < sv.size(); ++i) {
    if (sv(i) > cutoff && sv(i) > 0.0) inv(i) = 1.0 / sv(i);
  }
  return svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
}

Eigen::Index rank_of(const Mat& m, double rank_tol) {
  if (!m.allFinite()) throw InvalidMatrix("rank_of: input has non-finite entries");
  if (m.rows() == 0 || m.cols() == 0) return 0;
  Eigen::JacobiSVD<Mat> svd(m);
  const Vec& sv = svd.singularValues();
  const double cutoff = rank_tol * sv(0);
  Eigen::Index r = 0;
  for (Eigen::Index i = 0; i < sv.size(); ++i) {
    if (sv(i) > cutoff && sv(i) > 0.0) ++r;
  }
  return r;
}

double range_residual(const Mat& a, const Mat& b, double rank_tol) {
  if (a.rows() != b.rows())
    throw InvalidMatrix("range_residual: row counts differ");
  const Mat proj = b * pinv(b, rank_tol);
  return (a - proj * a).norm();
}

bool range_subset(const Mat& a, const Mat& b, double tol, double rank_tol) {
  const double res = range_residual(a, b, rank_tol);
  return res <= tol * std::max(1.0, a.norm());
}

RowTransform zero_row_transform(const Mat& projector, double tol,
                                PivotRule rule) {
  if (projector.rows() != projector.cols())
    throw InvalidProjector("zero_row_transform: projector must be square");
  if (!projector.allFinite())
    throw InvalidProjector("zero_row_transform: non-finite entries");

  const Eigen::Index m = projector.rows();
  if (m == 0) {
    RowTransform out;
    out.t0 = out.t0_inv = Mat::Identity(0, 0);
    out.upsilon_t0 = Mat::Zero(0, 0);
    out.m0 = 0;
    return out;
  }

  const double scale = std::max(1.0, projector.cwiseAbs().maxCoeff());
  if ((projector * projector - projector).norm() >
      tol * std::max(1.0, projector.norm())) {
    throw InvalidProjector("zero_row_transform: input is not idempotent");
  }

  // Row echelon form; `elim` accumulates the row operations.
  Mat work = projector;
  Mat elim = Mat::Identity(m, m);
  const double thresh = tol * scale;
  Eigen::Index pr = 0;
  for (Eigen::Index col = 0; col < m && pr < m; ++col) {
    Eigen::Index piv = -1;
    if (rule == PivotRule::largest_abs) {
      double best = thresh;
      for (Eigen::Index i = pr; i < m; ++i) {
        const double v = std::abs(work(i, col));
        if (v > best) {
          best = v;
          piv = i;
        }
      }
    } else {
      for (Eigen::Index i = pr; i < m; ++i) {
        if (std::abs(work(i, col)) > thresh) {
          piv = i;
          break;
        }
      }
    }
    if (piv < 0) continue;
    if (piv != pr) {
      work.row(piv).swap(work.row(pr));
      elim.row(piv).swap(elim.row(pr));
    }
    for (Eigen::Index i = pr + 1; i < m; ++i) {
      const double f = work(i, col) / work(pr, col);
      if (f != 0.0) {
        work.row(i) -= f * work.row(pr);
        elim.row(i) -= f * elim.row(pr);
      }
    }
    ++pr;
  }

  const Eigen::Index r = pr;  // rank of the projector
  const Eigen::Index m0 = m - r;

  RowTransform out;
  out.m0 = m0;
  out.t0.resize(m, m);
  out.t0.topRows(m0) = elim.bottomRows(m0);
  out.t0.bottomRows(r) = elim.topRows(r);
  out.t0_inv = Eigen::FullPivLU<Mat>(out.t0).inverse();
  out.upsilon_t0 = work.topRows(r);
  return out;
}

double commutative_law_residual(const Mat& l1, const Mat& l2, const Mat& p1,
                                const Mat& fbar0, double rank_tol) {
  const Eigen::Index n = p1.rows();
  const Mat eye = Mat::Identity(n, n);
  const Mat lhs = l1.transpose() * p1 * pinv(eye - fbar0 * p1, rank_tol) * l2;
  const Mat rhs = l1.transpose() * pinv(eye - p1 * fbar0, rank_tol) * p1 * l2;
  return (lhs - rhs).norm();
}

bool check_commutative_law(const Mat& l1, const Mat& l2, const Mat& p1,
                           const Mat& fbar0, double tol, double rank_tol) {
  return commutative_law_residual(l1, l2, p1, fbar0, rank_tol) <= tol;
}

double pinv_sum_formula_residual(const Mat& l, const Mat& p1, const Mat& fbar0,
                                 double rank_tol) {
  const Eigen::Index n = p1.rows();
  const Mat eye = Mat::Identity(n, n);
  const Mat lhs = pinv(eye - fbar0 * p1, rank_tol) * l;
  const Mat rhs = l + fbar0 * pinv(eye - p1 * fbar0, rank_tol) * p1 * l;
  return (lhs - rhs).norm();
}

bool check_pinv_sum_formula(const Mat& l, const Mat& p1, const Mat& fbar0,
                            double tol, double rank_tol) {
  return pinv_sum_formula_residual(l, p1, fbar0, rank_tol) <= tol;
}

}  // namespace ilqc
