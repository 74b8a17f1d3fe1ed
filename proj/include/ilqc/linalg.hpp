#pragma once

#include <Eigen/Dense>

namespace ilqc {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

// Relative rank cutoff: singular values at or below rank_tol * sigma_max are
// treated as zero everywhere in this library.
inline constexpr double kRankTol = 1e-9;

inline Mat symmetrize(const Mat& m) { return 0.5 * (m + m.transpose()); }

/// Moore-Penrose pseudoinverse via SVD.
Mat pinv(const Mat& m, double rank_tol = kRankTol);

/// Number of singular values above rank_tol * sigma_max. Zero matrix has rank 0.
Eigen::Index rank_of(const Mat& m, double rank_tol = kRankTol);

/// ||(I - b b^+) a||_F, the part of a outside Range(b). Requires equal row counts.
double range_residual(const Mat& a, const Mat& b, double rank_tol = kRankTol);

/// True iff Range(a) is contained in Range(b):
/// ||(I - b b^+) a||_F <= tol * max(1, ||a||_F).
bool range_subset(const Mat& a, const Mat& b, double tol,
                  double rank_tol = kRankTol);

// Pivot selection for the row-echelon pass in zero_row_transform. The default
// takes the largest absolute entry in the current column (ties to the lowest
// row index); lowest_index takes the first entry above threshold. Both yield
// the same zero-row count; the nonzero rows differ by a row basis change.
enum class PivotRule { largest_abs, lowest_index };

// Invertible row transform splitting a projector's row space:
// t0 * projector = [0; upsilon_t0] with m0 leading zero rows and a full-row-rank
// trailing block.
struct RowTransform {
  Mat t0;
  Mat t0_inv;
  Mat upsilon_t0;
  Eigen::Index m0 = 0;
};

/// Builds the row transform for a (symmetric, idempotent) projector by Gaussian
/// elimination to row echelon form, then moving the zero rows to the front.
/// Throws InvalidProjector if the input is not square or not idempotent within tol.
RowTransform zero_row_transform(const Mat& projector, double tol = kRankTol,
                                PivotRule rule = PivotRule::largest_abs);

/// || l1' p1 (I - fbar0 p1)^+ l2 - l1' (I - p1 fbar0)^+ p1 l2 ||_F.
/// The two ways of resolving p1 against the resolvent agree for symmetric p1, fbar0.
double commutative_law_residual(const Mat& l1, const Mat& l2, const Mat& p1,
                                const Mat& fbar0, double rank_tol = kRankTol);
bool check_commutative_law(const Mat& l1, const Mat& l2, const Mat& p1,
                           const Mat& fbar0, double tol,
                           double rank_tol = kRankTol);

/// || (I - fbar0 p1)^+ l - [l + fbar0 (I - p1 fbar0)^+ p1 l] ||_F.
double pinv_sum_formula_residual(const Mat& l, const Mat& p1, const Mat& fbar0,
                                 double rank_tol = kRankTol);
bool check_pinv_sum_formula(const Mat& l, const Mat& p1, const Mat& fbar0,
                            double tol, double rank_tol = kRankTol);

}  // namespace ilqc
