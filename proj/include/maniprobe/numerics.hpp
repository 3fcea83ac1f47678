#pragma once

#include "maniprobe/common.hpp"

namespace maniprobe {

/// A = U diag(D) V^T with D strictly positive and descending.
struct ThinSvd {
  Matrix U;  // n x k
  Vector D;  // k
  Matrix V;  // m x k

  Index rank() const { return D.size(); }
};

/// Thin, rank-revealing SVD. Singular values <= rel_tol * max(D) are
/// dropped; a negative rel_tol selects max(n, m) * machine epsilon.
ThinSvd thin_svd(const Matrix& A, double rel_tol = -1.0);

struct GevResult {
  Vector values;   // ascending
  Matrix vectors;  // m x d, Sigma-orthonormal columns
};

/// d smallest eigenpairs of M b = nu Sigma b via Cholesky reduction
/// Sigma = R^T R and a symmetric eigensolve of R^-T M R^-1. Each column is
/// signed so that its largest-magnitude entry is positive.
GevResult gev_smallest(const Matrix& M, const Matrix& Sigma, Index d);

/// (X^T X + lambda I)^-1 X^T y through the SVD of X.
Vector ridge_solve(const Matrix& X, const Vector& y, double lambda);
Vector ridge_solve(const ThinSvd& svd, Index p, const Vector& y, double lambda);

/// Flips v so its largest-|entry| (lowest index on ties) is positive.
/// Returns true when a flip was applied.
bool canonical_sign(Eigen::Ref<Vector> v);

/// Orthonormal basis of the column space.
Matrix orthonormal_columns(const Matrix& A, double rel_tol = 1e-12);

/// Largest principal angle (radians) between the column spaces of A and B.
/// Uses the sine form so small angles keep full relative accuracy.
double largest_principal_angle(const Matrix& A, const Matrix& B);

}  // namespace maniprobe
