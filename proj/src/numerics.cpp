#include "maniprobe/numerics.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <limits>

namespace maniprobe {

ThinSvd thin_svd(const Matrix& A, double rel_tol) {
  if (!A.allFinite()) throw NumericalError("thin_svd: non-finite input");
  ThinSvd out;
  if (A.size() == 0) {
    out.U.resize(A.rows(), 0);
    out.V.resize(A.cols(), 0);
    return out;
  }
  if (rel_tol < 0.0)
    rel_tol = static_cast<double>(std::max(A.rows(), A.cols())) * std::numeric_limits<double>::epsilon();
  Eigen::BDCSVD<Matrix> svd(A, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Vector& s = svd.singularValues();
  Index k = 0;
  const double cutoff = s.size() > 0 ? rel_tol * s(0) : 0.0;
  while (k < s.size() && s(k) > cutoff && s(k) > 0.0) ++k;
  out.U = svd.matrixU().leftCols(k);
  out.D = s.head(k);
  out.V = svd.matrixV().leftCols(k);
  return out;
}

bool canonical_sign(Eigen::Ref<Vector> v) {
  Index best = 0;
  for (Index i = 1; i < v.size(); ++i)
    if (std::abs(v(i)) > std::abs(v(best))) best = i;
  if (v.size() > 0 && v(best) < 0.0) {
    v = -v;
    return true;
  }
  return false;
}

GevResult gev_smallest(const Matrix& M, const Matrix& Sigma, Index d) {
  const Index m = M.rows();
  if (M.cols() != m || Sigma.rows() != m || Sigma.cols() != m)
    throw NumericalError("gev_smallest: M and Sigma must be square and the same size");
  if (d < 1 || d > m) throw ConfigError("gev_smallest: d must lie in [1, m]");
  Eigen::LLT<Matrix> llt(0.5 * (Sigma + Sigma.transpose()));
  if (llt.info() != Eigen::Success) throw NumericalError("gev_smallest: Sigma is not positive definite");
  const auto L = llt.matrixL();  // Sigma = L L^T, so R = L^T
  // C = L^-1 M L^-T
  Matrix tmp = L.solve(0.5 * (M + M.transpose()));
  Matrix C = L.solve(tmp.transpose());
  C = 0.5 * (C + C.transpose()).eval();
  Eigen::SelfAdjointEigenSolver<Matrix> eig(C);
  if (eig.info() != Eigen::Success) throw NumericalError("gev_smallest: eigensolver failed");
  GevResult out;
  out.values = eig.eigenvalues().head(d);
  out.vectors = llt.matrixU().solve(eig.eigenvectors().leftCols(d));
  for (Index k = 0; k < d; ++k) canonical_sign(out.vectors.col(k));
  return out;
}

Vector ridge_solve(const ThinSvd& svd, Index p, const Vector& y, double lambda) {
  if (!(lambda >= 0.0)) throw NumericalError("ridge_solve: lambda must be non-negative");
  if (y.size() != svd.U.rows()) throw NumericalError("ridge_solve: dimension mismatch");
  if (lambda == 0.0 && svd.rank() < p)
    throw NumericalError("ridge_solve: lambda = 0 with rank-deficient design");
  const Vector uy = svd.U.transpose() * y;
  const Vector scale = svd.D.array() / (svd.D.array().square() + lambda);
  return svd.V * (scale.array() * uy.array()).matrix();
}

Vector ridge_solve(const Matrix& X, const Vector& y, double lambda) {
  if (y.size() != X.rows()) throw NumericalError("ridge_solve: dimension mismatch");
  return ridge_solve(thin_svd(X), X.cols(), y, lambda);
}

Matrix orthonormal_columns(const Matrix& A, double rel_tol) { return thin_svd(A, rel_tol).U; }

double largest_principal_angle(const Matrix& A, const Matrix& B) {
  if (A.rows() != B.rows()) throw NumericalError("principal angle: row counts differ");
  const Matrix qa = orthonormal_columns(A);
  const Matrix qb = orthonormal_columns(B);
  if (qa.cols() == 0 || qb.cols() == 0) throw NumericalError("principal angle: empty subspace");
  // Project the smaller space onto the complement of the larger one.
  const Matrix& big = qa.cols() >= qb.cols() ? qa : qb;
  const Matrix& small = qa.cols() >= qb.cols() ? qb : qa;
  const Matrix resid = small - big * (big.transpose() * small);
  Eigen::JacobiSVD<Matrix> svd(resid);
  const double s = svd.singularValues().size() > 0 ? svd.singularValues()(0) : 0.0;
  return std::asin(std::min(1.0, s));
}

}  // namespace maniprobe
