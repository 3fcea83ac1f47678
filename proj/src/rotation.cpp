#include "maniprobe/rotation.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace maniprobe {
namespace {

double column_criterion(const Eigen::Ref<const Vector>& col) {
  const double n = static_cast<double>(col.size());
  const Eigen::ArrayXd sq = col.array().square();
  const double m2 = sq.sum() / n;
  return sq.square().sum() / n - m2 * m2;
}

}  // namespace

double varimax_criterion(const Matrix& loadings) {
  double c = 0.0;
  for (Index j = 0; j < loadings.cols(); ++j) c += column_criterion(loadings.col(j));
  return c;
}

RotationResult varimax(const Matrix& loadings, const VarimaxOptions& options) {
  if (!loadings.allFinite()) throw NumericalError("varimax: non-finite loadings");
  const Index n = loadings.rows(), k = loadings.cols();
  if (k < 1 || n < 1) throw NumericalError("varimax: empty loadings");
  for (Index j = 0; j < k; ++j)
    if (!(loadings.col(j).norm() > 0.0)) throw NumericalError("varimax: degenerate (all-zero) column");

  Vector scale = Vector::Ones(n);
  Matrix L = loadings;
  if (options.kaiser) {
    scale = L.rowwise().norm();
    for (Index i = 0; i < n; ++i)
      if (scale(i) > 0.0) L.row(i) /= scale(i);
  }

  RotationResult out;
  Matrix R = Matrix::Identity(k, k);
  out.criterion_trace.push_back(varimax_criterion(L));
  if (k > 1) {
    for (int it = 0; it < options.max_iter; ++it) {
      const Matrix B = L * R;
      const Eigen::RowVectorXd mean_sq = B.array().square().colwise().sum() / static_cast<double>(n);
      const Matrix target = B.array().cube().matrix() - B * mean_sq.asDiagonal();
      Eigen::JacobiSVD<Matrix> svd(L.transpose() * target, Eigen::ComputeFullU | Eigen::ComputeFullV);
      const Matrix next = svd.matrixU() * svd.matrixV().transpose();
      const double change = (next - R).norm();
      R = next;
      out.criterion_trace.push_back(varimax_criterion(L * R));
      out.iterations = it + 1;
      if (change < options.tol) {
        out.converged = true;
        break;
      }
    }
  } else {
    out.converged = true;
  }

  Matrix rotated = L * R;
  if (options.kaiser) rotated = scale.asDiagonal() * rotated;

  std::vector<Index> order(static_cast<std::size_t>(k));
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> var(static_cast<std::size_t>(k));
  for (Index j = 0; j < k; ++j) var[static_cast<std::size_t>(j)] = column_criterion(rotated.col(j));
  std::stable_sort(order.begin(), order.end(),
                   [&](Index a, Index b) { return var[static_cast<std::size_t>(a)] > var[static_cast<std::size_t>(b)]; });
  Matrix R_out(k, k), rot_out(n, k);
  for (Index j = 0; j < k; ++j) {
    const Index src = order[static_cast<std::size_t>(j)];
    Vector col = rotated.col(src);
    Vector rcol = R.col(src);
    Index best = 0;
    for (Index i = 1; i < n; ++i)
      if (std::abs(col(i)) > std::abs(col(best))) best = i;
    if (col(best) < 0.0) {
      col = -col;
      rcol = -rcol;
    }
    rot_out.col(j) = col;
    R_out.col(j) = rcol;
  }
  out.R = R_out;
  out.rotated_loadings = rot_out;
  return out;
}

RotationResult varimax_features(const ManifoldProbe& probe, Index k_top, const VarimaxOptions& options) {
  if (k_top < 1 || k_top > probe.d()) throw ConfigError("varimax: k_top must lie in [1, d]");
  if (probe.z_train.rows() == 0) throw DataError("varimax: probe carries no training concept values");
  return varimax(feature_matrix(probe, probe.z_train).leftCols(k_top), options);
}

ManifoldProbe rotate_probe(const ManifoldProbe& probe, Index k_top, const RotationResult& rotation) {
  if (k_top < 1 || k_top > probe.d()) throw ConfigError("rotate_probe: k_top must lie in [1, d]");
  if (rotation.R.rows() != k_top || rotation.R.cols() != k_top)
    throw ConfigError("rotate_probe: rotation size does not match k_top");
  const Matrix& R = rotation.R;
  ManifoldProbe out = probe;
  for (Index j = 0; j < k_top; ++j) {
    FittedFeature f = probe.features[static_cast<std::size_t>(j)];
    f.beta.setZero();
    f.w.setZero();
    f.u.setZero();
    f.b = 0.0;
    f.nu = 0.0;
    for (Index i = 0; i < k_top; ++i) {
      const auto& src = probe.features[static_cast<std::size_t>(i)];
      const double r = R(i, j);
      f.beta += r * src.beta;
      f.w += r * src.w;
      f.u += r * src.u;
      f.b += r * src.b;
      // Exact for closed-form features, which are both M- and Sigma-orthogonal.
      f.nu += r * r * src.nu;
    }
    out.features[static_cast<std::size_t>(j)] = std::move(f);
  }
  out.meta.rotated_top = k_top;
  return out;
}

}  // namespace maniprobe
