#include "maniprobe/basis.hpp"

#include "maniprobe/numerics.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

namespace maniprobe {
namespace {

constexpr std::array<double, 2> kGauss2Nodes = {-0.57735026918962576451, 0.57735026918962576451};
constexpr std::array<double, 2> kGauss2Weights = {1.0, 1.0};
constexpr std::array<double, 4> kGauss4Nodes = {-0.86113631159405257522, -0.33998104358485626480,
                                                0.33998104358485626480, 0.86113631159405257522};
constexpr std::array<double, 4> kGauss4Weights = {0.34785484513745385737, 0.65214515486254614263,
                                                  0.65214515486254614263, 0.34785484513745385737};

Matrix kron(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Index i = 0; i < a.rows(); ++i)
    for (Index j = 0; j < a.cols(); ++j)
      out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  return out;
}

template <std::size_t N>
Matrix integrate_products(const BSpline1D& b, int deriv, const std::array<double, N>& nodes,
                          const std::array<double, N>& weights) {
  const Index m = b.size();
  const int p = b.degree();
  Matrix out = Matrix::Zero(m, m);
  const auto& t = b.knots();
  for (Index s = p; s < m; ++s) {
    const double a = t[static_cast<std::size_t>(s)], c = t[static_cast<std::size_t>(s + 1)];
    if (!(c > a)) continue;
    const double half = 0.5 * (c - a), mid = 0.5 * (c + a);
    for (std::size_t g = 0; g < N; ++g) {
      const double z = mid + half * nodes[g];
      const Matrix d = b.nonzero_derivatives(z, s, deriv);
      const double w = weights[g] * half;
      for (int r = 0; r <= p; ++r)
        for (int q = 0; q <= p; ++q) out(s - p + r, s - p + q) += w * d(deriv, r) * d(deriv, q);
    }
  }
  return out;
}

}  // namespace

BSpline1D::BSpline1D(double lo, double hi, int n_knots, int degree)
    : lo_(lo), hi_(hi), n_knots_(n_knots), degree_(degree) {
  if (!(std::isfinite(lo) && std::isfinite(hi) && lo < hi))
    throw ConfigError("B-spline domain must satisfy lo < hi");
  if (degree < 1) throw ConfigError("B-spline degree must be at least 1");
  if (n_knots < 4) throw ConfigError("B-spline basis needs at least 4 knots");
  knots_.assign(static_cast<std::size_t>(degree), lo);
  for (int i = 0; i < n_knots; ++i)
    knots_.push_back(i == n_knots - 1 ? hi : lo + (hi - lo) * static_cast<double>(i) / (n_knots - 1));
  knots_.insert(knots_.end(), static_cast<std::size_t>(degree), hi);
}

Index BSpline1D::find_span(double z) const {
  const Index m = size();
  if (z >= knots_[static_cast<std::size_t>(m)]) return m - 1;
  if (z <= knots_[static_cast<std::size_t>(degree_)]) return degree_;
  const auto it = std::upper_bound(knots_.begin() + degree_, knots_.begin() + m + 1, z);
  return static_cast<Index>(it - knots_.begin()) - 1;
}

void BSpline1D::nonzero_values(double z, Index span, double* out) const {
  std::array<double, 16> left{}, right{};
  out[0] = 1.0;
  for (int j = 1; j <= degree_; ++j) {
    left[j] = z - knots_[static_cast<std::size_t>(span + 1 - j)];
    right[j] = knots_[static_cast<std::size_t>(span + j)] - z;
    double saved = 0.0;
    for (int r = 0; r < j; ++r) {
      const double temp = out[r] / (right[r + 1] + left[j - r]);
      out[r] = saved + right[r + 1] * temp;
      saved = left[j - r] * temp;
    }
    out[j] = saved;
  }
}

Matrix BSpline1D::nonzero_derivatives(double z, Index span, int n_deriv) const {
  const int p = degree_;
  Matrix ndu(p + 1, p + 1);
  std::array<double, 16> left{}, right{};
  ndu(0, 0) = 1.0;
  for (int j = 1; j <= p; ++j) {
    left[j] = z - knots_[static_cast<std::size_t>(span + 1 - j)];
    right[j] = knots_[static_cast<std::size_t>(span + j)] - z;
    double saved = 0.0;
    for (int r = 0; r < j; ++r) {
      ndu(j, r) = right[r + 1] + left[j - r];
      const double temp = ndu(r, j - 1) / ndu(j, r);
      ndu(r, j) = saved + right[r + 1] * temp;
      saved = left[j - r] * temp;
    }
    ndu(j, j) = saved;
  }
  Matrix ders = Matrix::Zero(n_deriv + 1, p + 1);
  for (int j = 0; j <= p; ++j) ders(0, j) = ndu(j, p);

  Matrix a(2, p + 1);
  for (int r = 0; r <= p; ++r) {
    int s1 = 0, s2 = 1;
    a.setZero();
    a(0, 0) = 1.0;
    for (int k = 1; k <= std::min(n_deriv, p); ++k) {
      double d = 0.0;
      const int rk = r - k, pk = p - k;
      if (r >= k) {
        a(s2, 0) = a(s1, 0) / ndu(pk + 1, rk);
        d = a(s2, 0) * ndu(rk, pk);
      }
      const int j1 = rk >= -1 ? 1 : -rk;
      const int j2 = (r - 1 <= pk) ? k - 1 : p - r;
      for (int j = j1; j <= j2; ++j) {
        a(s2, j) = (a(s1, j) - a(s1, j - 1)) / ndu(pk + 1, rk + j);
        d += a(s2, j) * ndu(rk + j, pk);
      }
      if (r <= pk) {
        a(s2, k) = -a(s1, k - 1) / ndu(pk + 1, r);
        d += a(s2, k) * ndu(r, pk);
      }
      ders(k, r) = d;
      std::swap(s1, s2);
    }
  }
  double factor = p;
  for (int k = 1; k <= std::min(n_deriv, p); ++k) {
    ders.row(k) *= factor;
    factor *= (p - k);
  }
  return ders;
}

Vector BSpline1D::evaluate(double z) const {
  Vector out = Vector::Zero(size());
  const Index s = find_span(z);
  std::array<double, 16> vals{};
  nonzero_values(z, s, vals.data());
  for (int r = 0; r <= degree_; ++r) out(s - degree_ + r) = vals[static_cast<std::size_t>(r)];
  return out;
}

Matrix BSpline1D::evaluate(const Eigen::Ref<const Vector>& z) const {
  Matrix out = Matrix::Zero(z.size(), size());
  std::array<double, 16> vals{};
  for (Index i = 0; i < z.size(); ++i) {
    const Index s = find_span(z(i));
    nonzero_values(z(i), s, vals.data());
    for (int r = 0; r <= degree_; ++r) out(i, s - degree_ + r) = vals[static_cast<std::size_t>(r)];
  }
  return out;
}

Matrix BSpline1D::second_derivative_penalty() const {
  Matrix s = integrate_products(*this, 2, kGauss2Nodes, kGauss2Weights);
  return 0.5 * (s + s.transpose());
}

Matrix BSpline1D::gram() const {
  Matrix g = integrate_products(*this, 0, kGauss4Nodes, kGauss4Weights);
  return 0.5 * (g + g.transpose());
}

PenalizedBasis PenalizedBasis::bspline(const ConceptSpace& space, int n_knots, int degree) {
  space.validate();
  if (space.dim() != 1) throw ConfigError("1-D B-spline basis needs a 1-D concept space");
  PenalizedBasis b;
  b.space_ = space;
  b.marginals_.emplace_back(space.lo[0], space.hi[0], n_knots, degree);
  b.build_raw_penalty();
  return b;
}

PenalizedBasis PenalizedBasis::tensor(const ConceptSpace& space, int n_knots_1, int n_knots_2, int degree) {
  space.validate();
  if (space.dim() != 2) throw ConfigError("tensor B-spline basis needs a 2-D concept space");
  PenalizedBasis b;
  b.space_ = space;
  b.marginals_.emplace_back(space.lo[0], space.hi[0], n_knots_1, degree);
  b.marginals_.emplace_back(space.lo[1], space.hi[1], n_knots_2, degree);
  b.build_raw_penalty();
  return b;
}

void PenalizedBasis::build_raw_penalty() {
  if (marginals_.size() == 1) {
    raw_penalty_ = marginals_[0].second_derivative_penalty();
  } else {
    const auto& b1 = marginals_[0];
    const auto& b2 = marginals_[1];
    raw_penalty_ = kron(b1.second_derivative_penalty(), b2.gram()) + kron(b1.gram(), b2.second_derivative_penalty());
  }
  if (raw_map_.size() > 0) raw_penalty_ = raw_map_ * raw_penalty_ * raw_map_.transpose();
  raw_penalty_ = 0.5 * (raw_penalty_ + raw_penalty_.transpose()).eval();
}

PenalizedBasis PenalizedBasis::with_raw_map(const Matrix& L) const {
  if (reparametrized_) throw ConfigError("raw map must be applied before reparametrization");
  if (L.cols() != raw_dim()) throw ConfigError("raw map column count must equal the raw basis size");
  PenalizedBasis b = *this;
  b.raw_map_ = raw_map_.size() > 0 ? Matrix(L * raw_map_) : L;
  b.build_raw_penalty();
  return b;
}

Index PenalizedBasis::spline_dim() const {
  Index m = 1;
  for (const auto& b : marginals_) m *= b.size();
  return m;
}

Index PenalizedBasis::raw_dim() const { return raw_map_.size() > 0 ? raw_map_.rows() : spline_dim(); }

std::vector<int> PenalizedBasis::knot_counts() const {
  std::vector<int> out;
  for (const auto& b : marginals_) out.push_back(b.n_knots());
  return out;
}

Matrix PenalizedBasis::evaluate_spline(const Matrix& Z) const {
  if (Z.cols() != concept_dim())
    throw DataError("concept values have " + std::to_string(Z.cols()) + " columns, basis expects " +
                    std::to_string(concept_dim()));
  for (Index i = 0; i < Z.rows(); ++i)
    if (!space_.contains(Z.row(i))) throw DataError("concept value outside basis domain at row " + std::to_string(i + 1));
  if (marginals_.size() == 1) return marginals_[0].evaluate(Z.col(0));
  const auto& b1 = marginals_[0];
  const auto& b2 = marginals_[1];
  const Index m2 = b2.size();
  Matrix out = Matrix::Zero(Z.rows(), b1.size() * m2);
  std::array<double, 16> v1{}, v2{};
  const int p = b1.degree();
  for (Index i = 0; i < Z.rows(); ++i) {
    const Index s1 = b1.find_span(Z(i, 0)), s2 = b2.find_span(Z(i, 1));
    b1.nonzero_values(Z(i, 0), s1, v1.data());
    b2.nonzero_values(Z(i, 1), s2, v2.data());
    for (int r = 0; r <= p; ++r)
      for (int q = 0; q <= b2.degree(); ++q)
        out(i, (s1 - p + r) * m2 + (s2 - b2.degree() + q)) = v1[static_cast<std::size_t>(r)] * v2[static_cast<std::size_t>(q)];
  }
  return out;
}

Matrix PenalizedBasis::evaluate_raw(const Matrix& Z) const {
  Matrix h = evaluate_spline(Z);
  if (raw_map_.size() > 0) return h * raw_map_.transpose();
  return h;
}

Matrix PenalizedBasis::evaluate(const Matrix& Z) const {
  Matrix h = evaluate_raw(Z);
  if (!reparametrized_) return h;
  return (h.rowwise() - raw_center_.transpose()) * reparam_;
}

PenalizedBasis PenalizedBasis::reparametrized(const Matrix& Z_train, double rank_tol) const {
  if (reparametrized_) throw ConfigError("basis is already reparametrized");
  if (Z_train.rows() < 2) throw DataError("reparametrization needs at least 2 training rows");
  const Matrix h = evaluate_raw(Z_train);
  PenalizedBasis b = *this;
  b.raw_center_ = column_mean(h);
  const Matrix centered = h.rowwise() - b.raw_center_.transpose();
  const ThinSvd svd = thin_svd(centered, 0.0);
  if (svd.D.size() == 0 || !(svd.D(0) > 1e-12 * h.norm()))
    throw NumericalError("degenerate basis: centred model matrix is zero");
  Index keep = 0;
  while (keep < svd.D.size() && svd.D(keep) > rank_tol * svd.D(0)) ++keep;
  if (keep == 0) throw NumericalError("degenerate basis: all singular values below threshold");
  b.reparam_ = svd.V.leftCols(keep);

  Matrix s = b.reparam_.transpose() * raw_penalty_ * b.reparam_;
  s = 0.5 * (s + s.transpose()).eval();
  // Floor in the training-whitened metric (H = U D): eigenvalues of D^-1 S D^-1 do
  // not depend on how the raw basis was parametrized.
  const Vector dk = svd.D.head(keep);
  Matrix white = dk.cwiseInverse().asDiagonal() * s * dk.cwiseInverse().asDiagonal();
  white = 0.5 * (white + white.transpose()).eval();
  Eigen::SelfAdjointEigenSolver<Matrix> eig(white);
  if (eig.info() != Eigen::Success) throw NumericalError("penalty eigendecomposition failed");
  const double floor = std::max(1e-8 * white.trace() / static_cast<double>(keep), std::numeric_limits<double>::min());
  Vector ev = eig.eigenvalues();
  bool floored = false;
  for (Index i = 0; i < ev.size(); ++i)
    if (ev(i) < floor) {
      ev(i) = floor;
      floored = true;
    }
  if (floored) {
    white = eig.eigenvectors() * ev.asDiagonal() * eig.eigenvectors().transpose();
    s = dk.asDiagonal() * white * dk.asDiagonal();
    s = 0.5 * (s + s.transpose()).eval();
  }
  b.penalty_ = s;
  b.penalty_floor_ = floor;
  b.reparametrized_ = true;
  return b;
}

PenalizedBasis PenalizedBasis::from_parts(const ConceptSpace& space, const std::vector<int>& n_knots, int degree,
                                          const Matrix& raw_map, const Vector& raw_center, const Matrix& reparam,
                                          const Matrix& penalty, double penalty_floor) {
  PenalizedBasis b;
  if (n_knots.size() == 1)
    b = bspline(space, n_knots[0], degree);
  else if (n_knots.size() == 2)
    b = tensor(space, n_knots[0], n_knots[1], degree);
  else
    throw ConfigError("basis needs one or two knot counts");
  if (raw_map.size() > 0) b = b.with_raw_map(raw_map);
  if (reparam.size() > 0) {
    if (reparam.rows() != b.raw_dim() || raw_center.size() != b.raw_dim() || penalty.rows() != reparam.cols() ||
        penalty.cols() != reparam.cols())
      throw DataError("serialized basis parts have inconsistent shapes");
    b.raw_center_ = raw_center;
    b.reparam_ = reparam;
    b.penalty_ = penalty;
    b.reparametrized_ = true;
    b.penalty_floor_ = penalty_floor;
  }
  return b;
}

PenalizedBasis make_bspline_basis(const ConceptSpace& space, int n_knots) { return PenalizedBasis::bspline(space, n_knots); }

PenalizedBasis make_tensor_basis(const ConceptSpace& space, int n_knots_1, int n_knots_2) {
  return PenalizedBasis::tensor(space, n_knots_1, n_knots_2);
}

Matrix second_derivative_penalty(const PenalizedBasis& basis) { return basis.raw_penalty(); }

PenalizedBasis reparametrize_full_rank(const PenalizedBasis& basis, const Matrix& Z_train) {
  return basis.reparametrized(Z_train);
}

}  // namespace maniprobe
