#pragma once

#include "maniprobe/common.hpp"
#include "maniprobe/dataset.hpp"

#include <vector>

namespace maniprobe {

/// Clamped B-spline basis on [lo, hi] with uniform breakpoints.
///
/// `n_knots` counts all breakpoints including both ends, so there are
/// n_knots - 1 intervals and n_knots + degree - 1 basis functions (282 for
/// the 280-knot cubic basis).
class BSpline1D {
 public:
  BSpline1D(double lo, double hi, int n_knots, int degree = 3);

  double lo() const { return lo_; }
  double hi() const { return hi_; }
  int n_knots() const { return n_knots_; }
  int degree() const { return degree_; }
  Index size() const { return static_cast<Index>(knots_.size()) - degree_ - 1; }
  /// Extended knot vector with each end repeated degree + 1 times.
  const std::vector<double>& knots() const { return knots_; }

  /// Index s with knots[s] <= z < knots[s+1]; the right end maps to the last
  /// non-empty interval. The non-zero functions at z are s-degree .. s.
  Index find_span(double z) const;

  /// Values of the degree+1 non-zero functions at z (de Boor / Cox recursion).
  void nonzero_values(double z, Index span, double* out) const;

  /// Row r holds the r-th derivatives of the non-zero functions, r <= n_deriv.
  Matrix nonzero_derivatives(double z, Index span, int n_deriv) const;

  Vector evaluate(double z) const;
  Matrix evaluate(const Eigen::Ref<const Vector>& z) const;

  /// S_jk = integral of B_j'' B_k''; exact by 2-point Gauss-Legendre per
  /// interval since the integrand is piecewise quadratic.
  Matrix second_derivative_penalty() const;
  /// G_jk = integral of B_j B_k (4-point Gauss-Legendre, exact for degree <= 3).
  Matrix gram() const;

 private:
  double lo_, hi_;
  int n_knots_, degree_;
  std::vector<double> knots_;
};

/// Basis evaluator plus quadratic roughness penalty.
///
/// Built from one (1-D) or two (tensor product) marginal B-spline bases. An
/// optional raw linear map L replaces the spline functions h with L h.
/// After `reparametrized`, evaluation yields V^T (h_raw(z) - h_raw_mean) so
/// the centred model matrix has full column rank, and the penalty is
/// V^T S_raw V floored to positive definite relative to the training Gram.
class PenalizedBasis {
 public:
  PenalizedBasis() = default;

  static PenalizedBasis bspline(const ConceptSpace& space, int n_knots, int degree = 3);
  static PenalizedBasis tensor(const ConceptSpace& space, int n_knots_1, int n_knots_2, int degree = 3);

  /// Raw functions become L h (L has one row per new function).
  PenalizedBasis with_raw_map(const Matrix& L) const;

  PenalizedBasis reparametrized(const Matrix& Z_train, double rank_tol = 1e-10) const;

  /// Rebuilds a basis from its serialized parts.
  static PenalizedBasis from_parts(const ConceptSpace& space, const std::vector<int>& n_knots, int degree,
                                   const Matrix& raw_map, const Vector& raw_center, const Matrix& reparam,
                                   const Matrix& penalty, double penalty_floor = 0.0);

  Index dim() const { return reparametrized_ ? reparam_.cols() : raw_dim(); }
  Index raw_dim() const;
  Index spline_dim() const;
  Index concept_dim() const { return static_cast<Index>(marginals_.size()); }
  bool is_reparametrized() const { return reparametrized_; }
  const ConceptSpace& space() const { return space_; }
  const std::vector<BSpline1D>& marginals() const { return marginals_; }
  std::vector<int> knot_counts() const;
  int degree() const { return marginals_.empty() ? 3 : marginals_.front().degree(); }

  /// Spline functions before the raw map: n x spline_dim.
  Matrix evaluate_spline(const Matrix& Z) const;
  Matrix evaluate_raw(const Matrix& Z) const;
  Matrix evaluate(const Matrix& Z) const;

  const Matrix& penalty() const { return reparametrized_ ? penalty_ : raw_penalty_; }
  const Matrix& raw_penalty() const { return raw_penalty_; }
  const Matrix& raw_map() const { return raw_map_; }
  const Vector& raw_center() const { return raw_center_; }
  const Matrix& reparam() const { return reparam_; }
  /// Floor on the eigenvalues of D^-1 S D^-1 (centred training matrix = U D).
  double penalty_floor() const { return penalty_floor_; }

 private:
  ConceptSpace space_;
  std::vector<BSpline1D> marginals_;
  Matrix raw_map_;
  Matrix raw_penalty_;
  bool reparametrized_ = false;
  Vector raw_center_;
  Matrix reparam_;
  Matrix penalty_;
  double penalty_floor_ = 0.0;

  void build_raw_penalty();
};

PenalizedBasis make_bspline_basis(const ConceptSpace& space, int n_knots);
PenalizedBasis make_tensor_basis(const ConceptSpace& space, int n_knots_1, int n_knots_2);
Matrix second_derivative_penalty(const PenalizedBasis& basis);
PenalizedBasis reparametrize_full_rank(const PenalizedBasis& basis, const Matrix& Z_train);

}  // namespace maniprobe
