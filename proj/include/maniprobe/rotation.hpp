#pragma once

#include "maniprobe/common.hpp"
#include "maniprobe/probe.hpp"

#include <vector>

namespace maniprobe {

struct RotationResult {
  Matrix R;                  // k x k orthogonal; rotated = loadings * R
  Matrix rotated_loadings;   // n x k
  std::vector<double> criterion_trace;
  int iterations = 0;
  bool converged = false;
};

struct VarimaxOptions {
  int max_iter = 1000;
  // Convergence when the Frobenius change of R between iterations drops below tol.
  double tol = 1e-8;
  // Kaiser row normalization; off by default since features are unit-variance.
  bool kaiser = false;
};

/// sum_j [mean(l_ij^4) - mean(l_ij^2)^2]
double varimax_criterion(const Matrix& loadings);

/// Orthogonal varimax rotation by the SVD (Kaiser/Horst) iteration. Output
/// columns are signed so their largest-|entry| is positive and ordered by
/// decreasing variance of squared loadings; R is permuted to match.
RotationResult varimax(const Matrix& loadings, const VarimaxOptions& options = {});

/// Varimax on the training feature values of the first k_top features.
RotationResult varimax_features(const ManifoldProbe& probe, Index k_top, const VarimaxOptions& options = {});

/// Replaces beta, w, b and u of the first k_top features by their R-rotated
/// combinations. phi and Psi are unchanged.
ManifoldProbe rotate_probe(const ManifoldProbe& probe, Index k_top, const RotationResult& rotation);

}  // namespace maniprobe
