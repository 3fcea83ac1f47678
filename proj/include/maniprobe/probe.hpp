#pragma once

#include "maniprobe/basis.hpp"
#include "maniprobe/common.hpp"
#include "maniprobe/dataset.hpp"
#include "maniprobe/numerics.hpp"
#include "maniprobe/regsel.hpp"

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace maniprobe {

enum class FitMethod { ClosedForm, Als };
enum class BoundsPolicy { Reject, Clamp };

std::string to_string(FitMethod m);
FitMethod parse_fit_method(const std::string& name);

constexpr double kDefaultSteeringAlpha = 100.0;

/// One learned feature f(z) = beta^T (h(z) - h_mean) with its affine readout
/// g(x) = w^T x + b and manifold direction u.
struct FittedFeature {
  Vector beta;
  Vector w;
  double b = 0.0;
  Vector u;
  double nu = 0.0;
  double lambda_w = 0.0;
  double lambda_f = 0.0;
  // Per-iteration ridge parameters at convergence (ALS only).
  std::optional<double> lambda_w_tilde;
  std::optional<double> lambda_f_tilde;
  int iterations = 0;
  bool converged = true;
};

struct FitMeta {
  FitMethod method = FitMethod::ClosedForm;
  Criterion criterion = Criterion::Reml;
  std::uint64_t seed = 0;
  Index n_train = 0;
  Index rotated_top = 0;  // > 0 after rotate_probe
};

struct ManifoldProbe {
  std::vector<FittedFeature> features;
  Vector x_mean;  // also the manifold offset c
  Vector h_mean;
  PenalizedBasis basis;
  Matrix z_train;
  FitMeta meta;
  BoundsPolicy bounds_policy = BoundsPolicy::Reject;
  double alpha_default = kDefaultSteeringAlpha;

  Index d() const { return static_cast<Index>(features.size()); }
  Index p() const { return x_mean.size(); }
  const Vector& offset() const { return x_mean; }
  /// Columns are the per-feature vectors.
  Matrix beta_matrix() const;
  Matrix w_matrix() const;
  Matrix u_matrix() const;
};

/// Closed-form fit for fixed (lambda_w, lambda_f) from the d smallest
/// eigenpairs of M b = nu Sigma b with M = H^T (I - A) H + lambda_f S,
/// A = X (X^T X + lambda_w I)^-1 X^T and Sigma = H^T H / n.
ManifoldProbe fit_closed_form(const CenteredDesign& design, const PenalizedBasis& basis, Index d, double lambda_w,
                              double lambda_f);

struct AlsConfig {
  Criterion criterion = Criterion::Reml;
  LambdaBracket bracket;
  int max_iter = 500;
  double tol = 1e-10;
  double freeze_after_rel_change = 1e-2;
  int freeze_max_iter = 25;
  std::uint64_t seed = 0;
  // When set, feature k uses (lambda_w_tilde, lambda_f_tilde) = fixed_lambdas[k]
  // from the first iteration and no selection happens.
  std::vector<std::pair<double, double>> fixed_lambdas;
  // Optional starting coefficients, one column per feature.
  std::optional<Matrix> initial_betas;
};

/// Alternating ridge regressions with per-iteration lambda selection.
/// Features are fitted one at a time; all per-iteration work is independent
/// of the number of samples.
class AlsFitter {
 public:
  AlsFitter(const CenteredDesign& design, const PenalizedBasis& basis, AlsConfig config);
  ~AlsFitter();
  AlsFitter(const AlsFitter&) = delete;
  AlsFitter& operator=(const AlsFitter&) = delete;

  Index fitted() const;
  Index max_features() const;
  const FittedFeature& fit_next();
  ManifoldProbe probe() const;

 private:
  struct State;
  std::unique_ptr<State> state_;
};

/// Features are fitted sequentially and reported in ascending nu.
ManifoldProbe fit_als(const CenteredDesign& design, const PenalizedBasis& basis, Index d, const AlsConfig& config);

/// Stable reorder of the features by ascending nu; returns the source index of each slot.
std::vector<std::size_t> order_by_nu(ManifoldProbe& probe);

/// Lambda mapping between the two fitting routes: an ALS run with
/// lambda_f_tilde = lambda_f / (1 - nu / n) reproduces the closed form.
double als_lambda_f_for(double lambda_f, double nu, Index n);

/// Objective sum (f(z_i) - g(x_i))^2 + lambda_w |w|^2 + lambda_f J(f) evaluated
/// at a coefficient vector with its optimal ridge readout.
double probe_objective(const CenteredDesign& design, const PenalizedBasis& basis, const Vector& beta, double lambda_w,
                       double lambda_f);

/// Validates concept rows under the probe's bounds policy; clamped copies
/// are returned with a warning on stderr.
Matrix checked_concepts(const ManifoldProbe& probe, const Matrix& Z);

Vector feature_values(const ManifoldProbe& probe, Index k, const Matrix& Z);
Matrix feature_matrix(const ManifoldProbe& probe, const Matrix& Z);
Vector readout(const ManifoldProbe& probe, Index k, const Matrix& X_rows);
Matrix readout_matrix(const ManifoldProbe& probe, const Matrix& X_rows);
Vector phi(const ManifoldProbe& probe, const Eigen::Ref<const Eigen::RowVectorXd>& z);
Vector psi(const ManifoldProbe& probe, const Eigen::Ref<const Vector>& x);
Vector steering_vector(const ManifoldProbe& probe, const Eigen::Ref<const Eigen::RowVectorXd>& z,
                       double alpha = kDefaultSteeringAlpha);

/// 1 - sum (t - p)^2 / sum (t - mean t)^2
double r2(const Eigen::Ref<const Vector>& predictions, const Eigen::Ref<const Vector>& targets);

/// Test R^2 of each fitted feature: readout on X_test against feature values on Z_test.
std::vector<double> test_r2(const ManifoldProbe& probe, const Matrix& X_test, const Matrix& Z_test);

struct AutoDimConfig {
  FitMethod method = FitMethod::Als;
  int patience = 3;
  int max_d = 50;
  AlsConfig als;
  double lambda_w = 1.0;  // closed form only
  double lambda_f = 1.0;  // closed form only
};

struct AutoDimResult {
  ManifoldProbe probe;
  std::vector<double> test_r2;
  Index informative(double threshold = 0.5) const;
};

/// Fits features until `patience` consecutive ones have negative test R^2
/// or max_d is reached; every fitted feature is kept.
AutoDimResult auto_dim(const CenteredDesign& design, const PenalizedBasis& basis, const AutoDimConfig& config,
                       const Matrix& X_test, const Matrix& Z_test);

}  // namespace maniprobe
