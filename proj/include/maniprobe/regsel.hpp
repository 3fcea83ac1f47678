#pragma once

#include "maniprobe/common.hpp"
#include "maniprobe/numerics.hpp"

#include <string>

namespace maniprobe {

enum class Criterion { Gcv, Reml };

std::string to_string(Criterion c);
Criterion parse_criterion(const std::string& name);

/// Diagonalized ridge problem: with design = U D V^T, y_rot = U^T y and
/// r = |y|^2 - |y_rot|^2, so per-lambda work is O(k).
struct RidgeSpectrum {
  Vector d;      // singular values
  Vector y_rot;  // U^T y
  double r = 0;  // residual outside the column space
  Index n = 0;

  Index k() const { return d.size(); }
  double y_norm2() const { return y_rot.squaredNorm() + r; }
};

/// Search range for lambda, relative to the squared largest singular value.
struct LambdaBracket {
  double lo_rel = 1e-8;
  double hi_rel = 1e8;
};

struct LambdaChoice {
  double lambda = 0;
  double criterion_value = 0;
  double edf = 0;
  int iterations = 0;
  bool converged = false;
};

RidgeSpectrum spectrum(const ThinSvd& svd, const Vector& y);
RidgeSpectrum spectrum(const Matrix& design, const Vector& y);
/// Builds a spectrum from already-rotated quantities.
RidgeSpectrum spectrum_from_rotated(Vector d, Vector y_rot, double y_norm2, Index n);

/// (D^2 + lambda)^-1 D y_rot
Vector ridge_coefficients(const RidgeSpectrum& s, double lambda);
double residual_sum_of_squares(const RidgeSpectrum& s, double lambda);
double effective_dof(const RidgeSpectrum& s, double lambda);

/// GCV(l)  = n RSS / (n - tau)^2
/// REML(l) = n log(RSS + l |beta|^2) + sum log(d^2 + l) - k log l
/// (additive constants dropped).
double criterion(const RidgeSpectrum& s, double lambda, Criterion kind);

/// Criterion and its first two derivatives in theta = log(lambda).
struct CriterionDerivatives {
  double value, first, second;
};
CriterionDerivatives criterion_derivatives(const RidgeSpectrum& s, double lambda, Criterion kind);

/// Lambda range searched by optimize_lambda.
std::pair<double, double> lambda_range(const RidgeSpectrum& s, const LambdaBracket& bracket);

/// Safeguarded Newton in log(lambda), seeded from a coarse log grid, with a
/// golden-section fallback. Always returns a bracketed lambda.
LambdaChoice optimize_lambda(const RidgeSpectrum& s, Criterion kind, const LambdaBracket& bracket = {});

}  // namespace maniprobe
