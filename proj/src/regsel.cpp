#include "maniprobe/regsel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace maniprobe {

std::string to_string(Criterion c) { return c == Criterion::Gcv ? "gcv" : "reml"; }

Criterion parse_criterion(const std::string& name) {
  if (name == "gcv" || name == "GCV") return Criterion::Gcv;
  if (name == "reml" || name == "REML") return Criterion::Reml;
  throw ConfigError("unknown regularization criterion '" + name + "' (expected gcv or reml)");
}

RidgeSpectrum spectrum_from_rotated(Vector d, Vector y_rot, double y_norm2, Index n) {
  if (d.size() != y_rot.size()) throw NumericalError("spectrum: dimension mismatch");
  RidgeSpectrum s;
  s.d = std::move(d);
  s.y_rot = std::move(y_rot);
  s.n = n;
  s.r = std::max(0.0, y_norm2 - s.y_rot.squaredNorm());
  return s;
}

RidgeSpectrum spectrum(const ThinSvd& svd, const Vector& y) {
  if (y.size() != svd.U.rows()) throw NumericalError("spectrum: dimension mismatch");
  return spectrum_from_rotated(svd.D, svd.U.transpose() * y, y.squaredNorm(), y.size());
}

RidgeSpectrum spectrum(const Matrix& design, const Vector& y) {
  if (y.size() != design.rows()) throw NumericalError("spectrum: dimension mismatch");
  return spectrum(thin_svd(design), y);
}

Vector ridge_coefficients(const RidgeSpectrum& s, double lambda) {
  return (s.d.array() * s.y_rot.array() / (s.d.array().square() + lambda)).matrix();
}

double residual_sum_of_squares(const RidgeSpectrum& s, double lambda) {
  // y_i - d_i beta_i = y_i lambda / (d_i^2 + lambda)
  double rss = s.r;
  for (Index i = 0; i < s.k(); ++i) {
    const double e = s.y_rot(i) * lambda / (s.d(i) * s.d(i) + lambda);
    rss += e * e;
  }
  return rss;
}

double effective_dof(const RidgeSpectrum& s, double lambda) {
  double tau = 0.0;
  for (Index i = 0; i < s.k(); ++i) {
    const double sq = s.d(i) * s.d(i);
    tau += sq / (sq + lambda);
  }
  return tau;
}

CriterionDerivatives criterion_derivatives(const RidgeSpectrum& s, double lambda, Criterion kind) {
  if (!(lambda > 0.0)) throw NumericalError("criterion: lambda must be positive");
  const double n = static_cast<double>(s.n);
  const double k = static_cast<double>(s.k());
  CriterionDerivatives out{};
  double c_l = 0.0, c_ll = 0.0;  // derivatives in lambda
  if (kind == Criterion::Gcv) {
    double rss = s.r, rss_l = 0.0, rss_ll = 0.0, tau = 0.0, tau_l = 0.0, tau_ll = 0.0;
    for (Index i = 0; i < s.k(); ++i) {
      const double sq = s.d(i) * s.d(i), a = sq + lambda, y2 = s.y_rot(i) * s.y_rot(i);
      const double a2 = a * a, a3 = a2 * a;
      rss += y2 * lambda * lambda / a2;
      rss_l += y2 * 2.0 * lambda * sq / a3;
      rss_ll += y2 * 2.0 * sq * (sq - 2.0 * lambda) / (a3 * a);
      tau += sq / a;
      tau_l -= sq / a2;
      tau_ll += 2.0 * sq / a3;
    }
    const double g = n - tau;
    if (!(g > 0.0)) throw NumericalError("GCV: effective degrees of freedom reach n");
    const double g2 = g * g, g3 = g2 * g, g4 = g3 * g;
    out.value = n * rss / g2;
    c_l = n * (rss_l / g2 + 2.0 * rss * tau_l / g3);
    c_ll = n * (rss_ll / g2 + 4.0 * rss_l * tau_l / g3 + 2.0 * rss * tau_ll / g3 + 6.0 * rss * tau_l * tau_l / g4);
  } else {
    // Q = RSS + lambda |beta|^2 = sum y_i^2 lambda / a_i + r
    double q = s.r, q_l = 0.0, q_ll = 0.0, logdet = 0.0, inv = 0.0, inv2 = 0.0;
    for (Index i = 0; i < s.k(); ++i) {
      const double sq = s.d(i) * s.d(i), a = sq + lambda, y2 = s.y_rot(i) * s.y_rot(i);
      q += y2 * lambda / a;
      q_l += y2 * sq / (a * a);
      q_ll -= 2.0 * y2 * sq / (a * a * a);
      logdet += std::log(a);
      inv += 1.0 / a;
      inv2 += 1.0 / (a * a);
    }
    q = std::max(q, std::numeric_limits<double>::min());
    out.value = n * std::log(q) + logdet - k * std::log(lambda);
    c_l = n * q_l / q + inv - k / lambda;
    c_ll = n * (q_ll / q - (q_l / q) * (q_l / q)) - inv2 + k / (lambda * lambda);
  }
  out.first = lambda * c_l;
  out.second = lambda * c_l + lambda * lambda * c_ll;
  return out;
}

double criterion(const RidgeSpectrum& s, double lambda, Criterion kind) {
  return criterion_derivatives(s, lambda, kind).value;
}

std::pair<double, double> lambda_range(const RidgeSpectrum& s, const LambdaBracket& bracket) {
  const double dmax2 = s.k() > 0 ? s.d.maxCoeff() * s.d.maxCoeff() : 1.0;
  const double scale = dmax2 > 0.0 ? dmax2 : 1.0;
  return {bracket.lo_rel * scale, bracket.hi_rel * scale};
}

LambdaChoice optimize_lambda(const RidgeSpectrum& s, Criterion kind, const LambdaBracket& bracket) {
  if (s.k() < 1) throw NumericalError("optimize_lambda: empty spectrum");
  const auto [lam_lo, lam_hi] = lambda_range(s, bracket);
  const double t_lo = std::log(lam_lo), t_hi = std::log(lam_hi);
  auto value = [&](double t) { return criterion(s, std::exp(t), kind); };

  // Coarse grid start guards Newton against distant local minima.
  constexpr int kGrid = 41;
  double t = t_lo, best = value(t_lo);
  int best_i = 0;
  for (int i = 1; i < kGrid; ++i) {
    const double ti = t_lo + (t_hi - t_lo) * i / (kGrid - 1);
    const double v = value(ti);
    if (v < best) {
      best = v;
      t = ti;
      best_i = i;
    }
  }
  const double step_grid = (t_hi - t_lo) / (kGrid - 1);
  const double local_lo = std::max(t_lo, t - step_grid), local_hi = std::min(t_hi, t + step_grid);

  LambdaChoice out;
  bool converged = false, left_bracket = false;
  int it = 0;
  for (; it < 100; ++it) {
    const auto c = criterion_derivatives(s, std::exp(t), kind);
    if (std::abs(c.first) < 1e-10 * std::max(std::abs(c.value), 1e-300)) {
      converged = true;
      break;
    }
    double step = c.second > 0.0 ? -c.first / c.second : (c.first > 0.0 ? -1.0 : 1.0);
    step = std::clamp(step, -2.0, 2.0);
    double t_new = t + step;
    if (t_new < t_lo || t_new > t_hi) {
      if ((t <= t_lo && c.first > 0.0) || (t >= t_hi && c.first < 0.0)) {
        // Minimum sits on the bracket edge.
        converged = true;
        break;
      }
      left_bracket = true;
      break;
    }
    double v_new = value(t_new);
    int halvings = 0;
    while (!(v_new <= c.value) && halvings < 30) {
      step *= 0.5;
      t_new = t + step;
      v_new = value(t_new);
      ++halvings;
    }
    if (!(v_new <= c.value)) {
      // No descent possible along this direction at machine precision.
      converged = std::abs(step) < 1e-12;
      break;
    }
    const bool tiny = std::abs(t_new - t) < 1e-14 * std::max(1.0, std::abs(t));
    t = t_new;
    if (tiny) {
      converged = true;
      break;
    }
  }
  if (left_bracket || (!converged && it >= 100)) {
    // Golden-section over the neighbourhood of the best grid point.
    const double g = 0.5 * (std::sqrt(5.0) - 1.0);
    double a = local_lo, b = local_hi;
    double x1 = b - g * (b - a), x2 = a + g * (b - a);
    double f1 = value(x1), f2 = value(x2);
    for (int j = 0; j < 200 && (b - a) > 1e-12 * std::max(1.0, std::abs(a)); ++j, ++it) {
      if (f1 < f2) {
        b = x2;
        x2 = x1;
        f2 = f1;
        x1 = b - g * (b - a);
        f1 = value(x1);
      } else {
        a = x1;
        x1 = x2;
        f1 = f2;
        x2 = a + g * (b - a);
        f2 = value(x2);
      }
    }
    const double tg = 0.5 * (a + b);
    if (value(tg) <= value(t) || t < t_lo || t > t_hi) t = tg;
    converged = true;
  }
  t = std::clamp(t, t_lo, t_hi);
  out.lambda = std::exp(t);
  out.criterion_value = value(t);
  if (out.criterion_value > best) {
    // Newton can only improve on the grid start; keep the better point.
    out.lambda = std::exp(t_lo + (t_hi - t_lo) * best_i / (kGrid - 1));
    out.criterion_value = best;
  }
  out.edf = effective_dof(s, out.lambda);
  out.iterations = it;
  out.converged = converged;
  return out;
}

}  // namespace maniprobe
