#include "maniprobe/probe.hpp"

#include "maniprobe/rng.hpp"

#include <Eigen/QR>

#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>

namespace maniprobe {

std::string to_string(FitMethod m) { return m == FitMethod::Als ? "als" : "closed_form"; }

FitMethod parse_fit_method(const std::string& name) {
  if (name == "als") return FitMethod::Als;
  if (name == "closed_form") return FitMethod::ClosedForm;
  throw ConfigError("unknown fit method '" + name + "' (expected als or closed_form)");
}

namespace {

template <typename Get>
Matrix stack_columns(const std::vector<FittedFeature>& features, Index rows, Get get) {
  Matrix out(rows, static_cast<Index>(features.size()));
  for (std::size_t k = 0; k < features.size(); ++k) out.col(static_cast<Index>(k)) = get(features[k]);
  return out;
}

void check_design(const CenteredDesign& design, const PenalizedBasis& basis, Index d) {
  if (design.n() < 2) throw DataError("fit needs at least 2 training rows");
  if (design.H.rows() != design.n()) throw DataError("X and H row counts differ");
  if (design.H.cols() != basis.dim()) throw DataError("H columns do not match the basis dimension");
  if (basis.penalty().rows() != basis.dim()) throw DataError("penalty size does not match the basis dimension");
  if (d < 1 || d > design.H.cols()) throw ConfigError("d must lie in [1, m]");
  if (d > design.X.cols()) throw ConfigError("d must not exceed the representation dimension p");
}

void warn_near_degenerate(const Vector& nu) {
  if (nu.size() < 2) return;
  const double scale = std::max(std::abs(nu(nu.size() - 1)), 1e-300);
  for (Index k = 1; k < nu.size(); ++k)
    if (nu(k) - nu(k - 1) < 1e-8 * scale)
      std::cerr << "warning: near-degenerate eigenvalues at features " << k << " and " << k + 1
                << "; ordering kept as returned\n";
}

}  // namespace

Matrix ManifoldProbe::beta_matrix() const {
  return stack_columns(features, basis.dim(), [](const FittedFeature& f) { return f.beta; });
}
Matrix ManifoldProbe::w_matrix() const {
  return stack_columns(features, p(), [](const FittedFeature& f) { return f.w; });
}
Matrix ManifoldProbe::u_matrix() const {
  return stack_columns(features, p(), [](const FittedFeature& f) { return f.u; });
}

ManifoldProbe fit_closed_form(const CenteredDesign& design, const PenalizedBasis& basis, Index d, double lambda_w,
                              double lambda_f) {
  check_design(design, basis, d);
  if (!(lambda_w > 0.0)) throw ConfigError("closed form needs lambda_w > 0");
  if (!(lambda_f >= 0.0)) throw ConfigError("closed form needs lambda_f >= 0");
  const double n = static_cast<double>(design.n());
  const ThinSvd sx = thin_svd(design.X);
  const Matrix G = sx.U.transpose() * design.H;  // U_x^T H
  // H^T (I - A) H split into the part of H outside span(X) and the shrunk part inside,
  // so small eigenvalues do not come from a cancelling difference.
  const Matrix outside = design.H - sx.U * G;
  const Vector kept = lambda_w / (sx.D.array().square() + lambda_w);
  const Matrix HtH = design.H.transpose() * design.H;
  Matrix M = outside.transpose() * outside + G.transpose() * kept.asDiagonal() * G + lambda_f * basis.penalty();
  M = 0.5 * (M + M.transpose()).eval();
  const GevResult gev = gev_smallest(M, HtH / n, d);
  warn_near_degenerate(gev.values);

  ManifoldProbe probe;
  probe.x_mean = design.x_mean;
  probe.h_mean = design.h_mean;
  probe.basis = basis;
  probe.z_train = design.Z;
  probe.meta.method = FitMethod::ClosedForm;
  probe.meta.n_train = design.n();
  const Vector ridge_scale = sx.D.array() / (sx.D.array().square() + lambda_w);
  for (Index k = 0; k < d; ++k) {
    FittedFeature f;
    f.beta = gev.vectors.col(k);
    const Vector gb = G * f.beta;
    f.w = sx.V * (ridge_scale.array() * gb.array()).matrix();
    f.b = -f.w.dot(design.x_mean);
    f.u = sx.V * (sx.D.array() * gb.array()).matrix() / n;
    f.nu = gev.values(k);
    f.lambda_w = lambda_w;
    f.lambda_f = lambda_f;
    probe.features.push_back(std::move(f));
  }
  return probe;
}

double als_lambda_f_for(double lambda_f, double nu, Index n) {
  const double c = 1.0 - nu / static_cast<double>(n);
  if (!(c > 0.0)) throw NumericalError("lambda mapping needs nu < n");
  return lambda_f / c;
}

double probe_objective(const CenteredDesign& design, const PenalizedBasis& basis, const Vector& beta, double lambda_w,
                       double lambda_f) {
  if (beta.size() != design.H.cols()) throw DataError("coefficient length does not match the basis dimension");
  const Vector y = design.H * beta;
  const Vector w = ridge_solve(design.X, y, lambda_w);
  return (y - design.X * w).squaredNorm() + lambda_w * w.squaredNorm() +
         lambda_f * beta.dot(basis.penalty() * beta);
}

// ---------------------------------------------------------------------------
// ALS
//
// H = U_H R_H and X = U_x D_x V_x^T are decomposed once. For feature k the
// constrained, penalty-whitened design is H N L^-T = U_H K with K = U_k D_h V_k^T
// small (m x m'), so every ridge problem reduces to vectors of length
// rank(X) and m' and the cross product C = U_x^T U_H U_k.

struct AlsFitter::State {
  Matrix X_V;     // V_x
  Vector X_D;     // D_x
  Matrix R_H;     // m x m, H = U_H R_H
  Matrix cross;   // U_x^T U_H
  Matrix Sigma;   // R_H^T R_H / n
  Matrix S;
  Vector x_mean, h_mean;
  Matrix z_train;
  PenalizedBasis basis;
  AlsConfig config;
  Index n = 0, p = 0, m = 0;
  std::vector<FittedFeature> done;
};

AlsFitter::AlsFitter(const CenteredDesign& design, const PenalizedBasis& basis, AlsConfig config)
    : state_(std::make_unique<State>()) {
  check_design(design, basis, 1);
  auto& s = *state_;
  s.n = design.n();
  s.p = design.X.cols();
  s.m = design.H.cols();
  s.config = std::move(config);
  s.basis = basis;
  s.S = basis.penalty();
  s.x_mean = design.x_mean;
  s.h_mean = design.h_mean;
  s.z_train = design.Z;
  const ThinSvd sx = thin_svd(design.X);
  const ThinSvd sh = thin_svd(design.H);
  if (sh.rank() < s.m) throw NumericalError("ALS: centred basis matrix H is rank deficient");
  s.X_V = sx.V;
  s.X_D = sx.D;
  s.R_H = sh.D.asDiagonal() * sh.V.transpose();
  s.cross = sx.U.transpose() * sh.U;
  s.Sigma = s.R_H.transpose() * s.R_H / static_cast<double>(s.n);
  Eigen::LLT<Matrix> llt(s.S);
  if (llt.info() != Eigen::Success) throw NumericalError("ALS: penalty matrix must be positive definite");
}

AlsFitter::~AlsFitter() = default;

Index AlsFitter::fitted() const { return static_cast<Index>(state_->done.size()); }

Index AlsFitter::max_features() const { return std::min(state_->m, state_->p); }

const FittedFeature& AlsFitter::fit_next() {
  auto& s = *state_;
  const Index k = fitted();
  if (k >= max_features()) throw ConfigError("ALS: no further features can be fitted (d limited by min(m, p))");
  const double n = static_cast<double>(s.n);
  const auto& cfg = s.config;

  // Basis of the Sigma-orthogonal complement of the previous features.
  Matrix N;
  if (k == 0) {
    N = Matrix::Identity(s.m, s.m);
  } else {
    Matrix prev(s.m, k);
    for (Index j = 0; j < k; ++j) prev.col(j) = s.done[static_cast<std::size_t>(j)].beta;
    Eigen::HouseholderQR<Matrix> qr(s.Sigma * prev);
    const Matrix Q = qr.householderQ();
    N = Q.rightCols(s.m - k);
  }
  Eigen::LLT<Matrix> pllt(N.transpose() * s.S * N);
  if (pllt.info() != Eigen::Success) throw NumericalError("ALS: constrained penalty is not positive definite");
  const Matrix RN = s.R_H * N;
  const Matrix K = pllt.matrixL().solve(RN.transpose()).transpose();  // R_H N L^-T
  const ThinSvd sk = thin_svd(K, 0.0);
  if (sk.rank() < K.cols()) throw NumericalError("ALS: constrained design lost rank");
  const Vector& Dh = sk.D;
  const Matrix C = s.cross * sk.U;                               // U_x^T U_h
  const Matrix beta_map = N * pllt.matrixU().solve(sk.V);        // beta = beta_map * eta
  const Index mk = Dh.size();

  auto normalize = [&](Vector& eta) {
    const double norm = (Dh.array() * eta.array()).matrix().norm() / std::sqrt(n);
    if (!(norm > 0.0) || !std::isfinite(norm)) return false;
    eta /= norm;
    return true;
  };
  auto random_start = [&](int attempt) {
    Rng rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(k) + 1000003ull * static_cast<std::uint64_t>(attempt)));
    return rng.normal_vector(mk);
  };

  Vector eta;
  if (cfg.initial_betas && cfg.initial_betas->cols() > k) {
    if (cfg.initial_betas->rows() != s.m) throw ConfigError("ALS: initial beta has the wrong length");
    eta = (sk.U.transpose() * (s.R_H * cfg.initial_betas->col(k))).array() / Dh.array();
  } else {
    eta = random_start(0);
  }
  int attempt = 0;
  if (!normalize(eta)) {
    eta = random_start(++attempt);
    normalize(eta);
  }

  const bool fixed = static_cast<Index>(cfg.fixed_lambdas.size()) > k;
  double lam_w = fixed ? cfg.fixed_lambdas[static_cast<std::size_t>(k)].first : 0.0;
  double lam_f = fixed ? cfg.fixed_lambdas[static_cast<std::size_t>(k)].second : 0.0;
  if (fixed && !(lam_w > 0.0 && lam_f >= 0.0)) throw ConfigError("ALS: fixed lambdas must be positive");
  bool frozen = fixed;
  double prev_w = std::numeric_limits<double>::quiet_NaN(), prev_f = prev_w;

  FittedFeature f;
  f.converged = false;
  int t = 0;
  while (t < cfg.max_iter) {
    ++t;
    const bool frozen_now = frozen;
    // w-update: response H beta, rotated onto U_x.
    const Vector yb = Dh.array() * eta.array();
    const Vector yw_rot = C * yb;
    if (!frozen_now)
      lam_w = optimize_lambda(spectrum_from_rotated(s.X_D, yw_rot, yb.squaredNorm(), s.n), cfg.criterion, cfg.bracket)
                  .lambda;
    const Vector omega = s.X_D.array() * yw_rot.array() / (s.X_D.array().square() + lam_w);
    // beta-update: response X w, rotated onto U_h.
    const Vector xw = s.X_D.array() * omega.array();
    const Vector yh_rot = C.transpose() * xw;
    if (!frozen_now)
      lam_f = optimize_lambda(spectrum_from_rotated(Dh, yh_rot, xw.squaredNorm(), s.n), cfg.criterion, cfg.bracket)
                  .lambda;
    Vector next = Dh.array() * yh_rot.array() / (Dh.array().square() + lam_f);
    if (!normalize(next)) {
      if (attempt >= 1) throw NumericalError("ALS: update vanished twice; initialization orthogonal to the solution");
      eta = random_start(++attempt);
      normalize(eta);
      continue;
    }
    // 1 - |c| for Sigma-unit vectors, as half the squared distance (no cancellation).
    const double gap = std::min((Dh.array() * (next - eta).array()).matrix().squaredNorm(),
                                (Dh.array() * (next + eta).array()).matrix().squaredNorm()) /
                       (2.0 * n);
    eta = next;
    if (frozen_now) {
      if (gap < cfg.tol) {
        f.converged = true;
        break;
      }
    } else {
      const bool settled = t >= 2 && std::abs(lam_w - prev_w) < cfg.freeze_after_rel_change * prev_w &&
                           std::abs(lam_f - prev_f) < cfg.freeze_after_rel_change * prev_f;
      if (settled || t >= cfg.freeze_max_iter) frozen = true;
      prev_w = lam_w;
      prev_f = lam_f;
    }
  }

  f.beta = beta_map * eta;
  if (canonical_sign(f.beta)) eta = -eta;
  const Vector yb = Dh.array() * eta.array();
  const Vector yw_rot = C * yb;
  const Vector shrink = s.X_D.array().square() / (s.X_D.array().square() + lam_w);
  f.w = s.X_V * (s.X_D.array() * yw_rot.array() / (s.X_D.array().square() + lam_w)).matrix();
  f.b = -f.w.dot(s.x_mean);
  f.u = s.X_V * (s.X_D.array() * yw_rot.array()).matrix() / n;
  // nu solves nu = beta^T M beta with M built from lambda_f = lam_f (1 - nu / n).
  const double fit_term = n - (shrink.array() * yw_rot.array().square()).sum();
  const double rough = f.beta.dot(s.S * f.beta);
  f.nu = (fit_term + lam_f * rough) / (1.0 + lam_f * rough / n);
  f.lambda_w = lam_w;
  f.lambda_f = lam_f * (1.0 - f.nu / n);
  f.lambda_w_tilde = lam_w;
  f.lambda_f_tilde = lam_f;
  f.iterations = t;
  s.done.push_back(std::move(f));
  return s.done.back();
}

ManifoldProbe AlsFitter::probe() const {
  const auto& s = *state_;
  ManifoldProbe probe;
  probe.features = s.done;
  probe.x_mean = s.x_mean;
  probe.h_mean = s.h_mean;
  probe.basis = s.basis;
  probe.z_train = s.z_train;
  probe.meta.method = FitMethod::Als;
  probe.meta.criterion = s.config.criterion;
  probe.meta.seed = s.config.seed;
  probe.meta.n_train = s.n;
  return probe;
}

std::vector<std::size_t> order_by_nu(ManifoldProbe& probe) {
  std::vector<std::size_t> idx(probe.features.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return probe.features[a].nu < probe.features[b].nu; });
  std::vector<FittedFeature> sorted;
  sorted.reserve(idx.size());
  for (std::size_t i : idx) sorted.push_back(probe.features[i]);
  probe.features = std::move(sorted);
  return idx;
}

ManifoldProbe fit_als(const CenteredDesign& design, const PenalizedBasis& basis, Index d, const AlsConfig& config) {
  check_design(design, basis, d);
  AlsFitter fitter(design, basis, config);
  for (Index k = 0; k < d; ++k) fitter.fit_next();
  auto probe = fitter.probe();
  order_by_nu(probe);
  Vector nu(d);
  for (Index k = 0; k < d; ++k) nu(k) = probe.features[static_cast<std::size_t>(k)].nu;
  warn_near_degenerate(nu);
  return probe;
}

// ---------------------------------------------------------------------------
// Evaluation

Matrix checked_concepts(const ManifoldProbe& probe, const Matrix& Z) {
  const auto& space = probe.basis.space();
  if (Z.cols() != space.dim())
    throw DataError("concept values have " + std::to_string(Z.cols()) + " columns, probe expects " +
                    std::to_string(space.dim()));
  Matrix out = Z;
  bool clamped = false;
  for (Index i = 0; i < Z.rows(); ++i) {
    if (space.contains(Z.row(i))) continue;
    if (probe.bounds_policy == BoundsPolicy::Reject || !Z.row(i).allFinite())
      throw DataError("concept value outside bounds at row " + std::to_string(i + 1));
    for (Index j = 0; j < Z.cols(); ++j)
      out(i, j) = std::clamp(Z(i, j), space.lo[static_cast<std::size_t>(j)], space.hi[static_cast<std::size_t>(j)]);
    clamped = true;
  }
  if (clamped) std::cerr << "warning: out-of-bounds concept values clamped to the concept space\n";
  return out;
}

Matrix feature_matrix(const ManifoldProbe& probe, const Matrix& Z) {
  const Matrix H = probe.basis.evaluate(checked_concepts(probe, Z)).rowwise() - probe.h_mean.transpose();
  return H * probe.beta_matrix();
}

Vector feature_values(const ManifoldProbe& probe, Index k, const Matrix& Z) {
  if (k < 0 || k >= probe.d()) throw ConfigError("feature index out of range");
  const Matrix H = probe.basis.evaluate(checked_concepts(probe, Z)).rowwise() - probe.h_mean.transpose();
  return H * probe.features[static_cast<std::size_t>(k)].beta;
}

Vector readout(const ManifoldProbe& probe, Index k, const Matrix& X_rows) {
  if (k < 0 || k >= probe.d()) throw ConfigError("feature index out of range");
  if (X_rows.cols() != probe.p()) throw DataError("representation dimension mismatch");
  const auto& f = probe.features[static_cast<std::size_t>(k)];
  return (X_rows * f.w).array() + f.b;
}

Matrix readout_matrix(const ManifoldProbe& probe, const Matrix& X_rows) {
  if (X_rows.cols() != probe.p()) throw DataError("representation dimension mismatch");
  Matrix g = X_rows * probe.w_matrix();
  for (Index k = 0; k < probe.d(); ++k) g.col(k).array() += probe.features[static_cast<std::size_t>(k)].b;
  return g;
}

Vector phi(const ManifoldProbe& probe, const Eigen::Ref<const Eigen::RowVectorXd>& z) {
  const Matrix f = feature_matrix(probe, Matrix(z));
  return probe.u_matrix() * f.row(0).transpose();
}

Vector psi(const ManifoldProbe& probe, const Eigen::Ref<const Vector>& x) {
  const Matrix g = readout_matrix(probe, Matrix(x.transpose()));
  return probe.u_matrix() * g.row(0).transpose();
}

Vector steering_vector(const ManifoldProbe& probe, const Eigen::Ref<const Eigen::RowVectorXd>& z, double alpha) {
  return alpha * phi(probe, z);
}

double r2(const Eigen::Ref<const Vector>& predictions, const Eigen::Ref<const Vector>& targets) {
  if (predictions.size() != targets.size()) throw DataError("r2: length mismatch");
  if (targets.size() < 2) throw DataError("r2: needs at least 2 values");
  const double mean = targets.mean();
  const double ss_tot = (targets.array() - mean).square().sum();
  if (!(ss_tot > 0.0)) throw DataError("r2: targets are constant");
  return 1.0 - (targets - predictions).squaredNorm() / ss_tot;
}

std::vector<double> test_r2(const ManifoldProbe& probe, const Matrix& X_test, const Matrix& Z_test) {
  std::vector<double> out;
  if (probe.d() == 0) return out;
  const Matrix g = readout_matrix(probe, X_test);
  const Matrix f = feature_matrix(probe, Z_test);
  for (Index k = 0; k < probe.d(); ++k) out.push_back(r2(g.col(k), f.col(k)));
  return out;
}

Index AutoDimResult::informative(double threshold) const {
  return static_cast<Index>(std::count_if(test_r2.begin(), test_r2.end(), [&](double v) { return v > threshold; }));
}

AutoDimResult auto_dim(const CenteredDesign& design, const PenalizedBasis& basis, const AutoDimConfig& config,
                       const Matrix& X_test, const Matrix& Z_test) {
  if (X_test.rows() < 2) throw DataError("auto_dim needs a test split with at least 2 rows");
  if (config.max_d < 1) throw ConfigError("auto_dim: max_d must be at least 1");
  if (config.patience < 1) throw ConfigError("auto_dim: patience must be at least 1");
  const Index cap = std::min<Index>({static_cast<Index>(config.max_d), design.H.cols(), design.X.cols()});
  AutoDimResult out;
  int streak = 0;
  auto record = [&](double r) {
    out.test_r2.push_back(r);
    streak = r < 0.0 ? streak + 1 : 0;
    return streak >= config.patience;
  };
  if (config.method == FitMethod::ClosedForm) {
    ManifoldProbe full = fit_closed_form(design, basis, cap, config.lambda_w, config.lambda_f);
    const auto r = test_r2(full, X_test, Z_test);
    Index keep = 0;
    for (Index k = 0; k < cap; ++k) {
      ++keep;
      if (record(r[static_cast<std::size_t>(k)])) break;
    }
    full.features.resize(static_cast<std::size_t>(keep));
    out.probe = std::move(full);
    return out;
  }
  AlsFitter fitter(design, basis, config.als);
  while (fitter.fitted() < cap) {
    fitter.fit_next();
    ManifoldProbe current = fitter.probe();
    const Index k = current.d() - 1;
    const double r = r2(readout(current, k, X_test), feature_values(current, k, Z_test));
    if (record(r)) break;
  }
  out.probe = fitter.probe();
  const auto idx = order_by_nu(out.probe);
  std::vector<double> r2_sorted;
  for (std::size_t i : idx) r2_sorted.push_back(out.test_r2[i]);
  out.test_r2 = std::move(r2_sorted);
  return out;
}

}  // namespace maniprobe
