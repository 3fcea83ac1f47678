#include "maniprobe/synthetic.hpp"

#include "maniprobe/numerics.hpp"
#include "maniprobe/rng.hpp"

#include <Eigen/QR>

#include <cmath>
#include <numbers>

namespace maniprobe {
namespace {

double legendre(int k, double x) {
  if (k == 0) return 1.0;
  double p0 = 1.0, p1 = x;
  for (int j = 2; j <= k; ++j) {
    const double p2 = ((2.0 * j - 1.0) * x * p1 - (j - 1.0) * p0) / j;
    p0 = p1;
    p1 = p2;
  }
  return p1;
}

// Orthonormal under the uniform law on [0, 1].
double univariate(FeatureFamily family, int order, double t) {
  if (order == 0) return 1.0;
  if (family == FeatureFamily::Cosine) return std::numbers::sqrt2 * std::cos(order * std::numbers::pi * t);
  return std::sqrt(2.0 * order + 1.0) * legendre(order, 2.0 * t - 1.0);
}

std::vector<std::array<int, 2>> feature_orders(Index q, Index d) {
  std::vector<std::array<int, 2>> out;
  if (q == 1) {
    for (Index k = 1; k <= d; ++k) out.push_back({static_cast<int>(k), 0});
    return out;
  }
  for (int total = 1; static_cast<Index>(out.size()) < d; ++total)
    for (int a = total; a >= 0 && static_cast<Index>(out.size()) < d; --a) out.push_back({a, total - a});
  return out;
}

Matrix centered_columns(const Matrix& m) { return m.rowwise() - m.colwise().mean(); }

}  // namespace

std::string to_string(FeatureFamily f) { return f == FeatureFamily::Cosine ? "cosine" : "legendre"; }

FeatureFamily parse_feature_family(const std::string& name) {
  if (name == "cosine") return FeatureFamily::Cosine;
  if (name == "legendre") return FeatureFamily::Legendre;
  throw ConfigError("unknown feature family '" + name + "' (expected cosine or legendre)");
}

std::string to_string(NuisanceOverlap o) { return o == NuisanceOverlap::Orthogonal ? "orthogonal" : "general"; }

NuisanceOverlap parse_nuisance_overlap(const std::string& name) {
  if (name == "orthogonal") return NuisanceOverlap::Orthogonal;
  if (name == "general") return NuisanceOverlap::General;
  throw ConfigError("unknown nuisance overlap '" + name + "' (expected orthogonal or general)");
}

Matrix SyntheticGroundTruth::features(const Matrix& Z) const {
  if (Z.cols() != space.dim()) throw DataError("truth features: concept dimension mismatch");
  Matrix out(Z.rows(), d());
  for (Index i = 0; i < Z.rows(); ++i)
    for (Index k = 0; k < d(); ++k) {
      double v = 1.0;
      for (Index j = 0; j < Z.cols(); ++j) {
        const auto sj = static_cast<std::size_t>(j);
        const double t = (Z(i, j) - space.lo[sj]) / (space.hi[sj] - space.lo[sj]);
        v *= univariate(family, orders[static_cast<std::size_t>(k)][sj], t);
      }
      out(i, k) = v;
    }
  return out;
}

Matrix SyntheticGroundTruth::phi(const Matrix& Z) const {
  return features(Z) * scales.asDiagonal() * U_true.transpose();
}

std::pair<ProbingDataset, SyntheticGroundTruth> generate(const SyntheticConfig& cfg) {
  cfg.space.validate();
  if (cfg.space.dim() > 2) throw ConfigError("synthetic generator supports 1-D and 2-D concept spaces");
  if (cfg.p < 1 || cfg.d < 1 || cfg.n < 2 || cfg.nuisance_rank < 0)
    throw ConfigError("synthetic: need p >= 1, d >= 1, n >= 2, r >= 0");
  if (cfg.d > cfg.p) throw ConfigError("synthetic: d must not exceed p");
  if (cfg.overlap == NuisanceOverlap::Orthogonal && cfg.d + cfg.nuisance_rank > cfg.p)
    throw ConfigError("synthetic: orthogonal nuisance needs d + r <= p");
  if (!(cfg.noise_sd >= 0.0)) throw ConfigError("synthetic: noise_sd must be non-negative");
  if (!cfg.signal_scales.empty() && static_cast<Index>(cfg.signal_scales.size()) != cfg.d)
    throw ConfigError("synthetic: signal_scales must have d entries");

  Rng rng(cfg.seed);
  SyntheticGroundTruth truth;
  truth.space = cfg.space;
  truth.family = cfg.family;
  truth.seed = cfg.seed;
  truth.noise_sd = cfg.noise_sd;
  truth.nuisance_scale = cfg.nuisance_scale;
  truth.orders = feature_orders(cfg.space.dim(), cfg.d);
  truth.scales = cfg.signal_scales.empty() ? Vector(Vector::Ones(cfg.d))
                                           : Vector(Eigen::Map<const Vector>(cfg.signal_scales.data(), cfg.d));
  const Index r = cfg.nuisance_rank;
  if (cfg.overlap == NuisanceOverlap::Orthogonal) {
    Eigen::HouseholderQR<Matrix> qr(rng.normal_matrix(cfg.p, cfg.d + r));
    const Matrix Q = qr.householderQ() * Matrix::Identity(cfg.p, cfg.d + r);
    truth.U_true = Q.leftCols(cfg.d);
    truth.V_nuisance = Q.rightCols(r);
  } else {
    Eigen::HouseholderQR<Matrix> qr(rng.normal_matrix(cfg.p, cfg.d));
    truth.U_true = qr.householderQ() * Matrix::Identity(cfg.p, cfg.d);
    truth.V_nuisance = rng.normal_matrix(cfg.p, r) / std::sqrt(static_cast<double>(cfg.p));
  }

  ProbingDataset ds;
  ds.Z.resize(cfg.n, cfg.space.dim());
  for (Index i = 0; i < cfg.n; ++i)
    for (Index j = 0; j < cfg.space.dim(); ++j)
      ds.Z(i, j) = rng.uniform(cfg.space.lo[static_cast<std::size_t>(j)], cfg.space.hi[static_cast<std::size_t>(j)]);
  const Matrix xi = rng.normal_matrix(cfg.n, r);
  const Matrix eps = rng.normal_matrix(cfg.n, cfg.p);
  ds.X_raw = truth.phi(ds.Z);
  if (r > 0) ds.X_raw += cfg.nuisance_scale * xi * truth.V_nuisance.transpose();
  if (cfg.noise_sd > 0.0) ds.X_raw += cfg.noise_sd * eps;
  ds.ids.reserve(static_cast<std::size_t>(cfg.n));
  for (Index i = 0; i < cfg.n; ++i) ds.ids.push_back("s" + std::to_string(i));
  return {std::move(ds), std::move(truth)};
}

RecoveryScore recovery_score(const Matrix& fitted_values, const Matrix& fitted_directions,
                             const SyntheticGroundTruth& truth, const Matrix& Z_eval) {
  const Index dd = std::min(fitted_values.cols(), truth.d());
  if (dd < 1) throw DataError("recovery_score: no features to compare");
  if (Z_eval.rows() <= truth.d() + 1) throw DataError("recovery_score: evaluation grid too small");
  const Matrix fhat = centered_columns(fitted_values.leftCols(dd));
  const Matrix fstar = centered_columns(truth.features(Z_eval));
  if (thin_svd(fstar).rank() < truth.d() || thin_svd(fhat).rank() < dd)
    throw DataError("recovery_score: degenerate evaluation grid");
  RecoveryScore out;
  out.feature_angle = largest_principal_angle(fhat, fstar);
  out.subspace_angle = largest_principal_angle(fitted_directions.leftCols(dd), truth.U_true);
  const ThinSvd sv = thin_svd(fhat);
  for (Index k = 0; k < truth.d(); ++k) {
    const Vector t = fstar.col(k);
    const Vector fit = sv.U * (sv.U.transpose() * t);
    out.per_feature_r2.push_back(1.0 - (t - fit).squaredNorm() / t.squaredNorm());
  }
  return out;
}

RecoveryScore recovery_score(const ManifoldProbe& probe, const SyntheticGroundTruth& truth, const Matrix& Z_eval) {
  return recovery_score(feature_matrix(probe, Z_eval), probe.u_matrix(), truth, Z_eval);
}

Matrix uniform_grid(const ConceptSpace& space, Index per_dim) {
  space.validate();
  if (per_dim < 2) throw ConfigError("grid needs at least 2 points per coordinate");
  auto coord = [&](Index j, Index i) {
    const auto sj = static_cast<std::size_t>(j);
    return i == per_dim - 1 ? space.hi[sj]
                            : space.lo[sj] + (space.hi[sj] - space.lo[sj]) * static_cast<double>(i) / (per_dim - 1);
  };
  if (space.dim() == 1) {
    Matrix out(per_dim, 1);
    for (Index i = 0; i < per_dim; ++i) out(i, 0) = coord(0, i);
    return out;
  }
  Matrix out(per_dim * per_dim, 2);
  for (Index a = 0; a < per_dim; ++a)
    for (Index b = 0; b < per_dim; ++b) {
      out(a * per_dim + b, 0) = coord(0, a);
      out(a * per_dim + b, 1) = coord(1, b);
    }
  return out;
}

}  // namespace maniprobe
