#include "maniprobe/synthetic.hpp"
#include "maniprobe/numerics.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace maniprobe;

namespace {

SyntheticConfig base(std::uint64_t seed) {
  SyntheticConfig c;
  c.p = 20;
  c.d = 2;
  c.n = 1000;
  c.seed = seed;
  return c;
}

}  // namespace

TEST(Generate, NoiselessIsExactlyOnTheManifold) {
  auto c = base(1);
  const auto [ds, truth] = generate(c);
  EXPECT_EQ(ds.n(), 1000);
  EXPECT_EQ(ds.p(), 20);
  EXPECT_TRUE(ds.split.empty());
  EXPECT_EQ(ds.ids.front(), "s0");
  EXPECT_LT((ds.X_raw - truth.phi(ds.Z)).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((truth.U_true.transpose() * truth.U_true - Matrix::Identity(2, 2)).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Generate, NoiselessRankIsD) {
  auto c = base(2);
  c.d = 3;
  const auto [ds, truth] = generate(c);
  const Matrix Xc = ds.X_raw.rowwise() - column_mean(ds.X_raw).transpose();
  const ThinSvd sv = thin_svd(Xc, 0.0);
  EXPECT_LT(sv.D(3), 1e-10 * sv.D(0));
  EXPECT_GT(sv.D(2), 1e-3 * sv.D(0));
}

TEST(Generate, MonteCarloMomentsOfFeatures) {
  for (auto family : {FeatureFamily::Cosine, FeatureFamily::Legendre}) {
    auto c = base(3);
    c.n = 100000;
    c.d = 3;
    c.family = family;
    const auto [ds, truth] = generate(c);
    const Matrix F = truth.features(ds.Z);
    const double n = static_cast<double>(ds.n());
    EXPECT_LT(column_mean(F).cwiseAbs().maxCoeff(), 1e-2) << to_string(family);
    EXPECT_LT((F.transpose() * F / n - Matrix::Identity(3, 3)).cwiseAbs().maxCoeff(), 1e-2) << to_string(family);
    const Matrix P = truth.phi(ds.Z);
    const Vector mean = column_mean(P);
    const Matrix Pc = P.rowwise() - mean.transpose();
    for (Index j = 0; j < P.cols(); ++j) {
      const double se = std::sqrt(Pc.col(j).squaredNorm() / (n - 1) / n);
      EXPECT_LT(std::abs(mean(j)), 3 * se + 1e-15) << j;
    }
  }
}

TEST(Generate, TwoDimensionalFeaturesAreOrthonormal) {
  auto c = base(4);
  c.d = 4;
  c.space = ConceptSpace::rectangle(-1, 1, 0, 3);
  const auto [ds, truth] = generate(c);
  const Matrix grid = uniform_grid(c.space, 400);
  const Matrix F = truth.features(grid);
  EXPECT_LT(column_mean(F).cwiseAbs().maxCoeff(), 1e-2);
  EXPECT_LT((F.transpose() * F / static_cast<double>(grid.rows()) - Matrix::Identity(4, 4)).cwiseAbs().maxCoeff(), 2e-2);
  EXPECT_EQ(truth.orders.size(), 4u);
}

TEST(Generate, NuisanceIndependentOfConcept) {
  auto c = base(5);
  c.n = 20000;
  c.nuisance_rank = 3;
  c.nuisance_scale = 2.0;
  const auto [ds, truth] = generate(c);
  // Orthogonal overlap: V^T x recovers the scaled nuisance exactly.
  const Matrix xi = ds.X_raw * truth.V_nuisance;
  EXPECT_LT((truth.U_true.transpose() * truth.V_nuisance).cwiseAbs().maxCoeff(), 1e-10);
  const Matrix F = truth.features(ds.Z);
  const double bound = 3.0 / std::sqrt(static_cast<double>(c.n));
  for (Index k = 0; k < 2; ++k)
    for (Index j = 0; j < 3; ++j) {
      const Vector a = F.col(k).array() - F.col(k).mean(), b = xi.col(j).array() - xi.col(j).mean();
      EXPECT_LT(std::abs(a.dot(b) / (a.norm() * b.norm())), bound);
    }
}

TEST(Generate, DeterministicAndSeedSensitive) {
  const auto [a, ta] = generate(base(6));
  const auto [b, tb] = generate(base(6));
  const auto [c, tc] = generate(base(7));
  EXPECT_EQ(a.X_raw, b.X_raw);
  EXPECT_EQ(a.Z, b.Z);
  EXPECT_EQ(ta.U_true, tb.U_true);
  EXPECT_NE(a.Z, c.Z);
}

TEST(Generate, ConfigErrors) {
  auto c = base(1);
  c.d = 25;
  EXPECT_THROW(generate(c), ConfigError);
  c = base(1);
  c.nuisance_rank = 19;
  EXPECT_THROW(generate(c), ConfigError);
  c.overlap = NuisanceOverlap::General;
  EXPECT_NO_THROW(generate(c));
  c = base(1);
  c.noise_sd = -1;
  EXPECT_THROW(generate(c), ConfigError);
  c = base(1);
  c.signal_scales = {1.0};
  EXPECT_THROW(generate(c), ConfigError);
  EXPECT_THROW(parse_feature_family("fourier"), ConfigError);
  EXPECT_THROW(parse_nuisance_overlap("partial"), ConfigError);
  EXPECT_EQ(parse_feature_family("legendre"), FeatureFamily::Legendre);
}

TEST(Recovery, SelfComparisonIsExact) {
  auto c = base(8);
  c.d = 3;
  const auto [ds, truth] = generate(c);
  const Matrix grid = uniform_grid(c.space, 500);
  const Matrix mixed = truth.features(grid) * oracle::random_orthogonal(3, 2);
  const auto s = recovery_score(mixed, truth.U_true * oracle::random_orthogonal(3, 3), truth, grid);
  EXPECT_LT(s.feature_angle, 1e-8);
  EXPECT_LT(s.subspace_angle, 1e-8);
  for (double r : s.per_feature_r2) EXPECT_NEAR(r, 1.0, 1e-10);
}

TEST(Recovery, UnrelatedProbeIsNearOrthogonal) {
  int pass = 0;
  for (unsigned seed = 0; seed < 20; ++seed) {
    auto c = base(seed);
    c.p = 50;
    c.d = 3;
    const auto [ds, truth] = generate(c);
    const Matrix grid = uniform_grid(c.space, 500);
    const auto s = recovery_score(oracle::random_matrix(500, 3, seed), oracle::random_matrix(50, 3, seed + 50), truth, grid);
    pass += s.feature_angle > 1.0 && s.subspace_angle > 1.0;
  }
  EXPECT_GE(pass, 18);
}

TEST(Recovery, ImprovesAsNoiseDrops) {
  std::vector<double> mean_angle;
  for (double noise : {1.0, 0.3, 0.1, 0.0}) {
    double total = 0;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      auto c = base(seed);
      c.noise_sd = noise;
      const auto [ds0, truth] = generate(c);
      const auto ds = split(ds0, 0.5, 0);
      const auto basis = PenalizedBasis::bspline(c.space, 20).reparametrized(ds.Z_rows(Split::Train));
      const auto probe = fit_closed_form(center(ds, basis), basis, 2, 1.0, 1e-4);
      total += recovery_score(probe, truth, uniform_grid(c.space, 400)).feature_angle;
    }
    mean_angle.push_back(total / 5);
  }
  for (std::size_t i = 1; i < mean_angle.size(); ++i) EXPECT_LE(mean_angle[i], mean_angle[i - 1]);
}

TEST(Recovery, Errors) {
  const auto [ds, truth] = generate(base(1));
  const Matrix grid = uniform_grid(truth.space, 50);
  EXPECT_THROW(recovery_score(Matrix(50, 0), truth.U_true, truth, grid), DataError);
  EXPECT_THROW(recovery_score(Matrix::Ones(3, 2), truth.U_true, truth, grid.topRows(3)), DataError);
  EXPECT_THROW(recovery_score(Matrix::Ones(50, 2), truth.U_true, truth, grid), DataError);
  EXPECT_THROW(uniform_grid(truth.space, 1), ConfigError);
  EXPECT_EQ(uniform_grid(ConceptSpace::rectangle(0, 1, 0, 1), 5).rows(), 25);
}
