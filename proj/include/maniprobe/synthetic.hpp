#pragma once

#include "maniprobe/common.hpp"
#include "maniprobe/dataset.hpp"
#include "maniprobe/probe.hpp"

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace maniprobe {

enum class FeatureFamily { Cosine, Legendre };
enum class NuisanceOverlap { Orthogonal, General };

std::string to_string(FeatureFamily f);
FeatureFamily parse_feature_family(const std::string& name);
std::string to_string(NuisanceOverlap o);
NuisanceOverlap parse_nuisance_overlap(const std::string& name);

struct SyntheticConfig {
  Index p = 20;
  Index d = 2;
  Index n = 1000;
  double noise_sd = 0.0;
  Index nuisance_rank = 0;
  NuisanceOverlap overlap = NuisanceOverlap::Orthogonal;
  std::uint64_t seed = 0;
  ConceptSpace space = ConceptSpace::interval(0.0, 1.0);
  FeatureFamily family = FeatureFamily::Cosine;
  // Per-feature amplitude s_k in x = sum_k u_k s_k f_k(z) + ...; empty means all 1.
  std::vector<double> signal_scales;
  double nuisance_scale = 1.0;
};

/// Known truth of a generated dataset. Features are orthonormal and mean-zero
/// under the uniform law on the concept space.
struct SyntheticGroundTruth {
  Matrix U_true;       // p x d, orthonormal columns
  Matrix V_nuisance;   // p x r
  Vector scales;       // d
  double noise_sd = 0.0;
  double nuisance_scale = 1.0;
  std::uint64_t seed = 0;
  FeatureFamily family = FeatureFamily::Cosine;
  ConceptSpace space;
  std::vector<std::array<int, 2>> orders;  // per-coordinate polynomial / frequency order

  Index d() const { return U_true.cols(); }
  Index p() const { return U_true.rows(); }
  /// n x d true feature values f*_k(z).
  Matrix features(const Matrix& Z) const;
  /// n x p manifold points sum_k u_k s_k f*_k(z).
  Matrix phi(const Matrix& Z) const;
};

/// Draws z uniformly on the concept space, independent nuisance xi ~ N(0, I_r)
/// and isotropic noise, and returns an unsplit dataset with its truth.
std::pair<ProbingDataset, SyntheticGroundTruth> generate(const SyntheticConfig& config);

struct RecoveryScore {
  double feature_angle = 0.0;
  double subspace_angle = 0.0;
  std::vector<double> per_feature_r2;
};

/// Principal-angle recovery metrics. Feature evaluations are column-centred
/// over Z_eval (features are only defined up to constants); subspaces are
/// compared as spans, never feature by feature. per_feature_r2[k] is the R^2
/// of predicting f*_k from the span of the fitted features.
RecoveryScore recovery_score(const Matrix& fitted_values, const Matrix& fitted_directions,
                             const SyntheticGroundTruth& truth, const Matrix& Z_eval);
RecoveryScore recovery_score(const ManifoldProbe& probe, const SyntheticGroundTruth& truth, const Matrix& Z_eval);

/// Regular grid with per_dim points per coordinate (per_dim^q rows).
Matrix uniform_grid(const ConceptSpace& space, Index per_dim);

}  // namespace maniprobe
