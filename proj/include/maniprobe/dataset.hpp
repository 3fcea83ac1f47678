#pragma once

#include "maniprobe/common.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace maniprobe {

class PenalizedBasis;

/// Bounded box of concept values, one closed interval per coordinate.
struct ConceptSpace {
  std::vector<double> lo;
  std::vector<double> hi;

  ConceptSpace() = default;
  ConceptSpace(std::vector<double> lo_, std::vector<double> hi_);

  static ConceptSpace interval(double lo, double hi) { return {{lo}, {hi}}; }
  static ConceptSpace rectangle(double lo1, double hi1, double lo2, double hi2) {
    return {{lo1, lo2}, {hi1, hi2}};
  }

  Index dim() const { return static_cast<Index>(lo.size()); }
  bool contains(const Eigen::Ref<const Eigen::RowVectorXd>& z) const;
  void validate() const;
};

enum class Split : std::uint8_t { Train = 0, Test = 1 };

/// Paired representation vectors and concept values.
///
/// `split` is empty until `split()` has been applied; an unsplit dataset is
/// treated as all-train by `center`.
struct ProbingDataset {
  Matrix X_raw;  // n x p
  Matrix Z;      // n x q
  std::vector<std::string> ids;
  std::vector<Split> split;

  Index n() const { return X_raw.rows(); }
  Index p() const { return X_raw.cols(); }
  Index q() const { return Z.cols(); }

  std::vector<Index> rows(Split which) const;
  Matrix X_rows(Split which) const;
  Matrix Z_rows(Split which) const;
};

/// Training-centred representation and basis matrices.
struct CenteredDesign {
  Matrix X;       // n_train x p
  Vector x_mean;  // p
  Matrix H;       // n_train x m
  Vector h_mean;  // m
  Matrix Z;       // n_train x q, uncentred, kept for downstream evaluation

  Index n() const { return X.rows(); }
};

enum class DatasetFormat { Csv, Binary };

/// Throws DataError listing offending rows (1-based data row numbers).
void validate_dataset(const ProbingDataset& ds, const ConceptSpace& space);

ProbingDataset load_dataset(const std::filesystem::path& path, DatasetFormat format,
                            const ConceptSpace& space);
/// Like load_dataset but without bounds checking; used when bounds are
/// derived from the data.
ProbingDataset load_dataset_unchecked(const std::filesystem::path& path, DatasetFormat format);

DatasetFormat format_from_path(const std::filesystem::path& path);

void save_csv(const ProbingDataset& ds, const std::filesystem::path& path);
ProbingDataset read_csv(const std::filesystem::path& path);

/// Binary dataset: a JSON manifest plus one MPB1 file per matrix, written
/// next to the manifest.
void save_binary(const ProbingDataset& ds, const std::filesystem::path& manifest_path);
ProbingDataset read_binary(const std::filesystem::path& manifest_path);

using StratumFn = std::function<std::int64_t(const Eigen::Ref<const Eigen::RowVectorXd>&)>;

/// Buckets the first concept coordinate by decade (floor(z / 10)).
std::int64_t decade_stratum(const Eigen::Ref<const Eigen::RowVectorXd>& z);

/// Deterministic random train/test assignment. With a stratum function each
/// stratum contributes round(fraction * size) training rows, clamped so both
/// sides of every stratum keep at least one row.
ProbingDataset split(const ProbingDataset& ds, double fraction_train, std::uint64_t seed,
                     const StratumFn& stratify_by = {});

/// Centres training rows with their own means. The basis is expected to be
/// reparametrized already.
CenteredDesign center(const ProbingDataset& ds, const PenalizedBasis& basis);

/// Column means by plain left-to-right summation.
Vector column_mean(const Matrix& m);

}  // namespace maniprobe
