#include "maniprobe/dataset.hpp"

#include "maniprobe/basis.hpp"
#include "maniprobe/mpb.hpp"
#include "maniprobe/rng.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

namespace maniprobe {
namespace {

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    if (pos == std::string::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

double parse_double(const std::string& s, std::size_t row, std::size_t col) {
  double v = 0.0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last) {
    std::ostringstream msg;
    msg << "row " << row << ", column " << col + 1 << ": cannot parse number '" << s << "'";
    throw DataError(msg.str());
  }
  return v;
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

// Returns n such that header fields [first, first+n) are prefix1..prefixn.
Index count_prefixed(const std::vector<std::string>& fields, std::size_t first, char prefix) {
  Index n = 0;
  while (first + n < fields.size() && fields[first + n] == prefix + std::to_string(n + 1)) ++n;
  return n;
}

}  // namespace

ConceptSpace::ConceptSpace(std::vector<double> lo_, std::vector<double> hi_)
    : lo(std::move(lo_)), hi(std::move(hi_)) {
  validate();
}

void ConceptSpace::validate() const {
  if (lo.empty() || lo.size() != hi.size())
    throw ConfigError("concept space needs matching, non-empty lo/hi bounds");
  for (std::size_t j = 0; j < lo.size(); ++j)
    if (!(std::isfinite(lo[j]) && std::isfinite(hi[j]) && lo[j] < hi[j]))
      throw ConfigError("concept space coordinate " + std::to_string(j + 1) +
                        " must satisfy lo < hi");
}

bool ConceptSpace::contains(const Eigen::Ref<const Eigen::RowVectorXd>& z) const {
  if (z.size() != dim()) return false;
  for (Index j = 0; j < dim(); ++j)
    if (!(z(j) >= lo[j] && z(j) <= hi[j])) return false;
  return true;
}

std::vector<Index> ProbingDataset::rows(Split which) const {
  std::vector<Index> out;
  for (Index i = 0; i < n(); ++i) {
    const Split s = split.empty() ? Split::Train : split[static_cast<std::size_t>(i)];
    if (s == which) out.push_back(i);
  }
  return out;
}

Matrix ProbingDataset::X_rows(Split which) const { return X_raw(rows(which), Eigen::all); }

Matrix ProbingDataset::Z_rows(Split which) const { return Z(rows(which), Eigen::all); }

void validate_dataset(const ProbingDataset& ds, const ConceptSpace& space) {
  if (ds.n() < 2) throw DataError("dataset needs at least 2 rows");
  if (ds.Z.rows() != ds.n()) throw DataError("X and Z row counts differ");
  if (ds.q() != space.dim())
    throw DataError("dataset has " + std::to_string(ds.q()) + " concept columns, concept space has " +
                    std::to_string(space.dim()));
  if (!ds.ids.empty() && static_cast<Index>(ds.ids.size()) != ds.n())
    throw DataError("ids length differs from row count");
  if (!ds.split.empty() && static_cast<Index>(ds.split.size()) != ds.n())
    throw DataError("split length differs from row count");

  std::vector<Index> non_finite, out_of_bounds;
  for (Index i = 0; i < ds.n(); ++i) {
    if (!ds.X_raw.row(i).allFinite() || !ds.Z.row(i).allFinite())
      non_finite.push_back(i);
    else if (!space.contains(ds.Z.row(i)))
      out_of_bounds.push_back(i);
  }
  auto report = [](const char* what, const std::vector<Index>& rows) {
    std::ostringstream msg;
    msg << what << " in " << rows.size() << " row(s):";
    for (std::size_t k = 0; k < rows.size() && k < 20; ++k) msg << ' ' << rows[k] + 1;
    if (rows.size() > 20) msg << " ...";
    return msg.str();
  };
  if (!non_finite.empty()) throw DataError(report("non-finite values", non_finite));
  if (!out_of_bounds.empty())
    throw DataError(report("concept values outside bounds", out_of_bounds));
}

ProbingDataset read_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open: " + path.string());
  std::string line;
  if (!std::getline(is, line)) throw DataError("empty CSV: " + path.string());
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split_fields(line);
  if (header.empty() || header[0] != "id") throw DataError("malformed header: first column must be 'id'");
  const Index q = count_prefixed(header, 1, 'z');
  const Index p = count_prefixed(header, 1 + static_cast<std::size_t>(q), 'x');
  if (q < 1 || p < 1 || static_cast<std::size_t>(1 + q + p) != header.size())
    throw DataError("malformed header: expected id,z1[,z2..],x1,...,xp");

  std::vector<std::string> ids;
  std::vector<double> values;
  std::size_t row = 0;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    ++row;
    auto fields = split_fields(line);
    if (fields.size() != header.size())
      throw DataError("row " + std::to_string(row) + ": expected " + std::to_string(header.size()) +
                      " fields, found " + std::to_string(fields.size()));
    ids.push_back(fields[0]);
    for (std::size_t c = 1; c < fields.size(); ++c) values.push_back(parse_double(fields[c], row, c));
  }
  const auto n = static_cast<Index>(ids.size());
  ProbingDataset ds;
  ds.X_raw.resize(n, p);
  ds.Z.resize(n, q);
  for (Index i = 0; i < n; ++i) {
    const double* r = values.data() + i * (q + p);
    for (Index j = 0; j < q; ++j) ds.Z(i, j) = r[j];
    for (Index j = 0; j < p; ++j) ds.X_raw(i, j) = r[q + j];
  }
  ds.ids = std::move(ids);
  return ds;
}

void save_csv(const ProbingDataset& ds, const std::filesystem::path& path) {
  std::ostringstream os;
  os << "id";
  for (Index j = 0; j < ds.q(); ++j) os << ",z" << j + 1;
  for (Index j = 0; j < ds.p(); ++j) os << ",x" << j + 1;
  os << '\n';
  for (Index i = 0; i < ds.n(); ++i) {
    const std::string id = ds.ids.empty() ? std::to_string(i) : ds.ids[static_cast<std::size_t>(i)];
    if (id.find_first_of(",\n\r") != std::string::npos)
      throw DataError("id contains a separator: " + id);
    os << id;
    for (Index j = 0; j < ds.q(); ++j) os << ',' << format_double(ds.Z(i, j));
    for (Index j = 0; j < ds.p(); ++j) os << ',' << format_double(ds.X_raw(i, j));
    os << '\n';
  }
  mpb::write_file_atomic(path, os.str());
}

void save_binary(const ProbingDataset& ds, const std::filesystem::path& manifest_path) {
  const auto dir = manifest_path.parent_path();
  const std::string stem = manifest_path.stem().string();
  nlohmann::json manifest;
  manifest["format"] = "MPB1-dataset";
  manifest["n"] = ds.n();
  manifest["p"] = ds.p();
  manifest["q"] = ds.q();
  manifest["X"] = stem + ".x.mpb";
  manifest["Z"] = stem + ".z.mpb";
  mpb::write_matrix(dir / (stem + ".x.mpb"), ds.X_raw);
  mpb::write_matrix(dir / (stem + ".z.mpb"), ds.Z);
  if (!ds.ids.empty()) {
    std::string text;
    for (const auto& id : ds.ids) {
      if (id.find_first_of("\n\r") != std::string::npos) throw DataError("id contains a newline");
      text += id;
      text += '\n';
    }
    manifest["ids"] = stem + ".ids.txt";
    mpb::write_file_atomic(dir / (stem + ".ids.txt"), text);
  } else {
    manifest["ids"] = nullptr;
  }
  if (!ds.split.empty()) {
    Matrix s(ds.n(), 1);
    for (Index i = 0; i < ds.n(); ++i) s(i, 0) = ds.split[static_cast<std::size_t>(i)] == Split::Test ? 1.0 : 0.0;
    manifest["split"] = stem + ".split.mpb";
    mpb::write_matrix(dir / (stem + ".split.mpb"), s);
  } else {
    manifest["split"] = nullptr;
  }
  mpb::write_file_atomic(manifest_path, manifest.dump(2) + "\n");
}

ProbingDataset read_binary(const std::filesystem::path& manifest_path) {
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(mpb::read_file(manifest_path));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed dataset manifest: " + std::string(e.what()));
  }
  if (manifest.value("format", "") != "MPB1-dataset")
    throw DataError("manifest format must be 'MPB1-dataset'");
  const auto dir = manifest_path.parent_path();
  ProbingDataset ds;
  try {
    ds.X_raw = mpb::read_matrix(dir / manifest.at("X").get<std::string>());
    ds.Z = mpb::read_matrix(dir / manifest.at("Z").get<std::string>());
    if (manifest.contains("ids") && !manifest["ids"].is_null()) {
      std::istringstream is(mpb::read_file(dir / manifest["ids"].get<std::string>()));
      std::string line;
      while (std::getline(is, line)) ds.ids.push_back(line);
    }
    if (manifest.contains("split") && !manifest["split"].is_null()) {
      const Matrix s = mpb::read_matrix(dir / manifest["split"].get<std::string>());
      if (s.cols() != 1) throw DataError("split matrix must have one column");
      for (Index i = 0; i < s.rows(); ++i) {
        if (s(i, 0) != 0.0 && s(i, 0) != 1.0) throw DataError("split entries must be 0 (train) or 1 (test)");
        ds.split.push_back(s(i, 0) == 1.0 ? Split::Test : Split::Train);
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed dataset manifest: " + std::string(e.what()));
  }
  if (ds.Z.rows() != ds.X_raw.rows()) throw DataError("X and Z row counts differ");
  if (manifest.contains("p") && manifest["p"].get<Index>() != ds.p())
    throw DataError("manifest p disagrees with X columns");
  if (manifest.contains("q") && manifest["q"].get<Index>() != ds.q())
    throw DataError("manifest q disagrees with Z columns");
  return ds;
}

DatasetFormat format_from_path(const std::filesystem::path& path) {
  return path.extension() == ".json" ? DatasetFormat::Binary : DatasetFormat::Csv;
}

ProbingDataset load_dataset_unchecked(const std::filesystem::path& path, DatasetFormat format) {
  return format == DatasetFormat::Csv ? read_csv(path) : read_binary(path);
}

ProbingDataset load_dataset(const std::filesystem::path& path, DatasetFormat format,
                            const ConceptSpace& space) {
  auto ds = load_dataset_unchecked(path, format);
  validate_dataset(ds, space);
  return ds;
}

std::int64_t decade_stratum(const Eigen::Ref<const Eigen::RowVectorXd>& z) {
  return static_cast<std::int64_t>(std::floor(z(0) / 10.0));
}

ProbingDataset split(const ProbingDataset& ds, double fraction_train, std::uint64_t seed,
                     const StratumFn& stratify_by) {
  if (!(fraction_train > 0.0 && fraction_train < 1.0))
    throw ConfigError("fraction_train must lie in (0, 1)");
  std::map<std::int64_t, std::vector<Index>> strata;
  for (Index i = 0; i < ds.n(); ++i) strata[stratify_by ? stratify_by(ds.Z.row(i)) : 0].push_back(i);

  Rng rng(seed);
  ProbingDataset out = ds;
  out.split.assign(static_cast<std::size_t>(ds.n()), Split::Test);
  for (auto& [key, rows] : strata) {
    const auto size = static_cast<Index>(rows.size());
    if (size < 2)
      throw DataError("stratum " + std::to_string(key) + " has fewer than 2 rows");
    for (Index i = size - 1; i > 0; --i)
      std::swap(rows[static_cast<std::size_t>(i)],
                rows[rng.below(static_cast<std::uint64_t>(i + 1))]);
    const auto n_train = std::clamp<Index>(std::llround(fraction_train * static_cast<double>(size)), 1, size - 1);
    for (Index k = 0; k < n_train; ++k) out.split[static_cast<std::size_t>(rows[static_cast<std::size_t>(k)])] = Split::Train;
  }
  return out;
}

Vector column_mean(const Matrix& m) {
  Vector mean = Vector::Zero(m.cols());
  for (Index j = 0; j < m.cols(); ++j) {
    double s = 0.0;
    for (Index i = 0; i < m.rows(); ++i) s += m(i, j);
    mean(j) = s / static_cast<double>(m.rows());
  }
  return mean;
}

CenteredDesign center(const ProbingDataset& ds, const PenalizedBasis& basis) {
  const auto train = ds.rows(Split::Train);
  if (train.empty()) throw DataError("train split is empty");
  CenteredDesign design;
  design.Z = ds.Z(train, Eigen::all);
  const Matrix X = ds.X_raw(train, Eigen::all);
  design.x_mean = column_mean(X);
  design.X = X.rowwise() - design.x_mean.transpose();
  const Matrix H = basis.evaluate(design.Z);
  design.h_mean = column_mean(H);
  design.H = H.rowwise() - design.h_mean.transpose();
  return design;
}

}  // namespace maniprobe
