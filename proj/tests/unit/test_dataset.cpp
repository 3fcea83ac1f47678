#include "maniprobe/basis.hpp"
#include "maniprobe/dataset.hpp"
#include "maniprobe/mpb.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>

using namespace maniprobe;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "maniprobe_unit" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

ProbingDataset random_dataset(Index n, Index p, Index q, unsigned seed, double lo = 0.0, double hi = 1.0) {
  ProbingDataset ds;
  ds.X_raw = oracle::random_matrix(n, p, seed);
  ds.Z = (oracle::random_matrix(n, q, seed + 1).array().tanh() * 0.5 + 0.5) * (hi - lo) + lo;
  for (Index i = 0; i < n; ++i) ds.ids.push_back("row" + std::to_string(i));
  return ds;
}

void write(const fs::path& p, const std::string& s) { std::ofstream(p) << s; }

}  // namespace

TEST(Dataset, CsvRoundTripIsBitExact) {
  const auto dir = scratch("csv_rt");
  ProbingDataset ds;
  ds.X_raw.resize(3, 2);
  ds.X_raw << 0.1, -2.5e-300, 1.0 / 3.0, 7.0, -0.0, 123456789.123456789;
  ds.Z.resize(3, 1);
  ds.Z << 1950.25, 2001.0 / 3.0, 2019.999999999;
  ds.ids = {"a", "b", "c"};
  save_csv(ds, dir / "d.csv");
  const auto back = read_csv(dir / "d.csv");
  ASSERT_EQ(back.X_raw.rows(), 3);
  for (Index i = 0; i < 3; ++i) {
    for (Index j = 0; j < 2; ++j) EXPECT_EQ(std::bit_cast<std::uint64_t>(back.X_raw(i, j)), std::bit_cast<std::uint64_t>(ds.X_raw(i, j)));
    EXPECT_EQ(back.Z(i, 0), ds.Z(i, 0));
  }
  EXPECT_EQ(back.ids, ds.ids);
}

TEST(Dataset, OutOfBoundsRowIsRejectedWithItsIndex) {
  const auto dir = scratch("oob");
  write(dir / "d.csv", "id,z1,x1,x2\na,1960,0,1\nb,1949.0,1,2\nc,2020,3,4\n");
  try {
    load_dataset(dir / "d.csv", DatasetFormat::Csv, ConceptSpace::interval(1950, 2020));
    FAIL() << "expected rejection";
  } catch (const DataError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("outside bounds"), std::string::npos) << msg;
    EXPECT_NE(msg.find(": 2"), std::string::npos) << msg;
  }
}

TEST(Dataset, BinaryMatchesCsvFor1000Rows) {
  const auto dir = scratch("dual");
  const auto ds = random_dataset(1000, 7, 2, 11);
  save_csv(ds, dir / "d.csv");
  save_binary(ds, dir / "d.json");
  const auto a = load_dataset(dir / "d.csv", DatasetFormat::Csv, ConceptSpace::rectangle(0, 1, 0, 1));
  const auto b = load_dataset(dir / "d.json", format_from_path(dir / "d.json"), ConceptSpace::rectangle(0, 1, 0, 1));
  EXPECT_LE((a.X_raw - b.X_raw).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LE((a.Z - b.Z).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_EQ(a.ids, b.ids);
}

TEST(Dataset, BinaryLoadSaveLoadIsIdentity) {
  const auto dir = scratch("bin_rt");
  auto ds = split(random_dataset(50, 4, 1, 3), 0.5, 9);
  save_binary(ds, dir / "a.json");
  const auto once = read_binary(dir / "a.json");
  save_binary(once, dir / "b.json");
  const auto twice = read_binary(dir / "b.json");
  EXPECT_EQ(mpb::read_file(dir / "a.x.mpb"), mpb::read_file(dir / "b.x.mpb"));
  EXPECT_EQ(mpb::read_file(dir / "a.z.mpb"), mpb::read_file(dir / "b.z.mpb"));
  EXPECT_TRUE(twice.X_raw == ds.X_raw);
  EXPECT_TRUE(twice.Z == ds.Z);
  EXPECT_EQ(twice.split, ds.split);
  EXPECT_EQ(twice.ids, ds.ids);
}

TEST(Dataset, MalformedFilesAreRejected) {
  const auto dir = scratch("bad");
  write(dir / "h.csv", "name,z1,x1\na,1,2\n");
  EXPECT_THROW(read_csv(dir / "h.csv"), DataError);
  write(dir / "h2.csv", "id,z1,x2\na,1,2\n");
  EXPECT_THROW(read_csv(dir / "h2.csv"), DataError);
  write(dir / "r.csv", "id,z1,x1,x2\na,0.5,1,2\nb,0.5,1\n");
  EXPECT_THROW(read_csv(dir / "r.csv"), DataError);
  write(dir / "n.csv", "id,z1,x1\na,0.5,nan\nb,0.6,1\n");
  EXPECT_THROW(load_dataset(dir / "n.csv", DatasetFormat::Csv, ConceptSpace::interval(0, 1)), DataError);
  write(dir / "t.csv", "id,z1,x1\na,0.5,1e\nb,0.6,1\n");
  EXPECT_THROW(read_csv(dir / "t.csv"), DataError);
  write(dir / "one.csv", "id,z1,x1\na,0.5,1\n");
  EXPECT_THROW(load_dataset(dir / "one.csv", DatasetFormat::Csv, ConceptSpace::interval(0, 1)), DataError);
  EXPECT_THROW(read_csv(dir / "missing.csv"), DataError);
  EXPECT_THROW(ConceptSpace::interval(1.0, 1.0), ConfigError);
}

TEST(Split, LargeSplit) {
  ProbingDataset ds;
  ds.X_raw = Matrix::Zero(29503, 1);
  ds.Z = Matrix::Zero(29503, 1);
  const auto s = split(ds, 0.5, 1);
  const auto n_train = s.rows(Split::Train).size();
  EXPECT_TRUE(n_train == 14751 || n_train == 14752) << n_train;
}

TEST(Split, SmallestCase) {
  const auto s = split(random_dataset(2, 1, 1, 5), 0.5, 0);
  EXPECT_EQ(s.rows(Split::Train).size(), 1u);
  EXPECT_EQ(s.rows(Split::Test).size(), 1u);
}

TEST(Split, DeterministicPartition) {
  const auto ds = random_dataset(101, 2, 1, 8);
  const auto a = split(ds, 0.3, 42), b = split(ds, 0.3, 42), c = split(ds, 0.3, 43);
  EXPECT_EQ(a.split, b.split);
  EXPECT_NE(a.split, c.split);
  const auto tr = a.rows(Split::Train), te = a.rows(Split::Test);
  std::set<Index> all(tr.begin(), tr.end());
  all.insert(te.begin(), te.end());
  EXPECT_EQ(all.size(), 101u);
  EXPECT_EQ(tr.size() + te.size(), 101u);
}

TEST(Split, StratifiedByDecadeKeepsPerStratumCounts) {
  ProbingDataset ds;
  const Index n = 7 * 37;
  ds.X_raw = oracle::random_matrix(n, 2, 4);
  ds.Z.resize(n, 1);
  for (Index i = 0; i < n; ++i) ds.Z(i, 0) = 1950.0 + static_cast<double>(i % 7) * 10.0 + 0.5;
  const auto s = split(ds, 0.5, 17, decade_stratum);
  for (int dec = 0; dec < 7; ++dec) {
    Index tr = 0, total = 0;
    for (Index i = 0; i < n; ++i)
      if (i % 7 == dec) {
        ++total;
        tr += s.split[static_cast<std::size_t>(i)] == Split::Train;
      }
    EXPECT_LE(std::abs(static_cast<double>(tr) - 0.5 * static_cast<double>(total)), 1.0);
  }
}

TEST(Split, Errors) {
  auto ds = random_dataset(10, 1, 1, 2);
  EXPECT_THROW(split(ds, 0.0, 1), ConfigError);
  EXPECT_THROW(split(ds, 1.0, 1), ConfigError);
  ds.Z(0, 0) = 500.0;  // lone row in its own decade
  EXPECT_THROW(split(ds, 0.5, 1, decade_stratum), DataError);
}

TEST(Center, ConstantDataGivesZeroMatrix) {
  ProbingDataset ds;
  ds.X_raw = Matrix::Ones(30, 4) * 2.5;
  ds.Z.resize(30, 1);
  for (Index i = 0; i < 30; ++i) ds.Z(i, 0) = i / 29.0;
  const auto basis = PenalizedBasis::bspline(ConceptSpace::interval(0, 1), 6).reparametrized(ds.Z);
  const auto c = center(ds, basis);
  EXPECT_EQ(c.X.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Center, MeansMatchNaiveOracleAndExcludeTestRows) {
  auto ds = split(random_dataset(200, 5, 1, 21), 0.5, 3);
  ds.X_raw.array() += 1000.0;
  const auto basis = PenalizedBasis::bspline(ConceptSpace::interval(0, 1), 8).reparametrized(ds.Z_rows(Split::Train));
  const auto c = center(ds, basis);
  const auto tr = ds.rows(Split::Train);
  ASSERT_EQ(c.n(), static_cast<Index>(tr.size()));
  for (Index j = 0; j < ds.p(); ++j) {
    double s = 0.0;
    for (Index i : tr) s += ds.X_raw(i, j);
    EXPECT_NEAR(c.x_mean(j), s / static_cast<double>(tr.size()), 1e-14 * 1000.0);
    EXPECT_LT(std::abs(c.X.col(j).mean()), 1e-10);
  }
  EXPECT_LT(c.H.colwise().sum().cwiseAbs().maxCoeff(), 1e-8 * static_cast<double>(c.n()) * c.H.cwiseAbs().maxCoeff());
}

TEST(Center, IsIdempotent) {
  const Matrix X = oracle::random_matrix(40, 3, 9).array() + 5.0;
  const Matrix once = X.rowwise() - column_mean(X).transpose();
  const Matrix twice = once.rowwise() - column_mean(once).transpose();
  EXPECT_LT((once - twice).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Center, EmptyTrainSplitIsAnError) {
  auto ds = random_dataset(10, 2, 1, 1);
  ds.split.assign(10, Split::Test);
  const auto basis = PenalizedBasis::bspline(ConceptSpace::interval(0, 1), 5).reparametrized(ds.Z);
  EXPECT_THROW(center(ds, basis), DataError);
}
