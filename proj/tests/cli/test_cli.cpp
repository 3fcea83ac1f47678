#include "maniprobe/cli.hpp"
#include "maniprobe/mpb.hpp"
#include "maniprobe/probe_io.hpp"
#include "maniprobe/rng.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

using namespace maniprobe;
using maniprobe::cli::run;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           (std::string("maniprobe_cli_") + ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const std::string& rel) const { return (path / rel).string(); }
};

std::vector<std::string> lines_of(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::string> out;
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

std::vector<std::string> cells(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  for (std::string c; std::getline(ss, c, ',');) out.push_back(c);
  return out;
}

void expect_same_tree(const fs::path& a, const fs::path& b) {
  std::size_t count = 0;
  for (const auto& e : fs::directory_iterator(a)) {
    ++count;
    ASSERT_TRUE(fs::exists(b / e.path().filename())) << e.path();
    EXPECT_EQ(mpb::read_file(e.path()), mpb::read_file(b / e.path().filename())) << e.path().filename();
  }
  EXPECT_GT(count, 0u);
}

}  // namespace

TEST(Cli, DefaultKnotsOneDimensional) {
  TempDir t;
  ASSERT_EQ(run({"synth", "--p", "8", "--d", "1", "--n", "400", "--noise-sd", "0.1", "--out", t / "s"}), 0);
  ASSERT_EQ(run({"fit", "--data", t / "s/data.csv", "--method", "closed_form", "--d", "1", "--lambda-w", "1",
                 "--lambda-f", "1e-3", "--out", t / "f"}),
            0);
  const auto probe = load_probe(t / "f/probe");
  EXPECT_EQ(probe.basis.knot_counts(), std::vector<int>{280});
  const auto report = read_json(t / "f/report.json");
  EXPECT_EQ(report["criterion"], "reml");
  EXPECT_EQ(report["config"]["fit"]["method"], "closed_form");
  EXPECT_EQ(report["q"], 1);
  EXPECT_EQ(report["artifact"], "probe");
}

TEST(Cli, DefaultMethodIsAlsWithReml) {
  TempDir t;
  ASSERT_EQ(run({"synth", "--p", "8", "--d", "1", "--n", "300", "--noise-sd", "0.1", "--out", t / "s"}), 0);
  ASSERT_EQ(run({"fit", "--data", t / "s/data.csv", "--d", "1", "--knots", "12", "--out", t / "f"}), 0);
  const auto report = read_json(t / "f/report.json");
  EXPECT_EQ(report["method"], "als");
  EXPECT_EQ(report["criterion"], "reml");
  EXPECT_TRUE(report["features"][0]["lambda_w_tilde"].is_number());
}

TEST(Cli, DefaultKnotsTwoDimensional) {
  TempDir t;
  ASSERT_EQ(run({"synth", "--p", "8", "--d", "2", "--n", "600", "--noise-sd", "0.1", "--lo", "0", "0", "--hi", "1",
                 "1", "--out", t / "s"}),
            0);
  ASSERT_EQ(run({"fit", "--data", t / "s/data.csv", "--method", "closed_form", "--d", "1", "--lambda-w", "1",
                 "--lambda-f", "1e-3", "--out", t / "f"}),
            0);
  EXPECT_EQ(load_probe(t / "f/probe").basis.knot_counts(), (std::vector<int>{40, 80}));
}

TEST(Cli, SameConfigAndSeedGiveIdenticalArtifacts) {
  TempDir t;
  ASSERT_EQ(run({"synth", "--p", "10", "--d", "2", "--n", "500", "--noise-sd", "0.3", "--seed", "4", "--out", t / "s"}),
            0);
  for (const char* out : {"a", "b"})
    ASSERT_EQ(run({"fit", "--data", t / "s/data.csv", "--d", "2", "--knots", "15", "--seed", "11", "--out", t / out}), 0);
  expect_same_tree(t.path / "a/probe", t.path / "b/probe");
  ASSERT_EQ(run({"fit", "--data", t / "s/data.csv", "--d", "2", "--knots", "15", "--seed", "12", "--out", t / "c"}), 0);
  EXPECT_NE(mpb::read_file(t.path / "a/probe/beta.mpb"), mpb::read_file(t.path / "c/probe/beta.mpb"));
}

TEST(Cli, ConfigFileAndFlagOverride) {
  TempDir t;
  ASSERT_EQ(run({"synth", "--p", "8", "--d", "2", "--n", "300", "--out", t / "s"}), 0);
  {
    std::ofstream(t.path / "run.json") << R"({"datasets": [")" << t / "s/data.csv"
                                       << R"("], "basis": {"knots": [12]}, "fit": {"method": "closed_form", "d": 2,
      "lambda_w": 1.0, "lambda_f": 0.001}, "seed": 3})";
  }
  ASSERT_EQ(run({"fit", "--config", t / "run.json", "--out", t / "f"}), 0);
  EXPECT_EQ(load_probe(t / "f/probe").basis.knot_counts(), std::vector<int>{12});
  ASSERT_EQ(run({"fit", "--config", t / "run.json", "--knots", "14", "--out", t / "g"}), 0);
  EXPECT_EQ(load_probe(t / "g/probe").basis.knot_counts(), std::vector<int>{14});
  EXPECT_EQ(read_json(t / "g/report.json")["seed"], 3);
}

TEST(Cli, ExitCodes) {
  TempDir t;
  EXPECT_EQ(run({"fit", "--data", t / "missing.csv", "--d", "1", "--out", t / "f"}), 2);
  {
    std::ofstream(t.path / "bad.json") << R"({"datasets": [], "colour": 1})";
  }
  EXPECT_EQ(run({"fit", "--config", t / "bad.json"}), 1);
  {
    std::ofstream(t.path / "nested.json") << R"({"fit": {"method": "als", "lr": 0.1}})";
  }
  EXPECT_EQ(run({"fit", "--config", t / "nested.json"}), 1);
  EXPECT_EQ(run({"fit", "--bogus-flag"}), 1);
  EXPECT_EQ(run({}), 1);
  EXPECT_EQ(run({"fit", "--data", "x.csv", "--d", "1", "--auto-dim"}), 1);
  EXPECT_EQ(run({"fit", "--data", "x.csv", "--method", "closed_form"}), 1);
  EXPECT_EQ(run({"synth", "--p", "5", "--d", "9", "--out", t / "s"}), 1);

  ASSERT_EQ(run({"synth", "--p", "8", "--d", "1", "--n", "300", "--lo", "1950", "--hi", "2020", "--out", t / "s"}), 0);
  ASSERT_EQ(run({"fit", "--data", t / "s/data.csv", "--method", "closed_form", "--d", "1", "--lambda-w", "1",
                 "--lambda-f", "1e-3", "--knots", "12", "--concept-lo", "1950", "--concept-hi", "2020", "--out",
                 t / "f"}),
            0);
  EXPECT_EQ(run({"steer", "--probe", t / "f/probe", "--range", "1950:2020", "--out", t / "st"}), 1);
  EXPECT_EQ(run({"steer", "--probe", t / "f/probe", "--range", "2020:1950:1", "--out", t / "st"}), 1);
  EXPECT_EQ(run({"steer", "--probe", t / "f/probe", "--targets", "2030", "--out", t / "st"}), 2);
  EXPECT_EQ(run({"steer", "--probe", t / "missing", "--targets", "2000", "--out", t / "st"}), 2);
  EXPECT_EQ(run({"varimax", "--probe", t / "f/probe", "--top", "3", "--out", t / "v"}), 1);
  EXPECT_EQ(run({"fit", "--data", t / "s/data.csv", "--d", "1", "--knots", "12", "--concept-lo", "1960",
                 "--concept-hi", "2020", "--out", t / "g"}),
            2);

  ASSERT_EQ(run({"synth", "--p", "9", "--d", "1", "--n", "100", "--out", t / "wide"}), 0);
  EXPECT_EQ(run({"eval", "--probe", t / "f/probe", "--data", t / "wide/data.csv", "--out", t / "e.json"}), 2);
}

TEST(Cli, ConstantConceptWithExplicitBoundsIsNumerical) {
  TempDir t;
  ProbingDataset ds;
  ds.X_raw = Matrix::Random(40, 4);
  ds.Z = Matrix::Constant(40, 1, 0.5);
  for (int i = 0; i < 40; ++i) ds.ids.push_back("r" + std::to_string(i));
  save_csv(ds, t.path / "flat.csv");
  EXPECT_EQ(run({"fit", "--data", t / "flat.csv", "--d", "1", "--knots", "8", "--out", t / "f"}), 2);
  EXPECT_EQ(run({"fit", "--data", t / "flat.csv", "--d", "1", "--knots", "8", "--concept-lo", "0", "--concept-hi",
                 "1", "--out", t / "f"}),
            3);
}

TEST(Cli, EvalOnNoiselessTrainingRows) {
  TempDir t;
  ASSERT_EQ(run({"synth", "--p", "20", "--d", "2", "--n", "2000", "--noise-sd", "0", "--scales", "2", "1",
                 "--train-fraction", "0.5", "--format", "binary", "--out", t / "s"}),
            0);
  ASSERT_EQ(run({"fit", "--data", t / "s/data.json", "--use-existing-split", "--method", "closed_form", "--d", "2",
                 "--lambda-w", "1e-8", "--lambda-f", "1e-8", "--knots", "40", "--out", t / "f"}),
            0);
  ASSERT_EQ(run({"eval", "--probe", t / "f/probe", "--data", t / "s/data.json", "--rows", "train", "--out",
                 t / "e.json"}),
            0);
  const auto e = read_json(t / "e.json");
  EXPECT_EQ(e["d"], 2);
  EXPECT_EQ(e["rows"], "train");
  for (const auto& f : e["features"]) EXPECT_GT(f["r2"].get<double>(), 0.999);
  const auto ranked = e["ranked_r2"].get<std::vector<double>>();
  EXPECT_TRUE(std::is_sorted(ranked.rbegin(), ranked.rend()));
}

TEST(Cli, EvalAgainstPermutedTargetsIsNull) {
  TempDir t;
  ASSERT_EQ(run({"synth", "--p", "20", "--d", "2", "--n", "1000", "--noise-sd", "0.2", "--out", t / "s"}), 0);
  ASSERT_EQ(run({"fit", "--data", t / "s/data.csv", "--method", "closed_form", "--d", "2", "--lambda-w", "1",
                 "--lambda-f", "1e-3", "--knots", "20", "--out", t / "f"}),
            0);
  const ProbingDataset ds = read_csv(t.path / "s/data.csv");
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::vector<Index> perm(static_cast<std::size_t>(ds.n()));
    std::iota(perm.begin(), perm.end(), 0);
    Rng rng(seed);
    for (std::size_t i = perm.size() - 1; i > 0; --i) std::swap(perm[i], perm[rng.below(i + 1)]);
    ProbingDataset shuffled = ds;
    for (Index i = 0; i < ds.n(); ++i) shuffled.Z.row(i) = ds.Z.row(perm[static_cast<std::size_t>(i)]);
    save_csv(shuffled, t.path / "perm.csv");
    ASSERT_EQ(run({"eval", "--probe", t / "f/probe", "--data", t / "perm.csv", "--out", t / "e.json"}), 0);
    for (const auto& f : read_json(t / "e.json")["features"]) EXPECT_LT(f["r2"].get<double>(), 0.01) << seed;
  }
}

TEST(Cli, EvalOfEmptyProbeIsEmptyReport) {
  TempDir t;
  ASSERT_EQ(run({"synth", "--p", "8", "--d", "1", "--n", "200", "--out", t / "s"}), 0);
  ASSERT_EQ(run({"fit", "--data", t / "s/data.csv", "--method", "closed_form", "--d", "1", "--lambda-w", "1",
                 "--lambda-f", "1e-3", "--knots", "10", "--out", t / "f"}),
            0);
  auto probe = load_probe(t / "f/probe");
  probe.features.clear();
  save_probe(probe, t.path / "empty");
  ASSERT_EQ(run({"eval", "--probe", t / "empty", "--data", t / "s/data.csv", "--out", t / "e.json"}), 0);
  const auto e = read_json(t / "e.json");
  EXPECT_EQ(e["d"], 0);
  EXPECT_TRUE(e["features"].empty());
  EXPECT_TRUE(e["ranked_r2"].empty());
}

TEST(Cli, SteerRangeMatchesLibrary) {
  TempDir t;
  ASSERT_EQ(run({"synth", "--p", "12", "--d", "2", "--n", "500", "--lo", "1950", "--hi", "2020", "--out", t / "s"}), 0);
  ASSERT_EQ(run({"fit", "--data", t / "s/data.csv", "--method", "closed_form", "--d", "2", "--lambda-w", "1",
                 "--lambda-f", "1e-3", "--knots", "20", "--concept-lo", "1950", "--concept-hi", "2020", "--layer",
                 "l5", "--out", t / "f"}),
            0);
  ASSERT_EQ(run({"steer", "--probe", t / "f/probe", "--range", "1950:2020:1", "--layer", "l5", "--out", t / "st"}), 0);
  const auto s = load_steering(t.path / "st");
  ASSERT_EQ(s.vectors.rows(), 71);
  EXPECT_EQ(s.alpha, 100.0);
  EXPECT_EQ(s.layer, "l5");
  const auto probe = load_probe(t / "f/probe");
  for (Index i = 0; i < 71; ++i) {
    EXPECT_EQ(s.targets(i, 0), 1950.0 + static_cast<double>(i));
    EXPECT_EQ(Vector(s.vectors.row(i).transpose()), steering_vector(probe, s.targets.row(i)));
  }
  ASSERT_EQ(run({"steer", "--probe", t / "f/probe", "--targets", "1960", "2000", "--alpha", "0", "--out", t / "z"}), 0);
  const auto z = load_steering(t.path / "z");
  EXPECT_EQ(z.vectors.rows(), 2);
  EXPECT_EQ(z.vectors.cwiseAbs().maxCoeff(), 0.0);
  ASSERT_EQ(run({"steer", "--probe", t / "f/probe", "--targets", "1960", "--alpha", "3", "--out", t / "a3"}), 0);
  const Vector a3 = load_steering(t.path / "a3").vectors.row(0).transpose();
  EXPECT_EQ(a3, steering_vector(probe, s.targets.row(10), 3.0));
  EXPECT_LT((a3 - 0.03 * Vector(s.vectors.row(10).transpose())).cwiseAbs().maxCoeff(), 1e-13 * a3.norm());
}

TEST(Cli, VarimaxTopFiveAndTopOne) {
  TempDir t;
  ASSERT_EQ(run({"synth", "--p", "20", "--d", "5", "--n", "1000", "--noise-sd", "0.2", "--out", t / "s"}), 0);
  ASSERT_EQ(run({"fit", "--data", t / "s/data.csv", "--method", "closed_form", "--d", "6", "--lambda-w", "1",
                 "--lambda-f", "1e-4", "--knots", "20", "--out", t / "f"}),
            0);
  ASSERT_EQ(run({"varimax", "--probe", t / "f/probe", "--out", t / "v"}), 0);
  const auto rows = lines_of(t.path / "v/rotated_features.csv");
  ASSERT_FALSE(rows.empty());
  EXPECT_EQ(cells(rows.front()).size(), 5u);
  EXPECT_EQ(cells(rows.back()).size(), 5u);
  const auto report = read_json(t / "v/varimax.json");
  EXPECT_EQ(report["k_top"], 5);
  EXPECT_EQ(load_probe(t / "v/probe").meta.rotated_top, 5);

  ASSERT_EQ(run({"varimax", "--probe", t / "f/probe", "--top", "1", "--out", t / "v1"}), 0);
  EXPECT_EQ(cells(lines_of(t.path / "v1/rotated_features.csv").front()).size(), 1u);
  const auto orig = load_probe(t / "f/probe");
  const auto one = load_probe(t / "v1/probe");
  ASSERT_EQ(one.d(), orig.d());
  for (Index k = 0; k < orig.d(); ++k) {
    const auto &a = orig.features[static_cast<std::size_t>(k)], &b = one.features[static_cast<std::size_t>(k)];
    const double s = a.beta.dot(b.beta) < 0 ? -1.0 : 1.0;
    EXPECT_LT((a.beta - s * b.beta).cwiseAbs().maxCoeff(), 1e-12) << k;
    EXPECT_LT((a.w - s * b.w).cwiseAbs().maxCoeff(), 1e-12) << k;
  }
}

TEST(Cli, SweepRanksEveryFileDeterministically) {
  TempDir t;
  for (const char* layer : {"layer1", "layer2", "layer3"}) {
    const std::string seed = std::to_string(layer[5] - '0');
    ASSERT_EQ(run({"synth", "--p", "10", "--d", "2", "--n", "400", "--noise-sd", "0.3", "--seed", seed, "--out",
                   t / layer}),
              0);
    fs::rename(t.path / layer / "data.csv", t.path / (std::string(layer) + ".csv"));
  }
  const std::vector<std::string> base = {"sweep",         "--data", t / "layer1.csv", t / "layer2.csv", t / "layer3.csv",
                                         "--method",      "closed_form", "--d", "3", "--lambda-w", "1",
                                         "--lambda-f",    "1e-3",   "--knots", "12"};
  auto with = [&](std::vector<std::string> extra) {
    auto a = base;
    a.insert(a.end(), extra.begin(), extra.end());
    return a;
  };
  ASSERT_EQ(run(with({"--workers", "1", "--out", t / "w1"})), 0);
  ASSERT_EQ(run(with({"--workers", "3", "--out", t / "w3"})), 0);
  EXPECT_EQ(mpb::read_file(t.path / "w1/ranked_r2.csv"), mpb::read_file(t.path / "w3/ranked_r2.csv"));
  expect_same_tree(t.path / "w1/layer2/probe", t.path / "w3/layer2/probe");

  const auto rows = lines_of(t.path / "w1/ranked_r2.csv");
  ASSERT_EQ(rows.size(), 1u + 3 * 3);
  EXPECT_EQ(rows.front(), "file_id,rank,r2,positive");
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto c = cells(rows[i]);
    ASSERT_EQ(c.size(), 4u);
    EXPECT_EQ(c[0], "layer" + std::to_string((i - 1) / 3 + 1));
    EXPECT_EQ(c[1], std::to_string((i - 1) % 3 + 1));
    const double r = std::stod(c[2]);
    EXPECT_LE(r, 1.0);
    EXPECT_EQ(c[3], r > 0 ? "1" : "0");
    if ((i - 1) % 3) EXPECT_LE(r, std::stod(cells(rows[i - 1])[2]));
  }
  const auto report = read_json(t / "w1/report.json");
  EXPECT_EQ(report["files"].size(), 3u);
  EXPECT_EQ(report["files"][1]["artifact"], "layer2/probe");
}

TEST(Cli, AutoDimReportsInformativeCount) {
  TempDir t;
  ASSERT_EQ(run({"synth", "--p", "20", "--d", "2", "--n", "1500", "--noise-sd", "0.1", "--scales", "3", "2", "--out",
                 t / "s"}),
            0);
  ASSERT_EQ(run({"fit", "--data", t / "s/data.csv", "--auto-dim", "--knots", "20", "--max-d", "8", "--out", t / "f"}),
            0);
  const auto report = read_json(t / "f/report.json");
  EXPECT_TRUE(report["auto_dim"].get<bool>());
  EXPECT_EQ(report["informative"], 2);
  EXPECT_LE(report["d"].get<int>(), 8);
}

TEST(Cli, SynthWritesDatasetAndTruth) {
  TempDir t;
  ASSERT_EQ(run({"synth", "--p", "7", "--d", "2", "--n", "50", "--family", "legendre", "--seed", "9", "--out", t / "s"}),
            0);
  const auto ds = read_csv(t.path / "s/data.csv");
  EXPECT_EQ(ds.n(), 50);
  EXPECT_EQ(ds.p(), 7);
  const auto truth = load_truth(t.path / "s/truth");
  EXPECT_EQ(truth.family, FeatureFamily::Legendre);
  EXPECT_EQ(truth.U_true.cols(), 2);
  SyntheticConfig c;
  c.p = 7;
  c.d = 2;
  c.n = 50;
  c.family = FeatureFamily::Legendre;
  c.seed = 9;
  EXPECT_EQ(generate(c).second.U_true, truth.U_true);
  ASSERT_EQ(run({"synth", "--p", "7", "--d", "2", "--n", "50", "--train-fraction", "0.5", "--format", "binary",
                 "--out", t / "b"}),
            0);
  EXPECT_EQ(read_binary(t.path / "b/data.json").split.size(), 50u);
}
