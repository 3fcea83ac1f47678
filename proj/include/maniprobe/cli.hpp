#pragma once

#include "maniprobe/dataset.hpp"
#include "maniprobe/probe.hpp"
#include "maniprobe/synthetic.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace maniprobe::cli {

enum ExitCode : int { kOk = 0, kConfigError = 1, kDataError = 2, kNumericalError = 3 };

/// Settings for `fit` and `sweep`. Loaded from JSON (unknown keys are
/// rejected) and then overridden by command-line flags.
struct RunConfig {
  std::vector<std::string> datasets;
  std::string format = "auto";  // auto | csv | binary
  std::optional<ConceptSpace> concept_space;  // default: data min/max
  std::vector<int> knots;                     // default: 280 (q = 1) or 40, 80 (q = 2)
  int degree = 3;
  FitMethod method = FitMethod::Als;
  std::optional<int> d;  // unset: automatic dimension selection
  int patience = 3;
  int max_d = 50;
  Criterion criterion = Criterion::Reml;
  LambdaBracket bracket;
  // closed_form: lambda_w, lambda_f. als: fixed per-iteration lambdas, no selection.
  std::optional<double> lambda_w;
  std::optional<double> lambda_f;
  int max_iter = 500;
  double tol = 1e-10;
  double train_fraction = 0.5;
  std::string stratify = "none";  // none | decade
  bool use_existing_split = false;
  std::uint64_t seed = 0;
  std::string output = "maniprobe_out";
  BoundsPolicy bounds_policy = BoundsPolicy::Reject;
  std::string layer;
  int workers = 0;  // 0: hardware concurrency, capped by MANIPROBE_THREADS
};

RunConfig parse_run_config(const nlohmann::json& j);
nlohmann::json to_json(const RunConfig& c);
void validate(const RunConfig& c);

struct SynthSettings {
  SyntheticConfig generator;
  std::optional<double> train_fraction;
  std::string format = "csv";
  std::string output = "synth_out";
};

SynthSettings parse_synth_config(const nlohmann::json& j);

/// Result of fitting one dataset: the artifact plus its report.
struct FitOutcome {
  ManifoldProbe probe;
  nlohmann::json report;
};

FitOutcome fit_dataset(const RunConfig& config, const std::string& dataset_path);

/// Long-format ranked R^2 rows for one report: file_id, rank, r2, positive.
std::string ranked_csv(const std::vector<nlohmann::json>& reports);

/// Inclusive lo:hi:step target list.
std::vector<double> parse_range(const std::string& text);

int run(int argc, char** argv);
int run(const std::vector<std::string>& args);

}  // namespace maniprobe::cli
