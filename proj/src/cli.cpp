#include "maniprobe/cli.hpp"

#include "maniprobe/mpb.hpp"
#include "maniprobe/probe_io.hpp"
#include "maniprobe/rotation.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <functional>
#include <iostream>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

namespace maniprobe::cli {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string num(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

void reject_unknown(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError("config: '" + where + "' must be an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    const bool ok = std::any_of(allowed.begin(), allowed.end(), [&](const char* a) { return it.key() == a; });
    if (!ok) throw ConfigError("config: unknown key '" + (where.empty() ? "" : where + ".") + it.key() + "'");
  }
}

template <typename T>
T as(const json& j, const std::string& key) {
  try {
    return j.get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config: field '" + key + "' has the wrong type");
  }
}

template <typename T>
void read_into(const json& obj, const char* key, T& out, const std::string& where) {
  if (obj.contains(key)) out = as<T>(obj.at(key), where.empty() ? key : where + "." + key);
}

template <typename T>
void read_optional(const json& obj, const char* key, std::optional<T>& out, const std::string& where) {
  if (!obj.contains(key)) return;
  if (obj.at(key).is_null())
    out.reset();
  else
    out = as<T>(obj.at(key), where.empty() ? key : where + "." + key);
}

BoundsPolicy parse_bounds_policy(const std::string& s) {
  if (s == "reject") return BoundsPolicy::Reject;
  if (s == "clamp") return BoundsPolicy::Clamp;
  throw ConfigError("unknown bounds policy '" + s + "' (expected reject or clamp)");
}

std::string policy_name(BoundsPolicy p) { return p == BoundsPolicy::Clamp ? "clamp" : "reject"; }

ConceptSpace space_from_json(const json& j) {
  reject_unknown(j, {"lo", "hi"}, "concept_space");
  try {
    return ConceptSpace(as<std::vector<double>>(j.at("lo"), "concept_space.lo"),
                        as<std::vector<double>>(j.at("hi"), "concept_space.hi"));
  } catch (const json::exception&) {
    throw ConfigError("config: concept_space needs lo and hi");
  }
}

ConceptSpace data_bounds(const Matrix& Z) {
  std::vector<double> lo, hi;
  for (Index j = 0; j < Z.cols(); ++j) {
    lo.push_back(Z.col(j).minCoeff());
    hi.push_back(Z.col(j).maxCoeff());
    if (!(lo.back() < hi.back()))
      throw DataError("concept coordinate " + std::to_string(j + 1) + " is constant; pass concept bounds explicitly");
  }
  return ConceptSpace(lo, hi);
}

DatasetFormat resolve_format(const std::string& fmt, const std::string& path) {
  if (fmt == "csv") return DatasetFormat::Csv;
  if (fmt == "binary") return DatasetFormat::Binary;
  return format_from_path(path);
}

std::string file_id_of(const std::string& path) { return fs::path(path).stem().string(); }

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::vector<double> ranked(std::vector<double> v) {
  std::sort(v.begin(), v.end(), std::greater<>());
  return v;
}

json feature_report(const FittedFeature& f, Index k) {
  return {{"index", k + 1},
          {"nu", f.nu},
          {"lambda_w", f.lambda_w},
          {"lambda_f", f.lambda_f},
          {"lambda_w_tilde", optional_json(f.lambda_w_tilde)},
          {"lambda_f_tilde", optional_json(f.lambda_f_tilde)},
          {"iterations", f.iterations},
          {"converged", f.converged}};
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  mpb::write_file_atomic(path, text);
}

void write_report(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_json_atomic(path, j);
}

Matrix parse_targets(const std::vector<std::string>& items, Index q) {
  Matrix out(static_cast<Index>(items.size()), q);
  for (std::size_t i = 0; i < items.size(); ++i) {
    std::vector<double> vals;
    std::stringstream ss(items[i]);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      double v = 0.0;
      auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
      if (res.ec != std::errc() || res.ptr != tok.data() + tok.size() || !std::isfinite(v))
        throw ConfigError("steer: malformed target '" + items[i] + "'");
      vals.push_back(v);
    }
    if (static_cast<Index>(vals.size()) != q)
      throw ConfigError("steer: target '" + items[i] + "' needs " + std::to_string(q) + " coordinates");
    for (Index j = 0; j < q; ++j) out(static_cast<Index>(i), j) = vals[static_cast<std::size_t>(j)];
  }
  return out;
}

unsigned worker_count(int configured, std::size_t jobs) {
  unsigned n = configured > 0 ? static_cast<unsigned>(configured) : std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("MANIPROBE_THREADS")) {
    char* end = nullptr;
    const long cap = std::strtol(env, &end, 10);
    if (end == env || *end != '\0' || cap < 1) throw ConfigError("MANIPROBE_THREADS must be a positive integer");
    n = std::min(n, static_cast<unsigned>(cap));
  }
  return std::max(1u, std::min<unsigned>(n, static_cast<unsigned>(std::max<std::size_t>(jobs, 1))));
}

// ---------------------------------------------------------------------------
// Flag plumbing

struct RunFlags {
  std::optional<std::string> config;
  std::vector<std::string> data;
  std::optional<std::string> format, out, method, criterion, stratify, bounds_policy, layer;
  std::optional<int> d, patience, max_d, degree, max_iter, workers;
  std::vector<int> knots;
  std::optional<double> lambda_w, lambda_f, tol, train_fraction;
  std::optional<std::uint64_t> seed;
  std::vector<double> concept_lo, concept_hi;
  bool auto_dim = false;
  bool use_existing_split = false;
};

void add_run_options(CLI::App* sub, RunFlags& f) {
  sub->add_option("--config", f.config, "JSON run configuration");
  sub->add_option("--data", f.data, "dataset path (.csv or binary manifest .json)");
  sub->add_option("--format", f.format, "auto, csv or binary");
  sub->add_option("--out", f.out, "output directory");
  sub->add_option("--method", f.method, "als or closed_form");
  sub->add_option("--d", f.d, "number of features (omit for automatic selection)");
  sub->add_flag("--auto-dim", f.auto_dim, "select the number of features from test R^2");
  sub->add_option("--patience", f.patience, "consecutive negative test R^2 before stopping");
  sub->add_option("--max-d", f.max_d, "cap on automatically selected features");
  sub->add_option("--criterion", f.criterion, "reml or gcv");
  sub->add_option("--knots", f.knots, "knots per concept coordinate");
  sub->add_option("--degree", f.degree, "spline degree");
  sub->add_option("--lambda-w", f.lambda_w, "readout ridge parameter");
  sub->add_option("--lambda-f", f.lambda_f, "roughness penalty parameter");
  sub->add_option("--max-iter", f.max_iter, "ALS iteration cap per feature");
  sub->add_option("--tol", f.tol, "ALS convergence tolerance");
  sub->add_option("--seed", f.seed, "random seed");
  sub->add_option("--train-fraction", f.train_fraction, "training share of each split");
  sub->add_option("--stratify", f.stratify, "none or decade");
  sub->add_flag("--use-existing-split", f.use_existing_split, "keep split labels stored in the dataset");
  sub->add_option("--concept-lo", f.concept_lo, "lower concept bounds");
  sub->add_option("--concept-hi", f.concept_hi, "upper concept bounds");
  sub->add_option("--bounds-policy", f.bounds_policy, "reject or clamp");
  sub->add_option("--layer", f.layer, "layer label recorded in reports");
  sub->add_option("--workers", f.workers, "parallel fits for sweep");
}

RunConfig build_run_config(const RunFlags& f) {
  RunConfig c = f.config ? parse_run_config(read_json(*f.config)) : RunConfig{};
  if (!f.data.empty()) c.datasets = f.data;
  if (f.format) c.format = *f.format;
  if (f.out) c.output = *f.out;
  if (f.method) c.method = parse_fit_method(*f.method);
  if (f.d) c.d = *f.d;
  if (f.auto_dim) {
    if (f.d) throw ConfigError("--d and --auto-dim are exclusive");
    c.d.reset();
  }
  if (f.patience) c.patience = *f.patience;
  if (f.max_d) c.max_d = *f.max_d;
  if (f.criterion) c.criterion = parse_criterion(*f.criterion);
  if (!f.knots.empty()) c.knots = f.knots;
  if (f.degree) c.degree = *f.degree;
  if (f.lambda_w) c.lambda_w = *f.lambda_w;
  if (f.lambda_f) c.lambda_f = *f.lambda_f;
  if (f.max_iter) c.max_iter = *f.max_iter;
  if (f.tol) c.tol = *f.tol;
  if (f.seed) c.seed = *f.seed;
  if (f.train_fraction) c.train_fraction = *f.train_fraction;
  if (f.stratify) c.stratify = *f.stratify;
  if (f.use_existing_split) c.use_existing_split = true;
  if (!f.concept_lo.empty() || !f.concept_hi.empty()) {
    if (f.concept_lo.empty() || f.concept_hi.empty())
      throw ConfigError("--concept-lo and --concept-hi must be given together");
    c.concept_space = ConceptSpace(f.concept_lo, f.concept_hi);
  }
  if (f.bounds_policy) c.bounds_policy = parse_bounds_policy(*f.bounds_policy);
  if (f.layer) c.layer = *f.layer;
  if (f.workers) c.workers = *f.workers;
  validate(c);
  return c;
}

// ---------------------------------------------------------------------------
// Commands

int cmd_fit(const RunConfig& c) {
  if (c.datasets.size() != 1) throw ConfigError("fit takes exactly one dataset");
  const FitOutcome out = fit_dataset(c, c.datasets.front());
  const fs::path dir = c.output;
  save_probe(out.probe, dir / "probe");
  json report = out.report;
  report["artifact"] = "probe";
  write_report(dir / "report.json", report);
  std::cerr << "fit: " << out.probe.d() << " feature(s) written to " << (dir / "probe").string() << "\n";
  return kOk;
}

int cmd_sweep(const RunConfig& c) {
  if (c.datasets.empty()) throw ConfigError("sweep needs at least one dataset");
  std::vector<std::string> ids;
  std::map<std::string, int> seen;
  for (const auto& path : c.datasets) {
    std::string id = file_id_of(path);
    if (int k = seen[id]++; k > 0) id += "_" + std::to_string(k + 1);
    ids.push_back(id);
  }
  const std::size_t jobs = c.datasets.size();
  std::vector<json> reports(jobs);
  std::vector<std::exception_ptr> errors(jobs);
  const fs::path dir = c.output;
  std::size_t next = 0;
  std::mutex mu;
  auto worker = [&] {
    for (;;) {
      std::size_t i;
      {
        std::lock_guard<std::mutex> lock(mu);
        if (next >= jobs) return;
        i = next++;
      }
      try {
        FitOutcome out = fit_dataset(c, c.datasets[i]);
        out.report["file_id"] = ids[i];
        out.report["artifact"] = ids[i] + "/probe";
        save_probe(out.probe, dir / ids[i] / "probe");
        write_report(dir / ids[i] / "report.json", out.report);
        reports[i] = std::move(out.report);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const unsigned n_workers = worker_count(c.workers, jobs);
  std::vector<std::thread> pool;
  for (unsigned t = 0; t < n_workers; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  for (std::size_t i = 0; i < jobs; ++i)
    if (errors[i]) {
      std::cerr << "sweep: " << c.datasets[i] << " failed\n";
      std::rethrow_exception(errors[i]);
    }
  write_text(dir / "ranked_r2.csv", ranked_csv(reports));
  write_report(dir / "report.json", {{"command", "sweep"}, {"files", reports}, {"table", "ranked_r2.csv"}});
  std::cerr << "sweep: " << jobs << " dataset(s) with " << n_workers << " worker(s)\n";
  return kOk;
}

int cmd_eval(const std::string& probe_dir, const std::string& data, const std::string& format,
             const std::string& rows, const std::string& out) {
  const ManifoldProbe probe = load_probe(probe_dir);
  const ProbingDataset ds = load_dataset_unchecked(data, resolve_format(format, data));
  if (ds.p() != probe.p())
    throw DataError("dataset has p = " + std::to_string(ds.p()) + ", probe expects " + std::to_string(probe.p()));
  if (ds.q() != probe.basis.concept_dim()) throw DataError("dataset concept dimension does not match the probe");
  Matrix X, Z;
  if (rows == "all") {
    X = ds.X_raw;
    Z = ds.Z;
  } else {
    if (ds.split.empty()) throw DataError("dataset carries no split labels; use --rows all");
    const Split which = rows == "train" ? Split::Train : Split::Test;
    X = ds.X_rows(which);
    Z = ds.Z_rows(which);
  }
  const std::vector<double> r = test_r2(probe, X, Z);
  json features = json::array();
  for (Index k = 0; k < probe.d(); ++k) {
    json f = feature_report(probe.features[static_cast<std::size_t>(k)], k);
    f["r2"] = r[static_cast<std::size_t>(k)];
    features.push_back(f);
  }
  write_report(out, {{"command", "eval"},
                     {"probe", probe_dir},
                     {"dataset", data},
                     {"rows", rows},
                     {"n", X.rows()},
                     {"d", probe.d()},
                     {"features", features},
                     {"ranked_r2", ranked(r)}});
  return kOk;
}

struct VarimaxFlags {
  std::string probe, out = "varimax_out";
  std::optional<int> top;
  int max_iter = 1000;
  double tol = 1e-8;
  bool kaiser = false;
};

int cmd_varimax(const VarimaxFlags& f) {
  const ManifoldProbe probe = load_probe(f.probe);
  Index k = 0;
  if (f.top) {
    k = *f.top;
    if (k < 1 || k > probe.d())
      throw ConfigError("--top must lie in [1, d] (d = " + std::to_string(probe.d()) + ")");
  } else {
    k = probe.basis.concept_dim() == 1 ? 5 : 32;
    if (k > probe.d()) {
      std::cerr << "varimax: default top " << k << " exceeds d = " << probe.d() << "; using " << probe.d() << "\n";
      k = probe.d();
    }
    if (k < 1) throw ConfigError("varimax: probe has no features");
  }
  VarimaxOptions opts;
  opts.max_iter = f.max_iter;
  opts.tol = f.tol;
  opts.kaiser = f.kaiser;
  const RotationResult rot = varimax_features(probe, k, opts);
  const ManifoldProbe rotated = rotate_probe(probe, k, rot);
  const fs::path dir = f.out;
  save_probe(rotated, dir / "probe");
  std::string csv;
  for (Index j = 0; j < k; ++j) csv += (j ? ",f" : "f") + std::to_string(j + 1);
  csv += "\n";
  for (Index i = 0; i < rot.rotated_loadings.rows(); ++i) {
    for (Index j = 0; j < k; ++j) csv += (j ? "," : "") + num(rot.rotated_loadings(i, j));
    csv += "\n";
  }
  write_text(dir / "rotated_features.csv", csv);
  json R = json::array();
  for (Index i = 0; i < rot.R.rows(); ++i) {
    json r = json::array();
    for (Index j = 0; j < rot.R.cols(); ++j) r.push_back(rot.R(i, j));
    R.push_back(r);
  }
  write_report(dir / "varimax.json", {{"command", "varimax"},
                                      {"k_top", k},
                                      {"iterations", rot.iterations},
                                      {"converged", rot.converged},
                                      {"criterion_trace", rot.criterion_trace},
                                      {"R", R},
                                      {"artifact", "probe"},
                                      {"table", "rotated_features.csv"}});
  return kOk;
}

struct SteerFlags {
  std::string probe, out = "steering";
  std::vector<std::string> targets;
  std::optional<std::string> range;
  std::optional<double> alpha;
  std::string layer;
};

int cmd_steer(const SteerFlags& f) {
  const ManifoldProbe probe = load_probe(f.probe);
  const Index q = probe.basis.concept_dim();
  Matrix targets;
  if (f.range) {
    if (!f.targets.empty()) throw ConfigError("steer: give --targets or --range, not both");
    if (q != 1) throw ConfigError("steer: --range needs a 1-D concept space");
    const auto v = parse_range(*f.range);
    targets = Eigen::Map<const Vector>(v.data(), static_cast<Index>(v.size()));
  } else {
    if (f.targets.empty()) throw ConfigError("steer: no targets given");
    targets = parse_targets(f.targets, q);
  }
  targets = checked_concepts(probe, targets);
  const double alpha = f.alpha.value_or(probe.alpha_default);
  save_steering(steering_vectors(probe, targets, alpha, f.layer), f.out);
  return kOk;
}

struct SynthFlags {
  std::optional<std::string> config, family, overlap, format, out;
  std::optional<Index> p, d, n, r;
  std::optional<double> noise_sd, nuisance_scale, train_fraction;
  std::optional<std::uint64_t> seed;
  std::vector<double> lo, hi, scales;
};

int cmd_synth(const SynthFlags& f) {
  SynthSettings s = f.config ? parse_synth_config(read_json(*f.config)) : SynthSettings{};
  auto& g = s.generator;
  if (f.p) g.p = *f.p;
  if (f.d) g.d = *f.d;
  if (f.n) g.n = *f.n;
  if (f.r) g.nuisance_rank = *f.r;
  if (f.noise_sd) g.noise_sd = *f.noise_sd;
  if (f.nuisance_scale) g.nuisance_scale = *f.nuisance_scale;
  if (f.seed) g.seed = *f.seed;
  if (f.family) g.family = parse_feature_family(*f.family);
  if (f.overlap) g.overlap = parse_nuisance_overlap(*f.overlap);
  if (!f.lo.empty() || !f.hi.empty()) g.space = ConceptSpace(f.lo, f.hi);
  if (!f.scales.empty()) g.signal_scales = f.scales;
  if (f.train_fraction) s.train_fraction = *f.train_fraction;
  if (f.format) s.format = *f.format;
  if (f.out) s.output = *f.out;
  if (s.format != "csv" && s.format != "binary") throw ConfigError("synth: format must be csv or binary");
  if (s.train_fraction && s.format == "csv") throw ConfigError("synth: split labels need the binary format");

  auto [ds, truth] = generate(g);
  if (s.train_fraction) ds = split(ds, *s.train_fraction, g.seed);
  const fs::path dir = s.output;
  fs::create_directories(dir);
  if (s.format == "csv")
    save_csv(ds, dir / "data.csv");
  else
    save_binary(ds, dir / "data.json");
  save_truth(truth, dir / "truth");
  return kOk;
}

int guarded(const std::function<int()>& body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kDataError;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return kNumericalError;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kDataError;
  } catch (const json::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return kNumericalError;
  }
}

}  // namespace

// ---------------------------------------------------------------------------

RunConfig parse_run_config(const json& j) {
  reject_unknown(j, {"datasets", "format", "concept_space", "basis", "fit", "auto_dim", "regsel", "split", "seed",
                     "output", "bounds_policy", "layer", "workers"},
                 "");
  RunConfig c;
  read_into(j, "datasets", c.datasets, "");
  read_into(j, "format", c.format, "");
  if (j.contains("concept_space") && !j.at("concept_space").is_null())
    c.concept_space = space_from_json(j.at("concept_space"));
  if (j.contains("basis")) {
    const json& b = j.at("basis");
    reject_unknown(b, {"knots", "degree"}, "basis");
    read_into(b, "knots", c.knots, "basis");
    read_into(b, "degree", c.degree, "basis");
  }
  if (j.contains("fit")) {
    const json& f = j.at("fit");
    reject_unknown(f, {"method", "d", "max_iter", "tol", "lambda_w", "lambda_f"}, "fit");
    if (f.contains("method")) c.method = parse_fit_method(as<std::string>(f.at("method"), "fit.method"));
    read_optional(f, "d", c.d, "fit");
    read_into(f, "max_iter", c.max_iter, "fit");
    read_into(f, "tol", c.tol, "fit");
    read_optional(f, "lambda_w", c.lambda_w, "fit");
    read_optional(f, "lambda_f", c.lambda_f, "fit");
  }
  if (j.contains("auto_dim")) {
    const json& a = j.at("auto_dim");
    reject_unknown(a, {"patience", "max_d"}, "auto_dim");
    read_into(a, "patience", c.patience, "auto_dim");
    read_into(a, "max_d", c.max_d, "auto_dim");
  }
  if (j.contains("regsel")) {
    const json& r = j.at("regsel");
    reject_unknown(r, {"kind", "bracket"}, "regsel");
    if (r.contains("kind")) c.criterion = parse_criterion(as<std::string>(r.at("kind"), "regsel.kind"));
    if (r.contains("bracket")) {
      const auto br = as<std::vector<double>>(r.at("bracket"), "regsel.bracket");
      if (br.size() != 2) throw ConfigError("config: regsel.bracket needs two entries");
      c.bracket = {br[0], br[1]};
    }
  }
  if (j.contains("split")) {
    const json& s = j.at("split");
    reject_unknown(s, {"fraction", "stratify", "use_existing"}, "split");
    read_into(s, "fraction", c.train_fraction, "split");
    read_into(s, "stratify", c.stratify, "split");
    read_into(s, "use_existing", c.use_existing_split, "split");
  }
  read_into(j, "seed", c.seed, "");
  read_into(j, "output", c.output, "");
  if (j.contains("bounds_policy")) c.bounds_policy = parse_bounds_policy(as<std::string>(j.at("bounds_policy"), "bounds_policy"));
  read_into(j, "layer", c.layer, "");
  read_into(j, "workers", c.workers, "");
  return c;
}

json to_json(const RunConfig& c) {
  json j = {{"datasets", c.datasets},
            {"format", c.format},
            {"basis", {{"knots", c.knots}, {"degree", c.degree}}},
            {"fit",
             {{"method", to_string(c.method)},
              {"d", c.d ? json(*c.d) : json(nullptr)},
              {"max_iter", c.max_iter},
              {"tol", c.tol},
              {"lambda_w", optional_json(c.lambda_w)},
              {"lambda_f", optional_json(c.lambda_f)}}},
            {"auto_dim", {{"patience", c.patience}, {"max_d", c.max_d}}},
            {"regsel", {{"kind", to_string(c.criterion)}, {"bracket", {c.bracket.lo_rel, c.bracket.hi_rel}}}},
            {"split", {{"fraction", c.train_fraction}, {"stratify", c.stratify}, {"use_existing", c.use_existing_split}}},
            {"seed", c.seed},
            {"output", c.output},
            {"bounds_policy", policy_name(c.bounds_policy)},
            {"layer", c.layer},
            {"workers", c.workers}};
  j["concept_space"] = c.concept_space ? json{{"lo", c.concept_space->lo}, {"hi", c.concept_space->hi}} : json(nullptr);
  return j;
}

void validate(const RunConfig& c) {
  if (c.format != "auto" && c.format != "csv" && c.format != "binary")
    throw ConfigError("format must be auto, csv or binary");
  if (c.concept_space) c.concept_space->validate();
  if (c.knots.size() > 2) throw ConfigError("basis.knots takes one or two counts");
  for (int k : c.knots)
    if (k < 4) throw ConfigError("basis.knots entries must be at least 4");
  if (c.degree < 1 || c.degree > 5) throw ConfigError("basis.degree must lie in [1, 5]");
  if (c.d && *c.d < 1) throw ConfigError("fit.d must be at least 1");
  if (c.patience < 1) throw ConfigError("auto_dim.patience must be at least 1");
  if (c.max_d < 1) throw ConfigError("auto_dim.max_d must be at least 1");
  if (!(c.bracket.lo_rel > 0.0 && c.bracket.lo_rel < c.bracket.hi_rel))
    throw ConfigError("regsel.bracket must satisfy 0 < lo < hi");
  if (c.lambda_w && !(*c.lambda_w > 0.0)) throw ConfigError("fit.lambda_w must be positive");
  if (c.lambda_f && !(*c.lambda_f >= 0.0)) throw ConfigError("fit.lambda_f must be non-negative");
  if (c.lambda_w.has_value() != c.lambda_f.has_value())
    throw ConfigError("fit.lambda_w and fit.lambda_f must be given together");
  if (c.method == FitMethod::ClosedForm && !c.lambda_w)
    throw ConfigError("closed_form needs fit.lambda_w and fit.lambda_f");
  if (c.method == FitMethod::Als && c.lambda_f && !(*c.lambda_f > 0.0))
    throw ConfigError("als with fixed lambdas needs lambda_f > 0");
  if (c.max_iter < 1) throw ConfigError("fit.max_iter must be at least 1");
  if (!(c.tol > 0.0)) throw ConfigError("fit.tol must be positive");
  if (!(c.train_fraction > 0.0 && c.train_fraction < 1.0)) throw ConfigError("split.fraction must lie in (0, 1)");
  if (c.stratify != "none" && c.stratify != "decade") throw ConfigError("split.stratify must be none or decade");
  if (c.workers < 0) throw ConfigError("workers must be non-negative");
}

SynthSettings parse_synth_config(const json& j) {
  reject_unknown(j, {"p", "d", "n", "noise_sd", "nuisance_rank", "nuisance_overlap", "nuisance_scale", "seed",
                     "concept_space", "family", "signal_scales", "train_fraction", "format", "output"},
                 "");
  SynthSettings s;
  auto& g = s.generator;
  read_into(j, "p", g.p, "");
  read_into(j, "d", g.d, "");
  read_into(j, "n", g.n, "");
  read_into(j, "noise_sd", g.noise_sd, "");
  read_into(j, "nuisance_rank", g.nuisance_rank, "");
  read_into(j, "nuisance_scale", g.nuisance_scale, "");
  read_into(j, "seed", g.seed, "");
  if (j.contains("nuisance_overlap"))
    g.overlap = parse_nuisance_overlap(as<std::string>(j.at("nuisance_overlap"), "nuisance_overlap"));
  if (j.contains("family")) g.family = parse_feature_family(as<std::string>(j.at("family"), "family"));
  if (j.contains("concept_space")) g.space = space_from_json(j.at("concept_space"));
  read_into(j, "signal_scales", g.signal_scales, "");
  read_optional(j, "train_fraction", s.train_fraction, "");
  read_into(j, "format", s.format, "");
  read_into(j, "output", s.output, "");
  return s;
}

FitOutcome fit_dataset(const RunConfig& c, const std::string& path) {
  const DatasetFormat fmt = resolve_format(c.format, path);
  ProbingDataset ds;
  ConceptSpace space;
  if (c.concept_space) {
    space = *c.concept_space;
    ds = load_dataset(path, fmt, space);
  } else {
    ds = load_dataset_unchecked(path, fmt);
    if (ds.n() < 2) throw DataError(path + ": dataset needs at least 2 rows");
    space = data_bounds(ds.Z);
    validate_dataset(ds, space);
  }
  const Index q = ds.q();
  if (q < 1 || q > 2) throw DataError(path + ": only 1-D and 2-D concept spaces are supported");
  if (c.use_existing_split) {
    if (ds.split.empty()) throw DataError(path + ": dataset carries no split labels");
    if (ds.rows(Split::Train).empty() || ds.rows(Split::Test).empty())
      throw DataError(path + ": stored split leaves one side empty");
  } else {
    ds = split(ds, c.train_fraction, c.seed, c.stratify == "decade" ? StratumFn(decade_stratum) : StratumFn{});
  }
  std::vector<int> knots = c.knots;
  if (knots.empty()) knots = q == 1 ? std::vector<int>{280} : std::vector<int>{40, 80};
  if (static_cast<Index>(knots.size()) != q)
    throw ConfigError("basis.knots needs one count per concept coordinate (q = " + std::to_string(q) + ")");
  const PenalizedBasis raw = q == 1 ? PenalizedBasis::bspline(space, knots[0], c.degree)
                                    : PenalizedBasis::tensor(space, knots[0], knots[1], c.degree);
  const Matrix Z_train = ds.Z_rows(Split::Train);
  const PenalizedBasis basis = raw.reparametrized(Z_train);
  const CenteredDesign design = center(ds, basis);
  const Matrix X_test = ds.X_rows(Split::Test);
  const Matrix Z_test = ds.Z_rows(Split::Test);

  AlsConfig als;
  als.criterion = c.criterion;
  als.bracket = c.bracket;
  als.max_iter = c.max_iter;
  als.tol = c.tol;
  als.seed = c.seed;
  const Index cap = std::min(basis.dim(), ds.p());
  if (c.method == FitMethod::Als && c.lambda_w)
    als.fixed_lambdas.assign(static_cast<std::size_t>(cap), {*c.lambda_w, *c.lambda_f});

  ManifoldProbe probe;
  std::vector<double> test;
  if (c.d) {
    if (*c.d > cap) throw ConfigError("fit.d = " + std::to_string(*c.d) + " exceeds min(m, p) = " + std::to_string(cap));
    probe = c.method == FitMethod::ClosedForm ? fit_closed_form(design, basis, *c.d, *c.lambda_w, *c.lambda_f)
                                              : fit_als(design, basis, *c.d, als);
    test = test_r2(probe, X_test, Z_test);
  } else {
    AutoDimConfig ad;
    ad.method = c.method;
    ad.patience = c.patience;
    ad.max_d = c.max_d;
    ad.als = als;
    ad.lambda_w = c.lambda_w.value_or(1.0);
    ad.lambda_f = c.lambda_f.value_or(1.0);
    AutoDimResult res = auto_dim(design, basis, ad, X_test, Z_test);
    probe = std::move(res.probe);
    test = std::move(res.test_r2);
  }
  probe.bounds_policy = c.bounds_policy;
  probe.meta.criterion = c.criterion;
  probe.meta.seed = c.seed;
  const std::vector<double> train = test_r2(probe, ds.X_rows(Split::Train), Z_train);

  json features = json::array();
  Index informative = 0;
  for (Index k = 0; k < probe.d(); ++k) {
    json f = feature_report(probe.features[static_cast<std::size_t>(k)], k);
    f["train_r2"] = train[static_cast<std::size_t>(k)];
    f["test_r2"] = test[static_cast<std::size_t>(k)];
    if (test[static_cast<std::size_t>(k)] > 0.5) ++informative;
    features.push_back(f);
  }
  json report = {{"command", "fit"},
                 {"dataset", path},
                 {"file_id", file_id_of(path)},
                 {"layer", c.layer},
                 {"method", to_string(c.method)},
                 {"criterion", to_string(c.criterion)},
                 {"seed", c.seed},
                 {"auto_dim", !c.d.has_value()},
                 {"n_train", design.n()},
                 {"n_test", X_test.rows()},
                 {"p", ds.p()},
                 {"q", q},
                 {"m", basis.dim()},
                 {"d", probe.d()},
                 {"informative", informative},
                 {"features", features},
                 {"ranked_test_r2", ranked(test)},
                 {"config", to_json(c)}};
  return {std::move(probe), std::move(report)};
}

std::string ranked_csv(const std::vector<json>& reports) {
  std::string out = "file_id,rank,r2,positive\n";
  for (const auto& r : reports) {
    const std::string id = r.at("file_id").get<std::string>();
    const auto vals = r.at("ranked_test_r2").get<std::vector<double>>();
    for (std::size_t k = 0; k < vals.size(); ++k)
      out += id + "," + std::to_string(k + 1) + "," + num(vals[k]) + "," + (vals[k] > 0.0 ? "1" : "0") + "\n";
  }
  return out;
}

std::vector<double> parse_range(const std::string& text) {
  std::vector<double> parts;
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ':')) {
    double v = 0.0;
    auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (res.ec != std::errc() || res.ptr != tok.data() + tok.size() || !std::isfinite(v))
      throw ConfigError("range '" + text + "' must be lo:hi:step");
    parts.push_back(v);
  }
  if (parts.size() != 3 || !(parts[2] > 0.0) || parts[1] < parts[0])
    throw ConfigError("range '" + text + "' must be lo:hi:step with step > 0 and lo <= hi");
  const auto count = static_cast<std::size_t>(std::floor((parts[1] - parts[0]) / parts[2] + 1e-9)) + 1;
  std::vector<double> out(count);
  for (std::size_t i = 0; i < count; ++i) out[i] = parts[0] + static_cast<double>(i) * parts[2];
  return out;
}

int run(int argc, char** argv) {
  CLI::App app{"maniprobe: fit, evaluate, rotate and steer with manifold probes"};
  app.require_subcommand(1);

  RunFlags fit_flags, sweep_flags;
  auto* fit = app.add_subcommand("fit", "fit a probe to one dataset");
  add_run_options(fit, fit_flags);
  auto* sweep = app.add_subcommand("sweep", "fit every dataset (e.g. one per layer) and rank test R^2");
  add_run_options(sweep, sweep_flags);

  std::string eval_probe, eval_data, eval_format = "auto", eval_rows = "all", eval_out = "eval_report.json";
  auto* eval = app.add_subcommand("eval", "score a probe on a dataset");
  eval->add_option("--probe", eval_probe, "probe artifact directory")->required();
  eval->add_option("--data", eval_data, "dataset path")->required();
  eval->add_option("--format", eval_format, "auto, csv or binary");
  eval->add_option("--rows", eval_rows, "all, train or test")->check(CLI::IsMember({"all", "train", "test"}));
  eval->add_option("--out", eval_out, "report path");

  VarimaxFlags vf;
  auto* vmx = app.add_subcommand("varimax", "varimax-rotate the leading features");
  vmx->add_option("--probe", vf.probe, "probe artifact directory")->required();
  vmx->add_option("--top", vf.top, "number of leading features (default 5 for 1-D, 32 for 2-D)");
  vmx->add_option("--out", vf.out, "output directory");
  vmx->add_option("--max-iter", vf.max_iter, "iteration cap");
  vmx->add_option("--tol", vf.tol, "convergence tolerance on the rotation");
  vmx->add_flag("--kaiser", vf.kaiser, "Kaiser row normalization");

  SteerFlags sf;
  auto* steer = app.add_subcommand("steer", "export steering vectors alpha * phi(z)");
  steer->add_option("--probe", sf.probe, "probe artifact directory")->required();
  steer->add_option("--targets", sf.targets, "target values (z or z1,z2)");
  steer->add_option("--range", sf.range, "inclusive lo:hi:step (1-D)");
  steer->add_option("--alpha", sf.alpha, "scale (default from the artifact, 100)");
  steer->add_option("--layer", sf.layer, "layer label recorded in the metadata");
  steer->add_option("--out", sf.out, "output stem (writes .mpb and .json)");

  SynthFlags yf;
  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset with known truth");
  synth->add_option("--config", yf.config, "JSON generator configuration");
  synth->add_option("--p", yf.p, "representation dimension");
  synth->add_option("--d", yf.d, "number of true features");
  synth->add_option("--n", yf.n, "sample count");
  synth->add_option("--nuisance-rank", yf.r, "nuisance dimension");
  synth->add_option("--noise-sd", yf.noise_sd, "isotropic noise level");
  synth->add_option("--nuisance-scale", yf.nuisance_scale, "nuisance amplitude");
  synth->add_option("--overlap", yf.overlap, "orthogonal or general");
  synth->add_option("--family", yf.family, "cosine or legendre");
  synth->add_option("--seed", yf.seed, "random seed");
  synth->add_option("--lo", yf.lo, "concept lower bounds");
  synth->add_option("--hi", yf.hi, "concept upper bounds");
  synth->add_option("--scales", yf.scales, "per-feature amplitudes");
  synth->add_option("--train-fraction", yf.train_fraction, "store a random split (binary format)");
  synth->add_option("--format", yf.format, "csv or binary");
  synth->add_option("--out", yf.out, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      app.exit(e, std::cout, std::cerr);
      return kOk;
    }
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  }

  return guarded([&] {
    if (*fit) return cmd_fit(build_run_config(fit_flags));
    if (*sweep) return cmd_sweep(build_run_config(sweep_flags));
    if (*eval) return cmd_eval(eval_probe, eval_data, eval_format, eval_rows, eval_out);
    if (*vmx) return cmd_varimax(vf);
    if (*steer) return cmd_steer(sf);
    return cmd_synth(yf);
  });
}

int run(const std::vector<std::string>& args) {
  std::vector<std::string> storage;
  storage.reserve(args.size() + 1);
  storage.emplace_back("maniprobe");
  storage.insert(storage.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& s : storage) argv.push_back(s.data());
  argv.push_back(nullptr);
  return run(static_cast<int>(storage.size()), argv.data());
}

}  // namespace maniprobe::cli
