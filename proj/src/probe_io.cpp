#include "maniprobe/probe_io.hpp"

#include "maniprobe/mpb.hpp"

#include <system_error>

namespace maniprobe {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kProbeFormat = "maniprobe-probe-1";

Matrix row(const Vector& v) { return v.transpose(); }

Vector vec_of(const Matrix& m, const std::string& what) {
  if (m.rows() != 1) throw DataError(what + ": expected a single-row matrix");
  return m.row(0).transpose();
}

void put(const fs::path& dir, const std::string& name, const Matrix& m) {
  mpb::write_file_atomic(dir / name, mpb::encode(m));
}

Matrix get(const fs::path& dir, const std::string& name) {
  if (!fs::exists(dir / name)) throw DataError("artifact file missing: " + (dir / name).string());
  return mpb::read_matrix(dir / name);
}

Matrix stack_rows(const Matrix& columns) { return columns.transpose(); }

template <typename T>
T field(const json& j, const char* key) {
  if (!j.contains(key)) throw DataError(std::string("artifact field missing: ") + key);
  return j.at(key).get<T>();
}

json space_json(const ConceptSpace& s) { return {{"lo", s.lo}, {"hi", s.hi}}; }

ConceptSpace space_from(const json& j) {
  return ConceptSpace(field<std::vector<double>>(j, "lo"), field<std::vector<double>>(j, "hi"));
}

std::string policy_name(BoundsPolicy p) { return p == BoundsPolicy::Clamp ? "clamp" : "reject"; }

BoundsPolicy parse_policy(const std::string& s) {
  if (s == "clamp") return BoundsPolicy::Clamp;
  if (s == "reject") return BoundsPolicy::Reject;
  throw DataError("unknown bounds policy '" + s + "'");
}

}  // namespace

void write_json_atomic(const fs::path& path, const json& j) { mpb::write_file_atomic(path, j.dump(2) + "\n"); }

json read_json(const fs::path& path) {
  if (!fs::exists(path)) throw DataError("file not found: " + path.string());
  try {
    return json::parse(mpb::read_file(path));
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": invalid JSON: " + e.what());
  }
}

json probe_manifest(const ManifoldProbe& probe) {
  const PenalizedBasis& basis = probe.basis;
  json knots = json::array();
  for (const auto& m : basis.marginals()) knots.push_back(m.knots());
  json b = {{"kind", basis.concept_dim() == 1 ? "bspline" : "tensor_bspline"},
            {"degree", basis.degree()},
            {"n_knots", basis.knot_counts()},
            {"knot_vectors", knots},
            {"space", space_json(basis.space())},
            {"penalty", "second_derivative"},
            {"raw_dim", basis.raw_dim()},
            {"dim", basis.dim()},
            {"raw_map", basis.raw_map().size() > 0 ? json("basis_raw_map.mpb") : json(nullptr)},
            {"center", "basis_center.mpb"},
            {"reparam", "basis_reparam.mpb"},
            {"penalty_matrix", "basis_penalty.mpb"},
            {"penalty_floor", basis.penalty_floor()}};
  json features = json::array();
  for (const auto& f : probe.features) {
    json jf = {{"nu", f.nu},         {"b", f.b},
               {"lambda_w", f.lambda_w}, {"lambda_f", f.lambda_f},
               {"iterations", f.iterations}, {"converged", f.converged}};
    jf["lambda_w_tilde"] = f.lambda_w_tilde ? json(*f.lambda_w_tilde) : json(nullptr);
    jf["lambda_f_tilde"] = f.lambda_f_tilde ? json(*f.lambda_f_tilde) : json(nullptr);
    features.push_back(jf);
  }
  return {{"format", kProbeFormat},
          {"d", probe.d()},
          {"p", probe.p()},
          {"q", basis.concept_dim()},
          {"m", basis.dim()},
          {"method", to_string(probe.meta.method)},
          {"criterion", to_string(probe.meta.criterion)},
          {"seed", probe.meta.seed},
          {"n_train", probe.meta.n_train},
          {"rotated_top", probe.meta.rotated_top},
          {"alpha_default", probe.alpha_default},
          {"bounds_policy", policy_name(probe.bounds_policy)},
          {"basis", b},
          {"features", features},
          {"matrices",
           {{"beta", "beta.mpb"},
            {"w", "w.mpb"},
            {"u", "u.mpb"},
            {"x_mean", "x_mean.mpb"},
            {"h_mean", "h_mean.mpb"},
            {"z_train", "z_train.mpb"}}}};
}

void save_probe(const ManifoldProbe& probe, const fs::path& dir) {
  if (!probe.basis.is_reparametrized()) throw ConfigError("save_probe: basis must be reparametrized");
  fs::create_directories(dir);
  const Index m = probe.basis.dim();
  const Index p = probe.p();
  put(dir, "beta.mpb", probe.d() > 0 ? stack_rows(probe.beta_matrix()) : Matrix(0, m));
  put(dir, "w.mpb", probe.d() > 0 ? stack_rows(probe.w_matrix()) : Matrix(0, p));
  put(dir, "u.mpb", probe.d() > 0 ? stack_rows(probe.u_matrix()) : Matrix(0, p));
  put(dir, "x_mean.mpb", row(probe.x_mean));
  put(dir, "h_mean.mpb", row(probe.h_mean));
  put(dir, "z_train.mpb", probe.z_train);
  put(dir, "basis_center.mpb", row(probe.basis.raw_center()));
  put(dir, "basis_reparam.mpb", probe.basis.reparam());
  put(dir, "basis_penalty.mpb", probe.basis.penalty());
  if (probe.basis.raw_map().size() > 0) put(dir, "basis_raw_map.mpb", probe.basis.raw_map());
  write_json_atomic(dir / "probe.json", probe_manifest(probe));
}

ManifoldProbe load_probe(const fs::path& dir) {
  const json j = read_json(dir / "probe.json");
  if (j.value("format", "") != kProbeFormat) throw DataError(dir.string() + ": not a probe artifact");
  try {
    const json& jb = j.at("basis");
    const Matrix raw_map = jb.at("raw_map").is_null() ? Matrix() : get(dir, jb.at("raw_map").get<std::string>());
    ManifoldProbe probe;
    probe.basis = PenalizedBasis::from_parts(space_from(jb.at("space")), field<std::vector<int>>(jb, "n_knots"),
                                             field<int>(jb, "degree"), raw_map,
                                             vec_of(get(dir, "basis_center.mpb"), "basis_center"),
                                             get(dir, "basis_reparam.mpb"), get(dir, "basis_penalty.mpb"),
                                             field<double>(jb, "penalty_floor"));
    probe.x_mean = vec_of(get(dir, "x_mean.mpb"), "x_mean");
    probe.h_mean = vec_of(get(dir, "h_mean.mpb"), "h_mean");
    probe.z_train = get(dir, "z_train.mpb");
    const Matrix beta = get(dir, "beta.mpb");
    const Matrix w = get(dir, "w.mpb");
    const Matrix u = get(dir, "u.mpb");
    const json& jf = j.at("features");
    const Index d = static_cast<Index>(jf.size());
    if (beta.rows() != d || w.rows() != d || u.rows() != d || beta.cols() != probe.basis.dim() ||
        w.cols() != probe.x_mean.size() || u.cols() != probe.x_mean.size() ||
        probe.h_mean.size() != probe.basis.dim())
      throw DataError(dir.string() + ": artifact matrices have inconsistent shapes");
    for (Index k = 0; k < d; ++k) {
      const json& f = jf.at(static_cast<std::size_t>(k));
      FittedFeature ff;
      ff.beta = beta.row(k).transpose();
      ff.w = w.row(k).transpose();
      ff.u = u.row(k).transpose();
      ff.b = field<double>(f, "b");
      ff.nu = field<double>(f, "nu");
      ff.lambda_w = field<double>(f, "lambda_w");
      ff.lambda_f = field<double>(f, "lambda_f");
      if (!f.at("lambda_w_tilde").is_null()) ff.lambda_w_tilde = f.at("lambda_w_tilde").get<double>();
      if (!f.at("lambda_f_tilde").is_null()) ff.lambda_f_tilde = f.at("lambda_f_tilde").get<double>();
      ff.iterations = field<int>(f, "iterations");
      ff.converged = field<bool>(f, "converged");
      probe.features.push_back(std::move(ff));
    }
    probe.meta.method = parse_fit_method(field<std::string>(j, "method"));
    probe.meta.criterion = parse_criterion(field<std::string>(j, "criterion"));
    probe.meta.seed = field<std::uint64_t>(j, "seed");
    probe.meta.n_train = field<Index>(j, "n_train");
    probe.meta.rotated_top = field<Index>(j, "rotated_top");
    probe.alpha_default = field<double>(j, "alpha_default");
    probe.bounds_policy = parse_policy(field<std::string>(j, "bounds_policy"));
    return probe;
  } catch (const json::exception& e) {
    throw DataError(dir.string() + ": malformed probe manifest: " + e.what());
  } catch (const ConfigError& e) {
    throw DataError(dir.string() + ": " + e.what());
  }
}

void save_truth(const SyntheticGroundTruth& truth, const fs::path& dir) {
  fs::create_directories(dir);
  put(dir, "truth_u.mpb", truth.U_true);
  put(dir, "truth_v.mpb", truth.V_nuisance);
  json orders = json::array();
  for (const auto& o : truth.orders) orders.push_back({o[0], o[1]});
  write_json_atomic(dir / "truth.json", {{"format", "maniprobe-truth-1"},
                                         {"p", truth.p()},
                                         {"d", truth.d()},
                                         {"nuisance_rank", truth.V_nuisance.cols()},
                                         {"family", to_string(truth.family)},
                                         {"orders", orders},
                                         {"scales", std::vector<double>(truth.scales.data(),
                                                                        truth.scales.data() + truth.scales.size())},
                                         {"noise_sd", truth.noise_sd},
                                         {"nuisance_scale", truth.nuisance_scale},
                                         {"seed", truth.seed},
                                         {"space", space_json(truth.space)},
                                         {"U", "truth_u.mpb"},
                                         {"V", "truth_v.mpb"}});
}

SyntheticGroundTruth load_truth(const fs::path& dir) {
  const json j = read_json(dir / "truth.json");
  try {
    SyntheticGroundTruth t;
    t.U_true = get(dir, "truth_u.mpb");
    t.V_nuisance = get(dir, "truth_v.mpb");
    t.family = parse_feature_family(field<std::string>(j, "family"));
    for (const auto& o : j.at("orders")) t.orders.push_back({o.at(0).get<int>(), o.at(1).get<int>()});
    const auto scales = field<std::vector<double>>(j, "scales");
    t.scales = Eigen::Map<const Vector>(scales.data(), static_cast<Index>(scales.size()));
    t.noise_sd = field<double>(j, "noise_sd");
    t.nuisance_scale = field<double>(j, "nuisance_scale");
    t.seed = field<std::uint64_t>(j, "seed");
    t.space = space_from(j.at("space"));
    if (static_cast<Index>(t.orders.size()) != t.d() || t.scales.size() != t.d())
      throw DataError(dir.string() + ": truth bundle has inconsistent shapes");
    return t;
  } catch (const json::exception& e) {
    throw DataError(dir.string() + ": malformed truth manifest: " + e.what());
  }
}

SteeringExport steering_vectors(const ManifoldProbe& probe, const Matrix& targets, double alpha, std::string layer) {
  SteeringExport s;
  s.targets = targets;
  s.alpha = alpha;
  s.layer = std::move(layer);
  s.vectors.resize(targets.rows(), probe.p());
  for (Index i = 0; i < targets.rows(); ++i) s.vectors.row(i) = steering_vector(probe, targets.row(i), alpha).transpose();
  return s;
}

void save_steering(const SteeringExport& s, const fs::path& stem) {
  fs::path mpb_path = stem;
  mpb_path += ".mpb";
  fs::path json_path = stem;
  json_path += ".json";
  if (stem.has_parent_path()) fs::create_directories(stem.parent_path());
  mpb::write_file_atomic(mpb_path, mpb::encode(s.vectors));
  json targets = json::array();
  for (Index i = 0; i < s.targets.rows(); ++i) {
    if (s.targets.cols() == 1) {
      targets.push_back(s.targets(i, 0));
    } else {
      json r = json::array();
      for (Index j = 0; j < s.targets.cols(); ++j) r.push_back(s.targets(i, j));
      targets.push_back(r);
    }
  }
  write_json_atomic(json_path, {{"format", "maniprobe-steering-1"},
                                {"layer", s.layer},
                                {"alpha", s.alpha},
                                {"rows", s.vectors.rows()},
                                {"p", s.vectors.cols()},
                                {"q", s.targets.cols()},
                                {"targets", targets},
                                {"vectors", mpb_path.filename().string()}});
}

SteeringExport load_steering(const fs::path& stem) {
  fs::path json_path = stem;
  json_path += ".json";
  const json j = read_json(json_path);
  SteeringExport s;
  try {
    s.alpha = field<double>(j, "alpha");
    s.layer = field<std::string>(j, "layer");
    const Index q = field<Index>(j, "q");
    const json& t = j.at("targets");
    s.targets.resize(static_cast<Index>(t.size()), q);
    for (std::size_t i = 0; i < t.size(); ++i)
      for (Index c = 0; c < q; ++c)
        s.targets(static_cast<Index>(i), c) = q == 1 ? t[i].get<double>() : t[i].at(static_cast<std::size_t>(c)).get<double>();
    s.vectors = mpb::read_matrix(json_path.parent_path() / field<std::string>(j, "vectors"));
  } catch (const json::exception& e) {
    throw DataError(json_path.string() + ": malformed steering manifest: " + e.what());
  }
  return s;
}

}  // namespace maniprobe
