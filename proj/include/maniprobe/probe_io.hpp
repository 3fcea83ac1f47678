#pragma once

#include "maniprobe/probe.hpp"
#include "maniprobe/synthetic.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <string>

namespace maniprobe {

/// Probe artifact directory: probe.json plus MPB1 matrices (feature stacks
/// are stored one feature per row).
void save_probe(const ManifoldProbe& probe, const std::filesystem::path& dir);
ManifoldProbe load_probe(const std::filesystem::path& dir);
nlohmann::json probe_manifest(const ManifoldProbe& probe);

/// Ground-truth bundle: truth.json, truth_u.mpb, truth_v.mpb.
void save_truth(const SyntheticGroundTruth& truth, const std::filesystem::path& dir);
SyntheticGroundTruth load_truth(const std::filesystem::path& dir);

struct SteeringExport {
  Matrix vectors;  // one row per target
  Matrix targets;  // targets x q
  double alpha = kDefaultSteeringAlpha;
  std::string layer;
};

SteeringExport steering_vectors(const ManifoldProbe& probe, const Matrix& targets, double alpha,
                                std::string layer = {});
/// Writes <stem>.mpb and <stem>.json.
void save_steering(const SteeringExport& s, const std::filesystem::path& stem);
SteeringExport load_steering(const std::filesystem::path& stem);

void write_json_atomic(const std::filesystem::path& path, const nlohmann::json& j);
nlohmann::json read_json(const std::filesystem::path& path);

}  // namespace maniprobe
