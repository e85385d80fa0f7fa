#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hpl/dataset.hpp"
#include "hpl/labeling.hpp"
#include "hpl/trainer.hpp"

namespace hpl {

// Top-level JSON document: {"data": {...}, "recon": {...}, "train": {...}}.
// Missing keys keep their defaults; unknown keys are rejected.
struct ExperimentConfig {
  DataConfig data;
  ReconChannelConfig recon;
  TrainConfig train;

  void validate() const;
};

nlohmann::json to_json(const ExperimentConfig& cfg);
ExperimentConfig experiment_from_json(const nlohmann::json& j);
ExperimentConfig load_experiment(const std::filesystem::path& path);

// `key=value`. The key is a dotted path ("train.lr", "data.source_pool.max_size")
// or a bare field name looked up in train, then data, then recon. The value is
// parsed as JSON when possible and taken as a string otherwise.
void apply_override(ExperimentConfig& cfg, const std::string& assignment);
void apply_overrides(ExperimentConfig& cfg, const std::vector<std::string>& assignments);

}  // namespace hpl
