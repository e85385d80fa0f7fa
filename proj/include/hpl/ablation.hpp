#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hpl/config.hpp"

namespace hpl {

// One configuration of an ablation table: a label plus `key=value` overrides
// on top of the base config.
struct AblationRow {
  std::string label;
  std::vector<std::string> overrides;
};

struct AblationCell {
  std::uint64_t seed = 0;
  double accuracy = 0.0;
  double miou = 0.0;
};

struct AblationResultRow {
  AblationRow row;
  ExperimentConfig config;  // base with overrides, before per-seed seeding
  std::vector<AblationCell> cells;
  double mean_accuracy = 0.0;
  double mean_miou = 0.0;
};

struct AblationReport {
  std::string name;
  std::vector<AblationResultRow> rows;
};

// Default data and reconstruction settings with the training schedule scaled
// down to 300 + 600 iterations.
std::vector<std::string> desk_overrides();
ExperimentConfig desk_benchmark();

std::vector<AblationRow> table3_rows();  // c, d, e, f, full
std::vector<AblationRow> table4_rows();  // proportion sweep
std::vector<AblationRow> table5_rows();  // offline, online
// Throws ConfigError for names other than table3, table4, table5.
std::vector<AblationRow> preset_rows(const std::string& name);

// {"rows": [{"label": "...", "overrides": ["key=value", ...]}, ...]}
std::vector<AblationRow> load_rows_file(const std::filesystem::path& path);

// Called after each finished cell (row index, seed index).
using AblationProgress = std::function<void(std::size_t, std::size_t, const AblationCell&)>;

// Every row of a seed trains on the same generated dataset: the data and
// reconstruction seeds depend only on the seed, never on the row.
AblationReport run_ablation(const std::string& name, const ExperimentConfig& base, const std::vector<AblationRow>& rows,
                            const std::vector<std::uint64_t>& seeds, const AblationProgress& progress = {});

std::string report_csv(const AblationReport& report);
nlohmann::json report_json(const AblationReport& report);

}  // namespace hpl
