#include "hpl/ablation.hpp"

#include <cstdio>
#include <memory>

#include "hpl/binary_io.hpp"
#include "hpl/parallel.hpp"
#include "hpl/random.hpp"

namespace hpl {

using nlohmann::json;

std::vector<std::string> desk_overrides() { return {"lr=1e-3", "ema_decay=0.99"}; }

ExperimentConfig desk_benchmark() {
  ExperimentConfig cfg;
  apply_overrides(cfg, desk_overrides());
  return cfg;
}

std::vector<AblationRow> table3_rows() {
  return {
      {"c", {"use_hybrid=false", "use_nll=false", "use_spa=false"}},
      {"d", {"use_hybrid=true", "use_nll=false", "use_spa=false"}},
      {"e", {"use_hybrid=true", "use_nll=true", "use_spa=false"}},
      {"f", {"use_hybrid=true", "use_nll=false", "use_spa=true"}},
      {"full", {"use_hybrid=true", "use_nll=true", "use_spa=true"}},
  };
}

std::vector<AblationRow> table4_rows() {
  std::vector<AblationRow> rows;
  for (const char* p : {"0", "0.01", "0.05", "0.1", "0.5", "1"})
    rows.push_back({std::string("proportion=") + p, {std::string("proportion=") + p}});
  return rows;
}

std::vector<AblationRow> table5_rows() {
  return {{"offline", {"online_recon_labels=false"}}, {"online", {"online_recon_labels=true"}}};
}

std::vector<AblationRow> preset_rows(const std::string& name) {
  if (name == "table3") return table3_rows();
  if (name == "table4") return table4_rows();
  if (name == "table5") return table5_rows();
  throw ConfigError("unknown ablation preset '" + name + "' (expected table3, table4 or table5)");
}

std::vector<AblationRow> load_rows_file(const std::filesystem::path& path) {
  const std::string text = bin::read_file(path);
  try {
    const json j = json::parse(text);
    std::vector<AblationRow> rows;
    for (const auto& r : j.at("rows")) {
      AblationRow row;
      row.label = r.at("label").get<std::string>();
      if (r.contains("overrides")) row.overrides = r.at("overrides").get<std::vector<std::string>>();
      rows.push_back(std::move(row));
    }
    if (rows.empty()) throw ConfigError(path.string() + ": no rows");
    return rows;
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

AblationReport run_ablation(const std::string& name, const ExperimentConfig& base, const std::vector<AblationRow>& rows,
                            const std::vector<std::uint64_t>& seeds, const AblationProgress& progress) {
  if (seeds.empty()) throw ConfigError("ablation needs at least one seed");
  if (rows.empty()) throw ConfigError("ablation needs at least one row");

  AblationReport report;
  report.name = name;
  for (const auto& r : rows) {
    AblationResultRow out;
    out.row = r;
    out.config = base;
    apply_overrides(out.config, r.overrides);
    out.cells.resize(seeds.size());
    report.rows.push_back(std::move(out));
  }

  // Datasets are shared by every row of a seed.
  std::vector<Dataset> data(seeds.size());
  std::vector<std::unique_ptr<ReconstructionChannel>> recon(seeds.size());
  const std::size_t threads = worker_threads();
  parallel_for(seeds.size(), threads, [&](std::size_t s) {
    DataConfig dc = base.data;
    dc.seed = derive_seed(base.data.seed, "ablation/data", seeds[s]);
    data[s] = generate_dataset(dc);
    ReconChannelConfig rc = base.recon;
    rc.seed = derive_seed(base.recon.seed, "ablation/recon", seeds[s]);
    recon[s] = make_reconstruction(rc);
  });

  const std::size_t cells = rows.size() * seeds.size();
  parallel_for(cells, threads, [&](std::size_t i) {
    const std::size_t r = i / seeds.size(), s = i % seeds.size();
    TrainConfig tc = report.rows[r].config.train;
    tc.seed = seeds[s];
    const RunResult res = run(tc, data[s], *recon[s]);
    AblationCell cell{seeds[s], res.history.back().target_acc, res.history.back().target_miou};
    report.rows[r].cells[s] = cell;
    if (progress) progress(r, s, cell);
  });

  for (auto& row : report.rows) {
    double acc = 0.0, miou = 0.0;
    for (const auto& c : row.cells) {
      acc += c.accuracy;
      miou += c.miou;
    }
    row.mean_accuracy = acc / static_cast<double>(row.cells.size());
    row.mean_miou = miou / static_cast<double>(row.cells.size());
  }
  return report;
}

std::string report_csv(const AblationReport& report) {
  std::string out = "label,seed,accuracy,miou\n";
  char buf[256];
  for (const auto& row : report.rows) {
    for (const auto& c : row.cells) {
      std::snprintf(buf, sizeof buf, ",%llu,%.17g,%.17g\n", static_cast<unsigned long long>(c.seed), c.accuracy, c.miou);
      out += row.row.label + buf;
    }
    std::snprintf(buf, sizeof buf, ",mean,%.17g,%.17g\n", row.mean_accuracy, row.mean_miou);
    out += row.row.label + buf;
  }
  return out;
}

json report_json(const AblationReport& report) {
  json rows = json::array();
  for (const auto& row : report.rows) {
    json cells = json::array();
    for (const auto& c : row.cells) cells.push_back({{"seed", c.seed}, {"accuracy", c.accuracy}, {"miou", c.miou}});
    rows.push_back({{"label", row.row.label},
                    {"overrides", row.row.overrides},
                    {"config", to_json(row.config)},
                    {"seeds", cells},
                    {"mean_accuracy", row.mean_accuracy},
                    {"mean_miou", row.mean_miou}});
  }
  return {{"name", report.name}, {"rows", rows}};
}

}  // namespace hpl
