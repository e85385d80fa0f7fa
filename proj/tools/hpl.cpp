// Command-line front end: data generation, training, evaluation, ablations,
// gradient checks and voxelization.

#include <chrono>
#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "hpl/ablation.hpp"
#include "hpl/binary_io.hpp"
#include "hpl/config.hpp"
#include "hpl/dataset.hpp"
#include "hpl/eval.hpp"
#include "hpl/events.hpp"
#include "hpl/gradcheck.hpp"
#include "hpl/image_io.hpp"
#include "hpl/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kToolVersion = "hpl 0.1.0";

enum ExitCode { kOk = 0, kCheckFailed = 1, kUsage = 2, kNumeric = 3 };

hpl::ExperimentConfig load_config(const std::string& path, const std::vector<std::string>& overrides,
                                  bool desk = false) {
  hpl::ExperimentConfig cfg = path.empty() ? hpl::ExperimentConfig{} : hpl::load_experiment(path);
  if (desk) hpl::apply_overrides(cfg, hpl::desk_overrides());
  hpl::apply_overrides(cfg, overrides);
  cfg.validate();
  return cfg;
}

void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw hpl::IoError("cannot create " + dir.string() + ": " + ec.message());
}

std::unique_ptr<hpl::ReconstructionChannel> recon_for(hpl::ReconChannelConfig rc, const fs::path& data_dir) {
  if (rc.mode == hpl::ReconMode::kFile && rc.directory.empty()) rc.directory = data_dir / hpl::kReconDirName;
  return hpl::make_reconstruction(rc);
}

struct GenDataArgs {
  std::string config, out;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
};

int cmd_gen_data(const GenDataArgs& a) {
  hpl::ExperimentConfig cfg = load_config(a.config, a.overrides);
  if (a.seed) cfg.data.seed = *a.seed;
  const hpl::Dataset data = hpl::generate_dataset(cfg.data);
  std::unique_ptr<hpl::ReconstructionChannel> recon;
  if (cfg.recon.mode == hpl::ReconMode::kOracle) recon = hpl::make_reconstruction(cfg.recon);
  hpl::save_dataset(data, a.out, recon.get());
  std::printf("wrote %zu source, %zu target train, %zu target test samples to %s\n", data.source.size(),
              data.target_train.size(), data.target_test.size(), a.out.c_str());
  return kOk;
}

struct TrainArgs {
  std::string config, data, out;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  bool desk = false;
};

int cmd_train(const TrainArgs& a) {
  const auto start = std::chrono::steady_clock::now();
  hpl::ExperimentConfig cfg = load_config(a.config, a.overrides, a.desk);
  if (a.seed) cfg.train.seed = *a.seed;
  const hpl::Dataset data = hpl::load_dataset(a.data);
  const auto recon = recon_for(cfg.recon, a.data);
  make_dir(a.out);

  const hpl::RunResult res = hpl::run(cfg.train, data, *recon);

  const fs::path out = a.out;
  hpl::bin::write_file_atomic(out / "metrics.csv", hpl::metrics_csv(res.history));
  hpl::save_checkpoint(res.student, out / "checkpoint.segc");
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  const json manifest = {{"tool_version", kToolVersion},
                         {"seed", cfg.train.seed},
                         {"config", hpl::to_json(cfg)},
                         {"dataset", fs::absolute(a.data).string()},
                         {"artifacts", {{"metrics", "metrics.csv"}, {"checkpoint", "checkpoint.segc"}}},
                         {"duration_seconds", secs}};
  hpl::bin::write_file_atomic(out / "run_manifest.json", manifest.dump(2) + "\n");
  const auto& last = res.history.back();
  std::printf("iter %lld target_acc %.4f target_miou %.4f (%.1fs)\n", static_cast<long long>(last.iter), last.target_acc,
              last.target_miou, secs);
  return kOk;
}

struct EvalArgs {
  std::string checkpoint, data, split = "target";
};

int cmd_eval(const EvalArgs& a) {
  const hpl::Dataset data = hpl::load_dataset(a.data);
  const hpl::SegNetParams params = hpl::load_checkpoint(a.checkpoint);
  if (params.config.in_channels != data.num_grids || params.config.num_classes != data.num_classes)
    throw hpl::ConfigMismatch("checkpoint expects " + std::to_string(params.config.in_channels) + " channels and " +
                              std::to_string(params.config.num_classes) + " classes; dataset has " +
                              std::to_string(data.num_grids) + " and " + std::to_string(data.num_classes));
  hpl::SegMetrics m;
  if (a.split == "target") m = hpl::evaluate(params, data.target_test);
  else if (a.split == "source") m = hpl::evaluate(params, data.source);
  else throw hpl::ConfigError("--split must be 'target' or 'source'");
  json j = hpl::metrics_json(m);
  j["split"] = a.split;
  std::cout << j.dump(2) << "\n";
  return kOk;
}

struct AblateArgs {
  std::string preset, rows_file, config, out;
  std::vector<std::string> overrides;
  std::size_t seeds = 1;
  bool desk = false;
};

int cmd_ablate(const AblateArgs& a) {
  if (a.preset.empty() == a.rows_file.empty()) throw hpl::ConfigError("give exactly one of --preset or --rows");
  const hpl::ExperimentConfig cfg = load_config(a.config, a.overrides, a.desk);
  const auto rows = a.preset.empty() ? hpl::load_rows_file(a.rows_file) : hpl::preset_rows(a.preset);
  if (a.seeds == 0) throw hpl::ConfigError("--seeds must be >= 1");
  std::vector<std::uint64_t> seeds(a.seeds);
  for (std::size_t i = 0; i < a.seeds; ++i) seeds[i] = i;
  make_dir(a.out);
  const std::string name = a.preset.empty() ? fs::path(a.rows_file).stem().string() : a.preset;
  const hpl::AblationReport report = hpl::run_ablation(name, cfg, rows, seeds, [&](std::size_t r, std::size_t, const hpl::AblationCell& c) {
    std::fprintf(stderr, "%s seed %llu: acc %.4f miou %.4f\n", rows[r].label.c_str(),
                 static_cast<unsigned long long>(c.seed), c.accuracy, c.miou);
  });
  const fs::path out = a.out;
  hpl::bin::write_file_atomic(out / "report.csv", hpl::report_csv(report));
  hpl::bin::write_file_atomic(out / "report.json", hpl::report_json(report).dump(2) + "\n");
  for (const auto& row : report.rows)
    std::printf("%-16s acc %.4f miou %.4f\n", row.row.label.c_str(), row.mean_accuracy, row.mean_miou);
  return kOk;
}

struct GradCheckArgs {
  std::uint64_t seed = 0;
  std::string space = "features";
  bool inject_fault = false;
};

int cmd_grad_check(const GradCheckArgs& a) {
  hpl::GradCheckOptions opt;
  opt.seed = a.seed;
  opt.inject_sign_flip = a.inject_fault;
  if (a.space == "features") opt.prototype_space = hpl::PrototypeSpace::kFeatures;
  else if (a.space == "probabilities") opt.prototype_space = hpl::PrototypeSpace::kProbabilities;
  else throw hpl::ConfigError("--prototype-space must be 'features' or 'probabilities'");
  const hpl::GradCheckReport rep = hpl::run_gradcheck(opt);
  for (const auto& t : rep.terms) {
    if (t.passed) std::printf("PASS %-7s max_rel_err %.3e\n", t.name.c_str(), t.max_rel_error);
    else
      std::printf("FAIL %-7s max_rel_err %.3e worst parameter %zu (%s)\n", t.name.c_str(), t.max_rel_error,
                  t.worst_index, t.worst_parameter.c_str());
  }
  return rep.passed() ? kOk : kCheckFailed;
}

struct VoxelizeArgs {
  std::string events, out, preset;
  std::size_t events_per_grid = 0, num_grids = 0;
  std::uint32_t width = 0, height = 0;
};

int cmd_voxelize(const VoxelizeArgs& a) {
  std::size_t epg = a.events_per_grid, ng = a.num_grids;
  if (!a.preset.empty()) {
    hpl::VoxelPreset p;
    if (a.preset == "dsec") p = hpl::kDsecPreset;
    else if (a.preset == "ddd17") p = hpl::kDdd17Preset;
    else if (a.preset == "desk") p = hpl::kDeskPreset;
    else throw hpl::ConfigError("unknown voxel preset '" + a.preset + "'");
    epg = p.events_per_grid;
    ng = p.num_grids;
  }
  if (epg == 0 || ng == 0) throw hpl::ConfigError("give --preset or both --events-per-grid and --num-grids");
  hpl::EventStream stream;
  if (fs::path(a.events).extension() == ".csv") {
    if (a.width == 0 || a.height == 0) throw hpl::ConfigError("CSV events need --width and --height");
    stream = hpl::read_events_csv(a.events, a.width, a.height);
  } else {
    stream = hpl::read_events(a.events);
  }
  const hpl::Tensor vox = hpl::voxelize(stream, epg, ng);
  hpl::write_tensor_file(vox, a.out);
  double total_abs = 0.0;
  for (std::size_t c = 0; c < ng; ++c) {
    double sum = 0.0, abs_sum = 0.0;
    for (double v : vox.plane(c)) {
      sum += v;
      abs_sum += std::abs(v);
    }
    total_abs += abs_sum;
    std::printf("grid %zu sum %.0f abs_sum %.0f\n", c, sum, abs_sum);
  }
  std::printf("events consumed %zu abs_total %.0f shape %s\n", epg * ng, total_abs, hpl::shape_string(vox.shape()).c_str());
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hybrid pseudo-label domain adaptation toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);

  GenDataArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate the synthetic source/target benchmark");
  gen_cmd->add_option("--config", gen.config, "Experiment JSON config");
  gen_cmd->add_option("--out", gen.out, "Output dataset directory")->required();
  gen_cmd->add_option("--override", gen.overrides, "key=value config override (repeatable)");
  gen_cmd->add_option("--seed", gen.seed, "Data seed");

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "Warm-up and self-training run");
  train_cmd->add_option("--config", train.config, "Experiment JSON config");
  train_cmd->add_option("--data", train.data, "Dataset directory")->required();
  train_cmd->add_option("--out", train.out, "Run output directory")->required();
  train_cmd->add_option("--override", train.overrides, "key=value config override (repeatable)");
  train_cmd->add_flag("--desk", train.desk, "Desk-scale schedule (lr 1e-3, EMA 0.99) before overrides");
  train_cmd->add_option("--seed", train.seed, "Training seed");

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval_cmd->add_option("--checkpoint", ev.checkpoint, "Checkpoint file")->required();
  eval_cmd->add_option("--data", ev.data, "Dataset directory")->required();
  eval_cmd->add_option("--split", ev.split, "target or source");

  AblateArgs abl;
  auto* abl_cmd = app.add_subcommand("ablate", "Run an ablation table");
  abl_cmd->add_option("--preset", abl.preset, "table3, table4 or table5");
  abl_cmd->add_option("--rows", abl.rows_file, "Custom rows JSON file");
  abl_cmd->add_option("--config", abl.config, "Base experiment JSON config");
  abl_cmd->add_option("--override", abl.overrides, "key=value base override (repeatable)");
  abl_cmd->add_flag("--desk", abl.desk, "Desk-scale schedule (lr 1e-3, EMA 0.99) before overrides");
  abl_cmd->add_option("--seeds", abl.seeds, "Number of seeds (0..n-1)");
  abl_cmd->add_option("--out", abl.out, "Report directory")->required();

  GradCheckArgs gc;
  auto* gc_cmd = app.add_subcommand("grad-check", "Finite-difference check of every loss term");
  gc_cmd->add_option("--seed", gc.seed, "Instance seed");
  gc_cmd->add_option("--prototype-space", gc.space, "features or probabilities");
  gc_cmd->add_flag("--inject-fault", gc.inject_fault)->group("");

  VoxelizeArgs vx;
  auto* vx_cmd = app.add_subcommand("voxelize", "Convert an event file to a voxel grid tensor");
  vx_cmd->add_option("--events", vx.events, "Event file (.evt binary or .csv)")->required();
  vx_cmd->add_option("--out", vx.out, "Output tensor file")->required();
  vx_cmd->add_option("--preset", vx.preset, "dsec, ddd17 or desk");
  vx_cmd->add_option("--events-per-grid", vx.events_per_grid);
  vx_cmd->add_option("--num-grids", vx.num_grids);
  vx_cmd->add_option("--width", vx.width, "Sensor width (CSV input)");
  vx_cmd->add_option("--height", vx.height, "Sensor height (CSV input)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    if (*gen_cmd) return cmd_gen_data(gen);
    if (*train_cmd) return cmd_train(train);
    if (*eval_cmd) return cmd_eval(ev);
    if (*abl_cmd) return cmd_ablate(abl);
    if (*gc_cmd) return cmd_grad_check(gc);
    if (*vx_cmd) return cmd_voxelize(vx);
  } catch (const hpl::NonFiniteLoss& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kNumeric;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kUsage;
  }
  return kUsage;
}
