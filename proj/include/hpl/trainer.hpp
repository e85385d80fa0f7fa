#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "hpl/dataset.hpp"
#include "hpl/labeling.hpp"
#include "hpl/segnet.hpp"
#include "hpl/spa.hpp"

namespace hpl {

enum class PrototypeSpace { kFeatures, kProbabilities };

struct TrainConfig {
  double alpha = 0.5;
  double omega = 0.5;
  double tau = 1.0;
  double ema_decay = 0.999;
  double proportion = 0.05;
  std::int64_t warmup_iters = 300;
  std::int64_t lr_warmup_iters = 90;
  std::int64_t total_iters = 600;
  std::size_t batch_size = 2;
  double lr = 6e-5;
  double weight_decay = 1e-4;
  double threshold = 0.0;
  bool online_recon_labels = true;
  bool use_hybrid = true;
  bool use_nll = true;
  bool use_spa = true;
  std::uint64_t seed = 0;

  std::size_t hidden_channels = 8;
  double jitter_strength = 0.1;
  std::size_t jitter_blur = 0;
  bool use_classmix = true;
  bool hard_pseudo_labels = true;  // false: soft teacher targets in L_u
  double prototype_momentum = 0.9;
  bool freeze_source_prototypes = false;
  PrototypeSpace prototype_space = PrototypeSpace::kFeatures;
  std::int64_t eval_interval = 100;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

// Per-term values of the total objective.
struct LossTerms {
  double loss_s = 0.0;
  double loss_u = 0.0;
  double loss_l = 0.0;
  double js_s = 0.0;
  double js_i = 0.0;
  double total = 0.0;
};

// total = L_s + L_u + L_l + omega * (JS_s + JS_i).
double combine_terms(double loss_s, double loss_u, double loss_l, double js_s, double js_i, double omega);

// Everything the objective needs besides the student parameters. Targets,
// masks and prototype banks are constants.
struct FrozenBatch {
  std::vector<Tensor> source_inputs;
  std::vector<LabelMap> source_labels;

  std::vector<Tensor> mixed_inputs;
  std::vector<ProbMap> mixed_targets;  // one-hot or soft targets for L_u
  std::vector<PixelMask> mixed_masks;

  std::vector<Tensor> el_inputs;        // event grids of T_l
  std::vector<RefinedLabel> refined;    // V-hat per el input
  std::vector<Tensor> il_inputs;        // reconstructions of the same samples
  std::vector<Tensor> eu_inputs;        // unmixed event grids of T_u, paired by index with el

  PrototypeBank source_bank;
  PrototypeBank recon_bank;
  bool use_spa = false;
  double omega = 0.5;
  double tau = 1.0;
  PrototypeSpace prototype_space = PrototypeSpace::kFeatures;
};

// Which terms contribute to the returned gradient.
enum class ObjectiveTerm { kAll, kLossS, kLossU, kLossL, kJsS, kJsI };

struct ObjectiveResult {
  LossTerms terms;
  SegNetGrads grads;
};

ObjectiveResult objective(const SegNetParams& params, const FrozenBatch& batch,
                          ObjectiveTerm term = ObjectiveTerm::kAll);

struct MetricRow {
  std::int64_t iter = 0;
  LossTerms losses;
  double target_acc = 0.0;
  double target_miou = 0.0;
};

struct TrainState {
  TrainConfig config;
  SegNetParams student;
  SegNetParams teacher;
  AdamWState optimizer;
  PrototypeBank source_bank;
  PrototypeBank recon_bank;
  TargetSplit split;
  std::int64_t iteration = 0;    // completed train steps
  std::int64_t global_step = 0;  // optimizer steps including warm-up
  std::vector<Tensor> recon_inputs;         // per split.labeled entry
  std::vector<ProbMap> offline_recon_prob;  // per split.labeled entry, offline mode
  std::vector<MetricRow> history;
};

// Fresh student, zero banks, split drawn from the config seed.
TrainState init_state(const TrainConfig& cfg, const Dataset& data);

// Loads reconstructions for every T_l member.
void prepare_reconstructions(TrainState& state, const Dataset& data, const ReconstructionChannel& recon);

void warmup(TrainState& state, const Dataset& data, std::int64_t iters);

struct StepReport {
  std::int64_t iteration = 0;
  LossTerms losses;
  double lr = 0.0;
  std::size_t counted_u_pixels = 0;
};

StepReport train_step(TrainState& state, const Dataset& data);

// Called after every train step with the updated state.
using StepObserver = std::function<void(const TrainState&, const StepReport&)>;

struct RunResult {
  std::vector<MetricRow> history;
  SegNetParams student;
  SegNetParams teacher;
};

RunResult run(const TrainConfig& cfg, const Dataset& data, const ReconstructionChannel& recon,
              const StepObserver& observer = {});

inline constexpr const char* kMetricsHeader = "iter,loss_s,loss_u,loss_l,loss_js_s,loss_js_i,total,target_acc,target_miou";
std::string metrics_csv(const std::vector<MetricRow>& rows);

// Model input for a sample; images are broadcast over the voxel channels.
Tensor source_input(const SourceSample& s, std::size_t channels);

}  // namespace hpl
