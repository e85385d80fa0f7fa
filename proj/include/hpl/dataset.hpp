#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hpl/events.hpp"
#include "hpl/tensor.hpp"

namespace hpl {

struct SourceSample {
  std::string id;
  Tensor image;     // 1 x H x W, values in [0, 1]
  LabelMap labels;  // ground truth Y
};

struct TargetSample {
  std::string id;
  Tensor voxels;    // G x H x W
  LabelMap labels;  // held-out ground truth V; evaluation only
  // Synthetic scene reference for the oracle reconstruction channel.
  std::optional<SceneSpec> scene;
  std::int64_t render_step = 0;
};

struct Dataset {
  std::uint32_t num_classes = 0;
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  std::size_t events_per_grid = 0;
  std::size_t num_grids = 0;
  std::vector<SourceSample> source;
  std::vector<TargetSample> target_train;
  std::vector<TargetSample> target_test;
};

// Random scene generator for one domain.
struct ScenePool {
  std::uint32_t min_objects = 2;
  std::uint32_t max_objects = 4;
  double min_size = 5.0;
  double max_size = 12.0;
  double min_speed = 1.0;  // pixels per step
  double max_speed = 2.0;
  double disc_fraction = 0.5;
  // Object classes are drawn uniformly from [1, K) when the background is 0;
  // generally from every class except the background.
  std::vector<ClassAppearance> appearance;  // empty: default_appearance(K)
};

struct DataConfig {
  std::uint32_t width = 32;
  std::uint32_t height = 32;
  std::uint32_t num_classes = 4;
  std::uint32_t background_class = 0;
  std::size_t num_source = 64;
  std::size_t num_target_train = 128;
  std::size_t num_target_test = 32;
  std::int64_t steps = 12;
  double threshold = 0.15;
  std::size_t events_per_grid = 500;
  std::size_t num_grids = 8;
  ScenePool source_pool;
  ScenePool target_pool;
  std::uint64_t seed = 0;

  void validate() const;
};

SceneSpec sample_scene(const DataConfig& cfg, const ScenePool& pool, std::uint64_t seed);

// Deterministic given cfg.seed; samples are built in parallel when
// HPL_NUM_THREADS > 1 and each uses an index-derived seed.
Dataset generate_dataset(const DataConfig& cfg);

// Broadcasts a 1 x H x W image to the network's channel count.
Tensor image_to_input(const Tensor& image, std::size_t channels);

nlohmann::json scene_to_json(const SceneSpec& s);
SceneSpec scene_from_json(const nlohmann::json& j);

// On-disk layout written by gen-data; manifest.json indexes every file.
// When `recon` is non-null, a `<id>.recon.pgm` sidecar is written for every
// target training sample.
class ReconstructionChannel;
void save_dataset(const Dataset& data, const std::filesystem::path& dir, const ReconstructionChannel* recon);
Dataset load_dataset(const std::filesystem::path& dir);

inline constexpr const char* kManifestName = "manifest.json";
inline constexpr const char* kReconDirName = "recon";

}  // namespace hpl
