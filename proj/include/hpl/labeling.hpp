#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "hpl/dataset.hpp"
#include "hpl/tensor.hpp"

namespace hpl {

// Random partition of the target set into reconstructed (labeled) and
// event-only (unlabeled) members.
struct TargetSplit {
  std::vector<std::size_t> labeled;    // sorted
  std::vector<std::size_t> unlabeled;  // sorted
  double proportion = 0.0;
};

// |labeled| = round(proportion * n); seeded sample without replacement.
TargetSplit split_target(std::size_t n, double proportion, std::uint64_t seed);

enum class ReconMode { kOracle, kFile };

struct ReconChannelConfig {
  ReconMode mode = ReconMode::kOracle;
  std::size_t blur_radius = 1;   // pixels; 0 disables the blur
  double noise_sigma = 0.05;     // intensity units
  double dropout_rate = 0.1;     // fraction of blocks replaced by their mean
  std::size_t block_size = 8;    // dropout block edge in pixels
  std::filesystem::path directory;  // sidecar directory (file mode)
  std::uint64_t seed = 0;

  void validate() const;
};

// Stand-in for event-to-image reconstruction: produces a 1 x H x W image for a
// target sample.
class ReconstructionChannel {
 public:
  virtual ~ReconstructionChannel() = default;
  virtual Tensor reconstruct(const TargetSample& sample) const = 0;
};

// Renders the sample's scene and degrades it with blur, additive noise and
// block dropout, seeded per sample id.
class OracleReconstruction final : public ReconstructionChannel {
 public:
  explicit OracleReconstruction(ReconChannelConfig cfg);
  Tensor reconstruct(const TargetSample& sample) const override;

 private:
  ReconChannelConfig cfg_;
};

// Loads `<directory>/<sample_id>.recon.pgm`.
class FileReconstruction final : public ReconstructionChannel {
 public:
  explicit FileReconstruction(std::filesystem::path directory);
  Tensor reconstruct(const TargetSample& sample) const override;
  static std::filesystem::path sidecar_path(const std::filesystem::path& dir, const std::string& sample_id);

 private:
  std::filesystem::path directory_;
};

std::unique_ptr<ReconstructionChannel> make_reconstruction(const ReconChannelConfig& cfg);

// Degradation applied by the oracle channel, exposed for direct testing.
Tensor degrade_image(const Tensor& clean, const ReconChannelConfig& cfg, std::uint64_t seed);

// Separable Gaussian blur with sigma = radius / 2 and replicated borders,
// applied per channel. radius 0 returns the input unchanged.
Tensor gaussian_blur(const Tensor& input, std::size_t radius);

struct RefinedLabel {
  ProbMap prob;
};

// (1 - alpha) * psi_on_recon + alpha * phi_on_event.
RefinedLabel refine_label(const ProbMap& psi_on_recon, const ProbMap& phi_on_event, double alpha);

// Value and derivative w.r.t. the logits that produced the student prob map.
struct LossGrad {
  double value = 0.0;
  Tensor d_logits;
  std::size_t counted_pixels = 0;
};

// Masked mean cross entropy against hard labels; gradient
// (softmax - onehot) / counted at counted pixels.
LossGrad hard_label_loss(const ProbMap& student_prob, const LabelMap& labels, const PixelMask& mask = {});

// Masked mean soft cross entropy -sum_k t_k ln p_k; gradient (p - t) / counted.
LossGrad soft_label_loss(const ProbMap& student_prob, const ProbMap& target, const PixelMask& mask = {});

// Supervised source loss.
LossGrad loss_s(const ProbMap& student_prob, const LabelMap& labels);

// Self-training loss against the teacher's argmax labels, optionally masked to
// pixels where the teacher's top probability reaches `threshold`.
LossGrad loss_u(const ProbMap& student_prob, const ProbMap& teacher_prob, double threshold = 0.0);

// Soft cross entropy against the refined label.
LossGrad loss_l(const ProbMap& student_prob, const RefinedLabel& refined);

// Teacher confidence mask (max prob >= threshold); all ones when threshold <= 0.
PixelMask confidence_mask(const ProbMap& teacher_prob, double threshold);

struct MixSample {
  Tensor input;  // C x H x W
  LabelMap labels;
};

struct ClassMixResult {
  Tensor input;
  LabelMap labels;
  PixelMask from_a;  // 1 where the pixel was pasted from sample a
  std::vector<std::uint8_t> pasted_classes;
};

// Pastes the pixels of ceil(n/2) randomly chosen classes present in a onto b.
ClassMixResult classmix(const MixSample& a, const MixSample& b, std::uint64_t seed);

// Per-channel gain in [1-s, 1+s] and offset in [-s, s], then an optional blur.
Tensor jitter(const Tensor& input, double strength, std::uint64_t seed, std::size_t blur_radius = 0);

}  // namespace hpl
