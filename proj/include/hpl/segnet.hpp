#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>

#include "hpl/tensor.hpp"

namespace hpl {

struct SegNetConfig {
  std::size_t in_channels = 1;
  std::size_t hidden_channels = 8;
  std::size_t num_classes = 2;
  std::uint64_t seed = 0;

  static constexpr std::size_t kKernel = 3;

  void validate() const;
  bool operator==(const SegNetConfig&) const = default;
};

// conv3x3 -> ReLU -> conv3x3 -> ReLU -> 1x1 head. Gradients share the layout.
struct SegNetParams {
  SegNetConfig config;
  Tensor conv1_w;  // D x C x 3 x 3
  Tensor conv1_b;  // D
  Tensor conv2_w;  // D x D x 3 x 3
  Tensor conv2_b;  // D
  Tensor head_w;   // K x D
  Tensor head_b;   // K

  static constexpr std::size_t kTensorCount = 6;
  static const std::array<const char*, kTensorCount>& tensor_names();

  std::array<Tensor*, kTensorCount> tensors() { return {&conv1_w, &conv1_b, &conv2_w, &conv2_b, &head_w, &head_b}; }
  std::array<const Tensor*, kTensorCount> tensors() const {
    return {&conv1_w, &conv1_b, &conv2_w, &conv2_b, &head_w, &head_b};
  }

  std::size_t parameter_count() const;
  // Flat addressing across all tensors in declaration order.
  double& flat(std::size_t i);
  double flat(std::size_t i) const;

  SegNetParams& operator+=(const SegNetParams& other);
  SegNetParams& operator*=(double s);

  bool operator==(const SegNetParams&) const = default;
};

using SegNetGrads = SegNetParams;

// All tensors shaped for `config`, zero-filled.
SegNetParams zero_params(const SegNetConfig& config);

// Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)) from config.seed; biases zero.
SegNetParams init_params(const SegNetConfig& config);

struct ForwardTrace {
  Tensor input;     // C x H x W
  Tensor pre1;      // D x H x W
  Tensor act1;
  Tensor pre2;
  Tensor features;  // post-ReLU conv2 output, D x H x W; head input
  Tensor logits;    // K x H x W
};

ForwardTrace forward(const SegNetParams& params, const Tensor& input);

// Logits of the head only, for fixed features.
Tensor head_logits(const SegNetParams& params, const Tensor& features);

// Accumulates parameter gradients of a loss whose upstream derivatives are
// given w.r.t. the logits and (optionally) directly w.r.t. the feature map.
void backward_accumulate(const ForwardTrace& trace, const SegNetParams& params, const Tensor& d_logits,
                         const Tensor* d_features, SegNetGrads& grads);

SegNetGrads backward(const ForwardTrace& trace, const SegNetParams& params, const Tensor& d_logits,
                     const Tensor* d_features = nullptr);

struct AdamWOptions {
  double lr = 6e-5;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamWState {
  SegNetParams m;
  SegNetParams v;
  std::int64_t step = 0;

  static AdamWState for_params(const SegNetParams& params);
  bool operator==(const AdamWState&) const = default;
};

// Decoupled weight decay: theta <- theta * (1 - lr*wd) - lr * mhat / (sqrt(vhat) + eps).
void optimizer_step(SegNetParams& params, const SegNetGrads& grads, AdamWState& state, const AdamWOptions& opt);

class ConfigMismatch : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string encode_checkpoint(const SegNetParams& params);
SegNetParams decode_checkpoint(std::string_view bytes);

void save_checkpoint(const SegNetParams& params, const std::filesystem::path& path);
SegNetParams load_checkpoint(const std::filesystem::path& path);
// Rejects checkpoints whose recorded config differs from `expected`.
SegNetParams load_checkpoint(const std::filesystem::path& path, const SegNetConfig& expected);

}  // namespace hpl
