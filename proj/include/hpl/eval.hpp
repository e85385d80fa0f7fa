#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "hpl/dataset.hpp"
#include "hpl/segnet.hpp"
#include "hpl/tensor.hpp"

namespace hpl {

// Rows are ground truth, columns are predictions.
struct ConfusionMatrix {
  std::size_t num_classes = 0;
  std::vector<std::uint64_t> counts;

  explicit ConfusionMatrix(std::size_t k = 0) : num_classes(k), counts(k * k, 0) {}
  std::uint64_t& at(std::size_t truth, std::size_t pred) { return counts[truth * num_classes + pred]; }
  std::uint64_t at(std::size_t truth, std::size_t pred) const { return counts[truth * num_classes + pred]; }
  std::uint64_t total() const;
  ConfusionMatrix& operator+=(const ConfusionMatrix& other);
};

ConfusionMatrix confusion(const LabelMap& pred, const LabelMap& truth, std::size_t num_classes);

struct SegMetrics {
  double accuracy = 0.0;
  std::vector<std::optional<double>> per_class_iou;  // empty for classes absent from both maps
  double miou = 0.0;
};

SegMetrics metrics(const ConfusionMatrix& cm);

// Pooled confusion over every sample's argmax prediction.
SegMetrics evaluate(const SegNetParams& params, const std::vector<TargetSample>& samples);
SegMetrics evaluate(const SegNetParams& params, const std::vector<SourceSample>& samples);

nlohmann::json metrics_json(const SegMetrics& m);

}  // namespace hpl
