#include "hpl/eval.hpp"

#include "hpl/numeric.hpp"
#include "hpl/trainer.hpp"

namespace hpl {

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t t = 0;
  for (auto c : counts) t += c;
  return t;
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& other) {
  if (other.num_classes != num_classes) throw ShapeError("confusion matrices have different class counts");
  for (std::size_t i = 0; i < counts.size(); ++i) counts[i] += other.counts[i];
  return *this;
}

ConfusionMatrix confusion(const LabelMap& pred, const LabelMap& truth, std::size_t num_classes) {
  if (pred.height != truth.height || pred.width != truth.width) throw ShapeError("confusion: label maps differ in size");
  ConfusionMatrix cm(num_classes);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const std::size_t p = pred.data[i], t = truth.data[i];
    if (p >= num_classes || t >= num_classes)
      throw DomainError("confusion: class " + std::to_string(std::max(p, t)) + " outside [0, " +
                        std::to_string(num_classes) + ")");
    ++cm.at(t, p);
  }
  return cm;
}

SegMetrics metrics(const ConfusionMatrix& cm) {
  const std::uint64_t total = cm.total();
  if (total == 0) throw DomainError("metrics: empty confusion matrix");
  const std::size_t k = cm.num_classes;
  SegMetrics m;
  m.per_class_iou.resize(k);
  std::uint64_t trace = 0;
  double iou_sum = 0.0;
  std::size_t included = 0;
  for (std::size_t c = 0; c < k; ++c) {
    const std::uint64_t tp = cm.at(c, c);
    std::uint64_t row = 0, col = 0;
    for (std::size_t j = 0; j < k; ++j) {
      row += cm.at(c, j);
      col += cm.at(j, c);
    }
    trace += tp;
    const std::uint64_t uni = row + col - tp;
    if (uni == 0) continue;
    const double iou = static_cast<double>(tp) / static_cast<double>(uni);
    m.per_class_iou[c] = iou;
    iou_sum += iou;
    ++included;
  }
  m.accuracy = static_cast<double>(trace) / static_cast<double>(total);
  m.miou = iou_sum / static_cast<double>(included);
  return m;
}

namespace {

template <typename Sample, typename ToInput>
SegMetrics evaluate_samples(const SegNetParams& params, const std::vector<Sample>& samples, ToInput to_input) {
  if (samples.empty()) throw DomainError("evaluate: no samples");
  ConfusionMatrix cm(params.config.num_classes);
  for (const auto& s : samples) {
    const ForwardTrace tr = forward(params, to_input(s));
    cm += confusion(argmax_map(tr.logits), s.labels, params.config.num_classes);
  }
  return metrics(cm);
}

}  // namespace

SegMetrics evaluate(const SegNetParams& params, const std::vector<TargetSample>& samples) {
  return evaluate_samples(params, samples, [](const TargetSample& s) -> const Tensor& { return s.voxels; });
}

SegMetrics evaluate(const SegNetParams& params, const std::vector<SourceSample>& samples) {
  const std::size_t ch = params.config.in_channels;
  return evaluate_samples(params, samples, [ch](const SourceSample& s) { return source_input(s, ch); });
}

nlohmann::json metrics_json(const SegMetrics& m) {
  nlohmann::json iou = nlohmann::json::array();
  for (const auto& v : m.per_class_iou) iou.push_back(v ? nlohmann::json(*v) : nlohmann::json(nullptr));
  return {{"accuracy", m.accuracy}, {"miou", m.miou}, {"per_class_iou", iou}};
}

}  // namespace hpl
