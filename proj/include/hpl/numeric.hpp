#pragma once

#include <span>

#include "hpl/tensor.hpp"

namespace hpl {

// Lower clamp applied to probabilities inside every logarithm.
inline constexpr double kProbEpsilon = 1e-12;

// Numerically stable softmax along `axis`; other axes are independent.
Tensor softmax(const Tensor& logits, std::size_t axis);

// Mean over unmasked pixels of -sum_k target_k * ln(pred_k), K x H x W maps.
double cross_entropy(const ProbMap& pred, const ProbMap& target, const PixelMask& mask = {});
// LabelMap targets are treated as one-hot.
double cross_entropy(const ProbMap& pred, const LabelMap& target, const PixelMask& mask = {});

// Kullback-Leibler divergence, natural log, 0 ln 0 = 0. Both inputs must lie on
// the simplex (DomainError otherwise).
double kl_div(std::span<const double> p, std::span<const double> q);

// Jensen-Shannon divergence against the midpoint distribution; in [0, ln 2].
double js_div(std::span<const double> p, std::span<const double> q);

// decay * old + (1 - decay) * fresh, elementwise.
Tensor ema_blend(const Tensor& old, const Tensor& fresh, double decay);
void ema_blend_inplace(std::span<double> old, std::span<const double> fresh, double decay);

// Smallest class index attaining the per-pixel maximum.
LabelMap argmax_map(const ProbMap& p);

ProbMap one_hot(const LabelMap& labels, std::size_t num_classes);

}  // namespace hpl
