#include "hpl/numeric.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace hpl {

namespace {

void require_simplex(std::span<const double> p, const char* name) {
  double sum = 0.0;
  for (double v : p) {
    if (!std::isfinite(v) || v < 0.0) {
      throw DomainError(std::string(name) + " has a negative or non-finite entry");
    }
    sum += v;
  }
  if (p.empty() || std::fabs(sum - 1.0) > 1e-9) {
    throw DomainError(std::string(name) + " does not sum to one (sum=" + std::to_string(sum) + ")");
  }
}

double kl_unchecked(std::span<const double> p, std::span<const double> q) {
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] <= 0.0) continue;
    acc += p[i] * (std::log(std::max(p[i], kProbEpsilon)) - std::log(std::max(q[i], kProbEpsilon)));
  }
  return acc;
}

void require_pixel_maps(const Tensor& pred, std::size_t h, std::size_t w, const PixelMask& mask, const char* what) {
  if (pred.rank() != 3 || pred.dim(1) != h || pred.dim(2) != w) {
    throw ShapeError(std::string(what) + ": prediction " + shape_string(pred.shape()) + " vs target " +
                     std::to_string(h) + "x" + std::to_string(w));
  }
  if (!mask.empty() && mask.size() != h * w) throw ShapeError(std::string(what) + ": mask size mismatch");
}

}  // namespace

Tensor softmax(const Tensor& logits, std::size_t axis) {
  if (axis >= logits.rank()) {
    throw InvalidArgument("softmax axis " + std::to_string(axis) + " out of range for " +
                          shape_string(logits.shape()));
  }
  for (double v : logits.data()) {
    if (!std::isfinite(v)) throw NumericInputError("softmax: non-finite logit");
  }
  const auto& shape = logits.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
  const std::size_t n = shape[axis];

  Tensor out(shape);
  const auto in = logits.data();
  auto dst = out.data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) {
      const std::size_t base = o * n * inner + i;
      double mx = in[base];
      for (std::size_t k = 1; k < n; ++k) mx = std::max(mx, in[base + k * inner]);
      double sum = 0.0;
      for (std::size_t k = 0; k < n; ++k) {
        const double e = std::exp(in[base + k * inner] - mx);
        dst[base + k * inner] = e;
        sum += e;
      }
      for (std::size_t k = 0; k < n; ++k) dst[base + k * inner] /= sum;
    }
  }
  return out;
}

double cross_entropy(const ProbMap& pred, const ProbMap& target, const PixelMask& mask) {
  require_same_shape(pred, target, "cross_entropy");
  require_pixel_maps(pred, pred.dim(1), pred.dim(2), mask, "cross_entropy");
  const std::size_t k = pred.dim(0);
  const std::size_t n = pred.dim(1) * pred.dim(2);
  double total = 0.0;
  std::size_t counted = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!mask.empty() && !mask[i]) continue;
    double acc = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
      const double t = target[c * n + i];
      if (t != 0.0) acc -= t * std::log(std::max(pred[c * n + i], kProbEpsilon));
    }
    total += acc;
    ++counted;
  }
  return counted ? total / static_cast<double>(counted) : 0.0;
}

double cross_entropy(const ProbMap& pred, const LabelMap& target, const PixelMask& mask) {
  require_pixel_maps(pred, target.height, target.width, mask, "cross_entropy");
  const std::size_t k = pred.dim(0);
  const std::size_t n = target.size();
  double total = 0.0;
  std::size_t counted = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!mask.empty() && !mask[i]) continue;
    const std::size_t c = target.data[i];
    if (c >= k) throw DomainError("cross_entropy: label " + std::to_string(c) + " >= K");
    total -= std::log(std::max(pred[c * n + i], kProbEpsilon));
    ++counted;
  }
  return counted ? total / static_cast<double>(counted) : 0.0;
}

double kl_div(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw ShapeError("kl_div: length mismatch");
  require_simplex(p, "kl_div p");
  require_simplex(q, "kl_div q");
  return kl_unchecked(p, q);
}

double js_div(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw ShapeError("js_div: length mismatch");
  require_simplex(p, "js_div p");
  require_simplex(q, "js_div q");
  // Summing the two halves term by term keeps js(p,q) == js(q,p) bit-exactly.
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double m = 0.5 * (p[i] + q[i]);
    if (m <= 0.0) continue;
    const double lm = std::log(std::max(m, kProbEpsilon));
    const double a = p[i] > 0.0 ? p[i] * (std::log(std::max(p[i], kProbEpsilon)) - lm) : 0.0;
    const double b = q[i] > 0.0 ? q[i] * (std::log(std::max(q[i], kProbEpsilon)) - lm) : 0.0;
    acc += 0.5 * (a + b);
  }
  return acc;
}

Tensor ema_blend(const Tensor& old, const Tensor& fresh, double decay) {
  require_same_shape(old, fresh, "ema_blend");
  Tensor out = old;
  ema_blend_inplace(out.data(), fresh.data(), decay);
  return out;
}

void ema_blend_inplace(std::span<double> old, std::span<const double> fresh, double decay) {
  if (old.size() != fresh.size()) throw ShapeError("ema_blend: length mismatch");
  if (!(decay >= 0.0 && decay <= 1.0)) throw InvalidArgument("ema_blend: decay outside [0,1]");
  const double keep = 1.0 - decay;
  for (std::size_t i = 0; i < old.size(); ++i) old[i] = decay * old[i] + keep * fresh[i];
}

LabelMap argmax_map(const ProbMap& p) {
  if (p.rank() != 3) throw ShapeError("argmax_map: expected K x H x W");
  const std::size_t k = p.dim(0);
  const std::size_t n = p.dim(1) * p.dim(2);
  LabelMap out(p.dim(1), p.dim(2));
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    double best_v = p[i];
    for (std::size_t c = 1; c < k; ++c) {
      if (p[c * n + i] > best_v) {
        best_v = p[c * n + i];
        best = c;
      }
    }
    out.data[i] = static_cast<std::uint8_t>(best);
  }
  return out;
}

ProbMap one_hot(const LabelMap& labels, std::size_t num_classes) {
  ProbMap out = Tensor::chw(num_classes, labels.height, labels.width);
  const std::size_t n = labels.size();
  for (std::size_t i = 0; i < n; ++i) {
    if (labels.data[i] >= num_classes) throw DomainError("one_hot: label out of range");
    out[labels.data[i] * n + i] = 1.0;
  }
  return out;
}

}  // namespace hpl
