#include "hpl/spa.hpp"

#include <algorithm>
#include <cmath>

#include "hpl/numeric.hpp"

namespace hpl {

namespace {

constexpr double kMinDistance = 1e-12;

void require_dxhxw(const Tensor& f, const PrototypeBank& bank, const char* what) {
  if (f.rank() != 3 || f.dim(0) != bank.dim())
    throw ShapeError(std::string(what) + ": features " + shape_string(f.shape()) + " do not match bank dim " +
                     std::to_string(bank.dim()));
}

// Gradient of the pixel-mean JS w.r.t. one feature map, given the assignment
// of that map and the other one.
Tensor js_feature_grad(const Tensor& features, const SoftAssignment& self, const SoftAssignment& other,
                       const PrototypeBank& bank, double tau) {
  const std::size_t kk = self.classes.size(), d = features.dim(0);
  const std::size_t n = features.dim(1) * features.dim(2);
  const double inv_n = 1.0 / static_cast<double>(n);
  Tensor grad(features.shape());
  std::vector<double> g(kk), s(kk);
  for (std::size_t i = 0; i < n; ++i) {
    double zg = 0.0;
    for (std::size_t k = 0; k < kk; ++k) {
      const double a = std::max(self.z[k * n + i], kProbEpsilon);
      const double m = std::max(0.5 * (self.z[k * n + i] + other.z[k * n + i]), kProbEpsilon);
      g[k] = 0.5 * std::log(a / m) * inv_n;
      zg += self.z[k * n + i] * g[k];
    }
    for (std::size_t k = 0; k < kk; ++k) {
      // d/d(-d_k/tau) through the softmax, then d(-d_k/tau)/d d_k = -1/tau.
      s[k] = -self.z[k * n + i] * (g[k] - zg) / tau;
    }
    for (std::size_t k = 0; k < kk; ++k) {
      const double dist = self.distance[k * n + i];
      if (dist < kMinDistance || s[k] == 0.0) continue;
      const double scale = s[k] / dist;
      const double* eta = bank.prototypes.data().data() + self.classes[k] * d;
      for (std::size_t c = 0; c < d; ++c) grad[c * n + i] += scale * (features[c * n + i] - eta[c]);
    }
  }
  return grad;
}

AlignmentGrad pair_loss(const Tensor& fa, const Tensor& fb, const PrototypeBank& bank, double tau, const char* what) {
  require_same_shape(fa, fb, what);
  const SoftAssignment za = soft_assign(fa, bank, tau);
  const SoftAssignment zb = soft_assign(fb, bank, tau);
  AlignmentGrad r;
  r.value = js_alignment_value(za, zb);
  r.d_a = js_feature_grad(fa, za, zb, bank, tau);
  r.d_b = js_feature_grad(fb, zb, za, bank, tau);
  return r;
}

}  // namespace

PrototypeBank::PrototypeBank(std::size_t num_classes, std::size_t dim, double momentum_)
    : prototypes({num_classes, dim}), seen(num_classes, 0), momentum(momentum_) {
  if (!(momentum >= 0.0 && momentum <= 1.0)) throw InvalidArgument("prototype momentum outside [0, 1]");
}

std::size_t PrototypeBank::seen_count() const {
  return static_cast<std::size_t>(std::count(seen.begin(), seen.end(), std::uint8_t{1}));
}

void update_prototypes(PrototypeBank& bank, const std::vector<const Tensor*>& features,
                       const std::vector<const LabelMap*>& labels) {
  if (features.size() != labels.size()) throw ShapeError("update_prototypes: batch sizes differ");
  const std::size_t kc = bank.num_classes(), d = bank.dim();
  Tensor sums({kc, d});
  std::vector<std::size_t> counts(kc, 0);
  for (std::size_t b = 0; b < features.size(); ++b) {
    const Tensor& f = *features[b];
    const LabelMap& l = *labels[b];
    require_dxhxw(f, bank, "update_prototypes");
    if (l.height != f.dim(1) || l.width != f.dim(2)) throw ShapeError("update_prototypes: labels not aligned");
    const std::size_t n = l.size();
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t c = l.data[i];
      if (c >= kc) throw DomainError("update_prototypes: label " + std::to_string(c) + " out of range");
      ++counts[c];
      for (std::size_t j = 0; j < d; ++j) sums[c * d + j] += f[j * n + i];
    }
  }
  for (std::size_t c = 0; c < kc; ++c) {
    if (counts[c] == 0) continue;
    const double inv = 1.0 / static_cast<double>(counts[c]);
    for (std::size_t j = 0; j < d; ++j) {
      const double mean = sums[c * d + j] * inv;
      double& eta = bank.prototypes[c * d + j];
      eta = bank.seen[c] ? bank.momentum * eta + (1.0 - bank.momentum) * mean : mean;
    }
    bank.seen[c] = 1;
  }
}

void update_prototypes(PrototypeBank& bank, const Tensor& features, const LabelMap& labels) {
  update_prototypes(bank, std::vector<const Tensor*>{&features}, std::vector<const LabelMap*>{&labels});
}

SoftAssignment soft_assign(const Tensor& features, const PrototypeBank& bank, double tau) {
  if (!(tau > 0.0) || !std::isfinite(tau)) throw InvalidArgument("soft_assign: tau must be positive");
  require_dxhxw(features, bank, "soft_assign");
  SoftAssignment s;
  for (std::uint32_t c = 0; c < bank.num_classes(); ++c)
    if (bank.seen[c]) s.classes.push_back(c);
  if (s.classes.empty()) throw EmptyBankError("soft_assign: prototype bank has no seen class");

  const std::size_t kk = s.classes.size(), d = bank.dim();
  const std::size_t h = features.dim(1), w = features.dim(2), n = h * w;
  s.z = Tensor({kk, h, w});
  s.distance = Tensor({kk, h, w});
  for (std::size_t i = 0; i < n; ++i) {
    double lo = 0.0;
    for (std::size_t k = 0; k < kk; ++k) {
      const double* eta = bank.prototypes.data().data() + s.classes[k] * d;
      double sq = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double diff = features[j * n + i] - eta[j];
        sq += diff * diff;
      }
      const double dist = std::sqrt(sq);
      if (!std::isfinite(dist)) throw NumericInputError("soft_assign: non-finite feature distance");
      s.distance[k * n + i] = dist;
      lo = k == 0 ? dist : std::min(lo, dist);
    }
    // Shift by the nearest distance for a stable exponent.
    double sum = 0.0;
    for (std::size_t k = 0; k < kk; ++k) {
      const double e = std::exp(-(s.distance[k * n + i] - lo) / tau);
      s.z[k * n + i] = e;
      sum += e;
    }
    for (std::size_t k = 0; k < kk; ++k) s.z[k * n + i] /= sum;
  }
  return s;
}

double js_alignment_value(const SoftAssignment& a, const SoftAssignment& b) {
  if (a.classes != b.classes) throw ShapeError("js_alignment: assignments use different prototype sets");
  require_same_shape(a.z, b.z, "js_alignment");
  const std::size_t kk = a.classes.size(), n = a.z.dim(1) * a.z.dim(2);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double ka = 0.0, kb = 0.0;
    for (std::size_t k = 0; k < kk; ++k) {
      const double p = a.z[k * n + i], q = b.z[k * n + i];
      const double m = std::max(0.5 * (p + q), kProbEpsilon);
      if (p > 0.0) ka += p * std::log(std::max(p, kProbEpsilon) / m);
      if (q > 0.0) kb += q * std::log(std::max(q, kProbEpsilon) / m);
    }
    total += 0.5 * ka + 0.5 * kb;
  }
  return total / static_cast<double>(n);
}

AlignmentGrad js_alignment_loss(const Tensor& features_a, const Tensor& features_b, const PrototypeBank& bank,
                                double tau) {
  return pair_loss(features_a, features_b, bank, tau, "js_alignment_loss");
}

AlignmentGrad intra_target_loss(const Tensor& features_el, const Tensor& features_eu, const PrototypeBank& recon_bank,
                                double tau) {
  return pair_loss(features_el, features_eu, recon_bank, tau, "intra_target_loss");
}

}  // namespace hpl
