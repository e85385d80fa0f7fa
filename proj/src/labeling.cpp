#include "hpl/labeling.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "hpl/image_io.hpp"
#include "hpl/numeric.hpp"
#include "hpl/random.hpp"

namespace hpl {

namespace fs = std::filesystem;

TargetSplit split_target(std::size_t n, double proportion, std::uint64_t seed) {
  if (!(proportion >= 0.0 && proportion <= 1.0)) throw InvalidArgument("split_target: proportion outside [0, 1]");
  const auto a = static_cast<std::size_t>(std::lround(proportion * static_cast<double>(n)));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(seed, "split"));
  for (std::size_t i = 0; i + 1 < n; ++i) std::swap(order[i], order[i + rng.below(n - i)]);
  TargetSplit s;
  s.proportion = proportion;
  s.labeled.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(a));
  s.unlabeled.assign(order.begin() + static_cast<std::ptrdiff_t>(a), order.end());
  std::sort(s.labeled.begin(), s.labeled.end());
  std::sort(s.unlabeled.begin(), s.unlabeled.end());
  return s;
}

void ReconChannelConfig::validate() const {
  if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) throw ConfigError("recon: noise_sigma must be >= 0");
  if (!(dropout_rate >= 0.0 && dropout_rate <= 1.0)) throw ConfigError("recon: dropout_rate outside [0, 1]");
  if (block_size == 0) throw ConfigError("recon: block_size must be positive");
}

Tensor gaussian_blur(const Tensor& input, std::size_t radius) {
  if (radius == 0) return input;
  if (input.rank() != 3) throw ShapeError("gaussian_blur expects C x H x W");
  const double sigma = static_cast<double>(radius) / 2.0;
  const auto r = static_cast<std::ptrdiff_t>(radius);
  std::vector<double> k(2 * radius + 1);
  double sum = 0.0;
  for (std::ptrdiff_t i = -r; i <= r; ++i) {
    const double v = std::exp(-0.5 * static_cast<double>(i * i) / (sigma * sigma));
    k[static_cast<std::size_t>(i + r)] = v;
    sum += v;
  }
  for (auto& v : k) v /= sum;

  const auto h = static_cast<std::ptrdiff_t>(input.dim(1));
  const auto w = static_cast<std::ptrdiff_t>(input.dim(2));
  auto clampi = [](std::ptrdiff_t v, std::ptrdiff_t hi) { return std::clamp<std::ptrdiff_t>(v, 0, hi - 1); };
  Tensor tmp(input.shape()), out(input.shape());
  for (std::size_t c = 0; c < input.dim(0); ++c) {
    auto src = input.plane(c);
    auto mid = tmp.plane(c);
    auto dst = out.plane(c);
    for (std::ptrdiff_t y = 0; y < h; ++y)
      for (std::ptrdiff_t x = 0; x < w; ++x) {
        double acc = 0.0;
        for (std::ptrdiff_t i = -r; i <= r; ++i)
          acc += k[static_cast<std::size_t>(i + r)] * src[static_cast<std::size_t>(y * w + clampi(x + i, w))];
        mid[static_cast<std::size_t>(y * w + x)] = acc;
      }
    for (std::ptrdiff_t y = 0; y < h; ++y)
      for (std::ptrdiff_t x = 0; x < w; ++x) {
        double acc = 0.0;
        for (std::ptrdiff_t i = -r; i <= r; ++i)
          acc += k[static_cast<std::size_t>(i + r)] * mid[static_cast<std::size_t>(clampi(y + i, h) * w + x)];
        dst[static_cast<std::size_t>(y * w + x)] = acc;
      }
  }
  return out;
}

Tensor degrade_image(const Tensor& clean, const ReconChannelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Tensor img = gaussian_blur(clean, cfg.blur_radius);
  if (cfg.noise_sigma > 0.0) {
    Rng rng(derive_seed(seed, "recon/noise"));
    for (auto& v : img.values()) v = std::clamp(v + cfg.noise_sigma * rng.normal(), 0.0, 1.0);
  }
  if (cfg.dropout_rate > 0.0) {
    const std::size_t h = img.dim(1), w = img.dim(2), b = cfg.block_size;
    const std::size_t by = (h + b - 1) / b, bx = (w + b - 1) / b, nb = by * bx;
    const auto drop = static_cast<std::size_t>(std::lround(cfg.dropout_rate * static_cast<double>(nb)));
    std::vector<std::size_t> order(nb);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(seed, "recon/dropout"));
    for (std::size_t i = 0; i + 1 < nb; ++i) std::swap(order[i], order[i + rng.below(nb - i)]);
    for (std::size_t c = 0; c < img.dim(0); ++c) {
      for (std::size_t k = 0; k < drop; ++k) {
        const std::size_t y0 = (order[k] / bx) * b, x0 = (order[k] % bx) * b;
        const std::size_t y1 = std::min(h, y0 + b), x1 = std::min(w, x0 + b);
        double mean = 0.0;
        for (std::size_t y = y0; y < y1; ++y)
          for (std::size_t x = x0; x < x1; ++x) mean += img.at(c, y, x);
        mean /= static_cast<double>((y1 - y0) * (x1 - x0));
        for (std::size_t y = y0; y < y1; ++y)
          for (std::size_t x = x0; x < x1; ++x) img.at(c, y, x) = mean;
      }
    }
  }
  return img;
}

OracleReconstruction::OracleReconstruction(ReconChannelConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

Tensor OracleReconstruction::reconstruct(const TargetSample& sample) const {
  if (!sample.scene) throw InvalidArgument("sample " + sample.id + " has no scene reference for oracle reconstruction");
  const Tensor clean = render_scene(*sample.scene, sample.render_step).image;
  return degrade_image(clean, cfg_, derive_seed(cfg_.seed, sample.id));
}

FileReconstruction::FileReconstruction(fs::path directory) : directory_(std::move(directory)) {}

fs::path FileReconstruction::sidecar_path(const fs::path& dir, const std::string& sample_id) {
  return dir / (sample_id + ".recon.pgm");
}

Tensor FileReconstruction::reconstruct(const TargetSample& sample) const {
  const fs::path p = sidecar_path(directory_, sample.id);
  if (!fs::exists(p)) throw IoError("missing reconstruction for sample " + sample.id + ": " + p.string());
  Tensor img = read_image_pgm(p);
  if (img.dim(1) != sample.labels.height || img.dim(2) != sample.labels.width)
    throw ShapeError("reconstruction for sample " + sample.id + " has shape " + shape_string(img.shape()));
  return img;
}

std::unique_ptr<ReconstructionChannel> make_reconstruction(const ReconChannelConfig& cfg) {
  cfg.validate();
  if (cfg.mode == ReconMode::kFile) {
    if (cfg.directory.empty()) throw ConfigError("recon: file mode needs a directory");
    return std::make_unique<FileReconstruction>(cfg.directory);
  }
  return std::make_unique<OracleReconstruction>(cfg);
}

RefinedLabel refine_label(const ProbMap& psi_on_recon, const ProbMap& phi_on_event, double alpha) {
  require_same_shape(psi_on_recon, phi_on_event, "refine_label");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw InvalidArgument("refine_label: alpha outside [0, 1]");
  RefinedLabel r{ProbMap(psi_on_recon.shape())};
  for (std::size_t i = 0; i < r.prob.size(); ++i)
    r.prob[i] = (1.0 - alpha) * psi_on_recon[i] + alpha * phi_on_event[i];
  return r;
}

namespace {

void require_kxhxw(const ProbMap& p, const char* what) {
  if (p.rank() != 3) throw ShapeError(std::string(what) + ": expected K x H x W, got " + shape_string(p.shape()));
}

// Shared soft-target kernel; target(k, i) gives the target mass of class k at pixel i.
template <typename Target>
LossGrad soft_target_loss(const ProbMap& prob, const PixelMask& mask, Target target) {
  const std::size_t k = prob.dim(0), n = prob.dim(1) * prob.dim(2);
  if (!mask.empty() && mask.size() != n) throw ShapeError("loss mask size mismatch");
  LossGrad g{0.0, Tensor(prob.shape()), 0};
  for (std::size_t i = 0; i < n; ++i)
    if (mask.empty() || mask[i]) ++g.counted_pixels;
  if (g.counted_pixels == 0) return g;
  const double inv = 1.0 / static_cast<double>(g.counted_pixels);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!mask.empty() && !mask[i]) continue;
    for (std::size_t c = 0; c < k; ++c) {
      const double t = target(c, i);
      const double p = prob[c * n + i];
      if (t != 0.0) total -= t * std::log(std::max(p, kProbEpsilon));
      g.d_logits[c * n + i] = (p - t) * inv;
    }
  }
  g.value = total * inv;
  return g;
}

}  // namespace

LossGrad hard_label_loss(const ProbMap& student_prob, const LabelMap& labels, const PixelMask& mask) {
  require_kxhxw(student_prob, "hard_label_loss");
  if (labels.height != student_prob.dim(1) || labels.width != student_prob.dim(2))
    throw ShapeError("hard_label_loss: label map does not match prediction");
  const std::size_t k = student_prob.dim(0);
  for (auto v : labels.data)
    if (v >= k) throw DomainError("hard_label_loss: label " + std::to_string(v) + " out of range");
  return soft_target_loss(student_prob, mask,
                          [&](std::size_t c, std::size_t i) { return labels.data[i] == c ? 1.0 : 0.0; });
}

LossGrad soft_label_loss(const ProbMap& student_prob, const ProbMap& target, const PixelMask& mask) {
  require_same_shape(student_prob, target, "soft_label_loss");
  require_kxhxw(student_prob, "soft_label_loss");
  const std::size_t n = student_prob.dim(1) * student_prob.dim(2);
  return soft_target_loss(student_prob, mask, [&](std::size_t c, std::size_t i) { return target[c * n + i]; });
}

LossGrad loss_s(const ProbMap& student_prob, const LabelMap& labels) { return hard_label_loss(student_prob, labels); }

PixelMask confidence_mask(const ProbMap& teacher_prob, double threshold) {
  require_kxhxw(teacher_prob, "confidence_mask");
  const std::size_t k = teacher_prob.dim(0), n = teacher_prob.dim(1) * teacher_prob.dim(2);
  PixelMask m(n, 1);
  if (threshold <= 0.0) return m;
  for (std::size_t i = 0; i < n; ++i) {
    double best = 0.0;
    for (std::size_t c = 0; c < k; ++c) best = std::max(best, teacher_prob[c * n + i]);
    m[i] = best >= threshold ? 1 : 0;
  }
  return m;
}

LossGrad loss_u(const ProbMap& student_prob, const ProbMap& teacher_prob, double threshold) {
  require_same_shape(student_prob, teacher_prob, "loss_u");
  const LabelMap pseudo = argmax_map(teacher_prob);
  if (threshold <= 0.0) return hard_label_loss(student_prob, pseudo);
  return hard_label_loss(student_prob, pseudo, confidence_mask(teacher_prob, threshold));
}

LossGrad loss_l(const ProbMap& student_prob, const RefinedLabel& refined) {
  return soft_label_loss(student_prob, refined.prob);
}

ClassMixResult classmix(const MixSample& a, const MixSample& b, std::uint64_t seed) {
  require_same_shape(a.input, b.input, "classmix");
  if (a.labels.height != b.labels.height || a.labels.width != b.labels.width ||
      a.labels.size() != a.input.dim(1) * a.input.dim(2))
    throw ShapeError("classmix: label maps do not match inputs");
  std::vector<std::uint8_t> present;
  {
    std::vector<bool> seen(256, false);
    for (auto v : a.labels.data) seen[v] = true;
    for (std::size_t c = 0; c < 256; ++c)
      if (seen[c]) present.push_back(static_cast<std::uint8_t>(c));
  }
  Rng rng(derive_seed(seed, "classmix"));
  for (std::size_t i = 0; i + 1 < present.size(); ++i)
    std::swap(present[i], present[i + rng.below(present.size() - i)]);
  present.resize((present.size() + 1) / 2);
  std::sort(present.begin(), present.end());

  std::vector<bool> pick(256, false);
  for (auto c : present) pick[c] = true;
  ClassMixResult r{b.input, b.labels, PixelMask(a.labels.size(), 0), present};
  const std::size_t n = a.labels.size();
  for (std::size_t i = 0; i < n; ++i) {
    if (!pick[a.labels.data[i]]) continue;
    r.from_a[i] = 1;
    r.labels.data[i] = a.labels.data[i];
    for (std::size_t c = 0; c < a.input.dim(0); ++c) r.input[c * n + i] = a.input[c * n + i];
  }
  return r;
}

Tensor jitter(const Tensor& input, double strength, std::uint64_t seed, std::size_t blur_radius) {
  if (!(strength >= 0.0)) throw InvalidArgument("jitter: strength must be >= 0");
  if (input.rank() != 3) throw ShapeError("jitter expects C x H x W");
  Tensor out = input;
  if (strength > 0.0) {
    Rng rng(derive_seed(seed, "jitter"));
    for (std::size_t c = 0; c < out.dim(0); ++c) {
      const double gain = rng.uniform(1.0 - strength, 1.0 + strength);
      const double offset = rng.uniform(-strength, strength);
      for (auto& v : out.plane(c)) v = gain * v + offset;
    }
  }
  return gaussian_blur(out, blur_radius);
}

}  // namespace hpl
