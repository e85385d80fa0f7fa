#include <algorithm>
#include <cmath>
#include <set>
#include <span>

#include <gtest/gtest.h>

#include "hpl/image_io.hpp"
#include "hpl/labeling.hpp"
#include "hpl/numeric.hpp"
#include "test_util.hpp"

namespace hpl {
namespace {

TEST(SplitTarget, SizesAndDisjointness) {
  for (double p : {0.0, 0.01, 0.05, 0.1, 0.5, 1.0}) {
    const TargetSplit s = split_target(128, p, 3);
    EXPECT_EQ(s.labeled.size(), static_cast<std::size_t>(std::lround(p * 128)));
    EXPECT_EQ(s.labeled.size() + s.unlabeled.size(), 128u);
    std::set<std::size_t> all(s.labeled.begin(), s.labeled.end());
    all.insert(s.unlabeled.begin(), s.unlabeled.end());
    EXPECT_EQ(all.size(), 128u);
    EXPECT_TRUE(std::is_sorted(s.labeled.begin(), s.labeled.end()));
  }
  EXPECT_EQ(split_target(100, 0.05, 1).labeled.size(), 5u);
  EXPECT_TRUE(split_target(10, 0.0, 1).labeled.empty());
  EXPECT_TRUE(split_target(10, 1.0, 1).unlabeled.empty());
}

TEST(SplitTarget, SeededDeterminism) {
  EXPECT_EQ(split_target(50, 0.3, 8).labeled, split_target(50, 0.3, 8).labeled);
  EXPECT_NE(split_target(50, 0.3, 8).labeled, split_target(50, 0.3, 9).labeled);
  EXPECT_THROW(split_target(5, 1.5, 0), InvalidArgument);
}

Tensor ramp_image(std::size_t h, std::size_t w) {
  Tensor t = Tensor::chw(1, h, w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) t.at(0, y, x) = (3.0 * y + x) / (3.0 * h + w);
  return t;
}

TEST(Reconstruction, NoDegradationIsIdentity) {
  ReconChannelConfig c;
  c.blur_radius = 0;
  c.noise_sigma = 0.0;
  c.dropout_rate = 0.0;
  const Tensor img = ramp_image(9, 11);
  EXPECT_EQ(degrade_image(img, c, 5), img);
}

TEST(Reconstruction, NoiseIsSeededAndClamped) {
  ReconChannelConfig c;
  c.blur_radius = 0;
  c.noise_sigma = 0.5;
  c.dropout_rate = 0.0;
  const Tensor img = ramp_image(8, 8);
  const Tensor a = degrade_image(img, c, 4), b = degrade_image(img, c, 4), d = degrade_image(img, c, 5);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, d);
  for (double v : a.values()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(Reconstruction, FullDropoutIsBlockwiseConstant) {
  ReconChannelConfig c;
  c.blur_radius = 0;
  c.noise_sigma = 0.0;
  c.dropout_rate = 1.0;
  c.block_size = 4;
  const Tensor img = ramp_image(10, 9);
  const Tensor out = degrade_image(img, c, 1);
  for (std::size_t by = 0; by < 10; by += 4)
    for (std::size_t bx = 0; bx < 9; bx += 4) {
      double mean = 0.0;
      std::size_t n = 0;
      for (std::size_t y = by; y < std::min<std::size_t>(10, by + 4); ++y)
        for (std::size_t x = bx; x < std::min<std::size_t>(9, bx + 4); ++x) mean += img.at(0, y, x), ++n;
      mean /= n;
      for (std::size_t y = by; y < std::min<std::size_t>(10, by + 4); ++y)
        for (std::size_t x = bx; x < std::min<std::size_t>(9, bx + 4); ++x) EXPECT_NEAR(out.at(0, y, x), mean, 1e-15);
    }
}

TEST(Reconstruction, BlurPreservesConstantsAndMass) {
  const Tensor flat = Tensor::chw(2, 7, 7, 0.4);
  const Tensor blurred = gaussian_blur(flat, 2);
  for (double v : blurred.values()) EXPECT_NEAR(v, 0.4, 1e-15);
  Tensor spike = Tensor::chw(1, 9, 9);
  spike.at(0, 4, 4) = 1.0;
  const Tensor s = gaussian_blur(spike, 1);
  double sum = 0.0;
  for (double v : s.values()) sum += v;
  EXPECT_NEAR(sum, 1.0, 1e-14);
  EXPECT_EQ(s.at(0, 4, 3), s.at(0, 3, 4));
  EXPECT_LT(s.at(0, 4, 4), 1.0);
  EXPECT_EQ(gaussian_blur(spike, 0), spike);
}

TEST(Reconstruction, OracleRequiresSceneAndFileModeNamesSample) {
  TargetSample t;
  t.id = "tgt_00042";
  t.labels = LabelMap(4, 4);
  OracleReconstruction oracle(ReconChannelConfig{});
  EXPECT_THROW(oracle.reconstruct(t), InvalidArgument);

  testing::TempDir dir;
  FileReconstruction files(dir.path());
  try {
    files.reconstruct(t);
    FAIL();
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("tgt_00042"), std::string::npos);
  }
  Tensor img = Tensor::chw(1, 4, 4, 0.5);
  write_image_pgm(img, FileReconstruction::sidecar_path(dir.path(), t.id));
  EXPECT_NEAR(files.reconstruct(t)[0], 128.0 / 255.0, 1e-15);
}

TEST(Reconstruction, OracleRendersSceneDeterministically) {
  TargetSample t;
  t.id = "x";
  SceneSpec s;
  s.width = 8, s.height = 8, s.num_classes = 2, s.seed = 1;
  SceneObject o;
  o.class_id = 1, o.x = 2, o.y = 2, o.w = 3, o.h = 3, o.vx = 1;
  s.objects.push_back(o);
  t.scene = s;
  t.render_step = 2;
  t.labels = LabelMap(8, 8);
  ReconChannelConfig clean;
  clean.blur_radius = 0, clean.noise_sigma = 0, clean.dropout_rate = 0;
  EXPECT_EQ(OracleReconstruction(clean).reconstruct(t), render_scene(s, 2).image);
  OracleReconstruction noisy(ReconChannelConfig{});
  EXPECT_EQ(noisy.reconstruct(t), noisy.reconstruct(t));
}

TEST(RefineLabel, ArithmeticAndEndpoints) {
  ProbMap a({2, 1, 1}, {0.8, 0.2}), b({2, 1, 1}, {0.4, 0.6});
  const RefinedLabel mid = refine_label(a, b, 0.5);
  EXPECT_NEAR(mid.prob[0], 0.6, 1e-15);
  EXPECT_NEAR(mid.prob[1], 0.4, 1e-15);
  EXPECT_EQ(refine_label(a, b, 0.0).prob, a);
  EXPECT_EQ(refine_label(a, b, 1.0).prob, b);
  EXPECT_THROW(refine_label(a, ProbMap({3, 1, 1}, 1.0 / 3), 0.5), ShapeError);
}

TEST(RefineLabel, RandomPairsStayOnSimplexAndMoveLinearly) {
  Rng rng(12);
  for (int i = 0; i < 50; ++i) {
    const std::size_t k = 2 + rng.below(5);
    const ProbMap a = testing::random_prob_map(rng, k, 3, 4), b = testing::random_prob_map(rng, k, 3, 4);
    const double alpha = rng.uniform();
    const RefinedLabel r = refine_label(a, b, alpha);
    EXPECT_TRUE(is_prob_map(r.prob, 1e-12));
    for (std::size_t j = 0; j < r.prob.size(); ++j) EXPECT_NEAR(r.prob[j], a[j] + alpha * (b[j] - a[j]), 1e-15);
  }
}

// Finite-difference check of a loss through the softmax.
template <typename LossFn>
double fd_error(const Tensor& logits, LossFn loss) {
  const LossGrad g = loss(softmax(logits, 0));
  double worst = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    Tensor up = logits, down = logits;
    up[i] += 1e-6;
    down[i] -= 1e-6;
    const double num = (loss(softmax(up, 0)).value - loss(softmax(down, 0)).value) / 2e-6;
    worst = std::max(worst, std::abs(num - g.d_logits[i]) / std::max({std::abs(num), std::abs(g.d_logits[i]), 1e-6}));
  }
  return worst;
}

TEST(Losses, LossSClosedFormsAndGradient) {
  Rng rng(4);
  const LabelMap y = testing::random_label_map(rng, 4, 3, 3);
  EXPECT_NEAR(loss_s(ProbMap({4, 3, 3}, 0.25), y).value, std::log(4.0), 1e-15);
  EXPECT_LE(loss_s(one_hot(y, 4), y).value, 1e-12);
  Tensor logits({4, 3, 3});
  for (auto& v : logits.values()) v = rng.normal();
  EXPECT_LE(fd_error(logits, [&](const ProbMap& p) { return loss_s(p, y); }), 1e-5);
}

TEST(Losses, LossUUsesTeacherArgmaxAndMask) {
  ProbMap uniform({2, 1, 1}, 0.5);
  EXPECT_NEAR(loss_u(uniform, uniform).value, std::log(2.0), 1e-15);
  Rng rng(5);
  const LabelMap y = testing::random_label_map(rng, 3, 4, 4);
  EXPECT_LE(loss_u(one_hot(y, 3), one_hot(y, 3)).value, 1e-12);

  // Everything below the threshold: zero loss and zero gradient.
  const ProbMap teacher = testing::random_prob_map(rng, 3, 4, 4);
  const LossGrad none = loss_u(testing::random_prob_map(rng, 3, 4, 4), teacher, 1.0 + 1e-9 > 1.0 ? 0.999999 : 1.0);
  if (none.counted_pixels == 0) {
    EXPECT_EQ(none.value, 0.0);
    for (double v : none.d_logits.values()) EXPECT_EQ(v, 0.0);
  }
  EXPECT_EQ(loss_u(teacher, teacher, 0.0).counted_pixels, 16u);
}

TEST(Losses, LossUHardLabelIsMinimizer) {
  Rng rng(6);
  const ProbMap student = testing::random_prob_map(rng, 3, 4, 4);
  const double best = loss_u(student, student).value;
  for (int i = 0; i < 20; ++i) {
    const LabelMap other = testing::random_label_map(rng, 3, 4, 4);
    EXPECT_GE(hard_label_loss(student, other).value, best - 1e-15);
  }
}

TEST(Losses, LossLSoftTargets) {
  Rng rng(7);
  const ProbMap p = testing::random_prob_map(rng, 3, 2, 2);
  double entropy = 0.0;
  for (double v : p.values()) entropy -= v * std::log(v);
  EXPECT_NEAR(loss_l(p, RefinedLabel{p}).value, entropy / 4.0, 1e-14);
  // Gradient vanishes at the target.
  for (double v : loss_l(p, RefinedLabel{p}).d_logits.values()) EXPECT_EQ(v, 0.0);
  Tensor logits({3, 2, 2});
  for (auto& v : logits.values()) v = rng.normal();
  const RefinedLabel target = refine_label(testing::random_prob_map(rng, 3, 2, 2), testing::random_prob_map(rng, 3, 2, 2), 0.5);
  EXPECT_LE(fd_error(logits, [&](const ProbMap& q) { return loss_l(q, target); }), 1e-5);
}

TEST(ClassMix, IdenticalInputsAreFixedPoints) {
  Rng rng(8);
  MixSample a{Tensor::chw(2, 4, 4, 0.3), testing::random_label_map(rng, 3, 4, 4)};
  const ClassMixResult r = classmix(a, a, 9);
  EXPECT_EQ(r.input, a.input);
  EXPECT_EQ(r.labels, a.labels);
}

TEST(ClassMix, SingleClassIsPastedWhole) {
  MixSample a{Tensor::chw(1, 3, 3, 1.0), LabelMap(3, 3)};
  for (std::size_t i = 0; i < 4; ++i) a.labels.data[i] = 2;
  for (std::size_t i = 4; i < 9; ++i) a.labels.data[i] = 2;
  MixSample b{Tensor::chw(1, 3, 3, 0.0), LabelMap(3, 3, 1)};
  const ClassMixResult r = classmix(a, b, 0);
  EXPECT_EQ(r.pasted_classes, std::vector<std::uint8_t>{2});
  EXPECT_EQ(r.labels, a.labels);
  EXPECT_EQ(r.input, a.input);
}

TEST(ClassMix, HistogramRecount) {
  Rng rng(10);
  for (int trial = 0; trial < 20; ++trial) {
    MixSample a{Tensor::chw(2, 6, 6), testing::random_label_map(rng, 5, 6, 6)};
    MixSample b{Tensor::chw(2, 6, 6), testing::random_label_map(rng, 5, 6, 6)};
    for (auto& v : a.input.values()) v = rng.uniform();
    for (auto& v : b.input.values()) v = rng.uniform();
    const ClassMixResult r = classmix(a, b, trial);

    std::set<int> present(a.labels.data.begin(), a.labels.data.end());
    EXPECT_EQ(r.pasted_classes.size(), (present.size() + 1) / 2);
    std::vector<int> expect(5, 0), got(5, 0);
    for (std::size_t i = 0; i < 36; ++i) {
      const bool from_a = std::count(r.pasted_classes.begin(), r.pasted_classes.end(), a.labels.data[i]) > 0;
      EXPECT_EQ(r.from_a[i], from_a ? 1 : 0);
      ++expect[from_a ? a.labels.data[i] : b.labels.data[i]];
      ++got[r.labels.data[i]];
      for (std::size_t c = 0; c < 2; ++c)
        EXPECT_EQ(r.input[c * 36 + i], from_a ? a.input[c * 36 + i] : b.input[c * 36 + i]);
    }
    EXPECT_EQ(got, expect);
  }
}

TEST(Jitter, IdentitySeededAndAffine) {
  Rng rng(11);
  Tensor x = Tensor::chw(3, 4, 5);
  for (auto& v : x.values()) v = rng.normal();
  EXPECT_EQ(jitter(x, 0.0, 1), x);
  EXPECT_EQ(jitter(x, 0.2, 1), jitter(x, 0.2, 1));
  EXPECT_NE(jitter(x, 0.2, 1), jitter(x, 0.2, 2));
  const Tensor j = jitter(x, 0.2, 3);
  for (std::size_t c = 0; c < 3; ++c) {
    // Per-channel affine: recover gain from two entries and check the rest.
    const std::span<const double> in = x.plane(c), out = j.plane(c);
    const double gain = (out[1] - out[0]) / (in[1] - in[0]);
    const double offset = out[0] - gain * in[0];
    EXPECT_GE(gain, 0.8 - 1e-12);
    EXPECT_LE(gain, 1.2 + 1e-12);
    EXPECT_LE(std::abs(offset), 0.2 + 1e-12);
    for (std::size_t i = 0; i < in.size(); ++i) EXPECT_NEAR(out[i], gain * in[i] + offset, 1e-12);
  }
  EXPECT_THROW(jitter(x, -0.1, 0), InvalidArgument);
}

}  // namespace
}  // namespace hpl
