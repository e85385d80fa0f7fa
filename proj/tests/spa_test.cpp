#include <cmath>

#include <gtest/gtest.h>

#include "hpl/numeric.hpp"
#include "hpl/spa.hpp"
#include "test_util.hpp"

namespace hpl {
namespace {

double& eta(PrototypeBank& b, std::size_t c, std::size_t j) { return b.prototypes[c * b.dim() + j]; }

Tensor random_features(Rng& rng, std::size_t d, std::size_t h, std::size_t w) {
  Tensor f({d, h, w});
  for (auto& v : f.values()) v = rng.normal();
  return f;
}

PrototypeBank full_bank(Rng& rng, std::size_t k, std::size_t d) {
  PrototypeBank bank(k, d, 0.9);
  for (std::size_t c = 0; c < k; ++c) {
    for (std::size_t j = 0; j < d; ++j) eta(bank, c, j) = rng.normal();
    bank.seen[c] = 1;
  }
  return bank;
}

TEST(SoftAssign, TwoPrototypeClosedForm) {
  PrototypeBank bank(2, 1, 0.9);
  eta(bank, 0, 0) = 0.0;
  eta(bank, 1, 0) = 1.0;
  bank.seen = {1, 1};
  const Tensor f({1, 1, 1}, 0.0);
  const SoftAssignment z = soft_assign(f, bank, 1.0);
  EXPECT_NEAR(z.z[0], 0.7310585786300049, 1e-12);
  EXPECT_NEAR(z.z[1], 0.2689414213699951, 1e-12);
  EXPECT_NEAR(z.distance[1], 1.0, 1e-15);
}

TEST(SoftAssign, TemperatureLimits) {
  Rng rng(1);
  const PrototypeBank bank = full_bank(rng, 4, 3);
  const Tensor f = random_features(rng, 3, 2, 2);
  const SoftAssignment hot = soft_assign(f, bank, 1e6);
  for (double v : hot.z.values()) EXPECT_NEAR(v, 0.25, 1e-5);
  const SoftAssignment cold = soft_assign(f, bank, 1e-4);
  for (std::size_t i = 0; i < 4; ++i) {
    std::size_t nearest = 0;
    for (std::size_t c = 1; c < 4; ++c)
      if (cold.distance[c * 4 + i] < cold.distance[nearest * 4 + i]) nearest = c;
    EXPECT_NEAR(cold.z[nearest * 4 + i], 1.0, 1e-9);
  }
}

TEST(SoftAssign, SkipsUnseenAndRejectsEmpty) {
  PrototypeBank bank(3, 2, 0.5);
  EXPECT_THROW(soft_assign(Tensor({2, 1, 1}), bank, 1.0), EmptyBankError);
  bank.seen[2] = 1;
  bank.seen[0] = 1;
  const SoftAssignment z = soft_assign(Tensor({2, 2, 2}), bank, 1.0);
  EXPECT_EQ(z.classes, (std::vector<std::uint32_t>{0, 2}));
  EXPECT_EQ(z.z.dim(0), 2u);
  EXPECT_THROW(soft_assign(Tensor({3, 1, 1}), bank, 1.0), ShapeError);
  EXPECT_THROW(soft_assign(Tensor({2, 1, 1}), bank, 0.0), InvalidArgument);
}

TEST(SoftAssign, FarFeaturesStayFinite) {
  Rng rng(2);
  const PrototypeBank bank = full_bank(rng, 3, 2);
  const Tensor far({2, 1, 1}, 1e6);
  const SoftAssignment z = soft_assign(far, bank, 0.01);
  double s = 0.0;
  for (double v : z.z.values()) {
    EXPECT_TRUE(std::isfinite(v));
    s += v;
  }
  EXPECT_NEAR(s, 1.0, 1e-12);
}

TEST(PrototypeUpdate, FirstSightingAndMomentum) {
  PrototypeBank bank(3, 1, 0.9);
  Tensor f({1, 1, 4});
  f[0] = 1.0, f[1] = 3.0, f[2] = 10.0, f[3] = 10.0;
  LabelMap y(1, 4);
  y.data = {0, 0, 2, 2};
  update_prototypes(bank, f, y);
  EXPECT_EQ(bank.seen, (std::vector<std::uint8_t>{1, 0, 1}));
  EXPECT_DOUBLE_EQ(eta(bank, 0, 0), 2.0);
  EXPECT_DOUBLE_EQ(eta(bank, 2, 0), 10.0);
  EXPECT_EQ(bank.seen_count(), 2u);

  Tensor g({1, 1, 4}, 4.0);
  LabelMap y0(1, 4, 0);
  update_prototypes(bank, g, y0);
  EXPECT_NEAR(eta(bank, 0, 0), 0.9 * 2.0 + 0.1 * 4.0, 1e-15);
  EXPECT_DOUBLE_EQ(eta(bank, 2, 0), 10.0);
}

TEST(PrototypeUpdate, RepeatedUpdatesDecayGeometrically) {
  // After m updates with constant mean x, eta - x = momentum^m (eta0 - x).
  PrototypeBank bank(1, 2, 0.7);
  Tensor f0({2, 1, 1});
  f0[0] = 5.0, f0[1] = -1.0;
  LabelMap y(1, 1, 0);
  update_prototypes(bank, f0, y);
  const Tensor x({2, 1, 1}, 1.0);
  for (int m = 1; m <= 2; ++m) {
    update_prototypes(bank, x, y);
    EXPECT_NEAR(eta(bank, 0, 0) - 1.0, std::pow(0.7, m) * 4.0, 1e-14);
    EXPECT_NEAR(eta(bank, 0, 1) - 1.0, std::pow(0.7, m) * -2.0, 1e-14);
  }
}

TEST(PrototypeUpdate, BatchPoolsPixels) {
  PrototypeBank a(2, 1, 0.0), b(2, 1, 0.0);
  Tensor f1({1, 1, 2}), f2({1, 1, 1});
  f1[0] = 1.0, f1[1] = 2.0;
  f2[0] = 6.0;
  LabelMap y1(1, 2, 1), y2(1, 1, 1);
  update_prototypes(a, {&f1, &f2}, {&y1, &y2});
  EXPECT_DOUBLE_EQ(eta(a, 1, 0), 3.0);
  EXPECT_THROW(update_prototypes(b, {&f1}, {&y1, &y2}), ShapeError);
}

TEST(JsAlignment, SymmetricZeroOnSelfAndBounded) {
  Rng rng(3);
  const PrototypeBank bank = full_bank(rng, 4, 3);
  const Tensor fa = random_features(rng, 3, 3, 3), fb = random_features(rng, 3, 3, 3);
  const SoftAssignment a = soft_assign(fa, bank, 0.5), b = soft_assign(fb, bank, 0.5);
  EXPECT_NEAR(js_alignment_value(a, a), 0.0, 1e-15);
  EXPECT_NEAR(js_alignment_value(a, b), js_alignment_value(b, a), 1e-15);
  EXPECT_LE(js_alignment_value(a, b), std::log(2.0));
  EXPECT_GT(js_alignment_value(a, b), 0.0);
  EXPECT_NEAR(js_alignment_loss(fa, fb, bank, 0.5).value, js_alignment_value(a, b), 1e-15);
  EXPECT_NEAR(intra_target_loss(fa, fb, bank, 0.5).value, js_alignment_value(a, b), 1e-15);
}

TEST(JsAlignment, FiniteDifferenceGradient) {
  Rng rng(4);
  for (int trial = 0; trial < 5; ++trial) {
    const PrototypeBank bank = full_bank(rng, 3, 3);
    const Tensor fa = random_features(rng, 3, 4, 4), fb = random_features(rng, 3, 4, 4);
    const double tau = 0.5;
    const AlignmentGrad g = js_alignment_loss(fa, fb, bank, tau);
    auto check = [&](const Tensor& base, const Tensor& grad, bool first) {
      for (std::size_t i = 0; i < base.size(); ++i) {
        Tensor up = base, down = base;
        up[i] += 1e-6;
        down[i] -= 1e-6;
        const double fu = first ? js_alignment_loss(up, fb, bank, tau).value : js_alignment_loss(fa, up, bank, tau).value;
        const double fd = first ? js_alignment_loss(down, fb, bank, tau).value : js_alignment_loss(fa, down, bank, tau).value;
        const double num = (fu - fd) / 2e-6;
        EXPECT_NEAR(grad[i], num, 1e-6 + 1e-5 * std::abs(num)) << "entry " << i;
      }
    };
    check(fa, g.d_a, true);
    check(fb, g.d_b, false);
  }
}

TEST(JsAlignment, ShapeMismatch) {
  Rng rng(5);
  const PrototypeBank bank = full_bank(rng, 2, 3);
  EXPECT_THROW(js_alignment_loss(Tensor({3, 2, 2}), Tensor({3, 2, 3}), bank, 1.0), ShapeError);
}

}  // namespace
}  // namespace hpl
