#include <cmath>

#include <gtest/gtest.h>

#include "hpl/gradcheck.hpp"
#include "hpl/numeric.hpp"
#include "hpl/trainer.hpp"

namespace hpl {
namespace {

DataConfig tiny_data() {
  DataConfig d;
  d.width = 16;
  d.height = 16;
  d.num_classes = 3;
  d.num_source = 4;
  d.num_target_train = 20;
  d.num_target_test = 2;
  d.events_per_grid = 60;
  d.num_grids = 2;
  d.source_pool.min_size = d.target_pool.min_size = 4;
  d.source_pool.max_size = d.target_pool.max_size = 7;
  d.seed = 3;
  return d;
}

const Dataset& tiny_dataset() {
  static const Dataset data = generate_dataset(tiny_data());
  return data;
}

TrainConfig tiny_train() {
  TrainConfig c;
  c.warmup_iters = 3;
  c.total_iters = 4;
  c.lr_warmup_iters = 2;
  c.eval_interval = 2;
  c.hidden_channels = 4;
  c.proportion = 0.25;
  c.lr = 1e-3;
  c.ema_decay = 0.9;
  return c;
}

double max_abs_diff(const SegNetParams& a, const SegNetParams& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.parameter_count(); ++i) m = std::max(m, std::abs(a.flat(i) - b.flat(i)));
  return m;
}

TEST(Objective, TotalIsSumOfTerms) {
  for (auto space : {PrototypeSpace::kFeatures, PrototypeSpace::kProbabilities}) {
    SegNetParams params;
    const FrozenBatch batch = gradcheck_batch(1, space, params);
    const LossTerms t = objective(params, batch).terms;
    EXPECT_GT(t.loss_s, 0.0);
    EXPECT_GT(t.loss_u, 0.0);
    EXPECT_GT(t.loss_l, 0.0);
    EXPECT_GT(t.js_s, 0.0);
    EXPECT_GT(t.js_i, 0.0);
    EXPECT_NEAR(t.total, t.loss_s + t.loss_u + t.loss_l + batch.omega * (t.js_s + t.js_i), 1e-14);
    EXPECT_DOUBLE_EQ(combine_terms(1, 2, 3, 4, 5, 0.5), 10.5);
  }
}

TEST(Objective, GradientIsWeightedSumOfTermGradients) {
  SegNetParams params;
  FrozenBatch batch = gradcheck_batch(2, PrototypeSpace::kFeatures, params);
  batch.omega = 0.3;
  SegNetGrads sum = objective(params, batch, ObjectiveTerm::kLossS).grads;
  sum += objective(params, batch, ObjectiveTerm::kLossU).grads;
  sum += objective(params, batch, ObjectiveTerm::kLossL).grads;
  SegNetGrads js = objective(params, batch, ObjectiveTerm::kJsS).grads;
  js += objective(params, batch, ObjectiveTerm::kJsI).grads;
  js *= 0.3;
  sum += js;
  EXPECT_LE(max_abs_diff(sum, objective(params, batch).grads), 1e-12);
}

TEST(Objective, ZeroOmegaDropsAlignment) {
  SegNetParams params;
  FrozenBatch batch = gradcheck_batch(3, PrototypeSpace::kFeatures, params);
  batch.omega = 0.0;
  const ObjectiveResult with = objective(params, batch);
  FrozenBatch plain = batch;
  plain.use_spa = false;
  const ObjectiveResult without = objective(params, plain);
  EXPECT_NEAR(with.terms.total, without.terms.loss_s + without.terms.loss_u + without.terms.loss_l, 1e-14);
  EXPECT_LE(max_abs_diff(with.grads, without.grads), 1e-14);
  EXPECT_EQ(without.terms.js_s, 0.0);
  EXPECT_EQ(without.terms.js_i, 0.0);
}

TEST(Objective, EmptyBanksSkipAlignment) {
  SegNetParams params;
  FrozenBatch batch = gradcheck_batch(4, PrototypeSpace::kFeatures, params);
  batch.source_bank = PrototypeBank(3, batch.source_bank.dim(), 0.9);
  batch.recon_bank = PrototypeBank(3, batch.recon_bank.dim(), 0.9);
  const LossTerms t = objective(params, batch).terms;
  EXPECT_EQ(t.js_s, 0.0);
  EXPECT_EQ(t.js_i, 0.0);
}

TEST(GradCheck, PassesAndCatchesSignFlip) {
  for (auto space : {PrototypeSpace::kFeatures, PrototypeSpace::kProbabilities}) {
    GradCheckOptions opt;
    opt.seed = 5;
    opt.prototype_space = space;
    const GradCheckReport ok = run_gradcheck(opt);
    EXPECT_TRUE(ok.passed());
    EXPECT_EQ(ok.terms.size(), 6u);
    opt.inject_sign_flip = true;
    EXPECT_FALSE(run_gradcheck(opt).passed());
  }
}

TEST(Trainer, ZeroWarmupKeepsInitAndSyncsTeacher) {
  TrainConfig cfg = tiny_train();
  TrainState s = init_state(cfg, tiny_dataset());
  const SegNetParams init = s.student;
  warmup(s, tiny_dataset(), 0);
  EXPECT_EQ(s.student, init);
  EXPECT_EQ(s.teacher, s.student);
  EXPECT_EQ(s.global_step, 0);
  warmup(s, tiny_dataset(), 2);
  EXPECT_NE(s.student, init);
  EXPECT_EQ(s.teacher, s.student);
  EXPECT_EQ(s.global_step, 2);
}

TEST(Trainer, SplitFollowsProportion) {
  TrainConfig cfg = tiny_train();
  EXPECT_EQ(init_state(cfg, tiny_dataset()).split.labeled.size(), 5u);
  cfg.use_hybrid = false;
  EXPECT_TRUE(init_state(cfg, tiny_dataset()).split.labeled.empty());
}

TEST(Trainer, TeacherIsEmaOfStudent) {
  TrainConfig cfg = tiny_train();
  OracleReconstruction recon(ReconChannelConfig{});
  TrainState s = init_state(cfg, tiny_dataset());
  prepare_reconstructions(s, tiny_dataset(), recon);
  warmup(s, tiny_dataset(), cfg.warmup_iters);
  for (int i = 0; i < 3; ++i) {
    SegNetParams expected = s.teacher;
    train_step(s, tiny_dataset());
    for (std::size_t j = 0; j < expected.parameter_count(); ++j)
      expected.flat(j) = cfg.ema_decay * expected.flat(j) + (1.0 - cfg.ema_decay) * s.student.flat(j);
    EXPECT_LE(max_abs_diff(expected, s.teacher), 1e-15);
  }
}

TEST(Trainer, RunIsDeterministicAndRecordsSchedule) {
  const TrainConfig cfg = tiny_train();
  OracleReconstruction recon(ReconChannelConfig{});
  const RunResult a = run(cfg, tiny_dataset(), recon);
  const RunResult b = run(cfg, tiny_dataset(), recon);
  EXPECT_EQ(metrics_csv(a.history), metrics_csv(b.history));
  EXPECT_EQ(a.student, b.student);
  ASSERT_EQ(a.history.size(), 3u);
  EXPECT_EQ(a.history[0].iter, 0);
  EXPECT_EQ(a.history[1].iter, 2);
  EXPECT_EQ(a.history[2].iter, 4);
  const std::string csv = metrics_csv(a.history);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), kMetricsHeader);

  TrainConfig other = cfg;
  other.seed = 1;
  EXPECT_NE(run(other, tiny_dataset(), recon).student, a.student);
}

TEST(Trainer, FlagsSwitchTermsIndependently) {
  OracleReconstruction recon(ReconChannelConfig{});
  auto last_terms = [&](const TrainConfig& cfg) {
    LossTerms t;
    run(cfg, tiny_dataset(), recon, [&](const TrainState&, const StepReport& r) { t = r.losses; });
    return t;
  };
  TrainConfig base = tiny_train();
  base.use_hybrid = false;
  const LossTerms c = last_terms(base);
  EXPECT_EQ(c.loss_l, 0.0);
  EXPECT_EQ(c.js_s, 0.0);
  EXPECT_EQ(c.js_i, 0.0);
  EXPECT_NEAR(c.total, c.loss_s + c.loss_u, 1e-14);

  TrainConfig no_spa = tiny_train();
  no_spa.use_spa = false;
  const LossTerms d = last_terms(no_spa);
  EXPECT_GT(d.loss_l, 0.0);
  EXPECT_EQ(d.js_s, 0.0);
  EXPECT_EQ(d.js_i, 0.0);

  const LossTerms full = last_terms(tiny_train());
  EXPECT_GT(full.js_s, 0.0);
  EXPECT_GT(full.js_i, 0.0);
  EXPECT_NEAR(full.total, full.loss_s + full.loss_u + full.loss_l + 0.5 * (full.js_s + full.js_i), 1e-12);
}

TEST(Trainer, NllChangesOnlyTheLabeledTarget) {
  OracleReconstruction recon(ReconChannelConfig{});
  TrainConfig with = tiny_train();
  with.use_spa = false;
  TrainConfig without = with;
  without.use_nll = false;
  TrainState a = init_state(with, tiny_dataset()), b = init_state(without, tiny_dataset());
  prepare_reconstructions(a, tiny_dataset(), recon);
  prepare_reconstructions(b, tiny_dataset(), recon);
  warmup(a, tiny_dataset(), 3);
  warmup(b, tiny_dataset(), 3);
  const LossTerms ta = train_step(a, tiny_dataset()).losses, tb = train_step(b, tiny_dataset()).losses;
  EXPECT_DOUBLE_EQ(ta.loss_s, tb.loss_s);
  EXPECT_DOUBLE_EQ(ta.loss_u, tb.loss_u);
  EXPECT_NE(ta.loss_l, tb.loss_l);
}

TEST(Trainer, OfflineLabelsAreFrozenAfterWarmup) {
  OracleReconstruction recon(ReconChannelConfig{});
  TrainConfig cfg = tiny_train();
  cfg.online_recon_labels = false;
  cfg.use_nll = false;
  cfg.use_spa = false;
  const RunResult r = run(cfg, tiny_dataset(), recon);
  EXPECT_EQ(r.history.size(), 3u);
  for (const auto& row : r.history) EXPECT_TRUE(std::isfinite(row.target_miou));
}

TEST(Trainer, RejectsBadConfig) {
  TrainConfig cfg = tiny_train();
  cfg.alpha = 1.5;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = tiny_train();
  cfg.batch_size = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  Dataset empty_test = tiny_dataset();
  empty_test.target_test.clear();
  OracleReconstruction recon(ReconChannelConfig{});
  EXPECT_THROW(run(tiny_train(), empty_test, recon), ConfigError);
}

}  // namespace
}  // namespace hpl
