#include "hpl/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "hpl/eval.hpp"
#include "hpl/numeric.hpp"
#include "hpl/random.hpp"

namespace hpl {

void TrainConfig::validate() const {
  auto unit = [](double v, const char* name) {
    if (!(v >= 0.0 && v <= 1.0)) throw ConfigError(std::string("train: ") + name + " must be in [0, 1]");
  };
  unit(alpha, "alpha");
  unit(omega, "omega");
  unit(proportion, "proportion");
  unit(ema_decay, "ema_decay");
  unit(prototype_momentum, "prototype_momentum");
  if (!(tau > 0.0) || !std::isfinite(tau)) throw ConfigError("train: tau must be positive");
  if (warmup_iters < 0 || total_iters < 0 || lr_warmup_iters < 0) throw ConfigError("train: iteration counts must be >= 0");
  if (batch_size == 0) throw ConfigError("train: batch_size must be >= 1");
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("train: lr must be >= 0");
  if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay)) throw ConfigError("train: weight_decay must be >= 0");
  if (!(threshold >= 0.0 && threshold <= 1.0)) throw ConfigError("train: threshold must be in [0, 1]");
  if (!(jitter_strength >= 0.0)) throw ConfigError("train: jitter_strength must be >= 0");
  if (hidden_channels == 0) throw ConfigError("train: hidden_channels must be >= 1");
  if (eval_interval <= 0) throw ConfigError("train: eval_interval must be >= 1");
}

double combine_terms(double loss_s, double loss_u, double loss_l, double js_s, double js_i, double omega) {
  return loss_s + loss_u + loss_l + omega * (js_s + js_i);
}

Tensor source_input(const SourceSample& s, std::size_t channels) { return image_to_input(s.image, channels); }

namespace {

ProbMap prob_of(const ForwardTrace& tr) { return softmax(tr.logits, 0); }

// The map the prototypes live on.
Tensor spa_map(const ForwardTrace& tr, PrototypeSpace space) {
  return space == PrototypeSpace::kFeatures ? tr.features : prob_of(tr);
}

// Upstream derivatives for one trace, split by entry point.
struct Upstream {
  Tensor d_logits;
  Tensor d_features;
  bool has_features = false;
};

// d_map w.r.t. whatever spa_map returned, routed to logits or features.
void add_map_grad(Upstream& up, const ForwardTrace& tr, const Tensor& d_map, double scale, PrototypeSpace space) {
  if (space == PrototypeSpace::kFeatures) {
    if (!up.has_features) {
      up.d_features = Tensor(tr.features.shape());
      up.has_features = true;
    }
    for (std::size_t i = 0; i < d_map.size(); ++i) up.d_features[i] += scale * d_map[i];
    return;
  }
  // Softmax Jacobian: dL/ds_k = p_k (g_k - sum_j p_j g_j).
  const ProbMap p = prob_of(tr);
  const std::size_t k = p.dim(0), n = p.dim(1) * p.dim(2);
  for (std::size_t i = 0; i < n; ++i) {
    double pg = 0.0;
    for (std::size_t c = 0; c < k; ++c) pg += p[c * n + i] * d_map[c * n + i];
    for (std::size_t c = 0; c < k; ++c) up.d_logits[c * n + i] += scale * p[c * n + i] * (d_map[c * n + i] - pg);
  }
}

void add_logit_grad(Upstream& up, const Tensor& d, double scale) {
  for (std::size_t i = 0; i < d.size(); ++i) up.d_logits[i] += scale * d[i];
}

void backprop(const ForwardTrace& tr, const SegNetParams& params, const Upstream& up, SegNetGrads& grads) {
  backward_accumulate(tr, params, up.d_logits, up.has_features ? &up.d_features : nullptr, grads);
}

}  // namespace

ObjectiveResult objective(const SegNetParams& params, const FrozenBatch& batch, ObjectiveTerm term) {
  ObjectiveResult r{{}, zero_params(params.config)};
  auto want = [&](ObjectiveTerm t) { return term == ObjectiveTerm::kAll || term == t; };
  const bool weighted = term == ObjectiveTerm::kAll;

  if (batch.source_inputs.size() != batch.source_labels.size() || batch.mixed_inputs.size() != batch.mixed_targets.size() ||
      batch.el_inputs.size() != batch.refined.size())
    throw ShapeError("objective: inconsistent batch");

  if (!batch.source_inputs.empty()) {
    const double inv = 1.0 / static_cast<double>(batch.source_inputs.size());
    for (std::size_t b = 0; b < batch.source_inputs.size(); ++b) {
      const ForwardTrace tr = forward(params, batch.source_inputs[b]);
      const LossGrad lg = loss_s(prob_of(tr), batch.source_labels[b]);
      r.terms.loss_s += lg.value * inv;
      if (want(ObjectiveTerm::kLossS)) {
        Upstream up{Tensor(tr.logits.shape()), {}, false};
        add_logit_grad(up, lg.d_logits, inv);
        backprop(tr, params, up, r.grads);
      }
    }
  }

  if (!batch.mixed_inputs.empty()) {
    const double inv = 1.0 / static_cast<double>(batch.mixed_inputs.size());
    for (std::size_t b = 0; b < batch.mixed_inputs.size(); ++b) {
      const ForwardTrace tr = forward(params, batch.mixed_inputs[b]);
      const PixelMask empty;
      const LossGrad lg = soft_label_loss(prob_of(tr), batch.mixed_targets[b],
                                          b < batch.mixed_masks.size() ? batch.mixed_masks[b] : empty);
      r.terms.loss_u += lg.value * inv;
      if (want(ObjectiveTerm::kLossU) && lg.counted_pixels > 0) {
        Upstream up{Tensor(tr.logits.shape()), {}, false};
        add_logit_grad(up, lg.d_logits, inv);
        backprop(tr, params, up, r.grads);
      }
    }
  }

  const std::size_t nl = batch.el_inputs.size();
  if (nl > 0) {
    const double inv = 1.0 / static_cast<double>(nl);
    std::vector<ForwardTrace> el(nl);
    std::vector<Upstream> el_up(nl);
    for (std::size_t b = 0; b < nl; ++b) {
      el[b] = forward(params, batch.el_inputs[b]);
      el_up[b] = Upstream{Tensor(el[b].logits.shape()), {}, false};
      const LossGrad lg = loss_l(prob_of(el[b]), batch.refined[b]);
      r.terms.loss_l += lg.value * inv;
      if (want(ObjectiveTerm::kLossL)) add_logit_grad(el_up[b], lg.d_logits, inv);
    }

    if (batch.use_spa) {
      const double w = weighted ? batch.omega : 1.0;
      const bool grads_on = w != 0.0;
      if (batch.il_inputs.size() != nl) throw ShapeError("objective: reconstruction count differs from event count");
      if (batch.source_bank.seen_count() > 0) {
        for (std::size_t b = 0; b < nl; ++b) {
          const ForwardTrace il = forward(params, batch.il_inputs[b]);
          const AlignmentGrad ag = js_alignment_loss(spa_map(il, batch.prototype_space),
                                                     spa_map(el[b], batch.prototype_space), batch.source_bank, batch.tau);
          r.terms.js_s += ag.value * inv;
          if (want(ObjectiveTerm::kJsS) && grads_on) {
            Upstream up{Tensor(il.logits.shape()), {}, false};
            add_map_grad(up, il, ag.d_a, w * inv, batch.prototype_space);
            backprop(il, params, up, r.grads);
            add_map_grad(el_up[b], el[b], ag.d_b, w * inv, batch.prototype_space);
          }
        }
      }
      if (!batch.eu_inputs.empty() && batch.recon_bank.seen_count() > 0) {
        for (std::size_t b = 0; b < nl; ++b) {
          const ForwardTrace eu = forward(params, batch.eu_inputs[b % batch.eu_inputs.size()]);
          const AlignmentGrad ag = intra_target_loss(spa_map(el[b], batch.prototype_space),
                                                     spa_map(eu, batch.prototype_space), batch.recon_bank, batch.tau);
          r.terms.js_i += ag.value * inv;
          if (want(ObjectiveTerm::kJsI) && grads_on) {
            Upstream up{Tensor(eu.logits.shape()), {}, false};
            add_map_grad(up, eu, ag.d_b, w * inv, batch.prototype_space);
            backprop(eu, params, up, r.grads);
            add_map_grad(el_up[b], el[b], ag.d_a, w * inv, batch.prototype_space);
          }
        }
      }
    }

    for (std::size_t b = 0; b < nl; ++b) backprop(el[b], params, el_up[b], r.grads);
  }

  r.terms.total = combine_terms(r.terms.loss_s, r.terms.loss_u, r.terms.loss_l, r.terms.js_s, r.terms.js_i, batch.omega);
  return r;
}

TrainState init_state(const TrainConfig& cfg, const Dataset& data) {
  cfg.validate();
  TrainState s;
  s.config = cfg;
  SegNetConfig net;
  net.in_channels = data.num_grids;
  net.hidden_channels = cfg.hidden_channels;
  net.num_classes = data.num_classes;
  net.seed = derive_seed(cfg.seed, "student");
  s.student = init_params(net);
  s.teacher = s.student;
  s.optimizer = AdamWState::for_params(s.student);
  const std::size_t dim = cfg.prototype_space == PrototypeSpace::kFeatures ? cfg.hidden_channels : data.num_classes;
  s.source_bank = PrototypeBank(data.num_classes, dim, cfg.prototype_momentum);
  s.recon_bank = PrototypeBank(data.num_classes, dim, cfg.prototype_momentum);
  s.split = split_target(data.target_train.size(), cfg.use_hybrid ? cfg.proportion : 0.0, derive_seed(cfg.seed, "split"));
  return s;
}

void prepare_reconstructions(TrainState& state, const Dataset& data, const ReconstructionChannel& recon) {
  state.recon_inputs.clear();
  for (std::size_t idx : state.split.labeled)
    state.recon_inputs.push_back(image_to_input(recon.reconstruct(data.target_train[idx]), data.num_grids));
}

namespace {

double scheduled_lr(const TrainConfig& cfg, std::int64_t global_step) {
  if (cfg.lr_warmup_iters <= 0) return cfg.lr;
  const double ramp = static_cast<double>(global_step + 1) / static_cast<double>(cfg.lr_warmup_iters);
  return cfg.lr * std::min(1.0, ramp);
}

void apply_step(TrainState& state, const SegNetGrads& grads, double lr) {
  AdamWOptions opt;
  opt.lr = lr;
  opt.weight_decay = state.config.weight_decay;
  optimizer_step(state.student, grads, state.optimizer, opt);
  ++state.global_step;
}

Tensor jittered(const Tensor& input, const TrainConfig& cfg, std::uint64_t seed) {
  return jitter(input, cfg.jitter_strength, seed, cfg.jitter_blur);
}

std::vector<std::size_t> draw(std::size_t pool, std::size_t count, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::size_t> out(count);
  for (auto& v : out) v = rng.below(pool);
  return out;
}

void check_finite(const LossTerms& t, std::int64_t iteration) {
  const std::pair<const char*, double> terms[] = {{"loss_s", t.loss_s}, {"loss_u", t.loss_u}, {"loss_l", t.loss_l},
                                                  {"loss_js_s", t.js_s}, {"loss_js_i", t.js_i}, {"total", t.total}};
  for (const auto& [name, v] : terms)
    if (!std::isfinite(v)) throw NonFiniteLoss(name, iteration);
}

}  // namespace

namespace {

// A diverged student shows up as non-finite logits before any loss exists.
template <typename F>
auto guard_divergence(std::int64_t iteration, F&& step) {
  try {
    return step();
  } catch (const NumericInputError&) {
    throw NonFiniteLoss("forward pass", iteration);
  }
}

}  // namespace

void warmup(TrainState& state, const Dataset& data, std::int64_t iters) {
  if (iters < 0) throw InvalidArgument("warmup: iters must be >= 0");
  const TrainConfig& cfg = state.config;
  if (iters > 0 && data.source.empty()) throw ConfigError("warm-up needs at least one source sample");
  const std::int64_t seed_from = iters - (iters + 9) / 10;
  const std::size_t ch = state.student.config.in_channels;
  for (std::int64_t it = 0; it < iters; ++it) guard_divergence(it, [&] {
    const std::uint64_t seed_it = derive_seed(cfg.seed, "warmup", static_cast<std::uint64_t>(it));
    const auto idx = draw(data.source.size(), cfg.batch_size, derive_seed(seed_it, "batch"));
    FrozenBatch fb;
    for (std::size_t b = 0; b < idx.size(); ++b) {
      fb.source_inputs.push_back(jittered(source_input(data.source[idx[b]], ch), cfg, derive_seed(seed_it, "jitter", b)));
      fb.source_labels.push_back(data.source[idx[b]].labels);
    }
    if (it >= seed_from) {
      std::vector<Tensor> maps;
      for (const auto& in : fb.source_inputs) maps.push_back(spa_map(forward(state.student, in), cfg.prototype_space));
      std::vector<const Tensor*> fp;
      std::vector<const LabelMap*> lp;
      for (std::size_t b = 0; b < maps.size(); ++b) {
        fp.push_back(&maps[b]);
        lp.push_back(&fb.source_labels[b]);
      }
      update_prototypes(state.source_bank, fp, lp);
    }
    const ObjectiveResult res = objective(state.student, fb);
    check_finite(res.terms, it);
    apply_step(state, res.grads, scheduled_lr(cfg, state.global_step));
  });
  state.teacher = state.student;
}

namespace {

StepReport train_step_impl(TrainState& state, const Dataset& data) {
  const TrainConfig& cfg = state.config;
  if (data.source.empty()) throw ConfigError("training needs at least one source sample");
  const std::size_t bsz = cfg.batch_size;
  const std::size_t ch = state.student.config.in_channels;
  const std::size_t k = state.student.config.num_classes;
  const std::uint64_t seed_it = derive_seed(cfg.seed, "train", static_cast<std::uint64_t>(state.iteration));

  FrozenBatch fb;
  fb.use_spa = cfg.use_spa;
  fb.omega = cfg.omega;
  fb.tau = cfg.tau;
  fb.prototype_space = cfg.prototype_space;

  // Source.
  const auto src_idx = draw(data.source.size(), bsz, derive_seed(seed_it, "batch/source"));
  for (std::size_t b = 0; b < bsz; ++b) {
    const SourceSample& s = data.source[src_idx[b]];
    fb.source_inputs.push_back(jittered(source_input(s, ch), cfg, derive_seed(seed_it, "jitter/source", b)));
    fb.source_labels.push_back(s.labels);
  }

  // Unlabeled target: teacher labels on raw grids, student sees jittered grids.
  std::vector<Tensor> eu_jit;
  std::vector<ProbMap> eu_teacher;
  if (!state.split.unlabeled.empty()) {
    const auto pos = draw(state.split.unlabeled.size(), bsz, derive_seed(seed_it, "batch/unlabeled"));
    for (std::size_t b = 0; b < bsz; ++b) {
      const TargetSample& t = data.target_train[state.split.unlabeled[pos[b]]];
      eu_teacher.push_back(prob_of(forward(state.teacher, t.voxels)));
      eu_jit.push_back(jittered(t.voxels, cfg, derive_seed(seed_it, "jitter/unlabeled", b)));
    }
  }

  // Labeled target: refined labels from the reconstruction and the teacher.
  std::vector<Tensor> il_maps;
  std::vector<LabelMap> il_labels;
  if (!state.split.labeled.empty()) {
    const auto pos = draw(state.split.labeled.size(), bsz, derive_seed(seed_it, "batch/labeled"));
    for (std::size_t b = 0; b < bsz; ++b) {
      const TargetSample& t = data.target_train[state.split.labeled[pos[b]]];
      const Tensor& il = state.recon_inputs.at(pos[b]);
      std::optional<ForwardTrace> il_trace;
      if (cfg.online_recon_labels || cfg.use_spa) il_trace = forward(state.student, il);
      const ProbMap psi = cfg.online_recon_labels ? prob_of(*il_trace) : state.offline_recon_prob.at(pos[b]);
      RefinedLabel refined{psi};
      if (cfg.use_nll) refined = refine_label(psi, prob_of(forward(state.teacher, t.voxels)), cfg.alpha);
      if (cfg.use_spa) {
        il_maps.push_back(spa_map(*il_trace, cfg.prototype_space));
        il_labels.push_back(argmax_map(refined.prob));
      }
      fb.el_inputs.push_back(jittered(t.voxels, cfg, derive_seed(seed_it, "jitter/labeled", b)));
      fb.refined.push_back(std::move(refined));
      fb.il_inputs.push_back(il);
    }
  }
  if (!cfg.use_spa) fb.il_inputs.clear();

  if (cfg.use_spa) {
    if (!cfg.freeze_source_prototypes) {
      std::vector<Tensor> maps;
      std::vector<const Tensor*> fp;
      std::vector<const LabelMap*> lp;
      for (const auto& in : fb.source_inputs) maps.push_back(spa_map(forward(state.student, in), cfg.prototype_space));
      for (std::size_t b = 0; b < maps.size(); ++b) {
        fp.push_back(&maps[b]);
        lp.push_back(&fb.source_labels[b]);
      }
      update_prototypes(state.source_bank, fp, lp);
    }
    if (!il_maps.empty()) {
      std::vector<const Tensor*> fp;
      std::vector<const LabelMap*> lp;
      for (std::size_t b = 0; b < il_maps.size(); ++b) {
        fp.push_back(&il_maps[b]);
        lp.push_back(&il_labels[b]);
      }
      update_prototypes(state.recon_bank, fp, lp);
    }
    fb.source_bank = state.source_bank;
    fb.recon_bank = state.recon_bank;
    fb.eu_inputs = eu_jit;
  }

  // Self-training targets, with source classes pasted onto the target grids.
  std::size_t counted_u = 0;
  for (std::size_t b = 0; b < eu_jit.size(); ++b) {
    const ProbMap& tp = eu_teacher[b];
    const LabelMap pseudo = argmax_map(tp);
    PixelMask mask = confidence_mask(tp, cfg.threshold);
    ProbMap target = cfg.hard_pseudo_labels ? one_hot(pseudo, k) : tp;
    Tensor input = eu_jit[b];
    if (cfg.use_classmix) {
      ClassMixResult mix = classmix({fb.source_inputs[b], fb.source_labels[b]}, {eu_jit[b], pseudo},
                                    derive_seed(seed_it, "classmix", b));
      const ProbMap src_onehot = one_hot(fb.source_labels[b], k);
      const std::size_t n = mask.size();
      for (std::size_t i = 0; i < n; ++i) {
        if (!mix.from_a[i]) continue;
        mask[i] = 1;
        for (std::size_t c = 0; c < k; ++c) target[c * n + i] = src_onehot[c * n + i];
      }
      input = std::move(mix.input);
    }
    for (auto m : mask) counted_u += m;
    fb.mixed_inputs.push_back(std::move(input));
    fb.mixed_targets.push_back(std::move(target));
    fb.mixed_masks.push_back(std::move(mask));
  }

  const ObjectiveResult res = objective(state.student, fb);
  check_finite(res.terms, state.iteration);
  const double lr = scheduled_lr(cfg, state.global_step);
  apply_step(state, res.grads, lr);

  auto teacher_tensors = state.teacher.tensors();
  const auto student_tensors = state.student.tensors();
  for (std::size_t i = 0; i < teacher_tensors.size(); ++i)
    ema_blend_inplace(teacher_tensors[i]->data(), student_tensors[i]->data(), cfg.ema_decay);

  StepReport rep;
  rep.iteration = ++state.iteration;
  rep.losses = res.terms;
  rep.lr = lr;
  rep.counted_u_pixels = counted_u;
  return rep;
}

}  // namespace

StepReport train_step(TrainState& state, const Dataset& data) {
  return guard_divergence(state.iteration, [&] { return train_step_impl(state, data); });
}

RunResult run(const TrainConfig& cfg, const Dataset& data, const ReconstructionChannel& recon,
              const StepObserver& observer) {
  if (data.target_test.empty()) throw ConfigError("training needs a non-empty target test split");
  TrainState state = init_state(cfg, data);
  prepare_reconstructions(state, data, recon);
  warmup(state, data, cfg.warmup_iters);
  if (!cfg.online_recon_labels)
    for (const auto& il : state.recon_inputs) state.offline_recon_prob.push_back(prob_of(forward(state.student, il)));

  auto record = [&](std::int64_t iter, const LossTerms& losses) {
    const SegMetrics m = evaluate(state.student, data.target_test);
    state.history.push_back(MetricRow{iter, losses, m.accuracy, m.miou});
  };
  record(0, LossTerms{});
  for (std::int64_t t = 1; t <= cfg.total_iters; ++t) {
    const StepReport rep = train_step(state, data);
    if (observer) observer(state, rep);
    if (t % cfg.eval_interval == 0 || t == cfg.total_iters) record(t, rep.losses);
  }
  return RunResult{std::move(state.history), std::move(state.student), std::move(state.teacher)};
}

std::string metrics_csv(const std::vector<MetricRow>& rows) {
  std::string out = std::string(kMetricsHeader) + "\n";
  char buf[512];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%lld,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n",
                  static_cast<long long>(r.iter), r.losses.loss_s, r.losses.loss_u, r.losses.loss_l, r.losses.js_s,
                  r.losses.js_i, r.losses.total, r.target_acc, r.target_miou);
    out += buf;
  }
  return out;
}

}  // namespace hpl
