#include "hpl/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "hpl/numeric.hpp"
#include "hpl/random.hpp"

namespace hpl {

namespace {

constexpr std::size_t kClasses = 3;
constexpr std::size_t kSide = 8;
constexpr std::size_t kHidden = 4;
constexpr std::size_t kChannels = 2;
constexpr std::size_t kBatch = 2;
constexpr double kKinkMargin = 1e-4;
// The Euclidean distance is not smooth at a prototype either.
constexpr double kConeMargin = 2e-4;

Tensor random_input(Rng& rng) {
  Tensor t = Tensor::chw(kChannels, kSide, kSide);
  for (auto& v : t.values()) v = rng.normal();
  return t;
}

LabelMap random_labels(Rng& rng) {
  LabelMap l(kSide, kSide);
  for (auto& v : l.data) v = static_cast<std::uint8_t>(rng.below(kClasses));
  return l;
}

ProbMap random_prob(Rng& rng) {
  Tensor logits = Tensor::chw(kClasses, kSide, kSide);
  for (auto& v : logits.values()) v = 2.0 * rng.normal();
  return softmax(logits, 0);
}

double term_value(const LossTerms& t, ObjectiveTerm which) {
  switch (which) {
    case ObjectiveTerm::kLossS: return t.loss_s;
    case ObjectiveTerm::kLossU: return t.loss_u;
    case ObjectiveTerm::kLossL: return t.loss_l;
    case ObjectiveTerm::kJsS: return t.js_s;
    case ObjectiveTerm::kJsI: return t.js_i;
    case ObjectiveTerm::kAll: return t.total;
  }
  return t.total;
}

std::string parameter_name(const SegNetParams& p, std::size_t index) {
  const auto tensors = p.tensors();
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    if (index < tensors[i]->size()) return std::string(SegNetParams::tensor_names()[i]) + "[" + std::to_string(index) + "]";
    index -= tensors[i]->size();
  }
  return "?";
}

}  // namespace

bool GradCheckReport::passed() const {
  return std::all_of(terms.begin(), terms.end(), [](const GradCheckTerm& t) { return t.passed; });
}

namespace {

// Smallest |pre-activation| over every forward pass the objective makes.
double kink_margin(const SegNetParams& params, const FrozenBatch& fb) {
  double margin = INFINITY;
  auto scan = [&](const std::vector<Tensor>& inputs) {
    for (const auto& in : inputs) {
      const ForwardTrace tr = forward(params, in);
      for (const Tensor* t : {&tr.pre1, &tr.pre2})
        for (double v : t->values()) margin = std::min(margin, std::abs(v));
    }
  };
  scan(fb.source_inputs);
  scan(fb.mixed_inputs);
  scan(fb.el_inputs);
  scan(fb.il_inputs);
  scan(fb.eu_inputs);
  return margin;
}

double cone_margin(const SegNetParams& params, const FrozenBatch& fb) {
  double margin = INFINITY;
  for (const auto* inputs : {&fb.el_inputs, &fb.il_inputs, &fb.eu_inputs}) {
    for (const auto& in : *inputs) {
      const ForwardTrace tr = forward(params, in);
      const Tensor map = fb.prototype_space == PrototypeSpace::kFeatures ? tr.features : softmax(tr.logits, 0);
      for (const auto* bank : {&fb.source_bank, &fb.recon_bank}) {
        const SoftAssignment a = soft_assign(map, *bank, fb.tau);
        for (double d : a.distance.values()) margin = std::min(margin, d);
      }
    }
  }
  return margin;
}

FrozenBatch build_batch(std::uint64_t seed, PrototypeSpace space, SegNetParams& params_out) {
  SegNetConfig net;
  net.in_channels = kChannels;
  net.hidden_channels = kHidden;
  net.num_classes = kClasses;
  net.seed = derive_seed(seed, "gradcheck/params");
  params_out = init_params(net);
  // Non-zero biases so every parameter has a generic gradient.
  Rng rng(derive_seed(seed, "gradcheck/batch"));
  for (Tensor* t : {&params_out.conv1_b, &params_out.conv2_b, &params_out.head_b})
    for (auto& v : t->values()) v = 0.1 * rng.normal();

  FrozenBatch fb;
  fb.use_spa = true;
  fb.omega = 0.5;
  // Sharp assignments keep the JS terms well above round-off.
  fb.tau = space == PrototypeSpace::kFeatures ? 0.25 : 0.05;
  fb.prototype_space = space;
  for (std::size_t b = 0; b < kBatch; ++b) {
    fb.source_inputs.push_back(random_input(rng));
    fb.source_labels.push_back(random_labels(rng));
    fb.mixed_inputs.push_back(random_input(rng));
    fb.mixed_targets.push_back(one_hot(random_labels(rng), kClasses));
    PixelMask mask(kSide * kSide);
    for (auto& m : mask) m = rng.uniform() < 0.75 ? 1 : 0;
    fb.mixed_masks.push_back(std::move(mask));
    fb.el_inputs.push_back(random_input(rng));
    fb.refined.push_back(refine_label(random_prob(rng), random_prob(rng), 0.5));
    fb.il_inputs.push_back(random_input(rng));
    fb.eu_inputs.push_back(random_input(rng));
  }

  // Banks from the network's own maps so assignments are not saturated.
  const std::size_t dim = space == PrototypeSpace::kFeatures ? kHidden : kClasses;
  fb.source_bank = PrototypeBank(kClasses, dim, 0.9);
  fb.recon_bank = PrototypeBank(kClasses, dim, 0.9);
  auto map_of = [&](const Tensor& in) {
    const ForwardTrace tr = forward(params_out, in);
    return space == PrototypeSpace::kFeatures ? tr.features : softmax(tr.logits, 0);
  };
  for (std::size_t b = 0; b < kBatch; ++b) {
    update_prototypes(fb.source_bank, map_of(fb.source_inputs[b]), fb.source_labels[b]);
    update_prototypes(fb.recon_bank, map_of(fb.il_inputs[b]), argmax_map(fb.refined[b].prob));
  }
  return fb;
}

}  // namespace

FrozenBatch gradcheck_batch(std::uint64_t seed, PrototypeSpace space, SegNetParams& params_out) {
  // ReLU kinks or prototypes within reach of the probe step make central
  // differences meaningless, so such draws are skipped.
  constexpr int kMaxAttempts = 256;
  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    FrozenBatch fb = build_batch(derive_seed(seed, "gradcheck/attempt", attempt), space, params_out);
    const bool banks_full = fb.source_bank.seen_count() == kClasses && fb.recon_bank.seen_count() == kClasses;
    if (banks_full && kink_margin(params_out, fb) > kKinkMargin && cone_margin(params_out, fb) > kConeMargin) return fb;
  }
  throw Error("gradcheck: no kink-free instance found");
}

GradCheckReport run_gradcheck(const GradCheckOptions& opt) {
  SegNetParams params;
  const FrozenBatch fb = gradcheck_batch(opt.seed, opt.prototype_space, params);

  const std::pair<const char*, ObjectiveTerm> terms[] = {
      {"L_s", ObjectiveTerm::kLossS},  {"L_u", ObjectiveTerm::kLossU},   {"L_l", ObjectiveTerm::kLossL},
      {"L_JS_S", ObjectiveTerm::kJsS}, {"L_JS_I", ObjectiveTerm::kJsI}, {"total", ObjectiveTerm::kAll}};

  // Central differences of every term, two objective evaluations per parameter.
  const std::size_t np = params.parameter_count();
  std::vector<std::vector<double>> numeric(std::size(terms), std::vector<double>(np));
  SegNetParams probe = params;
  for (std::size_t i = 0; i < np; ++i) {
    const double orig = probe.flat(i);
    probe.flat(i) = orig + opt.step;
    const LossTerms plus = objective(probe, fb).terms;
    probe.flat(i) = orig - opt.step;
    const LossTerms minus = objective(probe, fb).terms;
    probe.flat(i) = orig;
    for (std::size_t t = 0; t < std::size(terms); ++t)
      numeric[t][i] = (term_value(plus, terms[t].second) - term_value(minus, terms[t].second)) / (2.0 * opt.step);
  }

  GradCheckReport report;
  for (std::size_t t = 0; t < std::size(terms); ++t) {
    ObjectiveResult res = objective(params, fb, terms[t].second);
    if (opt.inject_sign_flip && terms[t].second == ObjectiveTerm::kLossL) res.grads *= -1.0;
    double scale = 0.0;
    for (std::size_t i = 0; i < np; ++i) scale = std::max(scale, std::abs(res.grads.flat(i)));
    const double floor = std::max(opt.relative_floor * scale, 1e-300);
    GradCheckTerm r;
    r.name = terms[t].first;
    for (std::size_t i = 0; i < np; ++i) {
      const double a = res.grads.flat(i), n = numeric[t][i];
      const double rel = std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
      if (rel > r.max_rel_error || i == 0) {
        r.max_rel_error = rel;
        r.worst_index = i;
      }
    }
    r.worst_parameter = parameter_name(params, r.worst_index);
    r.passed = r.max_rel_error <= opt.tolerance;
    report.terms.push_back(std::move(r));
  }
  return report;
}

}  // namespace hpl
