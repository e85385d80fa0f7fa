// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.
//   hpl_acceptance [--only 1,2,...] [--seeds N] [--cli PATH]

#include <sys/resource.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <functional>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "hpl/ablation.hpp"
#include "hpl/binary_io.hpp"
#include "hpl/eval.hpp"
#include "hpl/events.hpp"
#include "hpl/gradcheck.hpp"
#include "hpl/labeling.hpp"
#include "hpl/numeric.hpp"
#include "hpl/random.hpp"
#include "hpl/trainer.hpp"

#ifndef HPL_CLI_PATH
#define HPL_CLI_PATH "hpl"
#endif

namespace fs = std::filesystem;
using namespace hpl;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double cpu_seconds() {
  rusage self{}, kids{};
  getrusage(RUSAGE_SELF, &self);
  getrusage(RUSAGE_CHILDREN, &kids);
  auto secs = [](const timeval& t) { return t.tv_sec + t.tv_usec * 1e-6; };
  return secs(self.ru_utime) + secs(self.ru_stime) + secs(kids.ru_utime) + secs(kids.ru_stime);
}

double wall_seconds(std::chrono::steady_clock::time_point since) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - since).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

std::vector<double> simplex(Rng& rng, std::size_t k) {
  std::vector<double> p(k);
  double s = 0.0;
  for (auto& v : p) s += (v = -std::log(1.0 - rng.uniform()));
  for (auto& v : p) v /= s;
  return p;
}

Outcome divergence_suite() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(derive_seed(1, "acceptance/divergence"));
  double worst_asym = 0.0, lo = INFINITY, hi = -INFINITY, worst_self = 0.0, min_kl = INFINITY;
  for (int i = 0; i < 1000; ++i) {
    const std::size_t k = 2 + rng.below(7);
    const auto p = simplex(rng, k), q = simplex(rng, k);
    const double pq = js_div(p, q), qp = js_div(q, p);
    worst_asym = std::max(worst_asym, std::abs(pq - qp));
    lo = std::min(lo, pq);
    hi = std::max(hi, pq);
    worst_self = std::max(worst_self, std::abs(js_div(p, p)));
    min_kl = std::min({min_kl, kl_div(p, q), kl_div(q, p), kl_div(p, p)});
  }
  const double secs = wall_seconds(t0);
  const bool ok = worst_asym == 0.0 && lo >= 0.0 && hi <= std::log(2.0) + 1e-12 && worst_self == 0.0 &&
                  min_kl >= -1e-12 && secs < 1.0;
  return {ok, fmt("1000 pairs: |JS(p,q)-JS(q,p)| max %.1e, JS in [%.3e, %.6f], JS(p,p) max %.1e, KL min %.2e, %.3f s",
                  worst_asym, lo, hi, worst_self, min_kl, secs)};
}

Outcome gradient_suite() {
  const auto t0 = std::chrono::steady_clock::now();
  std::map<std::string, double> worst;
  bool all = true;
  int runs = 0;
  for (auto space : {PrototypeSpace::kFeatures, PrototypeSpace::kProbabilities}) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      GradCheckOptions opt;
      opt.seed = seed;
      opt.prototype_space = space;
      const GradCheckReport r = run_gradcheck(opt);
      for (const auto& t : r.terms) {
        worst[t.name] = std::max(worst[t.name], t.max_rel_error);
        all = all && t.passed && t.max_rel_error <= 1e-5;
      }
      ++runs;
    }
  }
  const double secs = wall_seconds(t0);
  std::string detail = fmt("%d instances (K=3, 8x8, D=4; both prototype spaces), step 1e-6; max rel err", runs);
  for (const char* name : {"L_s", "L_u", "L_l", "L_JS_S", "L_JS_I", "total"}) detail += fmt(" %s %.1e", name, worst[name]);
  detail += fmt("; %.1f s", secs);
  return {all && worst.size() == 6 && secs < 30.0, detail};
}

Outcome refine_contract() {
  Rng rng(derive_seed(3, "acceptance/refine"));
  std::size_t off_simplex = 0, endpoint_errors = 0;
  double worst_mid = 0.0;
  for (int i = 0; i < 100; ++i) {
    const std::size_t k = 2 + rng.below(7), h = 1 + rng.below(6), w = 1 + rng.below(6);
    ProbMap a({k, h, w}), b({k, h, w});
    const std::size_t n = h * w;
    for (std::size_t px = 0; px < n; ++px) {
      const auto pa = simplex(rng, k), pb = simplex(rng, k);
      for (std::size_t c = 0; c < k; ++c) a[c * n + px] = pa[c], b[c * n + px] = pb[c];
    }
    const double alpha = rng.uniform();
    if (!is_prob_map(refine_label(a, b, alpha).prob, 1e-12)) ++off_simplex;
    if (!(refine_label(a, b, 0.0).prob == a) || !(refine_label(a, b, 1.0).prob == b)) ++endpoint_errors;
    const ProbMap mid = refine_label(a, b, 0.5).prob;
    for (std::size_t j = 0; j < mid.size(); ++j) worst_mid = std::max(worst_mid, std::abs(mid[j] - (a[j] + b[j]) / 2.0));
  }
  return {off_simplex == 0 && endpoint_errors == 0 && worst_mid <= 1e-15,
          fmt("100 pairs: %zu off the simplex, %zu inexact endpoints, midpoint max error %.1e", off_simplex,
              endpoint_errors, worst_mid)};
}

DataConfig small_data(std::uint64_t seed) {
  DataConfig d;
  d.width = d.height = 16;
  d.num_source = 8;
  d.num_target_train = 20;
  d.num_target_test = 4;
  d.events_per_grid = 100;
  d.num_grids = 4;
  d.source_pool.min_size = d.target_pool.min_size = 4;
  d.source_pool.max_size = d.target_pool.max_size = 7;
  d.seed = seed;
  return d;
}

Outcome ema_contract() {
  const Dataset data = generate_dataset(small_data(41));
  OracleReconstruction recon(ReconChannelConfig{});
  std::string detail = "100-step replay:";
  bool ok = true;
  for (double d : {0.0, 0.9, 0.999, 1.0}) {
    TrainConfig cfg;
    cfg.ema_decay = d;
    cfg.lr = 1e-3;
    cfg.warmup_iters = 5;
    cfg.total_iters = 100;
    cfg.hidden_channels = 4;
    cfg.proportion = 0.2;
    TrainState s = init_state(cfg, data);
    prepare_reconstructions(s, data, recon);
    warmup(s, data, cfg.warmup_iters);
    std::size_t mismatched = 0;
    for (int t = 0; t < 100; ++t) {
      const SegNetParams before = s.teacher;
      train_step(s, data);
      for (std::size_t i = 0; i < before.parameter_count(); ++i) {
        const double expect = d * before.flat(i) + (1.0 - d) * s.student.flat(i);
        if (std::memcmp(&expect, &s.teacher.flat(i), sizeof(double)) != 0) ++mismatched;
      }
    }
    ok = ok && mismatched == 0;
    detail += fmt(" d=%g %zu mismatched values;", d, mismatched);
  }
  return {ok, detail};
}

EventStream random_stream(Rng& rng, std::size_t n, std::uint32_t w, std::uint32_t h) {
  EventStream s;
  s.width = w;
  s.height = h;
  s.events.resize(n);
  std::uint64_t t = 0;
  for (auto& e : s.events) {
    t += rng.below(3);
    e = Event{static_cast<std::uint16_t>(rng.below(w)), static_cast<std::uint16_t>(rng.below(h)), t,
              static_cast<std::uint8_t>(rng.below(2))};
  }
  return s;
}

Outcome voxel_suite() {
  // Full event counts of each preset on reduced sensors; surplus events are
  // prepended so the newest-suffix rule is exercised.
  const VoxelPreset presets[] = {kDsecPreset, kDdd17Preset, kDeskPreset, {37, 3}, {1, 5}};
  Rng rng(derive_seed(5, "acceptance/voxel"));
  std::size_t literal_ok = 0, identity_ok = 0, partition_ok = 0, signed_ok = 0, streams = 0;
  std::size_t dsec_streams = 0;
  for (int i = 0; i < 50; ++i) {
    const VoxelPreset p = presets[i % std::size(presets)];
    if (p.events_per_grid == kDsecPreset.events_per_grid) ++dsec_streams;
    const std::uint32_t w = 16 + rng.below(49), h = 16 + rng.below(33);
    const std::size_t need = p.events_per_grid * p.num_grids, surplus = rng.below(need / 4 + 2);
    const EventStream s = random_stream(rng, need + surplus, w, h);
    const Tensor v = voxelize(s, p.events_per_grid, p.num_grids);
    ++streams;

    // Per-event bookkeeping: window of every consumed event, and per-cell
    // positive/negative counts.
    const std::size_t first = s.events.size() - need, plane = static_cast<std::size_t>(w) * h;
    std::vector<std::uint32_t> pos(p.num_grids * plane, 0), neg(p.num_grids * plane, 0);
    std::vector<std::size_t> per_window(p.num_grids, 0);
    for (std::size_t j = first; j < s.events.size(); ++j) {
      const std::size_t window = (j - first) / p.events_per_grid;
      ++per_window[window];
      const Event& e = s.events[j];
      auto& bucket = e.p ? pos : neg;
      ++bucket[window * plane + static_cast<std::size_t>(e.y) * w + e.x];
    }
    bool partition = std::all_of(per_window.begin(), per_window.end(), [&](std::size_t n) { return n == p.events_per_grid; });
    double abs_sum = 0.0;
    std::size_t cancelled = 0;
    bool cells_match = true;
    for (std::size_t c = 0; c < pos.size(); ++c) {
      abs_sum += std::abs(v[c]);
      cancelled += std::min(pos[c], neg[c]);
      cells_match = cells_match && v[c] == static_cast<double>(pos[c]) - static_cast<double>(neg[c]);
    }
    partition_ok += partition;
    signed_ok += cells_match;
    identity_ok += abs_sum + 2.0 * static_cast<double>(cancelled) == static_cast<double>(need);
    literal_ok += abs_sum == static_cast<double>(need);
  }
  const bool ok = partition_ok == streams && signed_ok == streams && identity_ok == streams && dsec_streams > 0;
  return {ok, fmt("%zu streams (%zu at 100000x40): window partition %zu/%zu, cells = per-window +/- tallies %zu/%zu, "
                  "sum|cells| + 2*cancelled pairs = consumed %zu/%zu (no-cancellation form sum|cells| = consumed "
                  "%zu/%zu)",
                  streams, dsec_streams, partition_ok, streams, signed_ok, streams, identity_ok, streams, literal_ok,
                  streams)};
}

Outcome metric_oracle() {
  Rng rng(derive_seed(6, "acceptance/metrics"));
  double worst = 0.0;
  for (int i = 0; i < 200; ++i) {
    const std::size_t k = 2 + rng.below(7), h = 1 + rng.below(12), w = 1 + rng.below(12);
    LabelMap pred(h, w), truth(h, w);
    for (auto& v : pred.data) v = static_cast<std::uint8_t>(rng.below(k));
    for (auto& v : truth.data) v = static_cast<std::uint8_t>(rng.below(k));
    std::size_t correct = 0;
    double iou = 0.0;
    std::size_t present = 0;
    for (std::size_t c = 0; c < k; ++c) {
      std::set<std::size_t> ps, ts, inter, uni;
      for (std::size_t j = 0; j < pred.data.size(); ++j) {
        if (pred.data[j] == c) ps.insert(j), uni.insert(j);
        if (truth.data[j] == c) ts.insert(j), uni.insert(j);
        if (pred.data[j] == c && truth.data[j] == c) inter.insert(j);
      }
      if (!uni.empty()) iou += static_cast<double>(inter.size()) / uni.size(), ++present;
    }
    for (std::size_t j = 0; j < pred.data.size(); ++j) correct += pred.data[j] == truth.data[j];
    const SegMetrics m = metrics(confusion(pred, truth, k));
    worst = std::max({worst, std::abs(m.accuracy - static_cast<double>(correct) / pred.data.size()),
                      std::abs(m.miou - iou / present)});
  }
  LabelMap truth(4, 4), pred(4, 4, 0);
  for (std::size_t j = 8; j < 16; ++j) truth.data[j] = 1;
  const double closed = metrics(confusion(pred, truth, 2)).miou;
  return {worst <= 1e-12 && closed == 0.25,
          fmt("200 random pairs: max deviation from brute-force sets %.1e; balanced 2-class, constant prediction mIoU %.17g",
              worst, closed)};
}

std::vector<std::uint64_t> seed_list(std::size_t n) {
  std::vector<std::uint64_t> s(n);
  std::iota(s.begin(), s.end(), 0);
  return s;
}

const AblationResultRow& row_named(const AblationReport& r, const std::string& label) {
  for (const auto& row : r.rows)
    if (row.row.label == label) return row;
  throw Error("missing ablation row " + label);
}

std::string row_summary(const AblationReport& r) {
  std::string s;
  for (const auto& row : r.rows) s += fmt("%s %.4f, ", row.row.label.c_str(), row.mean_miou);
  return s;
}

AblationProgress echo_progress(const std::vector<AblationRow>& rows) {
  return [&rows](std::size_t r, std::size_t, const AblationCell& c) {
    std::fprintf(stderr, "  %s seed %llu: mIoU %.4f\n", rows[r].label.c_str(), static_cast<unsigned long long>(c.seed),
                 c.miou);
  };
}

Outcome table3_ordering(std::size_t seeds) {
  const double cpu0 = cpu_seconds();
  const auto rows = table3_rows();
  const AblationReport r = run_ablation("table3", desk_benchmark(), rows, seed_list(seeds), echo_progress(rows));
  const double cpu_min = (cpu_seconds() - cpu0) / 60.0;
  const double c = row_named(r, "c").mean_miou, d = row_named(r, "d").mean_miou, e = row_named(r, "e").mean_miou,
               f = row_named(r, "f").mean_miou, full = row_named(r, "full").mean_miou;
  const bool gain = full >= c + 0.03, e_ok = e >= d, f_ok = f >= d;
  return {gain && e_ok && f_ok && cpu_min < 25.0,
          fmt("mean mIoU over %zu seeds: %sfull-c %+.4f (%s), e-d %+.4f (%s), f-d %+.4f (%s); %.1f CPU-min", seeds,
              row_summary(r).c_str(), full - c, gain ? "ok" : "short", e - d, e_ok ? "ok" : "below", f - d,
              f_ok ? "ok" : "below", cpu_min)};
}

Outcome table5_ordering(std::size_t seeds) {
  const auto rows = table5_rows();
  const AblationReport r = run_ablation("table5", desk_benchmark(), rows, seed_list(seeds), echo_progress(rows));
  const double on = row_named(r, "online").mean_miou, off = row_named(r, "offline").mean_miou;
  return {on >= off, fmt("mean mIoU over %zu seeds: %sonline-offline %+.4f", seeds, row_summary(r).c_str(), on - off)};
}

Outcome determinism(const std::string& cli) {
  const fs::path dir = fs::temp_directory_path() / fmt("hpl_acceptance_%d", static_cast<int>(::getpid()));
  fs::remove_all(dir);
  fs::create_directories(dir);
  auto sh = [&](const std::string& cmd) { return std::system((cmd + " > /dev/null 2>&1").c_str()); };
  const std::string q = "'" + dir.string() + "'";
  bool ok = sh(cli + " gen-data --out " + q + "/data") == 0;
  ok = ok && sh(cli + " train --desk --data " + q + "/data --out " + q + "/run1") == 0;
  ok = ok && sh(cli + " train --desk --data " + q + "/data --out " + q + "/run2") == 0;
  std::string detail;
  if (!ok) {
    detail = "CLI invocation failed (" + cli + ")";
  } else {
    const std::string a = bin::read_file(dir / "run1" / "metrics.csv"), b = bin::read_file(dir / "run2" / "metrics.csv");
    ok = a == b && !a.empty();
    detail = fmt("two full train runs (benchmark data, seed 0): metrics.csv %zu and %zu bytes, %s", a.size(), b.size(),
                 ok ? "byte-identical" : "DIFFERENT");
  }
  fs::remove_all(dir);
  return {ok, detail};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::vector<int> only;
  std::size_t seeds = 5;
  std::string cli = HPL_CLI_PATH;
  app.add_option("--only", only, "Criteria to run (default: all)")->delimiter(',');
  app.add_option("--seeds", seeds, "Seeds for the ablation criteria");
  app.add_option("--cli", cli, "Path of the hpl binary");
  CLI11_PARSE(app, argc, argv);

  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"divergence suite", divergence_suite},
      {"gradient suite", gradient_suite},
      {"label refinement contract", refine_contract},
      {"EMA contract", ema_contract},
      {"voxelization", voxel_suite},
      {"metric oracle", metric_oracle},
      {"ablation ordering (c/d/e/f/full)", [&] { return table3_ordering(seeds); }},
      {"online vs offline reconstruction labels", [&] { return table5_ordering(seeds); }},
      {"determinism", [&] { return determinism(cli); }},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i + 1);
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::printf("[%s] %d. %s: %s\n", o.pass ? "PASS" : "FAIL", id, criteria[i].first, o.detail.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
