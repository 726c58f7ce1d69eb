// Acceptance run: one PASS/FAIL line per criterion, non-zero exit if any
// criterion fails. Tolerances are fixed here and nowhere else.
//
// The sweep regression curve lives in ACTSPARSE_FIXTURE_DIR/sweep_ppl.csv.
// Set ACTSPARSE_WRITE_FIXTURE=1 to (re)record it from the current build.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "actsparse/actsparse.hpp"
#include "support/corpus.hpp"
#include "support/event_replay.hpp"
#include "support/framing.hpp"
#include "support/models.hpp"
#include "support/oracles.hpp"

using namespace actsparse;
namespace tk = actsparse::testkit;

namespace {

// Pinned tolerances.
constexpr double kCriterion1MaxSeconds = 60.0;
constexpr double kReluSparsityLo = 0.40, kReluSparsityHi = 0.60;
constexpr double kSwigluSparsityMax = 0.001;
constexpr double kNewGeluSparsityMax = 0.01;
constexpr double kSweepFloorRatio = 0.95;
constexpr double kSweepFixtureRelTol = 0.01;
constexpr double kSweepMaxSeconds = 600.0;
constexpr double kRandomMatchTol = 0.01;
constexpr double kFfnShareLo = 0.60, kFfnShareHi = 0.85;

struct Outcome {
  bool pass = true;
  std::string detail;

  void fail(const std::string& why) {
    if (pass) detail.clear();
    pass = false;
    detail += (detail.empty() ? "" : "; ") + why;
  }
  void check(bool ok, const std::string& why) {
    if (!ok) fail(why);
  }
};

std::string fmt(double v, int prec = 6) {
  std::ostringstream os;
  os.precision(prec);
  os << v;
  return os.str();
}

// ---------------------------------------------------------------------------
// Shared trained model for criteria 5-7.

struct Trained {
  ModelConfig c;
  WeightSet w;
  TokenSeq calib, eval;
  double train_seconds = 0;
};

const Trained& trained() {
  static const Trained t = [] {
    Trained r;
    r.c.n_layers = 2;
    r.c.d_model = 64;
    r.c.n_heads = 4;
    r.c.d_ff = 256;
    r.c.max_seq_len = 128;
    r.c.ffn_variant = FfnVariant::SwiGLU;
    r.c.seed = 2024;
    const TokenSeq corpus = tokenize(tk::prose(1'000'000, 101));
    r.calib = tokenize(tk::prose(16'384, 102));
    r.eval = tokenize(tk::prose(32'768, 103));
    TrainHyperparams hp;
    hp.lr = 1e-3f;
    hp.batch = 8;
    hp.context = 128;
    const auto t0 = std::chrono::steady_clock::now();
    r.w = train(r.c, corpus, 2000, hp);
    r.train_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return r;
  }();
  return t;
}

ModelConfig probe_config(FfnVariant v) {
  ModelConfig c;
  c.n_layers = 4;
  c.d_model = 128;
  c.n_heads = 4;
  c.d_ff = 512;
  c.max_seq_len = 256;
  c.ffn_variant = v;
  c.seed = 77;
  return c;
}

constexpr FfnVariant kVariants[] = {FfnVariant::ReLU, FfnVariant::NewGELU, FfnVariant::SwiGLU};

// ---------------------------------------------------------------------------

Outcome criterion1() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  std::size_t exact_cases = 0, tie_cases = 0;
  for (std::uint64_t i = 0; i < 100; ++i) {
    Rng rng = Rng::stream(1000 + i, "criterion1");
    auto n = static_cast<std::size_t>(std::llround(std::pow(10.0, 3.0 + 2.0 * rng.uniform())));
    if (i % 4 == 0) n -= n % 100;  // alpha * n integral for every percent alpha
    std::vector<float> values = tk::random_values(n, rng, 0.1 + 3.0 * rng.uniform());
    if (i % 5 == 4) {
      for (auto& v : values) v = std::round(v * 8.0f) / 8.0f;  // heavy ties
      ++tie_cases;
    }
    const std::uint64_t num = rng.below(101);
    const double alpha = static_cast<double>(num) / 100.0;

    // Pool over three segments of unequal length.
    ActivationStore store;
    const std::size_t cut1 = n / 3, cut2 = n / 3 + n / 5;
    const std::size_t cuts[] = {0, cut1, cut2, n};
    for (std::size_t s = 0; s < 3; ++s) {
      std::vector<float> part(values.begin() + static_cast<std::ptrdiff_t>(cuts[s]),
                              values.begin() + static_cast<std::ptrdiff_t>(cuts[s + 1]));
      const std::size_t len = part.size();
      store.records.push_back({s, 0, Component::FFNHidden, Matrix(1, len, std::move(part))});
    }
    const float t = compute_thresholds(store, alpha, {Component::FFNHidden}).entries.at({0, Component::FFNHidden});
    const float oracle = tk::sorted_threshold(values, num, 100);
    o.check(std::bit_cast<std::uint32_t>(t) == std::bit_cast<std::uint32_t>(oracle),
            "vector " + std::to_string(i) + ": T=" + fmt(t, 9) + " oracle=" + fmt(oracle, 9));

    const std::size_t zeroed = tk::count_below(values, t);
    o.check(zeroed * 100 <= num * n, "vector " + std::to_string(i) + ": achieved sparsity exceeds alpha");

    std::vector<float> s(values.size());
    for (std::size_t j = 0; j < n; ++j) s[j] = std::fabs(values[j]);
    std::sort(s.begin(), s.end());
    const std::size_t k = static_cast<std::size_t>(num * n / 100);
    const bool integral = (num * n) % 100 == 0;
    const bool tie_free = k == 0 || k >= n || s[k - 1] != s[k];
    if (integral && tie_free && num > 0) {
      ++exact_cases;
      o.check(zeroed == k, "vector " + std::to_string(i) + ": tie-free integral case not exact");
    }
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  o.check(exact_cases >= 10, "too few tie-free integral cases exercised");
  o.check(secs < kCriterion1MaxSeconds, "took " + fmt(secs) + " s");
  if (o.pass)
    o.detail = "100 vectors match the sort oracle bit-exactly; " + std::to_string(exact_cases) +
               " tie-free integral cases exact; " + std::to_string(tie_cases) + " tie-heavy; " + fmt(secs, 3) + " s";
  return o;
}

Outcome criterion2() {
  Outcome o;
  const TokenSeq text = tokenize(tk::prose(4096, 21));
  const TokenSeq tokens(text.begin(), text.begin() + 256);
  for (FfnVariant v : kVariants) {
    const ModelConfig c = probe_config(v);
    const WeightSet w = init_weights(c);
    const ActivationStore store = collect(c, w, {tokens}, tk::all_ffn_taps(c), 256);
    const ThresholdTable table =
        compute_thresholds(store, 0.0, v == FfnVariant::SwiGLU
                                           ? std::set<Component>{Component::GateProj, Component::UpProj,
                                                                 Component::FFNHidden, Component::DownProjInput}
                                           : std::set<Component>{Component::UpProj, Component::FFNHidden,
                                                                 Component::DownProjInput});
    const Matrix dense = forward(c, w, tokens).logits;
    for (bool skip : {false, true}) {
      const SparsityConfig cfg = enforce_everywhere(table, skip);
      o.check(tk::bit_equal(forward(c, w, tokens, {}, &cfg).logits, dense),
              std::string(to_string(v)) + (skip ? " skip" : " masked") + " differs from dense");
    }
    o.check(tk::bit_equal(forward(c, w, tokens, {}, table).logits, dense),
            std::string(to_string(v)) + " table overload differs from dense");
  }
  if (o.pass) o.detail = "relu, new_gelu, swiglu: 4x128x512 model, 256 tokens, logits bit-identical (masked and skip)";
  return o;
}

Outcome criterion3() {
  Outcome o;
  const auto segments = segment_tokens(tokenize(tk::prose(8 * 256, 31)), 256);
  std::string detail;
  for (FfnVariant v : kVariants) {
    const ModelConfig c = probe_config(v);
    const WeightSet w = init_weights(c);
    std::set<HookPoint> taps;
    for (std::size_t l = 0; l < c.n_layers; ++l) taps.insert({l, Component::FFNHidden});
    const ActivationStore store = collect(c, w, segments, taps, 256);
    double lo = 1.0, hi = 0.0;
    for (std::size_t l = 0; l < c.n_layers; ++l) {
      const double s = natural_sparsity(store, l, Component::FFNHidden);
      lo = std::min(lo, s);
      hi = std::max(hi, s);
      const std::string where = std::string(to_string(v)) + " layer " + std::to_string(l) + " = " + fmt(s);
      switch (v) {
        case FfnVariant::ReLU: o.check(s >= kReluSparsityLo && s <= kReluSparsityHi, where); break;
        case FfnVariant::SwiGLU: o.check(s <= kSwigluSparsityMax, where); break;
        case FfnVariant::NewGELU: o.check(s <= kNewGeluSparsityMax, where); break;
      }
    }
    detail += (detail.empty() ? "" : ", ") + std::string(to_string(v)) + " [" + fmt(lo, 4) + ", " + fmt(hi, 4) + "]";
  }
  if (o.pass) o.detail = detail;
  return o;
}

Outcome criterion4() {
  Outcome o;
  const TokenSeq text = tokenize(tk::prose(8192, 41));
  Rng rng = Rng::stream(4, "criterion4");
  std::vector<std::pair<ModelConfig, WeightSet>> models;
  for (FfnVariant v : kVariants) {
    ModelConfig c = probe_config(v);
    models.emplace_back(c, init_weights(c));
  }
  for (int i = 0; i < 50; ++i) {
    const auto& [c, w] = models[static_cast<std::size_t>(i) % models.size()];
    const std::size_t layer = rng.below(c.n_layers);
    const double alpha = rng.uniform();
    const std::size_t len = 16 + rng.below(241), start = rng.below(text.size() - len);
    const TokenSeq tokens(text.begin() + static_cast<std::ptrdiff_t>(start),
                          text.begin() + static_cast<std::ptrdiff_t>(start + len));
    const ActivationStore store = collect(c, w, {tokens}, {{layer, Component::FFNHidden}}, 256);
    SparsityConfig masked;
    masked.table = compute_thresholds(store, alpha, {Component::FFNHidden});
    SparsityConfig skip = masked;
    skip.skip_compute = true;
    const std::set<HookPoint> taps{{layer, Component::DownProjInput}};
    const auto a = forward(c, w, tokens, taps, &masked), b = forward(c, w, tokens, taps, &skip);
    o.check(tk::bit_equal(a.logits, b.logits) &&
                tk::bit_equal(a.taps.at({layer, Component::DownProjInput}), b.taps.at({layer, Component::DownProjInput})),
            "case " + std::to_string(i) + " (" + std::string(to_string(c.ffn_variant)) + ", layer " +
                std::to_string(layer) + ", alpha " + fmt(alpha, 3) + ")");
  }
  if (o.pass) o.detail = "50 random (variant, layer, alpha) cases bit-identical";
  return o;
}

std::optional<std::vector<std::pair<double, double>>> read_fixture(const std::string& path) {
  std::ifstream in(path);
  if (!in) return std::nullopt;
  std::vector<std::pair<double, double>> rows;
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    double a, p;
    char sep;
    std::istringstream row(line);
    if (row >> a >> sep >> p) rows.emplace_back(a, p);
  }
  return rows;
}

Outcome criterion5() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  const Trained& t = trained();
  const std::vector<double> alphas{0.0, 0.1, 0.2, 0.3, 0.4, 0.5};
  const ActivationStore store =
      collect(t.c, t.w, segment_tokens(t.calib, t.c.max_seq_len), {{0, Component::FFNHidden}, {1, Component::FFNHidden}},
              t.c.max_seq_len);
  const SweepReport rep = sweep(t.c, t.w, store, t.eval, alphas);
  const PPLReport dense = perplexity(t.c, t.w, t.eval);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  o.check(rep.rows.size() == alphas.size(), "row count");
  o.check(rep.rows[0].report.mean_nll == dense.mean_nll, "PPL(0) differs from dense");
  for (const auto& r : rep.rows) o.check(std::isfinite(r.report.perplexity), "non-finite PPL at " + fmt(r.alpha));
  const double p0 = rep.rows.front().report.perplexity, p5 = rep.rows.back().report.perplexity;
  o.check(p5 >= kSweepFloorRatio * p0, "PPL(0.5)=" + fmt(p5) + " < 0.95*PPL(0)=" + fmt(kSweepFloorRatio * p0));
  o.check(secs < kSweepMaxSeconds, "train+sweep took " + fmt(secs) + " s");

  const std::string path = std::string(ACTSPARSE_FIXTURE_DIR) + "/sweep_ppl.csv";
  const char* record = std::getenv("ACTSPARSE_WRITE_FIXTURE");
  std::string fixture_note;
  if (record && std::string(record) == "1") {
    std::ostringstream os;
    os.precision(10);
    os << "alpha,ppl\n";
    for (const auto& r : rep.rows) os << r.alpha << "," << r.report.perplexity << "\n";
    io::write_text_atomic(path, os.str());
    fixture_note = "fixture recorded";
  } else if (auto rows = read_fixture(path)) {
    o.check(rows->size() == rep.rows.size(), "fixture has " + std::to_string(rows->size()) + " rows");
    for (std::size_t i = 0; i < std::min(rows->size(), rep.rows.size()); ++i) {
      const double want = (*rows)[i].second, got = rep.rows[i].report.perplexity;
      o.check((*rows)[i].first == rep.rows[i].alpha && std::fabs(got / want - 1.0) <= kSweepFixtureRelTol,
              "alpha " + fmt(rep.rows[i].alpha) + ": PPL " + fmt(got) + " vs fixture " + fmt(want));
    }
    fixture_note = "within 1% of fixture";
  } else {
    o.fail("fixture " + path + " missing (record with ACTSPARSE_WRITE_FIXTURE=1)");
  }
  if (o.pass) {
    std::ostringstream os;
    os << "PPL";
    for (const auto& r : rep.rows) os << " " << fmt(r.alpha, 2) << ":" << fmt(r.report.perplexity, 5);
    os << "; achieved sparsity at 0.5 = " << fmt(rep.rows.back().report.achieved_sparsity_mean(), 4) << "; "
       << fixture_note << "; train " << fmt(t.train_seconds, 4) << " s, total " << fmt(secs, 4) << " s";
    o.detail = os.str();
  }
  return o;
}

Outcome criterion6() {
  Outcome o;
  // Identity: similarity 1.0 on the trained model, twelve samples, all layers.
  const Trained& t = trained();
  std::vector<TokenSeq> samples;
  for (auto& seg : segment_tokens(t.eval, t.c.max_seq_len))
    if (samples.size() < 12) samples.push_back(std::move(seg));
  const StudyResult study = pattern_study(t.c, t.w, samples, {{1.0, 5}}, 0.5);
  o.check(study.rows.size() == 12 * t.c.n_layers, "study row count");
  for (const auto& r : study.rows)
    o.check(r.elementwise_match == 1.0 && r.aggregated_match == 1.0 && r.recall == 1.0,
            "identity variant below 100% at sample " + std::to_string(r.sample_id));

  // Exact perturbation counts, against integer rounding (halves up).
  std::size_t count_cases = 0;
  for (int pct : {95, 90, 85, 80, 75, 70}) {
    for (std::size_t n = 1; n <= 300; n += 7) {
      const TokenSeq base = tk::random_tokens(n, n);
      const TokenSeq var = make_variant(base, {pct / 100.0, 17 + n, Perturbation::RandomByteReplace});
      std::size_t diff = 0;
      for (std::size_t i = 0; i < n; ++i) diff += base[i] != var[i];
      const std::size_t want = ((100 - static_cast<std::size_t>(pct)) * n * 2 + 100) / 200;
      o.check(diff == want, "s=0." + std::to_string(pct) + " n=" + std::to_string(n) + ": " + std::to_string(diff) +
                                " edits, expected " + std::to_string(want));
      ++count_cases;
    }
  }

  // Chance agreement of independent masks.
  Rng rng = Rng::stream(6, "criterion6");
  std::string chance;
  for (double p : {0.1, 0.3, 0.5, 0.7, 0.9}) {
    ActivationMask a, b;
    a.n_tokens = b.n_tokens = 1000;
    a.dim = b.dim = 1000;
    a.bits.resize(1'000'000);
    b.bits.resize(1'000'000);
    for (auto& x : a.bits) x = rng.uniform() < p;
    for (auto& x : b.bits) x = rng.uniform() < p;
    const double m = match_rate(a, b).match, expect = p * p + (1 - p) * (1 - p);
    o.check(std::fabs(m - expect) <= kRandomMatchTol, "p=" + fmt(p) + ": match " + fmt(m) + " vs " + fmt(expect));
    chance += (chance.empty() ? "" : " ") + fmt(m - expect, 2);
  }
  if (o.pass)
    o.detail = "identity 100% on 12 samples x " + std::to_string(t.c.n_layers) + " layers; " +
               std::to_string(count_cases) + " exact edit counts; chance-rate deviations " + chance;
  return o;
}

Outcome criterion7() {
  Outcome o;
  Rng rng = Rng::stream(7, "criterion7");
  std::size_t dominance_checks = 0;
  for (int i = 0; i < 200; ++i) {
    const std::size_t width = 2 * (8 + rng.below(249));
    Trace trace;
    trace.n_tokens = 1 + rng.below(256);
    const double density = rng.uniform();
    for (int l = 0; l < 4; ++l) {
      NeuronMask m(width);
      for (auto& b : m) b = rng.uniform() < density;
      trace.active.push_back(std::move(m));
    }
    // Predictor with random recall r and false-positive rate q.
    const double r = rng.uniform(), q = rng.uniform() * 0.5;
    Prediction pred;
    for (const auto& a : trace.active) {
      NeuronMask m(width);
      for (std::size_t j = 0; j < width; ++j) m[j] = a[j] ? rng.uniform() < r : rng.uniform() < q;
      pred.masks.push_back(std::move(m));
    }
    pred.issue_after_layer = rng.below(3) == 0 ? 0 : -1;
    HierarchyParams p;
    p.bytes_per_neuron = 256 + rng.below(4096);
    p.bandwidth_bytes_per_s = 1e6 * static_cast<double>(1 + rng.below(1000));
    p.request_latency_s = 1e-4 * static_cast<double>(1 + rng.below(100));
    p.compute_s_per_token_neuron = 1e-8 * static_cast<double>(1 + rng.below(1000));
    p.lookahead_layers = 1 + rng.below(3);

    const auto rep = simulate_prediction(trace, pred, p);
    const auto ev = tk::event_replay(trace, pred, p);
    bool same = rep.total_latency_s == ev.total && rep.peak_memory_bytes == ev.peak_bytes &&
                rep.bytes_prefetched == ev.bytes_prefetched && rep.bytes_demand == ev.bytes_demand;
    for (std::size_t l = 0; l < 4; ++l)
      same = same && rep.layers[l].start_s == ev.layers[l].start && rep.layers[l].end_s == ev.layers[l].end;
    o.check(same, "trace " + std::to_string(i) + " differs from event replay");

    // Bytes close over predicted-or-active neurons.
    std::uint64_t uni = 0;
    for (std::size_t l = 0; l < 4; ++l)
      for (std::size_t j = 0; j < width; ++j)
        uni += (trace.active[l][j] || (static_cast<int>(l) > pred.issue_after_layer && pred.masks[l][j]));
    o.check(rep.bytes_prefetched + rep.bytes_demand == uni * p.bytes_per_neuron, "byte accounting, trace " +
                                                                                     std::to_string(i));

    const auto oracle = simulate(trace, Predictor(PredictorKind::Oracle), p);
    const auto null = simulate(trace, Predictor(PredictorKind::Null), p);
    o.check(oracle.total_latency_s <= rep.total_latency_s && oracle.total_latency_s <= null.total_latency_s,
            "oracle beaten on trace " + std::to_string(i));
    dominance_checks += 2;

    HierarchyParams fast = p;
    fast.bandwidth_bytes_per_s *= 1.0 + 9.0 * rng.uniform();
    o.check(simulate_prediction(trace, pred, fast).total_latency_s <= rep.total_latency_s &&
                simulate(trace, Predictor(PredictorKind::Null), fast).total_latency_s <= null.total_latency_s,
            "bandwidth increase raised latency on trace " + std::to_string(i));

    // Exactly half of every layer active: Oracle moves half the dense bytes.
    Trace half = trace;
    for (auto& m : half.active) {
      std::fill(m.begin(), m.end(), 0);
      std::vector<std::size_t> idx(width);
      for (std::size_t j = 0; j < width; ++j) idx[j] = j;
      for (std::size_t j = 0; j < width / 2; ++j) {
        std::swap(idx[j], idx[j + rng.below(width - j)]);
        m[idx[j]] = 1;
      }
    }
    const auto h = simulate(half, Predictor(PredictorKind::Oracle), p);
    o.check(2 * h.bytes_prefetched == h.dense_ffn_bytes && h.bytes_demand == 0 && h.stall_s == 0.0 &&
                2 * h.resident_ffn_bytes == h.dense_ffn_bytes,
            "oracle at half density, trace " + std::to_string(i));
  }

  // A real run: one input, thresholds calibrated layer by layer at alpha 0.5
  // on the run itself, so each layer keeps exactly half its neurons.
  const Trained& t = trained();
  const TokenSeq one{static_cast<Token>('t')};
  SparsityConfig cfg;
  cfg.enforce_at.clear();
  for (std::size_t l = 0; l < t.c.n_layers; ++l) {
    const auto fr = forward(t.c, t.w, one, {{l, Component::FFNHidden}}, &cfg);
    cfg.enforce_at = {Component::FFNHidden};
    cfg.table.entries[{l, Component::FFNHidden}] = threshold_for(fr.taps.at({l, Component::FFNHidden}).data, 0.5);
  }
  std::vector<std::size_t> layers(t.c.n_layers);
  for (std::size_t l = 0; l < layers.size(); ++l) layers[l] = l;
  const Trace real = trace_from_masks(hidden_masks(t.c, t.w, one, cfg, layers));
  HierarchyParams p;
  p.bytes_per_neuron = bytes_per_neuron(t.c);
  const auto rr = simulate(real, Predictor(PredictorKind::Oracle), p);
  o.check(2 * rr.bytes_prefetched == rr.dense_ffn_bytes && rr.bytes_demand == 0 && rr.stall_s == 0.0,
          "trained-model oracle run at alpha 0.5 fetched " + std::to_string(rr.bytes_prefetched) + " of " +
              std::to_string(rr.dense_ffn_bytes));

  if (o.pass)
    o.detail = "200 random 4-layer traces equal event replay exactly; " + std::to_string(dominance_checks) +
               " dominance and 400 bandwidth checks hold; oracle at 50% active moves 50% of dense bytes (" +
               std::to_string(rr.bytes_prefetched) + "/" + std::to_string(rr.dense_ffn_bytes) +
               " on the trained model)";
  return o;
}

Outcome criterion8() {
  Outcome o;
  ModelConfig c;
  c.n_layers = 32;
  c.d_model = 4096;
  c.n_heads = 32;
  c.d_ff = 14336;
  c.max_seq_len = 8192;
  c.ffn_variant = FfnVariant::SwiGLU;
  const auto b = param_breakdown(c);
  o.check(b.ffn_params_per_layer == std::uint64_t{3} * 4096 * 14336, "per-layer FFN count");
  o.check(b.ffn_fraction_of_layer_params >= kFfnShareLo && b.ffn_fraction_of_layer_params <= kFfnShareHi,
          "FFN share " + fmt(b.ffn_fraction_of_layer_params));
  if (o.pass)
    o.detail = "FFN share of layer weights " + fmt(b.ffn_fraction_of_layer_params, 4) + " (" +
               std::to_string(b.ffn_params_per_layer) + " per layer)";
  return o;
}

Outcome criterion9() {
  Outcome o;
  const ModelConfig c = tk::tiny_config(FfnVariant::SwiGLU, 2);
  const WeightSet w = tk::scrambled_weights(c);
  const auto segs = segment_tokens(tokenize(tk::prose(200, 91)), 32);
  const ActivationStore store = collect(c, w, segs, tk::all_ffn_taps(c), 32);
  SparsityConfig cfg;
  cfg.table = compute_thresholds(store, 0.5, {Component::FFNHidden});
  const ActivationMask mask = hidden_masks(c, w, segs[0], cfg, {1})[0];

  const auto wb = encode_weights(c, w);
  const auto [c2, w2] = decode_weights(wb);
  o.check(encode_weights(c2, w2) == wb && model_fingerprint(c2, w2) == model_fingerprint(c, w), "weights round trip");
  const auto sb = encode_store(store);
  o.check(encode_store(decode_store(sb)) == sb, "store round trip");
  const auto mb = encode_mask(mask);
  o.check(decode_mask(mb) == mask && encode_mask(decode_mask(mb)) == mb, "mask round trip");

  auto corrupt = [](std::vector<std::uint8_t> b, std::size_t at, std::uint8_t v) {
    b[at] = v;
    return b;
  };
  auto cut = [](std::vector<std::uint8_t> b, std::size_t n) {
    b.resize(b.size() - n);
    return b;
  };
  struct Case {
    std::string name;
    std::vector<std::uint8_t> bytes;
    std::function<void(const std::vector<std::uint8_t>&)> decode;
    ErrorCode want;
  };
  const auto dw = [](const std::vector<std::uint8_t>& b) { decode_weights(b); };
  const auto ds = [](const std::vector<std::uint8_t>& b) { decode_store(b); };
  const auto dm = [](const std::vector<std::uint8_t>& b) { decode_mask(b); };
  const std::vector<Case> cases{
      {"weights/magic", corrupt(wb, 0, 'X'), dw, ErrorCode::BadMagic},
      {"weights/version", tk::reframe(wb, kWeightMagic, [](auto& h, auto&) { h["format_version"] = 2; }), dw,
       ErrorCode::VersionMismatch},
      {"weights/truncated", cut(wb, 4), dw, ErrorCode::Truncated},
      {"weights/header-length", corrupt(wb, 6 + 7, 0x7f), dw, ErrorCode::Truncated},
      {"weights/shape", tk::reframe(wb, kWeightMagic, [](auto& h, auto&) { h["tensors"][0]["shape"][0] = 3; }), dw,
       ErrorCode::IndexInconsistent},
      {"store/magic", corrupt(sb, 1, 'X'), ds, ErrorCode::BadMagic},
      {"store/version", tk::reframe(sb, kStoreMagic, [](auto& h, auto&) { h["format_version"] = 9; }), ds,
       ErrorCode::VersionMismatch},
      {"store/truncated", cut(sb, 1), ds, ErrorCode::Truncated},
      {"store/duplicate", tk::reframe(sb, kStoreMagic, [](auto& h, auto&) { h["records"][1] = h["records"][0]; }), ds,
       ErrorCode::IndexInconsistent},
      {"mask/magic", corrupt(mb, 2, 'X'), dm, ErrorCode::BadMagic},
      {"mask/truncated", cut(mb, 1), dm, ErrorCode::Truncated},
      {"mask/granularity", tk::reframe(mb, kMaskMagic, [](auto& h, auto&) { h["granularity"] = "some"; }), dm,
       ErrorCode::IndexInconsistent},
  };
  std::set<ErrorCode> seen;
  for (const auto& k : cases) {
    ErrorCode got;
    try {
      got = tk::error_code([&] { k.decode(k.bytes); });
    } catch (const std::exception& e) {
      o.fail(k.name + ": no library error (" + e.what() + ")");
      continue;
    }
    o.check(got == k.want, k.name + ": got '" + to_string(got) + "', want '" + to_string(k.want) + "'");
    seen.insert(got);
  }
  o.check(seen.size() == 4, "expected four distinct error kinds");
  if (o.pass)
    o.detail = "weights, store, mask round-trip bit-exactly; " + std::to_string(cases.size()) +
               " corrupted fixtures map to bad magic / version mismatch / truncated / inconsistent index";
  return o;
}

}  // namespace

// With arguments, runs only the listed criterion numbers.
int main(int argc, char** argv) {
  std::set<std::size_t> only;
  for (int i = 1; i < argc; ++i) only.insert(std::stoul(argv[i]));
  const std::vector<std::pair<const char*, Outcome (*)()>> criteria{
      {"percentile threshold oracle", criterion1},  {"dense equivalence at alpha 0", criterion2},
      {"natural sparsity by FFN variant", criterion3}, {"skip-compute equivalence", criterion4},
      {"sparsity/perplexity sweep", criterion5},      {"variant and match algebra", criterion6},
      {"prefetch simulator", criterion7},             {"FFN parameter share", criterion8},
      {"file format round trips", criterion9},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (!only.empty() && !only.count(i + 1)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o.fail(std::string("exception: ") + e.what());
    }
    failed += !o.pass;
    std::printf("%s %zu %s: %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first, o.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
