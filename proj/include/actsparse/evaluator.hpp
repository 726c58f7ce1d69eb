#pragma once

#include <chrono>
#include <cmath>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "actsparse/calibrator.hpp"
#include "actsparse/collector.hpp"
#include "actsparse/forward.hpp"
#include "actsparse/sparsifier.hpp"

namespace actsparse {

struct CorpusScore {
  std::uint64_t tokens_scored = 0;
  double total_nll = 0.0;  // nats

  double mean_nll() const { return total_nll / static_cast<double>(tokens_scored); }
  double perplexity() const { return std::exp(mean_nll()); }
};

/// Scores a token stream in consecutive non-overlapping windows of
/// `window_len` tokens. Within each window, token t+1 is scored from the
/// logits at position t, so the first token of every window goes unscored.
/// `logits_fn(window)` must return a [window.size() x vocab] matrix.
/// Reduction runs in ascending window order in double precision.
template <typename LogitsFn>
CorpusScore score_corpus(std::span<const Token> tokens, std::size_t window_len, LogitsFn&& logits_fn) {
  require(tokens.size() >= 2, ErrorCode::InvalidArgument, "perplexity needs at least 2 tokens");
  require(window_len >= 2, ErrorCode::InvalidArgument, "evaluation window must hold at least 2 tokens");
  CorpusScore score;
  for (const auto& window : segment_tokens(tokens, window_len)) {
    if (window.size() < 2) continue;
    const Matrix logits = logits_fn(std::span<const Token>(window));
    require(logits.rows == window.size(), ErrorCode::Shape, "logits rows do not match window length");
    for (std::size_t t = 0; t + 1 < window.size(); ++t) {
      const auto row = logits.row(t);
      require(all_finite(row), ErrorCode::Evaluation, "non-finite logits at window position " + std::to_string(t));
      double mx = row[0];
      for (float v : row) mx = std::max(mx, static_cast<double>(v));
      double sum = 0.0;
      for (float v : row) sum += std::exp(static_cast<double>(v) - mx);
      score.total_nll += std::log(sum) + mx - static_cast<double>(row[window[t + 1]]);
      ++score.tokens_scored;
    }
  }
  require(score.tokens_scored > 0, ErrorCode::InvalidArgument, "no tokens to score");
  require(std::isfinite(score.total_nll), ErrorCode::Evaluation, "non-finite negative log-likelihood");
  return score;
}

struct PPLReport {
  std::string corpus_hash;
  std::string model_hash;
  double alpha = 0.0;
  std::set<Component> enforce_at;
  bool skip_compute = false;
  std::uint64_t tokens_scored = 0;
  double mean_nll = 0.0;
  double perplexity = 0.0;
  EnforcementStats achieved;  // per enforced hook point

  double achieved_sparsity_mean() const {
    if (achieved.empty()) return 0.0;
    double s = 0.0;
    for (const auto& [hp, c] : achieved) s += c.fraction();
    return s / static_cast<double>(achieved.size());
  }
};

/// Perplexity of the model on `corpus`, optionally with threshold
/// enforcement. Windows are max_seq_len tokens unless `window_len` is given.
inline PPLReport perplexity(const ModelConfig& c, const WeightSet& w, std::span<const Token> corpus,
                            const SparsityConfig* sparsity = nullptr, std::size_t window_len = 0) {
  if (window_len == 0) window_len = c.max_seq_len;
  require(window_len <= c.max_seq_len, ErrorCode::InvalidArgument, "window longer than max_seq_len");
  PPLReport r;
  r.corpus_hash = hash_bytes_hex(corpus);
  r.model_hash = model_fingerprint(c, w);
  if (sparsity) {
    r.alpha = sparsity->table.alpha;
    r.enforce_at = sparsity->enforce_at;
    r.skip_compute = sparsity->skip_compute;
  }
  const CorpusScore score = score_corpus(corpus, window_len, [&](std::span<const Token> window) {
    auto fr = forward(c, w, window, {}, sparsity);
    merge(r.achieved, fr.stats);
    return std::move(fr.logits);
  });
  r.tokens_scored = score.tokens_scored;
  r.mean_nll = score.mean_nll();
  r.perplexity = score.perplexity();
  return r;
}

struct SweepRow {
  double alpha = 0.0;
  PPLReport report;
  double wall_ms = 0.0;
};

struct SweepReport {
  std::vector<SweepRow> rows;
};

inline void check_store_matches(const ActivationStore& store, const ModelConfig& c, const WeightSet& w) {
  const std::string fp = model_fingerprint(c, w);
  require(store.model_config_hash == fp, ErrorCode::HashMismatch,
          "activation store was produced by model " + store.model_config_hash + ", weights are " + fp);
}

/// Calibrates thresholds on `store` for each alpha and measures perplexity on
/// `corpus` with enforcement at `enforce_at`. alphas must be strictly
/// ascending and start at 0 (the dense baseline row).
inline SweepReport sweep(const ModelConfig& c, const WeightSet& w, const ActivationStore& store,
                         std::span<const Token> corpus, const std::vector<double>& alphas,
                         const std::set<Component>& enforce_at = {Component::FFNHidden}, bool skip_compute = false,
                         std::size_t window_len = 0) {
  require(!alphas.empty() && alphas.front() == 0.0, ErrorCode::InvalidArgument, "sweep alphas must start at 0");
  for (std::size_t i = 0; i < alphas.size(); ++i) {
    require(alphas[i] >= 0.0 && alphas[i] <= 1.0, ErrorCode::InvalidArgument, "alpha outside [0, 1]");
    require(i == 0 || alphas[i] > alphas[i - 1], ErrorCode::InvalidArgument, "sweep alphas must be strictly ascending");
  }
  require(!enforce_at.empty(), ErrorCode::InvalidArgument, "enforce_at is empty");
  check_store_matches(store, c, w);
  const SortedActivations sorted = sort_activations(store, enforce_at);
  SweepReport rep;
  for (double a : alphas) {
    SparsityConfig cfg;
    cfg.table = sorted.thresholds(a);
    cfg.enforce_at = enforce_at;
    cfg.skip_compute = skip_compute;
    const auto t0 = std::chrono::steady_clock::now();
    PPLReport r = perplexity(c, w, corpus, &cfg, window_len);
    const auto t1 = std::chrono::steady_clock::now();
    rep.rows.push_back({a, std::move(r), std::chrono::duration<double, std::milli>(t1 - t0).count()});
  }
  return rep;
}

inline nlohmann::json to_json(const EnforcementStats& stats) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& [hp, cnt] : stats)
    out.push_back({{"layer", hp.layer},
                   {"component", std::string(to_string(hp.component))},
                   {"zeroed", cnt.zeroed},
                   {"total", cnt.total},
                   {"sparsity", cnt.fraction()}});
  return out;
}

inline nlohmann::json to_json(const PPLReport& r) {
  nlohmann::json enforce = nlohmann::json::array();
  for (Component comp : r.enforce_at) enforce.push_back(std::string(to_string(comp)));
  return {{"corpus_hash", r.corpus_hash},
          {"model_hash", r.model_hash},
          {"alpha", r.alpha},
          {"enforce_at", enforce},
          {"skip_compute", r.skip_compute},
          {"tokens_scored", r.tokens_scored},
          {"mean_nll", r.mean_nll},
          {"perplexity", r.perplexity},
          {"achieved_sparsity_mean", r.achieved_sparsity_mean()},
          {"achieved_sparsity", to_json(r.achieved)}};
}

/// with_timing = false writes wall_ms as 0 so reports are byte-reproducible.
inline nlohmann::json to_json(const SweepReport& s, bool with_timing = true) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : s.rows) {
    auto j = to_json(row.report);
    j["wall_ms"] = with_timing ? row.wall_ms : 0.0;
    rows.push_back(std::move(j));
  }
  return {{"rows", rows}};
}

inline std::string sweep_csv(const SweepReport& s, bool with_timing = true) {
  std::ostringstream os;
  os.precision(10);
  os << "alpha,ppl,achieved_sparsity_mean,wall_ms\n";
  for (const auto& row : s.rows)
    os << row.alpha << "," << row.report.perplexity << "," << row.report.achieved_sparsity_mean() << ","
       << (with_timing ? row.wall_ms : 0.0) << "\n";
  return os.str();
}

}  // namespace actsparse
