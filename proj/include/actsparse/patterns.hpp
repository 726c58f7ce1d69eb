#pragma once

#include <cmath>
#include <filesystem>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "actsparse/calibrator.hpp"
#include "actsparse/forward.hpp"
#include "actsparse/rng.hpp"
#include "actsparse/sparsifier.hpp"

namespace actsparse {

enum class Perturbation { RandomByteReplace };

struct VariantSpec {
  double similarity = 1.0;  // in (0, 1]
  std::uint64_t seed = 0;
  Perturbation perturbation = Perturbation::RandomByteReplace;
};

/// Number of positions a variant of an n-token input modifies:
/// round((1 - similarity) * n), halves rounded up. The small tolerance keeps
/// exact halves such as (1 - 0.9) * 5 from rounding down through 1 - 0.9 <
/// 0.1 in binary.
inline std::size_t variant_edit_count(double similarity, std::size_t n) {
  return static_cast<std::size_t>(std::floor((1.0 - similarity) * static_cast<double>(n) + 0.5 + 1e-9));
}

/// Replaces exactly round((1 - similarity) * n) distinct positions with a
/// different byte. Positions and bytes come from the variant seed.
inline TokenSeq make_variant(std::span<const Token> tokens, const VariantSpec& spec) {
  require(!tokens.empty(), ErrorCode::InvalidArgument, "cannot make a variant of an empty sequence");
  require(spec.similarity > 0.0 && spec.similarity <= 1.0, ErrorCode::InvalidArgument, "similarity outside (0, 1]");
  const std::size_t n = tokens.size();
  const std::size_t edits = variant_edit_count(spec.similarity, n);
  TokenSeq out(tokens.begin(), tokens.end());
  Rng rng = Rng::stream(spec.seed, "variants");
  std::vector<std::size_t> pos(n);
  std::iota(pos.begin(), pos.end(), std::size_t{0});
  for (std::size_t i = 0; i < edits; ++i) {
    std::swap(pos[i], pos[i + rng.below(n - i)]);
    const std::size_t p = pos[i];
    const auto r = static_cast<unsigned>(rng.below(kVocabSize - 1));
    out[p] = static_cast<Token>(r < tokens[p] ? r : r + 1);
  }
  return out;
}

struct MatchEntry {
  double match = 1.0;   // fraction of positions with equal bits
  double recall = 1.0;  // |A and B| / |A|, 1 when A is empty
};

inline MatchEntry match_rate(const ActivationMask& a, const ActivationMask& b) {
  require(a.granularity == b.granularity && a.dim == b.dim && a.rows() == b.rows() && a.bits.size() == b.bits.size(),
          ErrorCode::Shape, "masks differ in shape or granularity");
  require(!a.bits.empty(), ErrorCode::Shape, "empty masks");
  std::size_t equal = 0, active_a = 0, both = 0;
  for (std::size_t i = 0; i < a.bits.size(); ++i) {
    equal += a.bits[i] == b.bits[i];
    active_a += a.bits[i];
    both += a.bits[i] & b.bits[i];
  }
  MatchEntry e;
  e.match = static_cast<double>(equal) / static_cast<double>(a.bits.size());
  e.recall = active_a == 0 ? 1.0 : static_cast<double>(both) / static_cast<double>(active_a);
  return e;
}

struct StudyRow {
  std::size_t sample_id = 0;
  double similarity = 1.0;
  std::size_t layer = 0;
  double elementwise_match = 1.0;  // per-token masks
  double aggregated_match = 1.0;   // per-segment OR masks
  double recall = 1.0;             // baseline-active neurons also active in the variant
};

/// One input and its FFN-hidden OR masks, indexed by position in `layers`.
struct PatternRecord {
  std::size_t sample_id = 0;
  double similarity = 1.0;  // 1.0 for the baseline sample itself
  TokenSeq tokens;
  std::vector<std::size_t> layers;
  std::vector<ActivationMask> masks;
};

struct StudyResult {
  std::vector<StudyRow> rows;
  std::vector<PatternRecord> baselines;
  std::vector<PatternRecord> variants;
};

/// Per-token FFN-hidden masks after enforcement for one input, at `layers`.
inline std::vector<ActivationMask> hidden_masks(const ModelConfig& c, const WeightSet& w, std::span<const Token> tokens,
                                                const SparsityConfig& cfg, const std::vector<std::size_t>& layers) {
  std::set<HookPoint> taps;
  for (auto l : layers) taps.insert({l, Component::FFNHidden});
  auto fr = forward(c, w, tokens, taps, &cfg);
  std::vector<ActivationMask> out;
  for (auto l : layers) {
    Matrix h = fr.taps.at({l, Component::FFNHidden});
    if (cfg.enforce_at.count(Component::FFNHidden))
      if (auto t = cfg.table.find({l, Component::FFNHidden})) enforce_in_place(h.data, *t);
    out.push_back(extract_mask(h, l, Component::FFNHidden, MaskGranularity::PerToken));
  }
  return out;
}

/// Runs every sample and its variants with FFN-hidden enforcement from
/// `table` and compares activation masks layer by layer. Variant seeds are
/// spec.seed + sample_id so samples get distinct edits.
inline StudyResult pattern_study(const ModelConfig& c, const WeightSet& w, const std::vector<TokenSeq>& samples,
                                 const std::vector<VariantSpec>& specs, const ThresholdTable& table,
                                 std::vector<std::size_t> layers = {}) {
  if (layers.empty())
    for (std::size_t l = 0; l < c.n_layers; ++l) layers.push_back(l);
  for (auto l : layers) require(l < c.n_layers, ErrorCode::Config, "study layer out of range");
  SparsityConfig cfg;
  cfg.table = table;
  cfg.enforce_at = {Component::FFNHidden};
  validate(c, cfg);

  StudyResult res;
  for (std::size_t sid = 0; sid < samples.size(); ++sid) {
    const auto base = hidden_masks(c, w, samples[sid], cfg, layers);
    PatternRecord brec{sid, 1.0, samples[sid], layers, {}};
    for (const auto& m : base) brec.masks.push_back(aggregate_or(m));
    for (const auto& spec : specs) {
      VariantSpec vs = spec;
      vs.seed = spec.seed + sid;
      const TokenSeq variant = make_variant(samples[sid], vs);
      const auto var = hidden_masks(c, w, variant, cfg, layers);
      PatternRecord vrec{sid, spec.similarity, variant, layers, {}};
      for (std::size_t i = 0; i < layers.size(); ++i) {
        const auto agg = aggregate_or(var[i]);
        const auto elem = match_rate(base[i], var[i]);
        const auto aggm = match_rate(brec.masks[i], agg);
        res.rows.push_back({sid, spec.similarity, layers[i], elem.match, aggm.match, aggm.recall});
        vrec.masks.push_back(agg);
      }
      res.variants.push_back(std::move(vrec));
    }
    res.baselines.push_back(std::move(brec));
  }
  return res;
}

/// Calibrates FFN-hidden thresholds at `alpha` on the baseline samples
/// themselves, then runs the study.
inline StudyResult pattern_study(const ModelConfig& c, const WeightSet& w, const std::vector<TokenSeq>& samples,
                                 const std::vector<VariantSpec>& specs, double alpha,
                                 std::vector<std::size_t> layers = {}) {
  std::set<HookPoint> taps;
  for (std::size_t l = 0; l < c.n_layers; ++l) taps.insert({l, Component::FFNHidden});
  std::size_t seg_len = 1;
  for (const auto& s : samples) seg_len = std::max(seg_len, s.size());
  const ActivationStore calib = collect(c, w, samples, taps, seg_len);
  return pattern_study(c, w, samples, specs, compute_thresholds(calib, alpha, {Component::FFNHidden}),
                       std::move(layers));
}

inline std::string study_csv(const StudyResult& r) {
  std::ostringstream os;
  os.precision(10);
  os << "sample_id,similarity,layer,elementwise_match,aggregated_match,recall\n";
  for (const auto& row : r.rows)
    os << row.sample_id << "," << row.similarity << "," << row.layer << "," << row.elementwise_match << ","
       << row.aggregated_match << "," << row.recall << "\n";
  return os.str();
}

struct HeatmapWindow {
  std::size_t token_start = 0;
  std::size_t neuron_start = 0;
  std::size_t tokens = 25;
  std::size_t neurons = 25;
};

namespace detail {

inline void check_window(const HeatmapWindow& win, std::size_t rows, std::size_t cols) {
  require(win.tokens > 0 && win.neurons > 0, ErrorCode::Bounds, "empty heatmap window");
  require(win.token_start + win.tokens <= rows && win.neuron_start + win.neurons <= cols, ErrorCode::Bounds,
          "heatmap window [" + std::to_string(win.token_start) + "+" + std::to_string(win.tokens) + ", " +
              std::to_string(win.neuron_start) + "+" + std::to_string(win.neurons) + "] exceeds [" +
              std::to_string(rows) + " x " + std::to_string(cols) + "]");
}

}  // namespace detail

/// Token-by-neuron crop of a per-token mask, as 0/1 values.
inline Matrix heatmap_grid(const ActivationMask& m, const HeatmapWindow& win) {
  detail::check_window(win, m.rows(), m.dim);
  Matrix g(win.tokens, win.neurons);
  for (std::size_t t = 0; t < win.tokens; ++t)
    for (std::size_t j = 0; j < win.neurons; ++j) g(t, j) = m.at(win.token_start + t, win.neuron_start + j) ? 1.0f : 0.0f;
  return g;
}

/// Token-by-neuron crop of activation magnitudes.
inline Matrix heatmap_grid(const Matrix& activations, const HeatmapWindow& win) {
  detail::check_window(win, activations.rows, activations.cols);
  Matrix g(win.tokens, win.neurons);
  for (std::size_t t = 0; t < win.tokens; ++t)
    for (std::size_t j = 0; j < win.neurons; ++j)
      g(t, j) = std::fabs(activations(win.token_start + t, win.neuron_start + j));
  return g;
}

/// Rows are tokens, columns neurons; no header.
inline std::string grid_csv(const Matrix& g) {
  std::ostringstream os;
  os.precision(9);
  for (std::size_t r = 0; r < g.rows; ++r) {
    for (std::size_t c = 0; c < g.cols; ++c) os << (c ? "," : "") << g(r, c);
    os << "\n";
  }
  return os.str();
}

template <typename Source>
Matrix heatmap_export(const Source& src, const HeatmapWindow& win, const std::filesystem::path& out) {
  Matrix g = heatmap_grid(src, win);
  io::write_text_atomic(out, grid_csv(g));
  return g;
}

}  // namespace actsparse
