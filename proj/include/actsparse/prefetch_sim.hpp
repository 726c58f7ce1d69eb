#pragma once

// Analytic model of predictor-driven FFN weight prefetching from slow
// storage. One storage channel serves requests one at a time in the fixed
// order pf(0), demand(0), pf(1), demand(1), ...:
//
//   pf(l)      predicted neurons of layer l. Starts once the channel is free,
//              the prediction is available, and layer l - lookahead has
//              started computing.
//   demand(l)  truly active but unpredicted neurons. Issued when layer l is
//              ready (layer l-1 done) and pf(l) has landed; compute stalls
//              until it completes.
//
// A request of n bytes takes latency + n / bandwidth (zero-byte requests are
// not issued). Layer l computes for n_tokens * |active(l)| * unit cost.
// Neuron weights become resident when their request starts and are released
// when their layer finishes computing.

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "actsparse/model.hpp"
#include "actsparse/patterns.hpp"
#include "actsparse/rng.hpp"
#include "actsparse/sparsifier.hpp"

namespace actsparse {

using NeuronMask = std::vector<std::uint8_t>;  // one 0/1 entry per neuron

/// Defaults are illustrative round numbers, not measurements.
struct HierarchyParams {
  double bandwidth_bytes_per_s = 100e6;
  double request_latency_s = 10e-3;
  std::uint64_t memory_capacity_bytes = std::uint64_t{1} << 32;
  std::uint64_t bytes_per_neuron = 0;
  double compute_s_per_token_neuron = 1e-7;
  std::size_t lookahead_layers = 1;
};

/// 32-bit weights of one neuron: its W_gate and W_up columns (gate only for
/// SwiGLU) plus its W_down row.
inline std::uint64_t bytes_per_neuron(const ModelConfig& c) {
  const std::uint64_t mats = c.ffn_variant == FfnVariant::SwiGLU ? 3 : 2;
  return mats * c.d_model * sizeof(float);
}

inline void validate(const HierarchyParams& p) {
  require(p.bandwidth_bytes_per_s > 0 && p.request_latency_s > 0 && p.memory_capacity_bytes > 0 &&
              p.bytes_per_neuron > 0 && p.compute_s_per_token_neuron > 0,
          ErrorCode::InvalidArgument, "hierarchy parameters must all be strictly positive");
  require(p.lookahead_layers >= 1, ErrorCode::InvalidArgument, "lookahead must be at least one layer");
}

/// Seconds to move `bytes` in one request; 0 when nothing is moved.
inline double transfer_seconds(const HierarchyParams& p, std::uint64_t bytes) {
  if (bytes == 0) return 0.0;
  return p.request_latency_s + static_cast<double>(bytes) / p.bandwidth_bytes_per_s;
}

/// True per-layer neuron activity of one input.
struct Trace {
  std::size_t n_tokens = 0;
  std::vector<NeuronMask> active;  // [layer][neuron]
  TokenSeq tokens;                 // input, used by input-keyed predictors
};

/// Builds a trace from one mask per layer (in layer order). Per-token masks
/// are OR-aggregated. A zero n_tokens is taken from the masks' headers.
inline Trace trace_from_masks(const std::vector<ActivationMask>& masks, std::size_t n_tokens = 0) {
  require(!masks.empty(), ErrorCode::InvalidArgument, "trace needs at least one layer");
  Trace t;
  t.n_tokens = n_tokens;
  for (std::size_t l = 0; l < masks.size(); ++l) {
    require(masks[l].layer == l, ErrorCode::InvalidArgument, "trace masks must be given in layer order 0..L-1");
    require(masks[l].dim == masks[0].dim, ErrorCode::Shape, "trace mask widths differ");
    if (n_tokens == 0 && masks[l].n_tokens > 0) {
      require(t.n_tokens == 0 || t.n_tokens == masks[l].n_tokens, ErrorCode::Shape, "trace token counts differ");
      t.n_tokens = masks[l].n_tokens;
    }
    t.active.push_back(aggregate_or(masks[l]).bits);
  }
  require(t.n_tokens > 0, ErrorCode::InvalidArgument, "trace token count unknown");
  return t;
}

/// Neurons to prefetch per layer. Predictions become usable at time 0, or
/// after layer `issue_after_layer` finishes (then layers up to and including
/// it get no prediction).
struct Prediction {
  std::vector<NeuronMask> masks;
  int issue_after_layer = -1;
};

struct LayerSimStats {
  std::uint64_t predicted = 0, active = 0, hits = 0;
  double precision = 1.0, recall = 1.0;
  double ready_s = 0, start_s = 0, end_s = 0;
  double prefetch_wait_s = 0;  // waiting on this layer's prefetch
  double stall_s = 0;          // waiting on the demand fetch
};

struct PrefetchSimReport {
  std::uint64_t bytes_prefetched = 0;
  std::uint64_t bytes_demand = 0;
  std::uint64_t resident_ffn_bytes = 0;  // bytes of predicted-or-active neurons, summed over layers
  std::uint64_t dense_ffn_bytes = 0;     // every neuron of every layer
  std::uint64_t peak_memory_bytes = 0;
  double stall_s = 0;
  double prefetch_wait_s = 0;
  double compute_s = 0;
  double total_latency_s = 0;
  std::vector<LayerSimStats> layers;
};

/// Core simulation for an explicit prediction.
inline PrefetchSimReport simulate_prediction(const Trace& trace, const Prediction& pred, const HierarchyParams& p) {
  validate(p);
  const std::size_t L = trace.active.size();
  require(L > 0, ErrorCode::InvalidArgument, "empty trace");
  require(pred.masks.size() == L, ErrorCode::Shape, "prediction layer count differs from trace");
  require(pred.issue_after_layer < static_cast<int>(L), ErrorCode::InvalidArgument, "issue_after_layer out of range");
  const std::size_t width = trace.active[0].size();
  for (std::size_t l = 0; l < L; ++l) {
    require(trace.active[l].size() == width, ErrorCode::Shape, "trace mask widths differ");
    require(pred.masks[l].size() == width, ErrorCode::Shape,
            "prediction for layer " + std::to_string(l) + " has width " + std::to_string(pred.masks[l].size()) +
                ", trace has " + std::to_string(width));
  }

  PrefetchSimReport r;
  r.layers.resize(L);
  r.dense_ffn_bytes = static_cast<std::uint64_t>(L) * width * p.bytes_per_neuron;

  struct Alloc {
    double at;
    std::uint64_t bytes;
    std::size_t layer;
  };
  std::vector<Alloc> allocs;

  double channel_free = 0.0, prev_end = 0.0;
  for (std::size_t l = 0; l < L; ++l) {
    auto& s = r.layers[l];
    const bool has_prediction = static_cast<int>(l) > pred.issue_after_layer;
    std::uint64_t predicted = 0, active = 0, hits = 0;
    for (std::size_t j = 0; j < width; ++j) {
      const bool a = trace.active[l][j] != 0;
      const bool q = has_prediction && pred.masks[l][j] != 0;
      predicted += q;
      active += a;
      hits += a && q;
    }
    const std::uint64_t missing = active - hits;
    s.predicted = predicted;
    s.active = active;
    s.hits = hits;
    s.precision = predicted == 0 ? 1.0 : static_cast<double>(hits) / static_cast<double>(predicted);
    s.recall = active == 0 ? 1.0 : static_cast<double>(hits) / static_cast<double>(active);

    const std::uint64_t working_set = (predicted + missing) * p.bytes_per_neuron;
    require(working_set <= p.memory_capacity_bytes, ErrorCode::Capacity,
            "layer " + std::to_string(l) + " needs " + std::to_string(working_set) + " bytes resident, capacity is " +
                std::to_string(p.memory_capacity_bytes));

    s.ready_s = prev_end;
    double t1 = s.ready_s;
    if (predicted > 0) {
      double earliest = pred.issue_after_layer < 0 ? 0.0 : r.layers[static_cast<std::size_t>(pred.issue_after_layer)].end_s;
      if (l >= p.lookahead_layers) earliest = std::max(earliest, r.layers[l - p.lookahead_layers].start_s);
      const double pf_start = std::max(channel_free, earliest);
      const double pf_end = pf_start + transfer_seconds(p, predicted * p.bytes_per_neuron);
      channel_free = pf_end;
      allocs.push_back({pf_start, predicted * p.bytes_per_neuron, l});
      t1 = std::max(t1, pf_end);
    }
    s.prefetch_wait_s = t1 - s.ready_s;
    s.start_s = t1;
    if (missing > 0) {
      const double d_start = std::max(channel_free, t1);
      const double d_end = d_start + transfer_seconds(p, missing * p.bytes_per_neuron);
      channel_free = d_end;
      allocs.push_back({d_start, missing * p.bytes_per_neuron, l});
      s.start_s = d_end;
    }
    s.stall_s = s.start_s - t1;
    const double compute = static_cast<double>(trace.n_tokens) * static_cast<double>(active) * p.compute_s_per_token_neuron;
    s.end_s = s.start_s + compute;
    prev_end = s.end_s;

    r.bytes_prefetched += predicted * p.bytes_per_neuron;
    r.bytes_demand += missing * p.bytes_per_neuron;
    r.resident_ffn_bytes += (predicted + missing) * p.bytes_per_neuron;
    r.stall_s += s.stall_s;
    r.prefetch_wait_s += s.prefetch_wait_s;
    r.compute_s += compute;
  }
  r.total_latency_s = prev_end;

  // Peak residency: at each allocation instant, sum every allocation that
  // has started and whose layer has not finished.
  for (const auto& a : allocs) {
    std::uint64_t resident = 0;
    for (const auto& b : allocs)
      if (b.at <= a.at && r.layers[b.layer].end_s > a.at) resident += b.bytes;
    r.peak_memory_bytes = std::max(r.peak_memory_bytes, resident);
  }
  require(r.peak_memory_bytes <= p.memory_capacity_bytes, ErrorCode::Capacity,
          "prefetch pipeline needs " + std::to_string(r.peak_memory_bytes) + " bytes resident, capacity is " +
              std::to_string(p.memory_capacity_bytes));
  return r;
}

enum class PredictorKind { Oracle, Null, PatternCache, Layer1Propagation };

inline std::string_view to_string(PredictorKind k) {
  switch (k) {
    case PredictorKind::Oracle: return "oracle";
    case PredictorKind::Null: return "null";
    case PredictorKind::PatternCache: return "pattern-cache";
    case PredictorKind::Layer1Propagation: return "layer1";
  }
  return "?";
}

inline PredictorKind parse_predictor_kind(std::string_view s) {
  if (s == "oracle") return PredictorKind::Oracle;
  if (s == "null") return PredictorKind::Null;
  if (s == "pattern-cache") return PredictorKind::PatternCache;
  if (s == "layer1") return PredictorKind::Layer1Propagation;
  throw Error(ErrorCode::InvalidArgument, "unknown predictor '" + std::string(s) + "'");
}

/// Multiset of byte 4-grams.
using Fingerprint = std::map<std::uint32_t, std::uint32_t>;

inline Fingerprint fingerprint(std::span<const Token> tokens) {
  Fingerprint f;
  for (std::size_t i = 0; i + 4 <= tokens.size(); ++i) {
    const std::uint32_t g = static_cast<std::uint32_t>(tokens[i]) | static_cast<std::uint32_t>(tokens[i + 1]) << 8 |
                            static_cast<std::uint32_t>(tokens[i + 2]) << 16 |
                            static_cast<std::uint32_t>(tokens[i + 3]) << 24;
    ++f[g];
  }
  return f;
}

/// Multiset intersection size over the larger multiset size.
inline double fingerprint_overlap(const Fingerprint& a, const Fingerprint& b) {
  std::uint64_t na = 0, nb = 0, common = 0;
  for (const auto& [g, c] : a) na += c;
  for (const auto& [g, c] : b) nb += c;
  if (na == 0 && nb == 0) return 1.0;
  for (const auto& [g, c] : a)
    if (auto it = b.find(g); it != b.end()) common += std::min(c, it->second);
  return static_cast<double>(common) / static_cast<double>(std::max(na, nb));
}

/// Fraction of equal positions between two neuron masks.
inline double hamming_similarity(const NeuronMask& a, const NeuronMask& b) {
  require(a.size() == b.size() && !a.empty(), ErrorCode::Shape, "mask widths differ");
  std::size_t eq = 0;
  for (std::size_t i = 0; i < a.size(); ++i) eq += a[i] == b[i];
  return static_cast<double>(eq) / static_cast<double>(a.size());
}

struct CacheEntry {
  std::size_t sample_id = 0;
  TokenSeq tokens;
  Fingerprint key;
  std::vector<NeuronMask> masks;  // [layer][neuron]
};

class Predictor {
 public:
  explicit Predictor(PredictorKind kind = PredictorKind::Null, std::vector<CacheEntry> entries = {})
      : kind_(kind), entries_(std::move(entries)) {
    std::sort(entries_.begin(), entries_.end(),
              [](const CacheEntry& a, const CacheEntry& b) { return a.sample_id < b.sample_id; });
  }

  PredictorKind kind() const { return kind_; }
  const std::vector<CacheEntry>& entries() const { return entries_; }

  /// Nearest stored input by 4-gram overlap; ties go to the lowest sample_id.
  const CacheEntry& lookup(std::span<const Token> tokens) const {
    require(!entries_.empty(), ErrorCode::NoPrediction, "pattern cache is empty");
    const Fingerprint q = fingerprint(tokens);
    const CacheEntry* best = nullptr;
    double best_score = -1.0;
    for (const auto& e : entries_) {
      const double s = fingerprint_overlap(q, e.key);
      if (s > best_score) {
        best_score = s;
        best = &e;
      }
    }
    return *best;
  }

  /// Nearest stored first-layer mask by Hamming similarity; ties go to the
  /// lowest sample_id.
  const CacheEntry& lookup_first_layer(const NeuronMask& layer0) const {
    require(!entries_.empty(), ErrorCode::NoPrediction, "association table is empty");
    const CacheEntry* best = nullptr;
    double best_score = -1.0;
    for (const auto& e : entries_) {
      const double s = hamming_similarity(layer0, e.masks.at(0));
      if (s > best_score) {
        best_score = s;
        best = &e;
      }
    }
    return *best;
  }

  /// Prediction for one trace, or nullopt when the predictor has nothing
  /// stored.
  std::optional<Prediction> predict(const Trace& t) const {
    const std::size_t L = t.active.size(), width = L ? t.active[0].size() : 0;
    Prediction p;
    switch (kind_) {
      case PredictorKind::Oracle:
        p.masks = t.active;
        return p;
      case PredictorKind::Null:
        p.masks.assign(L, NeuronMask(width, 0));
        return p;
      case PredictorKind::PatternCache:
        if (entries_.empty()) return std::nullopt;
        p.masks = lookup(t.tokens).masks;
        return p;
      case PredictorKind::Layer1Propagation: {
        if (entries_.empty()) return std::nullopt;
        p.masks = lookup_first_layer(t.active.at(0)).masks;
        if (!p.masks.empty()) p.masks[0].assign(width, 0);
        p.issue_after_layer = 0;
        return p;
      }
    }
    return std::nullopt;
  }

 private:
  PredictorKind kind_;
  std::vector<CacheEntry> entries_;
};

/// Simulates one trace under a predictor. A predictor with nothing stored
/// behaves like Null for the run.
inline PrefetchSimReport simulate(const Trace& trace, const Predictor& predictor, const HierarchyParams& p) {
  auto pred = predictor.predict(trace);
  if (!pred) pred = Predictor(PredictorKind::Null).predict(trace);
  return simulate_prediction(trace, *pred, p);
}

namespace detail {

inline std::vector<CacheEntry> entries_from_study(const StudyResult& study) {
  require(!study.baselines.empty(), ErrorCode::InvalidArgument, "pattern study has no samples");
  std::vector<CacheEntry> entries;
  for (const auto& rec : study.baselines) {
    for (std::size_t i = 0; i < rec.layers.size(); ++i)
      require(rec.layers[i] == i, ErrorCode::InvalidArgument, "cache needs studies covering layers 0..L-1 in order");
    CacheEntry e;
    e.sample_id = rec.sample_id;
    e.tokens = rec.tokens;
    e.key = fingerprint(rec.tokens);
    for (const auto& m : rec.masks) e.masks.push_back(aggregate_or(m).bits);
    entries.push_back(std::move(e));
  }
  return entries;
}

}  // namespace detail

/// Input-keyed cache of the baseline samples' per-layer masks.
inline Predictor build_pattern_cache(const StudyResult& study) {
  return Predictor(PredictorKind::PatternCache, detail::entries_from_study(study));
}

/// Associations from first-layer masks to every layer's mask.
inline Predictor build_layer1_predictor(const StudyResult& study) {
  return Predictor(PredictorKind::Layer1Propagation, detail::entries_from_study(study));
}

inline std::string mask_hex(const NeuronMask& m) {
  std::string s;
  static const char* digits = "0123456789abcdef";
  for (std::size_t i = 0; i < m.size(); i += 4) {
    unsigned v = 0;
    for (std::size_t b = 0; b < 4 && i + b < m.size(); ++b) v |= (m[i + b] ? 1u : 0u) << b;
    s.push_back(digits[v]);
  }
  return s;
}

inline NeuronMask mask_from_hex(const std::string& s, std::size_t width) {
  require(s.size() == (width + 3) / 4, ErrorCode::InvalidArgument, "mask hex length does not match width");
  NeuronMask m(width, 0);
  for (std::size_t i = 0; i < s.size(); ++i) {
    const char ch = s[i];
    unsigned v;
    if (ch >= '0' && ch <= '9') v = static_cast<unsigned>(ch - '0');
    else if (ch >= 'a' && ch <= 'f') v = static_cast<unsigned>(ch - 'a' + 10);
    else throw Error(ErrorCode::InvalidArgument, "bad hex digit in mask");
    for (std::size_t b = 0; b < 4 && i * 4 + b < width; ++b) m[i * 4 + b] = (v >> b) & 1u;
  }
  return m;
}

/// Cache file: {kind, width, entries: [{sample_id, tokens_hex, masks: [hex...]}]}.
inline nlohmann::json to_json(const Predictor& p) {
  nlohmann::json entries = nlohmann::json::array();
  std::size_t width = 0;
  for (const auto& e : p.entries()) {
    nlohmann::json masks = nlohmann::json::array();
    for (const auto& m : e.masks) {
      masks.push_back(mask_hex(m));
      width = m.size();
    }
    std::string tok;
    static const char* digits = "0123456789abcdef";
    for (Token t : e.tokens) {
      tok.push_back(digits[t >> 4]);
      tok.push_back(digits[t & 15]);
    }
    entries.push_back({{"sample_id", e.sample_id}, {"tokens_hex", tok}, {"masks", masks}});
  }
  return {{"kind", std::string(to_string(p.kind()))}, {"width", width}, {"entries", entries}};
}

inline Predictor predictor_from_json(const nlohmann::json& j) {
  try {
    const auto kind = parse_predictor_kind(j.at("kind").get<std::string>());
    const auto width = j.at("width").get<std::size_t>();
    std::vector<CacheEntry> entries;
    for (const auto& je : j.at("entries")) {
      CacheEntry e;
      e.sample_id = je.at("sample_id").get<std::size_t>();
      const auto tok = je.at("tokens_hex").get<std::string>();
      require(tok.size() % 2 == 0, ErrorCode::InvalidArgument, "odd token hex length");
      for (std::size_t i = 0; i < tok.size(); i += 2)
        e.tokens.push_back(static_cast<Token>(std::stoul(tok.substr(i, 2), nullptr, 16)));
      e.key = fingerprint(e.tokens);
      for (const auto& m : je.at("masks")) e.masks.push_back(mask_from_hex(m.get<std::string>(), width));
      entries.push_back(std::move(e));
    }
    return Predictor(kind, std::move(entries));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, std::string("predictor file: ") + e.what());
  }
}

inline nlohmann::json to_json(const PrefetchSimReport& r) {
  nlohmann::json layers = nlohmann::json::array();
  for (std::size_t l = 0; l < r.layers.size(); ++l) {
    const auto& s = r.layers[l];
    layers.push_back({{"layer", l},
                      {"predicted", s.predicted},
                      {"active", s.active},
                      {"hits", s.hits},
                      {"precision", s.precision},
                      {"recall", s.recall},
                      {"ready_s", s.ready_s},
                      {"start_s", s.start_s},
                      {"end_s", s.end_s},
                      {"prefetch_wait_s", s.prefetch_wait_s},
                      {"stall_s", s.stall_s}});
  }
  return {{"bytes_prefetched", r.bytes_prefetched},
          {"bytes_demand", r.bytes_demand},
          {"resident_ffn_bytes", r.resident_ffn_bytes},
          {"dense_ffn_bytes", r.dense_ffn_bytes},
          {"peak_memory_bytes", r.peak_memory_bytes},
          {"stall_s", r.stall_s},
          {"prefetch_wait_s", r.prefetch_wait_s},
          {"compute_s", r.compute_s},
          {"total_latency_s", r.total_latency_s},
          {"layers", layers}};
}

/// Oracle prediction with a seeded fraction of each layer's active neurons
/// dropped: precision stays 1, recall is about `recall`.
inline Prediction degraded_oracle(const Trace& t, double recall, Rng& rng) {
  Prediction p;
  p.masks = t.active;
  for (auto& m : p.masks) {
    std::vector<std::size_t> on;
    for (std::size_t j = 0; j < m.size(); ++j)
      if (m[j]) on.push_back(j);
    const auto drop = static_cast<std::size_t>(std::llround((1.0 - recall) * static_cast<double>(on.size())));
    for (std::size_t i = 0; i < drop; ++i) {
      std::swap(on[i], on[i + rng.below(on.size() - i)]);
      m[on[i]] = 0;
    }
  }
  return p;
}

/// CSV recall_target,recall_mean,total_latency_s,stall_s,bytes_demand for
/// recall levels 0, 0.1, ..., 1 at precision 1.
inline std::string recall_sweep_csv(const Trace& t, const HierarchyParams& p, std::uint64_t seed) {
  std::ostringstream os;
  os.precision(10);
  os << "recall_target,recall_mean,total_latency_s,stall_s,bytes_demand\n";
  for (int i = 0; i <= 10; ++i) {
    const double target = i / 10.0;
    Rng rng = Rng::stream(seed, "predictor");
    const auto r = simulate_prediction(t, degraded_oracle(t, target, rng), p);
    double mean = 0.0;
    for (const auto& s : r.layers) mean += s.recall;
    mean /= static_cast<double>(r.layers.size());
    os << target << "," << mean << "," << r.total_latency_s << "," << r.stall_s << "," << r.bytes_demand << "\n";
  }
  return os.str();
}

}  // namespace actsparse
