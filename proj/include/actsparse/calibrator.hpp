#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "actsparse/collector.hpp"
#include "actsparse/model.hpp"
#include "actsparse/threshold_table.hpp"

namespace actsparse {

/// Bin i covers (edges[i], edges[i+1]]. Values <= edges.front() go to
/// underflow, values > edges.back() to overflow.
struct HistogramSpec {
  std::vector<double> edges;
};

/// Unequal-width signed bins spanning (-9, 2], the range large checkpoints
/// are known to fall in, with decade-spaced bins around zero.
inline HistogramSpec default_weight_bins() {
  return {{-9.0, -0.9, -0.09, -0.009, 0.0, 0.01, 0.1, 1.0, 2.0}};
}

inline void validate(const HistogramSpec& spec) {
  require(spec.edges.size() >= 2, ErrorCode::InvalidArgument, "histogram needs at least two edges");
  for (std::size_t i = 1; i < spec.edges.size(); ++i)
    require(spec.edges[i - 1] < spec.edges[i], ErrorCode::InvalidArgument, "histogram edges must be strictly ascending");
}

inline HistogramSpec histogram_spec_from_json(const nlohmann::json& j) {
  HistogramSpec spec;
  try {
    spec.edges = j.at("edges").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, std::string("histogram spec: ") + e.what());
  }
  validate(spec);
  return spec;
}

struct Histogram {
  std::vector<double> edges;
  std::vector<std::uint64_t> counts;
  std::uint64_t underflow = 0;
  std::uint64_t overflow = 0;
  std::uint64_t zero_count = 0;  // exact zeros, also counted in their bin
  std::uint64_t total = 0;

  void add(float v) {
    const double x = v;
    ++total;
    if (v == 0.0f) ++zero_count;
    if (x <= edges.front()) {
      ++underflow;
    } else if (x > edges.back()) {
      ++overflow;
    } else {
      const auto it = std::lower_bound(edges.begin(), edges.end(), x);
      ++counts[static_cast<std::size_t>(it - edges.begin()) - 1];
    }
  }
};

inline Histogram make_histogram(const HistogramSpec& spec) {
  validate(spec);
  Histogram h;
  h.edges = spec.edges;
  h.counts.assign(spec.edges.size() - 1, 0);
  return h;
}

/// Signed weight histograms per tensor group: "embedding", "attention",
/// "ffn", "norm" and "all".
inline std::map<std::string, Histogram> weight_histogram(const ModelConfig& c, const WeightSet& w,
                                                         const HistogramSpec& spec) {
  validate(c, w);
  std::map<std::string, Histogram> out;
  for (const char* g : {"embedding", "attention", "ffn", "norm", "all"}) out.emplace(g, make_histogram(spec));
  auto group_of = [](const std::string& name) -> std::string {
    if (name == "tok_emb" || name == "pos_emb") return "embedding";
    if (name.ends_with("norm")) return "norm";
    if (name.ends_with(".wq") || name.ends_with(".wk") || name.ends_with(".wv") || name.ends_with(".wo"))
      return "attention";
    return "ffn";
  };
  for_each_tensor(w, c.ffn_variant == FfnVariant::SwiGLU, [&](const std::string& name, const Matrix& m) {
    auto& g = out.at(group_of(name));
    auto& all = out.at("all");
    for (float v : m.data) {
      g.add(v);
      all.add(v);
    }
  });
  return out;
}

/// CSV: group,lo,hi,count with underflow/overflow rows and a zeros row.
inline std::string histogram_csv(const std::map<std::string, Histogram>& hs) {
  std::ostringstream os;
  os.precision(9);
  os << "group,lo,hi,count\n";
  for (const auto& [name, h] : hs) {
    os << name << ",-inf," << h.edges.front() << "," << h.underflow << "\n";
    for (std::size_t i = 0; i < h.counts.size(); ++i)
      os << name << "," << h.edges[i] << "," << h.edges[i + 1] << "," << h.counts[i] << "\n";
    os << name << "," << h.edges.back() << ",inf," << h.overflow << "\n";
    os << name << ",0,0," << h.zero_count << "\n";
  }
  return os.str();
}

/// Empirical CDF of activation magnitudes.
struct CDFCurve {
  std::size_t layer = 0;
  Component component = Component::FFNHidden;
  std::vector<float> sorted_abs;

  /// Fraction of magnitudes <= x.
  double at(double x) const {
    const auto it = std::upper_bound(sorted_abs.begin(), sorted_abs.end(), x,
                                     [](double a, float b) { return a < static_cast<double>(b); });
    return static_cast<double>(it - sorted_abs.begin()) / static_cast<double>(sorted_abs.size());
  }
};

namespace detail {

inline std::vector<float> pooled_abs_sorted(const ActivationStore& s, std::size_t layer, Component component) {
  const auto recs = s.find(layer, component);
  require(!recs.empty(), ErrorCode::MissingRecord,
          "no record for layer " + std::to_string(layer) + " " + std::string(to_string(component)));
  std::vector<float> v;
  for (const auto* r : recs)
    for (float x : r->values.data) v.push_back(std::fabs(x));
  require(!v.empty(), ErrorCode::InvalidArgument, "empty activation record");
  std::sort(v.begin(), v.end());
  return v;
}

}  // namespace detail

inline CDFCurve activation_cdf(const ActivationStore& s, std::size_t layer, Component component) {
  return {layer, component, detail::pooled_abs_sorted(s, layer, component)};
}

/// CSV x,cdf at up to `points` evenly spaced ranks (every value when fewer).
inline std::string cdf_csv(const CDFCurve& cdf, std::size_t points = 1000) {
  std::ostringstream os;
  os.precision(9);
  os << "x,cdf\n";
  const std::size_t n = cdf.sorted_abs.size();
  const std::size_t p = std::min(points, n);
  for (std::size_t i = 1; i <= p; ++i) {
    const std::size_t idx = (i * n + p - 1) / p - 1;  // ceil(i*n/p) - 1
    const float x = cdf.sorted_abs[idx];
    os << x << "," << cdf.at(x) << "\n";
  }
  return os.str();
}

/// Position of the alpha percentile in a sorted sample of n: floor(alpha * n),
/// with a small tolerance so integral products such as 0.29 * 100 are not
/// truncated to the integer below by rounding.
inline std::size_t percentile_rank(double alpha, std::size_t n) {
  return static_cast<std::size_t>(std::floor(alpha * static_cast<double>(n) + 1e-9));
}

/// Cutoff T such that zeroing |v| < T removes at most alpha of the sample:
/// T = s[k] with k = floor(alpha * n); alpha = 0 gives 0; k = n gives the
/// next float above the maximum so every entry is cut.
inline float threshold_from_sorted(std::span<const float> sorted_abs, double alpha) {
  require(alpha >= 0.0 && alpha <= 1.0, ErrorCode::InvalidArgument, "alpha outside [0, 1]");
  require(!sorted_abs.empty(), ErrorCode::InvalidArgument, "cannot calibrate on an empty sample");
  if (alpha == 0.0) return 0.0f;
  const std::size_t k = percentile_rank(alpha, sorted_abs.size());
  if (k < sorted_abs.size()) return sorted_abs[k];
  return std::nextafter(sorted_abs.back(), std::numeric_limits<float>::infinity());
}

inline float threshold_for(std::span<const float> values, double alpha) {
  std::vector<float> a(values.size());
  std::transform(values.begin(), values.end(), a.begin(), [](float v) { return std::fabs(v); });
  std::sort(a.begin(), a.end());
  return threshold_from_sorted(a, alpha);
}

/// Pooled, sorted magnitudes per hook point. Sorting once lets a sweep
/// derive tables for many alphas cheaply.
struct SortedActivations {
  std::map<HookPoint, std::vector<float>> sorted_abs;

  ThresholdTable thresholds(double alpha) const {
    require(alpha >= 0.0 && alpha <= 1.0, ErrorCode::InvalidArgument, "alpha outside [0, 1]");
    ThresholdTable t;
    t.alpha = alpha;
    for (const auto& [hp, v] : sorted_abs) t.entries[hp] = threshold_from_sorted(v, alpha);
    return t;
  }
};

/// Every (layer, component) in the store whose component is requested.
inline SortedActivations sort_activations(const ActivationStore& s, const std::set<Component>& components) {
  SortedActivations out;
  const auto hooks = s.hook_points();
  for (Component comp : components) {
    require(is_enforceable(comp), ErrorCode::InvalidArgument,
            std::string(to_string(comp)) + " cannot carry a threshold");
    bool any = false;
    for (const auto& hp : hooks) {
      if (hp.component != comp) continue;
      any = true;
      out.sorted_abs[hp] = detail::pooled_abs_sorted(s, hp.layer, comp);
    }
    require(any, ErrorCode::MissingRecord, "store has no records for " + std::string(to_string(comp)));
  }
  return out;
}

/// One threshold per (layer, component) present in the store for each
/// requested component, pooling all segments.
inline ThresholdTable compute_thresholds(const ActivationStore& s, double alpha, const std::set<Component>& components) {
  require(alpha >= 0.0 && alpha <= 1.0, ErrorCode::InvalidArgument, "alpha outside [0, 1]");
  return sort_activations(s, components).thresholds(alpha);
}

}  // namespace actsparse
