#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "actsparse/binary_io.hpp"
#include "actsparse/model.hpp"
#include "actsparse/tensor.hpp"
#include "actsparse/threshold_table.hpp"

namespace actsparse {

struct SparsityConfig {
  ThresholdTable table;
  std::set<Component> enforce_at{Component::FFNHidden};
  /// Down projection over surviving neurons only, instead of masked dense.
  bool skip_compute = false;
};

inline void validate(const ModelConfig& c, const SparsityConfig& s) {
  validate(c, s.table);
  const auto present = s.table.components();
  for (Component comp : s.enforce_at)
    require(present.count(comp) == 1, ErrorCode::Config,
            std::string("enforce_at names ") + std::string(to_string(comp)) + " but the threshold table has no entry for it");
}

/// Config that enforces at every hook point the table covers.
inline SparsityConfig enforce_everywhere(ThresholdTable table, bool skip_compute = false) {
  SparsityConfig s;
  s.enforce_at = table.components();
  s.table = std::move(table);
  s.skip_compute = skip_compute;
  return s;
}

/// Zeroes (to +0.0) every entry with |a| < threshold, in place. Returns how
/// many entries were zeroed; entries already equal to zero count as well.
inline std::size_t enforce_in_place(std::span<float> values, float threshold) {
  std::size_t zeroed = 0;
  for (float& v : values) {
    if (std::fabs(v) < threshold) {
      v = 0.0f;
      ++zeroed;
    }
  }
  return zeroed;
}

inline std::pair<Matrix, std::size_t> enforce(const Matrix& activations, float threshold) {
  Matrix out = activations;
  const std::size_t zeroed = enforce_in_place(out.data, threshold);
  return {std::move(out), zeroed};
}

struct EnforcementCount {
  std::uint64_t zeroed = 0;
  std::uint64_t total = 0;

  double fraction() const { return total == 0 ? 0.0 : static_cast<double>(zeroed) / static_cast<double>(total); }
};

using EnforcementStats = std::map<HookPoint, EnforcementCount>;

inline void merge(EnforcementStats& into, const EnforcementStats& from) {
  for (const auto& [hp, c] : from) {
    into[hp].zeroed += c.zeroed;
    into[hp].total += c.total;
  }
}

/// Optional observers for one FFN evaluation: raw (pre-enforcement) values at
/// requested components and enforcement counts.
struct FfnObservers {
  const std::set<Component>* taps = nullptr;
  std::map<Component, Matrix>* tapped = nullptr;
  std::map<Component, EnforcementCount>* counts = nullptr;
};

namespace detail {

inline void observe(const FfnObservers& obs, Component comp, const Matrix& m) {
  if (obs.taps && obs.tapped && obs.taps->count(comp)) (*obs.tapped)[comp] = m;
}

inline void maybe_enforce(const SparsityConfig* cfg, std::size_t layer, Component comp, Matrix& m,
                          const FfnObservers& obs) {
  if (!cfg || !cfg->enforce_at.count(comp)) return;
  const auto t = cfg->table.find({layer, comp});
  if (!t) return;
  const std::size_t zeroed = enforce_in_place(m.data, *t);
  if (obs.counts) {
    auto& c = (*obs.counts)[comp];
    c.zeroed += zeroed;
    c.total += m.size();
  }
}

/// out[t] = sum over neurons n (ascending) with hidden[t][n] != 0 of
/// hidden[t][n] * w_down[n]. Skipped terms would contribute a signed zero,
/// which leaves a float accumulator that starts at +0 unchanged, so this
/// matches the dense product bit for bit.
inline Matrix down_project_skipping(const Matrix& hidden, const Matrix& w_down) {
  require(hidden.cols == w_down.rows, ErrorCode::Shape, "down projection " + shape_str(hidden) + " x " + shape_str(w_down));
  Matrix out(hidden.rows, w_down.cols);
  const std::size_t d = w_down.cols;
  for (std::size_t t = 0; t < hidden.rows; ++t) {
    float* o = out.data.data() + t * d;
    const float* h = hidden.data.data() + t * hidden.cols;
    for (std::size_t n = 0; n < hidden.cols; ++n) {
      if (h[n] == 0.0f) continue;
      const float hv = h[n];
      const float* wr = w_down.data.data() + n * d;
      for (std::size_t j = 0; j < d; ++j) o[j] += hv * wr[j];
    }
  }
  return out;
}

}  // namespace detail

/// FFN block on normalized input x [tokens x d_model] with optional
/// threshold enforcement at gate/up/hidden/down-input.
inline Matrix sparse_ffn_forward(const Matrix& x, const LayerWeights& lw, FfnVariant variant, std::size_t layer,
                                 const SparsityConfig* cfg, const FfnObservers& obs = {}) {
  require(x.cols == lw.w_up.rows, ErrorCode::Shape, "ffn input " + shape_str(x) + " vs w_up " + shape_str(lw.w_up));
  Matrix hidden;
  if (variant == FfnVariant::SwiGLU) {
    require(lw.w_gate.rows == x.cols && lw.w_gate.cols == lw.w_up.cols, ErrorCode::Shape, "w_gate shape");
    Matrix gate = matmul(x, lw.w_gate);
    detail::observe(obs, Component::GateProj, gate);
    detail::maybe_enforce(cfg, layer, Component::GateProj, gate, obs);
    Matrix up = matmul(x, lw.w_up);
    detail::observe(obs, Component::UpProj, up);
    detail::maybe_enforce(cfg, layer, Component::UpProj, up, obs);
    hidden = Matrix(gate.rows, gate.cols);
    for (std::size_t i = 0; i < hidden.data.size(); ++i) hidden.data[i] = silu(gate.data[i]) * up.data[i];
  } else {
    Matrix up = matmul(x, lw.w_up);
    detail::observe(obs, Component::UpProj, up);
    detail::maybe_enforce(cfg, layer, Component::UpProj, up, obs);
    hidden = variant == FfnVariant::ReLU ? relu(up) : new_gelu(up);
  }
  detail::observe(obs, Component::FFNHidden, hidden);
  detail::maybe_enforce(cfg, layer, Component::FFNHidden, hidden, obs);
  detail::observe(obs, Component::DownProjInput, hidden);
  detail::maybe_enforce(cfg, layer, Component::DownProjInput, hidden, obs);
  require(lw.w_down.rows == hidden.cols, ErrorCode::Shape, "w_down shape " + shape_str(lw.w_down));
  if (cfg && cfg->skip_compute) return detail::down_project_skipping(hidden, lw.w_down);
  return matmul(hidden, lw.w_down);
}

enum class MaskGranularity { PerToken, PerSegmentOr };

inline std::string_view to_string(MaskGranularity g) {
  return g == MaskGranularity::PerToken ? "per_token" : "per_segment_or";
}

inline MaskGranularity parse_granularity(std::string_view s) {
  if (s == "per_token") return MaskGranularity::PerToken;
  if (s == "per_segment_or") return MaskGranularity::PerSegmentOr;
  throw Error(ErrorCode::InvalidArgument, "unknown mask granularity '" + std::string(s) + "'");
}

/// Boolean neuron-activity pattern. PerToken masks are [n_tokens x dim];
/// PerSegmentOr masks are a single row of width dim.
struct ActivationMask {
  std::size_t layer = 0;
  Component component = Component::FFNHidden;
  MaskGranularity granularity = MaskGranularity::PerToken;
  std::size_t n_tokens = 0;
  std::size_t dim = 0;
  std::vector<std::uint8_t> bits;  // one 0/1 byte per position

  std::size_t rows() const { return granularity == MaskGranularity::PerToken ? n_tokens : 1; }
  bool at(std::size_t r, std::size_t c) const { return bits[r * dim + c] != 0; }
  std::size_t count_active() const {
    std::size_t n = 0;
    for (auto b : bits) n += b;
    return n;
  }

  bool operator==(const ActivationMask&) const = default;
};

/// Active = non-zero. Only FFN hidden-width components are neuron masks.
inline ActivationMask extract_mask(const Matrix& enforced, std::size_t layer, Component component,
                                   MaskGranularity granularity) {
  require(component == Component::FFNHidden || component == Component::DownProjInput, ErrorCode::InvalidArgument,
          "masks are defined on ffn_hidden / down_proj_input activations, got " + std::string(to_string(component)));
  ActivationMask m;
  m.layer = layer;
  m.component = component;
  m.granularity = granularity;
  m.n_tokens = enforced.rows;
  m.dim = enforced.cols;
  if (granularity == MaskGranularity::PerToken) {
    m.bits.resize(enforced.size());
    for (std::size_t i = 0; i < enforced.size(); ++i) m.bits[i] = enforced.data[i] != 0.0f;
  } else {
    m.bits.assign(enforced.cols, 0);
    for (std::size_t t = 0; t < enforced.rows; ++t)
      for (std::size_t j = 0; j < enforced.cols; ++j)
        if (enforced(t, j) != 0.0f) m.bits[j] = 1;
  }
  return m;
}

/// OR over tokens of a per-token mask.
inline ActivationMask aggregate_or(const ActivationMask& m) {
  if (m.granularity == MaskGranularity::PerSegmentOr) return m;
  ActivationMask out = m;
  out.granularity = MaskGranularity::PerSegmentOr;
  out.bits.assign(m.dim, 0);
  for (std::size_t t = 0; t < m.n_tokens; ++t)
    for (std::size_t j = 0; j < m.dim; ++j) out.bits[j] |= m.bits[t * m.dim + j];
  return out;
}

inline constexpr std::string_view kMaskMagic = "ASMK1\n";

/// Mask file: magic, 8-byte LE header length, JSON header, then each row
/// bit-packed LSB-first and padded to a byte boundary.
inline std::vector<std::uint8_t> encode_mask(const ActivationMask& m) {
  require(m.bits.size() == m.rows() * m.dim, ErrorCode::Shape, "mask bit count does not match its shape");
  nlohmann::json header = {{"layer", m.layer},
                           {"component", std::string(to_string(m.component))},
                           {"granularity", std::string(to_string(m.granularity))},
                           {"n_tokens", m.n_tokens},
                           {"dim", m.dim}};
  const std::size_t row_bytes = (m.dim + 7) / 8;
  std::vector<std::uint8_t> payload(m.rows() * row_bytes, 0);
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t j = 0; j < m.dim; ++j)
      if (m.bits[r * m.dim + j]) payload[r * row_bytes + j / 8] |= static_cast<std::uint8_t>(1u << (j % 8));
  return io::frame(kMaskMagic, header, payload);
}

inline ActivationMask decode_mask(std::span<const std::uint8_t> bytes) {
  const auto f = io::unframe(bytes, kMaskMagic, 0, /*versioned=*/false);
  ActivationMask m;
  m.layer = io::field<std::size_t>(f.header, "layer");
  try {
    m.component = parse_component(io::field<std::string>(f.header, "component"));
    m.granularity = parse_granularity(io::field<std::string>(f.header, "granularity"));
  } catch (const Error& e) {
    throw Error(ErrorCode::IndexInconsistent, e.what());
  }
  m.n_tokens = io::field<std::size_t>(f.header, "n_tokens");
  m.dim = io::field<std::size_t>(f.header, "dim");
  const std::size_t row_bytes = (m.dim + 7) / 8;
  const std::size_t need = m.rows() * row_bytes;
  require(f.payload.size() >= need, ErrorCode::Truncated, "mask payload shorter than header declares");
  require(f.payload.size() == need, ErrorCode::IndexInconsistent, "trailing bytes after mask payload");
  m.bits.resize(m.rows() * m.dim);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (std::size_t j = 0; j < m.dim; ++j)
      m.bits[r * m.dim + j] = (f.payload[r * row_bytes + j / 8] >> (j % 8)) & 1u;
    if (m.dim % 8 != 0)
      require((f.payload[r * row_bytes + row_bytes - 1] >> (m.dim % 8)) == 0, ErrorCode::IndexInconsistent,
              "non-zero padding bits in mask row " + std::to_string(r));
  }
  return m;
}

inline void save_mask(const std::filesystem::path& path, const ActivationMask& m) {
  io::write_file_atomic(path, encode_mask(m));
}

inline ActivationMask load_mask(const std::filesystem::path& path) { return decode_mask(io::read_file(path)); }

}  // namespace actsparse
