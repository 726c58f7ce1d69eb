#pragma once

#include <compare>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "actsparse/error.hpp"
#include "actsparse/hash.hpp"
#include "actsparse/rng.hpp"
#include "actsparse/tensor.hpp"

namespace actsparse {

using Token = std::uint8_t;
using TokenSeq = std::vector<Token>;

inline constexpr std::size_t kVocabSize = 256;

enum class FfnVariant { ReLU, NewGELU, SwiGLU };

inline std::string_view to_string(FfnVariant v) {
  switch (v) {
    case FfnVariant::ReLU: return "relu";
    case FfnVariant::NewGELU: return "newgelu";
    case FfnVariant::SwiGLU: return "swiglu";
  }
  return "?";
}

inline FfnVariant parse_ffn_variant(std::string_view s) {
  if (s == "relu") return FfnVariant::ReLU;
  if (s == "newgelu") return FfnVariant::NewGELU;
  if (s == "swiglu") return FfnVariant::SwiGLU;
  throw Error(ErrorCode::Config, "unknown ffn variant '" + std::string(s) + "'");
}

/// Instrumented tensors inside a block. AttnOut is observation-only: it can be
/// tapped but thresholds never apply to it.
enum class Component { GateProj, UpProj, FFNHidden, DownProjInput, AttnOut };

inline std::string_view to_string(Component c) {
  switch (c) {
    case Component::GateProj: return "gate_proj";
    case Component::UpProj: return "up_proj";
    case Component::FFNHidden: return "ffn_hidden";
    case Component::DownProjInput: return "down_proj_input";
    case Component::AttnOut: return "attn_out";
  }
  return "?";
}

inline Component parse_component(std::string_view s) {
  if (s == "gate_proj") return Component::GateProj;
  if (s == "up_proj") return Component::UpProj;
  if (s == "ffn_hidden") return Component::FFNHidden;
  if (s == "down_proj_input") return Component::DownProjInput;
  if (s == "attn_out") return Component::AttnOut;
  throw Error(ErrorCode::InvalidArgument, "unknown component '" + std::string(s) + "'");
}

inline bool is_enforceable(Component c) { return c != Component::AttnOut; }

struct HookPoint {
  std::size_t layer = 0;
  Component component = Component::FFNHidden;

  auto operator<=>(const HookPoint&) const = default;
};

struct ModelConfig {
  std::size_t n_layers = 2;
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t d_ff = 256;
  std::size_t vocab_size = kVocabSize;
  std::size_t max_seq_len = 256;
  FfnVariant ffn_variant = FfnVariant::SwiGLU;
  std::uint64_t seed = 0;

  std::size_t head_dim() const { return d_model / n_heads; }

  bool operator==(const ModelConfig&) const = default;
};

inline void validate(const ModelConfig& c) {
  require(c.n_layers >= 1, ErrorCode::Config, "n_layers must be >= 1");
  require(c.d_model >= 1 && c.n_heads >= 1, ErrorCode::Config, "d_model and n_heads must be >= 1");
  require(c.d_model % c.n_heads == 0, ErrorCode::Config, "d_model must be divisible by n_heads");
  require(c.d_ff >= 1, ErrorCode::Config, "d_ff must be >= 1");
  require(c.vocab_size == kVocabSize, ErrorCode::Config, "vocab_size must be 256 (byte-level)");
  require(c.max_seq_len >= 1, ErrorCode::Config, "max_seq_len must be >= 1");
}

inline bool component_valid(const ModelConfig& c, Component comp) {
  return comp != Component::GateProj || c.ffn_variant == FfnVariant::SwiGLU;
}

inline void validate(const ModelConfig& c, HookPoint hp) {
  require(hp.layer < c.n_layers, ErrorCode::Config,
          "hook layer " + std::to_string(hp.layer) + " >= n_layers " + std::to_string(c.n_layers));
  require(component_valid(c, hp.component), ErrorCode::Config,
          std::string(to_string(hp.component)) + " does not exist for ffn variant " +
              std::string(to_string(c.ffn_variant)));
}

inline nlohmann::json to_json(const ModelConfig& c) {
  return {{"n_layers", c.n_layers},  {"d_model", c.d_model},         {"n_heads", c.n_heads},
          {"d_ff", c.d_ff},          {"vocab_size", c.vocab_size},   {"max_seq_len", c.max_seq_len},
          {"ffn_variant", std::string(to_string(c.ffn_variant))},  {"seed", c.seed}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  try {
    c.n_layers = j.at("n_layers").get<std::size_t>();
    c.d_model = j.at("d_model").get<std::size_t>();
    c.n_heads = j.at("n_heads").get<std::size_t>();
    c.d_ff = j.at("d_ff").get<std::size_t>();
    c.vocab_size = j.at("vocab_size").get<std::size_t>();
    c.max_seq_len = j.at("max_seq_len").get<std::size_t>();
    c.ffn_variant = parse_ffn_variant(j.at("ffn_variant").get<std::string>());
    c.seed = j.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Config, std::string("model config: ") + e.what());
  }
  validate(c);
  return c;
}

struct LayerWeights {
  Matrix wq, wk, wv, wo;     // [d_model x d_model]
  Matrix attn_norm;          // [1 x d_model]
  Matrix ffn_norm;           // [1 x d_model]
  Matrix w_gate;             // [d_model x d_ff], SwiGLU only (empty otherwise)
  Matrix w_up;               // [d_model x d_ff]
  Matrix w_down;             // [d_ff x d_model]

  bool operator==(const LayerWeights&) const = default;
};

/// All model tensors. The output head is tied to tok_emb.
struct WeightSet {
  Matrix tok_emb;  // [vocab x d_model]
  Matrix pos_emb;  // [max_seq_len x d_model]
  std::vector<LayerWeights> layers;
  Matrix final_norm;  // [1 x d_model]

  bool operator==(const WeightSet&) const = default;
};

/// Calls f(name, tensor) for every tensor in canonical (serialization) order.
/// Works for const and mutable weight sets alike.
template <typename W, typename F>
void for_each_tensor(W& w, bool swiglu, F&& f) {
  f(std::string("tok_emb"), w.tok_emb);
  f(std::string("pos_emb"), w.pos_emb);
  for (std::size_t l = 0; l < w.layers.size(); ++l) {
    auto& lw = w.layers[l];
    const std::string p = "layers." + std::to_string(l) + ".";
    f(p + "attn_norm", lw.attn_norm);
    f(p + "wq", lw.wq);
    f(p + "wk", lw.wk);
    f(p + "wv", lw.wv);
    f(p + "wo", lw.wo);
    f(p + "ffn_norm", lw.ffn_norm);
    if (swiglu) f(p + "w_gate", lw.w_gate);
    f(p + "w_up", lw.w_up);
    f(p + "w_down", lw.w_down);
  }
  f(std::string("final_norm"), w.final_norm);
}

/// Expected shape for a named tensor under a config.
inline std::pair<std::size_t, std::size_t> expected_shape(const ModelConfig& c, const std::string& name) {
  const std::size_t d = c.d_model;
  if (name == "tok_emb") return {c.vocab_size, d};
  if (name == "pos_emb") return {c.max_seq_len, d};
  if (name == "final_norm") return {1, d};
  const auto dot = name.rfind('.');
  const std::string leaf = dot == std::string::npos ? name : name.substr(dot + 1);
  if (leaf == "attn_norm" || leaf == "ffn_norm") return {1, d};
  if (leaf == "wq" || leaf == "wk" || leaf == "wv" || leaf == "wo") return {d, d};
  if (leaf == "w_gate" || leaf == "w_up") return {d, c.d_ff};
  if (leaf == "w_down") return {c.d_ff, d};
  throw Error(ErrorCode::IndexInconsistent, "unknown tensor name " + name);
}

inline void validate(const ModelConfig& c, const WeightSet& w) {
  validate(c);
  require(w.layers.size() == c.n_layers, ErrorCode::Shape, "weight set layer count does not match config");
  const bool swiglu = c.ffn_variant == FfnVariant::SwiGLU;
  for (const auto& lw : w.layers)
    require(swiglu ? lw.w_gate.size() > 0 : lw.w_gate.size() == 0, ErrorCode::Shape,
            "w_gate presence does not match ffn variant");
  for_each_tensor(w, swiglu, [&](const std::string& name, const Matrix& m) {
    const auto [r, cols] = expected_shape(c, name);
    require(m.rows == r && m.cols == cols && m.data.size() == r * cols, ErrorCode::Shape,
            name + " has shape " + shape_str(m));
  });
}

/// GPT-2 style init: N(0, 0.02) for embeddings and projections, residual
/// output projections scaled by 1/sqrt(2 * n_layers), unit norm gains.
inline WeightSet init_weights(const ModelConfig& c) {
  validate(c);
  Rng rng = Rng::stream(c.seed, "init");
  const double std_base = 0.02;
  const double std_resid = 0.02 / std::sqrt(2.0 * static_cast<double>(c.n_layers));
  auto gaussian = [&](std::size_t r, std::size_t cols, double sd) {
    Matrix m(r, cols);
    for (auto& v : m.data) v = static_cast<float>(rng.normal() * sd);
    return m;
  };
  const std::size_t d = c.d_model;
  WeightSet w;
  w.tok_emb = gaussian(c.vocab_size, d, std_base);
  w.pos_emb = gaussian(c.max_seq_len, d, std_base);
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    LayerWeights lw;
    lw.attn_norm = Matrix(1, d, 1.0f);
    lw.wq = gaussian(d, d, std_base);
    lw.wk = gaussian(d, d, std_base);
    lw.wv = gaussian(d, d, std_base);
    lw.wo = gaussian(d, d, std_resid);
    lw.ffn_norm = Matrix(1, d, 1.0f);
    if (c.ffn_variant == FfnVariant::SwiGLU) lw.w_gate = gaussian(d, c.d_ff, std_base);
    lw.w_up = gaussian(d, c.d_ff, std_base);
    lw.w_down = gaussian(c.d_ff, d, std_resid);
    w.layers.push_back(std::move(lw));
  }
  w.final_norm = Matrix(1, d, 1.0f);
  return w;
}

struct ParamBreakdown {
  std::uint64_t ffn_params = 0;
  std::uint64_t attention_params = 0;
  std::uint64_t norm_params = 0;
  std::uint64_t embedding_params = 0;
  std::uint64_t total = 0;
  std::uint64_t ffn_params_per_layer = 0;
  /// FFN share of each block's weights (attention + FFN + block norms).
  double ffn_fraction_of_layer_params = 0.0;
};

inline ParamBreakdown param_breakdown(const ModelConfig& c) {
  validate(c);
  const std::uint64_t d = c.d_model, ff = c.d_ff, L = c.n_layers;
  const std::uint64_t ffn_mats = c.ffn_variant == FfnVariant::SwiGLU ? 3 : 2;
  ParamBreakdown p;
  p.ffn_params_per_layer = ffn_mats * d * ff;
  const std::uint64_t attn_per_layer = 4 * d * d;
  const std::uint64_t norm_per_layer = 2 * d;
  p.ffn_params = L * p.ffn_params_per_layer;
  p.attention_params = L * attn_per_layer;
  p.norm_params = L * norm_per_layer + d;
  p.embedding_params = c.vocab_size * d + c.max_seq_len * d;
  p.total = p.ffn_params + p.attention_params + p.norm_params + p.embedding_params;
  p.ffn_fraction_of_layer_params = static_cast<double>(p.ffn_params_per_layer) /
                                   static_cast<double>(p.ffn_params_per_layer + attn_per_layer + norm_per_layer);
  return p;
}

/// Identifies a concrete model: canonical config JSON followed by every
/// tensor payload. Stored in activation-store headers and reports.
inline std::string model_fingerprint(const ModelConfig& c, const WeightSet& w) {
  Fnv1a64 h;
  h.update(to_json(c).dump());
  for_each_tensor(w, c.ffn_variant == FfnVariant::SwiGLU, [&](const std::string& name, const Matrix& m) {
    h.update(name);
    h.update(std::span<const float>(m.data));
  });
  return h.hex();
}

/// Byte-level tokenization is the identity on bytes.
inline TokenSeq tokenize(std::string_view text) { return TokenSeq(text.begin(), text.end()); }

}  // namespace actsparse
