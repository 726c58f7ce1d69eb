#pragma once

#include <cmath>
#include <map>
#include <set>
#include <span>

#include "actsparse/model.hpp"
#include "actsparse/sparsifier.hpp"
#include "actsparse/tensor.hpp"
#include "actsparse/threshold_table.hpp"

namespace actsparse {

inline constexpr float kNormEps = 1e-5f;

/// RMS normalization per row. inv_rms (optional) receives 1/rms per row.
inline Matrix rms_norm(const Matrix& x, const Matrix& gain, std::vector<float>* inv_rms = nullptr) {
  Matrix y(x.rows, x.cols);
  if (inv_rms) inv_rms->resize(x.rows);
  for (std::size_t t = 0; t < x.rows; ++t) {
    const auto xr = x.row(t);
    float ss = 0.0f;
    for (float v : xr) ss += v * v;
    const float r = 1.0f / std::sqrt(ss / static_cast<float>(x.cols) + kNormEps);
    if (inv_rms) (*inv_rms)[t] = r;
    auto yr = y.row(t);
    for (std::size_t j = 0; j < x.cols; ++j) yr[j] = xr[j] * r * gain.data[j];
  }
  return y;
}

/// Causal multi-head attention over packed q/k/v [tokens x d_model]. Returns
/// the concatenated head outputs; probs (optional) receives per-head
/// [tokens x tokens] softmax rows (upper triangle zero).
inline Matrix causal_attention(const Matrix& q, const Matrix& k, const Matrix& v, std::size_t n_heads,
                               std::vector<Matrix>* probs = nullptr) {
  const std::size_t n = q.rows, d = q.cols, hd = d / n_heads;
  const float scale = 1.0f / std::sqrt(static_cast<float>(hd));
  Matrix out(n, d);
  if (probs) probs->assign(n_heads, Matrix(n, n));
  std::vector<float> p(n);
  for (std::size_t h = 0; h < n_heads; ++h) {
    const std::size_t off = h * hd;
    for (std::size_t i = 0; i < n; ++i) {
      const float* qi = q.data.data() + i * d + off;
      float mx = -INFINITY;
      for (std::size_t j = 0; j <= i; ++j) {
        const float* kj = k.data.data() + j * d + off;
        float s = 0.0f;
        for (std::size_t e = 0; e < hd; ++e) s += qi[e] * kj[e];
        p[j] = s * scale;
        mx = std::max(mx, p[j]);
      }
      float sum = 0.0f;
      for (std::size_t j = 0; j <= i; ++j) {
        p[j] = std::exp(p[j] - mx);
        sum += p[j];
      }
      const float inv = 1.0f / sum;
      float* oi = out.data.data() + i * d + off;
      for (std::size_t j = 0; j <= i; ++j) {
        const float pj = p[j] * inv;
        if (probs) (*probs)[h](i, j) = pj;
        const float* vj = v.data.data() + j * d + off;
        for (std::size_t e = 0; e < hd; ++e) oi[e] += pj * vj[e];
      }
    }
  }
  return out;
}

inline void add_in_place(Matrix& x, const Matrix& y) {
  require(x.rows == y.rows && x.cols == y.cols, ErrorCode::Shape, "residual add shape mismatch");
  for (std::size_t i = 0; i < x.data.size(); ++i) x.data[i] += y.data[i];
}

/// Token + positional embedding rows for a sequence.
inline Matrix embed(const ModelConfig& c, const WeightSet& w, std::span<const Token> tokens) {
  Matrix x(tokens.size(), c.d_model);
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    const auto te = w.tok_emb.row(tokens[t]);
    const auto pe = w.pos_emb.row(t);
    auto xr = x.row(t);
    for (std::size_t j = 0; j < c.d_model; ++j) xr[j] = te[j] + pe[j];
  }
  return x;
}

struct ForwardResult {
  Matrix logits;                     // [tokens x vocab]
  std::map<HookPoint, Matrix> taps;  // raw values at each requested hook point
  EnforcementStats stats;            // zeroed/total per enforced hook point
};

/// Dense or thresholded forward pass. Tapped values are captured before any
/// enforcement at that hook; DownProjInput is the tensor actually entering
/// the down projection (after FFNHidden enforcement, if any).
inline ForwardResult forward(const ModelConfig& c, const WeightSet& w, std::span<const Token> tokens,
                             const std::set<HookPoint>& taps = {}, const SparsityConfig* sparsity = nullptr) {
  validate(c, w);
  require(!tokens.empty(), ErrorCode::InvalidArgument, "empty token sequence");
  require(tokens.size() <= c.max_seq_len, ErrorCode::InvalidArgument,
          "sequence of " + std::to_string(tokens.size()) + " tokens exceeds max_seq_len " + std::to_string(c.max_seq_len));
  for (const auto& hp : taps) validate(c, hp);
  if (sparsity) validate(c, *sparsity);

  ForwardResult result;
  Matrix x = embed(c, w, tokens);
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    const auto& lw = w.layers[l];
    const Matrix n1 = rms_norm(x, lw.attn_norm);
    const Matrix att = causal_attention(matmul(n1, lw.wq), matmul(n1, lw.wk), matmul(n1, lw.wv), c.n_heads);
    const Matrix attn_out = matmul(att, lw.wo);
    if (taps.count({l, Component::AttnOut})) result.taps[{l, Component::AttnOut}] = attn_out;
    add_in_place(x, attn_out);

    const Matrix n2 = rms_norm(x, lw.ffn_norm);
    std::set<Component> layer_taps;
    for (const auto& hp : taps)
      if (hp.layer == l) layer_taps.insert(hp.component);
    std::map<Component, Matrix> tapped;
    std::map<Component, EnforcementCount> counts;
    const FfnObservers obs{&layer_taps, &tapped, &counts};
    add_in_place(x, sparse_ffn_forward(n2, lw, c.ffn_variant, l, sparsity, obs));
    for (auto& [comp, m] : tapped) result.taps[{l, comp}] = std::move(m);
    for (const auto& [comp, cnt] : counts) result.stats[{l, comp}] = cnt;
  }
  const Matrix nf = rms_norm(x, w.final_norm);
  result.logits = matmul(nf, transpose(w.tok_emb));
  return result;
}

/// Thresholded forward that enforces at every hook point the table covers.
inline ForwardResult forward(const ModelConfig& c, const WeightSet& w, std::span<const Token> tokens,
                             const std::set<HookPoint>& taps, const ThresholdTable& table) {
  const SparsityConfig s = enforce_everywhere(table);
  return forward(c, w, tokens, taps, &s);
}

}  // namespace actsparse
