#pragma once

#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "actsparse/forward.hpp"
#include "actsparse/model.hpp"
#include "actsparse/rng.hpp"
#include "actsparse/tensor.hpp"

namespace actsparse {

struct TrainHyperparams {
  float lr = 3e-4f;
  float beta1 = 0.9f;
  float beta2 = 0.95f;
  float eps = 1e-8f;
  std::size_t batch = 16;
  std::size_t context = 256;
};

namespace train_detail {

inline std::vector<Matrix*> tensors(WeightSet& w, bool swiglu) {
  std::vector<Matrix*> out;
  for_each_tensor(w, swiglu, [&](const std::string&, Matrix& m) { out.push_back(&m); });
  return out;
}

inline WeightSet zeros_like(const WeightSet& w) {
  WeightSet z = w;
  for_each_tensor(z, true, [](const std::string&, Matrix& m) { std::fill(m.data.begin(), m.data.end(), 0.0f); });
  return z;
}

// acc[k][j] += sum_i a[i][k] * b[i][j]
inline void accumulate_at_b(const Matrix& a, const Matrix& b, Matrix& acc) {
  const std::size_t m = b.cols;
  for (std::size_t i = 0; i < a.rows; ++i) {
    const float* ar = a.data.data() + i * a.cols;
    const float* br = b.data.data() + i * m;
    for (std::size_t k = 0; k < a.cols; ++k) {
      const float av = ar[k];
      if (av == 0.0f) continue;
      float* o = acc.data.data() + k * m;
      for (std::size_t j = 0; j < m; ++j) o[j] += av * br[j];
    }
  }
}

// a * b^T
inline Matrix matmul_bt(const Matrix& a, const Matrix& b) { return matmul(a, transpose(b)); }

inline void add_into(Matrix& acc, const Matrix& m) {
  for (std::size_t i = 0; i < acc.data.size(); ++i) acc.data[i] += m.data[i];
}

inline Matrix rms_norm_backward(const Matrix& x, const Matrix& gain, const std::vector<float>& inv_rms,
                                const Matrix& dy, Matrix& dgain) {
  Matrix dx(x.rows, x.cols);
  const float d = static_cast<float>(x.cols);
  for (std::size_t t = 0; t < x.rows; ++t) {
    const float r = inv_rms[t];
    float dot = 0.0f;
    for (std::size_t j = 0; j < x.cols; ++j) {
      dot += dy(t, j) * gain.data[j] * x(t, j);
      dgain.data[j] += dy(t, j) * x(t, j) * r;
    }
    const float coef = r * r * r / d * dot;
    for (std::size_t j = 0; j < x.cols; ++j) dx(t, j) = r * gain.data[j] * dy(t, j) - x(t, j) * coef;
  }
  return dx;
}

inline float sigmoid(float z) { return 1.0f / (1.0f + std::exp(-z)); }

inline float silu_grad(float z) {
  const float s = sigmoid(z);
  return s * (1.0f + z * (1.0f - s));
}

inline float new_gelu_grad(float x) {
  constexpr float c = 0.7978845608028654f, a = 0.044715f;
  const float th = std::tanh(c * (x + a * x * x * x));
  return 0.5f * (1.0f + th) + 0.5f * x * (1.0f - th * th) * c * (1.0f + 3.0f * a * x * x);
}

struct LayerCache {
  Matrix x_in, n1, q, k, v, att, x_mid, n2, gate, up, hidden;
  std::vector<float> inv1, inv2;
  std::vector<Matrix> probs;
};

struct SequenceCache {
  std::vector<LayerCache> layers;
  Matrix x_final, nf, logits;
  std::vector<float> invf;
};

inline SequenceCache forward_cached(const ModelConfig& c, const WeightSet& w, std::span<const Token> tokens) {
  SequenceCache sc;
  Matrix x = embed(c, w, tokens);
  sc.layers.resize(c.n_layers);
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    const auto& lw = w.layers[l];
    auto& lc = sc.layers[l];
    lc.x_in = x;
    lc.n1 = rms_norm(x, lw.attn_norm, &lc.inv1);
    lc.q = matmul(lc.n1, lw.wq);
    lc.k = matmul(lc.n1, lw.wk);
    lc.v = matmul(lc.n1, lw.wv);
    lc.att = causal_attention(lc.q, lc.k, lc.v, c.n_heads, &lc.probs);
    add_in_place(x, matmul(lc.att, lw.wo));
    lc.x_mid = x;
    lc.n2 = rms_norm(x, lw.ffn_norm, &lc.inv2);
    lc.up = matmul(lc.n2, lw.w_up);
    if (c.ffn_variant == FfnVariant::SwiGLU) {
      lc.gate = matmul(lc.n2, lw.w_gate);
      lc.hidden = Matrix(lc.up.rows, lc.up.cols);
      for (std::size_t i = 0; i < lc.hidden.size(); ++i) lc.hidden.data[i] = silu(lc.gate.data[i]) * lc.up.data[i];
    } else {
      lc.hidden = c.ffn_variant == FfnVariant::ReLU ? relu(lc.up) : new_gelu(lc.up);
    }
    add_in_place(x, matmul(lc.hidden, lw.w_down));
  }
  sc.x_final = x;
  sc.nf = rms_norm(x, w.final_norm, &sc.invf);
  sc.logits = matmul(sc.nf, transpose(w.tok_emb));
  return sc;
}

inline void attention_backward(const LayerCache& lc, const Matrix& datt, std::size_t n_heads, Matrix& dq, Matrix& dk,
                               Matrix& dv) {
  const std::size_t n = lc.q.rows, d = lc.q.cols, hd = d / n_heads;
  const float scale = 1.0f / std::sqrt(static_cast<float>(hd));
  dq = Matrix(n, d);
  dk = Matrix(n, d);
  dv = Matrix(n, d);
  std::vector<float> dp(n);
  for (std::size_t h = 0; h < n_heads; ++h) {
    const std::size_t off = h * hd;
    const Matrix& p = lc.probs[h];
    for (std::size_t i = 0; i < n; ++i) {
      const float* doi = datt.data.data() + i * d + off;
      float pdp = 0.0f;
      for (std::size_t j = 0; j <= i; ++j) {
        const float* vj = lc.v.data.data() + j * d + off;
        float s = 0.0f;
        for (std::size_t e = 0; e < hd; ++e) s += doi[e] * vj[e];
        dp[j] = s;
        pdp += p(i, j) * s;
        float* dvj = dv.data.data() + j * d + off;
        const float pij = p(i, j);
        for (std::size_t e = 0; e < hd; ++e) dvj[e] += pij * doi[e];
      }
      const float* qi = lc.q.data.data() + i * d + off;
      float* dqi = dq.data.data() + i * d + off;
      for (std::size_t j = 0; j <= i; ++j) {
        const float ds = p(i, j) * (dp[j] - pdp) * scale;
        if (ds == 0.0f) continue;
        const float* kj = lc.k.data.data() + j * d + off;
        float* dkj = dk.data.data() + j * d + off;
        for (std::size_t e = 0; e < hd; ++e) {
          dqi[e] += ds * kj[e];
          dkj[e] += ds * qi[e];
        }
      }
    }
  }
}

/// Accumulates into grads the gradient of (sum of token NLLs) * loss_scale.
/// Returns the summed NLL (nats) of the sequence.
inline double backward_sequence(const ModelConfig& c, const WeightSet& w, std::span<const Token> inputs,
                                std::span<const Token> targets, float loss_scale, WeightSet& g) {
  const SequenceCache sc = forward_cached(c, w, inputs);
  const std::size_t n = inputs.size(), V = c.vocab_size;
  Matrix dlogits(n, V);
  double nll = 0.0;
  for (std::size_t t = 0; t < n; ++t) {
    const auto row = sc.logits.row(t);
    float mx = row[0];
    for (float v : row) mx = std::max(mx, v);
    double sum = 0.0;
    for (float v : row) sum += std::exp(static_cast<double>(v - mx));
    nll += std::log(sum) - static_cast<double>(row[targets[t]] - mx);
    for (std::size_t j = 0; j < V; ++j) {
      const double p = std::exp(static_cast<double>(row[j] - mx)) / sum;
      dlogits(t, j) = static_cast<float>(p - (j == targets[t] ? 1.0 : 0.0)) * loss_scale;
    }
  }
  if (!std::isfinite(nll)) return nll;

  Matrix dnf = matmul(dlogits, w.tok_emb);
  accumulate_at_b(dlogits, sc.nf, g.tok_emb);
  Matrix dx = rms_norm_backward(sc.x_final, w.final_norm, sc.invf, dnf, g.final_norm);

  for (std::size_t li = c.n_layers; li-- > 0;) {
    const auto& lw = w.layers[li];
    const auto& lc = sc.layers[li];
    auto& lg = g.layers[li];

    // FFN
    Matrix dhidden = matmul_bt(dx, lw.w_down);
    accumulate_at_b(lc.hidden, dx, lg.w_down);
    Matrix dup(lc.up.rows, lc.up.cols);
    Matrix dn2;
    if (c.ffn_variant == FfnVariant::SwiGLU) {
      Matrix dgate(lc.gate.rows, lc.gate.cols);
      for (std::size_t i = 0; i < dup.size(); ++i) {
        const float z = lc.gate.data[i];
        dgate.data[i] = dhidden.data[i] * lc.up.data[i] * silu_grad(z);
        dup.data[i] = dhidden.data[i] * silu(z);
      }
      accumulate_at_b(lc.n2, dgate, lg.w_gate);
      dn2 = matmul_bt(dgate, lw.w_gate);
    } else {
      for (std::size_t i = 0; i < dup.size(); ++i) {
        const float z = lc.up.data[i];
        const float dz = c.ffn_variant == FfnVariant::ReLU ? (z > 0.0f ? 1.0f : 0.0f) : new_gelu_grad(z);
        dup.data[i] = dhidden.data[i] * dz;
      }
      dn2 = Matrix(lc.n2.rows, lc.n2.cols);
    }
    accumulate_at_b(lc.n2, dup, lg.w_up);
    add_into(dn2, matmul_bt(dup, lw.w_up));
    Matrix dx_mid = dx;
    add_into(dx_mid, rms_norm_backward(lc.x_mid, lw.ffn_norm, lc.inv2, dn2, lg.ffn_norm));

    // Attention
    Matrix datt = matmul_bt(dx_mid, lw.wo);
    accumulate_at_b(lc.att, dx_mid, lg.wo);
    Matrix dq, dk, dv;
    attention_backward(lc, datt, c.n_heads, dq, dk, dv);
    accumulate_at_b(lc.n1, dq, lg.wq);
    accumulate_at_b(lc.n1, dk, lg.wk);
    accumulate_at_b(lc.n1, dv, lg.wv);
    Matrix dn1 = matmul_bt(dq, lw.wq);
    add_into(dn1, matmul_bt(dk, lw.wk));
    add_into(dn1, matmul_bt(dv, lw.wv));
    Matrix dx_in = dx_mid;
    add_into(dx_in, rms_norm_backward(lc.x_in, lw.attn_norm, lc.inv1, dn1, lg.attn_norm));
    dx = std::move(dx_in);
  }

  for (std::size_t t = 0; t < n; ++t) {
    auto te = g.tok_emb.row(inputs[t]);
    auto pe = g.pos_emb.row(t);
    const auto dr = dx.row(t);
    for (std::size_t j = 0; j < c.d_model; ++j) {
      te[j] += dr[j];
      pe[j] += dr[j];
    }
  }
  return nll;
}

}  // namespace train_detail

/// Mean next-token cross-entropy over a batch of (input, target) windows and
/// its gradient with respect to every weight.
inline std::pair<double, WeightSet> loss_and_gradients(const ModelConfig& c, const WeightSet& w,
                                                       const std::vector<TokenSeq>& inputs,
                                                       const std::vector<TokenSeq>& targets) {
  require(inputs.size() == targets.size() && !inputs.empty(), ErrorCode::InvalidArgument, "batch shape");
  std::size_t count = 0;
  for (std::size_t b = 0; b < inputs.size(); ++b) {
    require(inputs[b].size() == targets[b].size() && !inputs[b].empty(), ErrorCode::InvalidArgument,
            "input/target length mismatch");
    require(inputs[b].size() <= c.max_seq_len, ErrorCode::InvalidArgument, "window exceeds max_seq_len");
    count += inputs[b].size();
  }
  WeightSet g = train_detail::zeros_like(w);
  const float scale = 1.0f / static_cast<float>(count);
  double nll = 0.0;
  for (std::size_t b = 0; b < inputs.size(); ++b)
    nll += train_detail::backward_sequence(c, w, inputs[b], targets[b], scale, g);
  return {nll / static_cast<double>(count), std::move(g)};
}

/// Called after each optimizer step with (step index, mean batch loss).
using TrainCallback = std::function<void(std::size_t, double)>;

/// Next-token cross-entropy training with Adam on random windows of the
/// corpus. Deterministic given config.seed and the corpus.
inline WeightSet train(const ModelConfig& c, std::span<const Token> corpus, std::size_t steps,
                       const TrainHyperparams& hp = {}, const TrainCallback& on_step = {}) {
  validate(c);
  require(hp.context >= 1 && hp.context <= c.max_seq_len, ErrorCode::InvalidArgument,
          "training context must be in [1, max_seq_len]");
  require(hp.batch >= 1, ErrorCode::InvalidArgument, "batch must be >= 1");
  require(corpus.size() >= hp.context + 1, ErrorCode::InvalidArgument,
          "corpus of " + std::to_string(corpus.size()) + " bytes is smaller than the context window + 1");

  WeightSet w = init_weights(c);
  if (steps == 0) return w;
  const bool swiglu = c.ffn_variant == FfnVariant::SwiGLU;
  WeightSet m = train_detail::zeros_like(w), v = train_detail::zeros_like(w);
  auto wt = train_detail::tensors(w, swiglu), mt = train_detail::tensors(m, swiglu), vt = train_detail::tensors(v, swiglu);
  Rng rng = Rng::stream(c.seed, "train");

  std::vector<TokenSeq> inputs(hp.batch), targets(hp.batch);
  for (std::size_t step = 0; step < steps; ++step) {
    for (std::size_t b = 0; b < hp.batch; ++b) {
      const std::size_t start = rng.below(corpus.size() - hp.context);
      inputs[b].assign(corpus.begin() + start, corpus.begin() + start + hp.context);
      targets[b].assign(corpus.begin() + start + 1, corpus.begin() + start + hp.context + 1);
    }
    auto [loss, g] = loss_and_gradients(c, w, inputs, targets);
    require(std::isfinite(loss), ErrorCode::Training, "loss diverged at step " + std::to_string(step));
    auto gt = train_detail::tensors(g, swiglu);
    const double t = static_cast<double>(step + 1);
    const float bc1 = static_cast<float>(1.0 - std::pow(static_cast<double>(hp.beta1), t));
    const float bc2 = static_cast<float>(1.0 - std::pow(static_cast<double>(hp.beta2), t));
    for (std::size_t i = 0; i < wt.size(); ++i) {
      auto& wd = wt[i]->data;
      auto& md = mt[i]->data;
      auto& vd = vt[i]->data;
      const auto& gd = gt[i]->data;
      for (std::size_t j = 0; j < wd.size(); ++j) {
        md[j] = hp.beta1 * md[j] + (1.0f - hp.beta1) * gd[j];
        vd[j] = hp.beta2 * vd[j] + (1.0f - hp.beta2) * gd[j] * gd[j];
        wd[j] -= hp.lr * (md[j] / bc1) / (std::sqrt(vd[j] / bc2) + hp.eps);
      }
    }
    if (on_step) on_step(step, loss);
  }
  for (const Matrix* t : wt)
    require(all_finite(t->data), ErrorCode::Training, "non-finite weights after training");
  return w;
}

}  // namespace actsparse
