#pragma once

// Standard pre-norm transformer encoder stack without positional encoding,
// plus mean pooling and the three-layer MLP classification head.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "mct/autograd.hpp"
#include "mct/mce.hpp"
#include "mct/params.hpp"

namespace mct {

struct EncoderConfig {
  int depth = 3;
  int heads = 4;
  int d_model = 64;
  int d_ff = 128;
  double dropout = 0.1;

  int64_t head_dim() const { return d_model / heads; }

  void validate() const {
    if (depth < 1) throw Error::config("encoder: depth must be >= 1");
    if (heads < 1 || d_model % heads != 0) {
      throw Error::config("encoder: d_model " + std::to_string(d_model) +
                          " not divisible by heads " + std::to_string(heads));
    }
    if (d_ff < 1) throw Error::config("encoder: d_ff must be >= 1");
    if (dropout < 0.0 || dropout >= 1.0) throw Error::config("encoder: dropout must be in [0,1)");
  }
};

// Per-forward dropout keying; masks depend only on (seed, step, site).
struct DropoutCtx {
  bool enabled = false;
  double rate = 0.0;
  uint64_t seed = 0;
  uint64_t step = 0;
  uint64_t next_site = 0;

  bool active() const { return enabled && rate > 0.0; }
};

template <typename T>
VarPtr<T> maybe_dropout(Tape<T>* tape, const VarPtr<T>& x, DropoutCtx* ctx) {
  if (ctx == nullptr || !ctx->active()) return x;
  return ops::dropout(tape, x, ctx->rate, ctx->seed, ctx->step, ctx->next_site++);
}

// softmax(Q K^T / sqrt(d_k)) V over plain rank-2 inputs.
template <typename T>
VarPtr<T> scaled_dot_attention(Tape<T>* tape, const VarPtr<T>& q, const VarPtr<T>& k,
                               const VarPtr<T>& v) {
  if (q->value.rank() != 2 || k->value.rank() != 2 || v->value.rank() != 2) {
    throw Error::shape("scaled_dot_attention expects rank-2 Q, K, V");
  }
  if (q->value.extent(1) != k->value.extent(1) || k->value.extent(0) != v->value.extent(0)) {
    throw Error::shape("scaled_dot_attention shape mismatch: Q" + shape_str(q->value.shape()) +
                       " K" + shape_str(k->value.shape()) + " V" + shape_str(v->value.shape()));
  }
  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(q->value.extent(1))));
  auto scores = ops::scale(tape, ops::matmul(tape, q, ops::transpose2d(tape, k)), scale);
  auto weights = ops::softmax(tape, scores);
  return ops::matmul(tape, weights, v);
}

template <typename T>
struct MultiHeadAttention {
  LinearLayer<T> wq, wk, wv, wo;
  int heads = 1;

  static MultiHeadAttention build(ParamStore<T>& store, const std::string& prefix, int d_model,
                                  int heads, uint64_t seed) {
    MultiHeadAttention m;
    m.heads = heads;
    m.wq = LinearLayer<T>::build(store, prefix + ".wq", d_model, d_model, seed);
    m.wk = LinearLayer<T>::build(store, prefix + ".wk", d_model, d_model, seed);
    m.wv = LinearLayer<T>::build(store, prefix + ".wv", d_model, d_model, seed);
    m.wo = LinearLayer<T>::build(store, prefix + ".wo", d_model, d_model, seed);
    return m;
  }

  // x: [N, L, d_model] -> [N, L, d_model]
  VarPtr<T> forward(Tape<T>* tape, const VarPtr<T>& x) const {
    const int64_t n = x->value.extent(0);
    const int64_t l = x->value.extent(1);
    const int64_t d = x->value.extent(2);
    const int64_t h = heads;
    const int64_t dk = d / h;
    auto split = [&](const VarPtr<T>& t) {
      // [N, L, d] -> [N, h, L, dk]
      return ops::permute(tape, ops::reshape(tape, t, {n, l, h, dk}), {0, 2, 1, 3});
    };
    auto q = split(wq.forward(tape, x));
    auto k = split(wk.forward(tape, x));
    auto v = split(wv.forward(tape, x));
    const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dk)));
    auto kt = ops::permute(tape, k, {0, 1, 3, 2});
    auto weights = ops::softmax(tape, ops::scale(tape, ops::bmm(tape, q, kt), scale));
    auto ctx = ops::bmm(tape, weights, v);  // [N, h, L, dk]
    auto merged = ops::reshape(tape, ops::permute(tape, ctx, {0, 2, 1, 3}), {n, l, d});
    return wo.forward(tape, merged);
  }
};

template <typename T>
struct LayerNormLayer {
  VarPtr<T> gamma, beta;
  double eps = 1e-5;

  static LayerNormLayer build(ParamStore<T>& store, const std::string& prefix, int64_t d) {
    LayerNormLayer l;
    l.gamma = store.add_param(prefix + ".gamma", Tensor<T>::full({d}, T(1)));
    l.beta = store.add_param(prefix + ".beta", Tensor<T>({d}));
    return l;
  }

  VarPtr<T> forward(Tape<T>* tape, const VarPtr<T>& x) const {
    return ops::layernorm(tape, x, gamma, beta, eps);
  }
};

// Pre-norm residual block: x + MHA(LN(x)), then + FFN(LN(.)).
template <typename T>
struct EncoderBlock {
  LayerNormLayer<T> ln1, ln2;
  MultiHeadAttention<T> attn;
  LinearLayer<T> ffn1, ffn2;

  static EncoderBlock build(ParamStore<T>& store, const std::string& prefix,
                            const EncoderConfig& cfg, uint64_t seed) {
    EncoderBlock b;
    b.ln1 = LayerNormLayer<T>::build(store, prefix + ".ln1", cfg.d_model);
    b.attn = MultiHeadAttention<T>::build(store, prefix + ".attn", cfg.d_model, cfg.heads, seed);
    b.ln2 = LayerNormLayer<T>::build(store, prefix + ".ln2", cfg.d_model);
    b.ffn1 = LinearLayer<T>::build(store, prefix + ".ffn.w1", cfg.d_model, cfg.d_ff, seed);
    b.ffn2 = LinearLayer<T>::build(store, prefix + ".ffn.w2", cfg.d_ff, cfg.d_model, seed);
    return b;
  }

  VarPtr<T> forward(Tape<T>* tape, const VarPtr<T>& x, DropoutCtx* drop) const {
    auto a = maybe_dropout(tape, attn.forward(tape, ln1.forward(tape, x)), drop);
    auto h = ops::add(tape, x, a);
    auto f = ffn2.forward(tape, ops::gelu(tape, ffn1.forward(tape, ln2.forward(tape, h))));
    return ops::add(tape, h, maybe_dropout(tape, f, drop));
  }
};

template <typename T>
struct TransformerEncoder {
  std::vector<EncoderBlock<T>> blocks;

  static TransformerEncoder build(ParamStore<T>& store, const std::string& prefix,
                                  const EncoderConfig& cfg, uint64_t seed) {
    cfg.validate();
    TransformerEncoder e;
    for (int i = 0; i < cfg.depth; ++i) {
      e.blocks.push_back(
          EncoderBlock<T>::build(store, prefix + ".block" + std::to_string(i), cfg, seed));
    }
    return e;
  }

  VarPtr<T> forward(Tape<T>* tape, const VarPtr<T>& tokens, DropoutCtx* drop) const {
    VarPtr<T> h = tokens;
    for (const auto& b : blocks) h = b.forward(tape, h, drop);
    return h;
  }
};

// Exactly three linear layers with GELU between.
template <typename T>
struct MlpHead {
  LinearLayer<T> fc1, fc2, fc3;

  static MlpHead build(ParamStore<T>& store, const std::string& prefix, int64_t d_in,
                       int64_t d_hidden, int64_t d_out, uint64_t seed) {
    MlpHead h;
    h.fc1 = LinearLayer<T>::build(store, prefix + ".fc1", d_in, d_hidden, seed);
    h.fc2 = LinearLayer<T>::build(store, prefix + ".fc2", d_hidden, d_hidden, seed);
    h.fc3 = LinearLayer<T>::build(store, prefix + ".fc3", d_hidden, d_out, seed);
    return h;
  }

  VarPtr<T> forward(Tape<T>* tape, const VarPtr<T>& x) const {
    auto h = ops::gelu(tape, fc1.forward(tape, x));
    h = ops::gelu(tape, fc2.forward(tape, h));
    return fc3.forward(tape, h);
  }
};

// Mean-pool tokens, then the head: [N, L, d] -> logits [N, C].
template <typename T>
VarPtr<T> classify(Tape<T>* tape, const VarPtr<T>& encoded, const MlpHead<T>& head) {
  return head.forward(tape, ops::mean_tokens(tape, encoded));
}

// Deterministic argmax with lowest-index tie-break.
template <typename T>
int argmax_lowest(const T* row, int64_t n) {
  int best = 0;
  for (int64_t i = 1; i < n; ++i) {
    if (row[i] > row[best]) best = static_cast<int>(i);
  }
  return best;
}

}  // namespace mct
