#pragma once

#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "ivl/hash.hpp"
#include "ivl/ops.hpp"
#include "ivl/tensor.hpp"

namespace ivl {

struct TransformerConfig {
  int64_t d_model = 64;
  int64_t n_layers = 2;
  int64_t n_heads = 2;
  int64_t d_ff = 128;
  int64_t vocab_size = 0;
  int64_t max_seq_len = 64;
  bool tie_embeddings = false;

  void validate() const {
    if (d_model <= 0 || n_layers <= 0 || n_heads <= 0 || d_ff <= 0 || vocab_size <= 0)
      throw ConfigError("transformer config: all sizes must be positive");
    if (d_model % n_heads != 0)
      throw ConfigError("transformer config: d_model " + std::to_string(d_model) +
                        " not divisible by n_heads " + std::to_string(n_heads));
    if (max_seq_len < 2) throw ConfigError("transformer config: max_seq_len must be >= 2");
  }

  bool operator==(const TransformerConfig&) const = default;
};

// Desk-scale presets. vocab_size is filled in from the tokenizer by callers.
inline TransformerConfig preset_config(const std::string& name) {
  if (name == "base-S") return {.d_model = 128, .n_layers = 4, .n_heads = 4, .d_ff = 256};
  if (name == "base-M") return {.d_model = 256, .n_layers = 8, .n_heads = 8, .d_ff = 512};
  if (name == "value-XS") return {.d_model = 64, .n_layers = 2, .n_heads = 2, .d_ff = 128};
  throw ConfigError("unknown model preset '" + name + "'");
}

template <class T>
struct TransformerBlock {
  Tensor<T> attn_norm;  // [d]
  Tensor<T> wq, wk, wv, wo;  // [d×d]
  Tensor<T> mlp_norm;  // [d]
  Tensor<T> w_gate, w_up;  // [d×d_ff]
  Tensor<T> w_down;  // [d_ff×d]
};

// Decoder-only transformer: learned absolute positions, pre-RMS-norm blocks,
// causal attention, SiLU-gated MLP, final norm, unembedding to logits.
template <class T>
struct Transformer {
  TransformerConfig config;
  Tensor<T> w_embed;  // [V×d]
  Tensor<T> w_pos;  // [max_seq_len×d]
  std::vector<TransformerBlock<T>> blocks;
  Tensor<T> final_norm;  // [d]
  Tensor<T> unembed;  // [d×V]; ignored when tie_embeddings

  std::vector<std::pair<std::string, Tensor<T>*>> named_parameters() {
    std::vector<std::pair<std::string, Tensor<T>*>> out;
    out.emplace_back("w_embed", &w_embed);
    out.emplace_back("w_pos", &w_pos);
    for (size_t l = 0; l < blocks.size(); ++l) {
      auto& b = blocks[l];
      std::string p = "block" + std::to_string(l) + ".";
      out.emplace_back(p + "attn_norm", &b.attn_norm);
      out.emplace_back(p + "wq", &b.wq);
      out.emplace_back(p + "wk", &b.wk);
      out.emplace_back(p + "wv", &b.wv);
      out.emplace_back(p + "wo", &b.wo);
      out.emplace_back(p + "mlp_norm", &b.mlp_norm);
      out.emplace_back(p + "w_gate", &b.w_gate);
      out.emplace_back(p + "w_up", &b.w_up);
      out.emplace_back(p + "w_down", &b.w_down);
    }
    out.emplace_back("final_norm", &final_norm);
    if (!config.tie_embeddings) out.emplace_back("unembed", &unembed);
    return out;
  }

  std::vector<Tensor<T>*> parameters() {
    std::vector<Tensor<T>*> out;
    for (auto& [name, t] : named_parameters()) out.push_back(t);
    return out;
  }

  void set_requires_grad(bool rg) {
    for (auto* p : parameters()) p->set_requires_grad(rg);
  }

  void zero_grads() {
    for (auto* p : parameters()) p->zero_grad();
  }

  int64_t param_count() {
    int64_t n = 0;
    for (auto* p : parameters()) n += p->numel();
    return n;
  }

  uint64_t checksum() {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (auto& [name, t] : named_parameters()) {
      h = fnv1a64(name, h);
      h = fnv1a64(t->data(), h);
    }
    return h;
  }
};

template <class T>
Transformer<T> make_transformer(const TransformerConfig& config, uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  const int64_t d = config.d_model, v = config.vocab_size, ff = config.d_ff;
  const T std_in = T(0.02);
  const T std_out = T(0.02) / static_cast<T>(std::sqrt(2.0 * config.n_layers));
  Transformer<T> m;
  m.config = config;
  m.w_embed = Tensor<T>::randn({v, d}, rng, std_in);
  m.w_pos = Tensor<T>::randn({config.max_seq_len, d}, rng, std_in);
  for (int64_t l = 0; l < config.n_layers; ++l) {
    TransformerBlock<T> b;
    b.attn_norm = Tensor<T>::full({d}, T(1));
    b.wq = Tensor<T>::randn({d, d}, rng, std_in);
    b.wk = Tensor<T>::randn({d, d}, rng, std_in);
    b.wv = Tensor<T>::randn({d, d}, rng, std_in);
    b.wo = Tensor<T>::randn({d, d}, rng, std_out);
    b.mlp_norm = Tensor<T>::full({d}, T(1));
    b.w_gate = Tensor<T>::randn({d, ff}, rng, std_in);
    b.w_up = Tensor<T>::randn({d, ff}, rng, std_in);
    b.w_down = Tensor<T>::randn({ff, d}, rng, std_out);
    m.blocks.push_back(std::move(b));
  }
  m.final_norm = Tensor<T>::full({d}, T(1));
  m.unembed = Tensor<T>::randn({d, v}, rng, std_in);
  return m;
}

// Token embedding rows only (no positions); the Cascade+ h_embed input.
template <class T>
Tensor<T> embed_tokens(const Transformer<T>& m, const std::vector<int>& tokens) {
  for (int t : tokens)
    if (t < 0 || t >= m.config.vocab_size)
      throw ShapeError("forward: token id " + std::to_string(t) + " out of vocabulary");
  return embedding(m.w_embed, tokens);
}

// Runs the block stack on a pre-embedding hidden state [T×d]; adds learned
// positional embeddings first, so cascade inputs stay position-aware.
template <class T>
Tensor<T> forward_from_hidden(const Transformer<T>& m, const Tensor<T>& hidden) {
  const int64_t seq = hidden.rows();
  if (seq > m.config.max_seq_len)
    throw ShapeError("forward: sequence length " + std::to_string(seq) + " exceeds max_seq_len " +
                     std::to_string(m.config.max_seq_len));
  if (hidden.cols() != m.config.d_model)
    throw ShapeError("forward: hidden width " + std::to_string(hidden.cols()) +
                     " != d_model " + std::to_string(m.config.d_model));
  std::vector<int> positions(seq);
  std::iota(positions.begin(), positions.end(), 0);
  Tensor<T> h = add(hidden, embedding(m.w_pos, positions));

  const int64_t n_heads = m.config.n_heads;
  const int64_t head_dim = m.config.d_model / n_heads;
  const T inv_sqrt = T(1) / static_cast<T>(std::sqrt(static_cast<double>(head_dim)));
  for (const auto& b : m.blocks) {
    Tensor<T> x = rmsnorm_rows(h, b.attn_norm);
    Tensor<T> q = matmul(x, b.wq), k = matmul(x, b.wk), v = matmul(x, b.wv);
    std::vector<Tensor<T>> heads;
    heads.reserve(n_heads);
    for (int64_t hh = 0; hh < n_heads; ++hh) {
      Tensor<T> qh = slice_cols(q, hh * head_dim, head_dim);
      Tensor<T> kh = slice_cols(k, hh * head_dim, head_dim);
      Tensor<T> vh = slice_cols(v, hh * head_dim, head_dim);
      Tensor<T> scores = scale(matmul(qh, transpose(kh)), inv_sqrt);
      Tensor<T> probs = softmax_rows(causal_mask_add(scores));
      heads.push_back(matmul(probs, vh));
    }
    h = add(h, matmul(concat_cols(heads), b.wo));

    Tensor<T> y = rmsnorm_rows(h, b.mlp_norm);
    Tensor<T> gated = multiply(silu(matmul(y, b.w_gate)), matmul(y, b.w_up));
    h = add(h, matmul(gated, b.w_down));
  }
  h = rmsnorm_rows(h, m.final_norm);
  if (m.config.tie_embeddings) return matmul(h, transpose(m.w_embed));
  return matmul(h, m.unembed);
}

// Causal next-token logits [T×V] for a token sequence.
template <class T>
Tensor<T> forward_logits(const Transformer<T>& m, const std::vector<int>& tokens) {
  return forward_from_hidden(m, embed_tokens(m, tokens));
}

using TransformerF = Transformer<float>;

}  // namespace ivl
