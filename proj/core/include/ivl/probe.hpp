#pragma once

#include <string>
#include <vector>

#include "ivl/hash.hpp"
#include "ivl/ops.hpp"

namespace ivl {

struct ProbeConfig {
  int64_t d_in = 0;
  int64_t d_ff = 0;
  int64_t vocab_size = 0;

  void validate() const {
    if (d_in <= 0 || d_ff <= 0 || vocab_size <= 0)
      throw ConfigError("probe config: all sizes must be positive");
  }
  bool operator==(const ProbeConfig&) const = default;
};

// Gated-MLP probe: y = W_down(silu(W_gate x + b_gate) ⊙ (W_up x + b_up)) + b_down.
template <class T>
struct GatedProbe {
  ProbeConfig config;
  Tensor<T> w_gate, w_up;  // [d_in×d_ff]
  Tensor<T> w_down;  // [d_ff×V]
  Tensor<T> b_gate, b_up;  // [d_ff]
  Tensor<T> b_down;  // [V]

  std::vector<std::pair<std::string, Tensor<T>*>> named_parameters() {
    return {{"w_gate", &w_gate}, {"w_up", &w_up},   {"w_down", &w_down},
            {"b_gate", &b_gate}, {"b_up", &b_up},   {"b_down", &b_down}};
  }
  std::vector<Tensor<T>*> parameters() {
    std::vector<Tensor<T>*> out;
    for (auto& [n, t] : named_parameters()) out.push_back(t);
    return out;
  }
  void set_requires_grad(bool rg) {
    for (auto* p : parameters()) p->set_requires_grad(rg);
  }
  void zero_grads() {
    for (auto* p : parameters()) p->zero_grad();
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

// w_down starts at zero so a fresh probe contributes a zero delta.
template <class T>
GatedProbe<T> make_probe(const ProbeConfig& config, uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  GatedProbe<T> p;
  p.config = config;
  p.w_gate = Tensor<T>::randn({config.d_in, config.d_ff}, rng, T(0.02));
  p.w_up = Tensor<T>::randn({config.d_in, config.d_ff}, rng, T(0.02));
  p.w_down = Tensor<T>::zeros({config.d_ff, config.vocab_size});
  p.b_gate = Tensor<T>::zeros({config.d_ff});
  p.b_up = Tensor<T>::zeros({config.d_ff});
  p.b_down = Tensor<T>::zeros({config.vocab_size});
  return p;
}

template <class T>
Tensor<T> forward_probe(const GatedProbe<T>& p, const Tensor<T>& x) {
  if (x.ndim() != 2 || x.cols() != p.config.d_in)
    throw ShapeError("forward_probe: input " + shape_str(x.shape()) + " does not match d_in " +
                     std::to_string(p.config.d_in));
  Tensor<T> gate = silu(add_rowvec(matmul(x, p.w_gate), p.b_gate));
  Tensor<T> up = add_rowvec(matmul(x, p.w_up), p.b_up);
  return add_rowvec(matmul(multiply(gate, up), p.w_down), p.b_down);
}

using GatedProbeF = GatedProbe<float>;

}  // namespace ivl
