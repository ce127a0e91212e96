#pragma once

#include <optional>
#include <string>
#include <vector>

#include "ivl/probe.hpp"
#include "ivl/tokenizer.hpp"
#include "ivl/transformer.hpp"
#include "ivl/vocab_map.hpp"

namespace ivl {

enum class Scheme { kResidual, kCascade, kCascadePlus, kLinearProbe, kProxyDelta };

Scheme scheme_from_string(const std::string& name);
std::string scheme_to_string(Scheme s);

// A frozen base plus a value network, wired by a connection scheme, with an
// optional vocabulary map when the tokenizers differ. Base parameters are
// never written through this handle.
struct GuidedModel {
  const Transformer<float>* base = nullptr;
  Transformer<float>* value = nullptr;        // residual / cascade schemes
  GatedProbe<float>* probe = nullptr;         // linear-probe scheme
  const Transformer<float>* expert = nullptr; // proxy-delta scheme
  Scheme scheme = Scheme::kResidual;
  const VocabMap* vocab_map = nullptr;
  const Tokenizer* base_tokenizer = nullptr;
  const Tokenizer* value_tokenizer = nullptr;
  // Residual only: run base and value forwards on separate threads.
  bool parallel_residual = false;

  int64_t value_vocab_size() const;
};

// §-style fusion of base probabilities into the value model's input space:
// Cascade returns p_base·W_e, CascadePlus additionally adds h_embed.
Tensor<float> cascade_input(const Tensor<float>& p_base, const Tensor<float>& w_embed,
                            const Tensor<float>& h_embed, Scheme variant);

// z_post = stop_gradient(z_base) + z_delta. The test-only stop_gradient=false
// mode leaves base gradients flowing.
Tensor<float> compose_logits(const Tensor<float>& z_base, const Tensor<float>& z_delta,
                             bool stop_gradient = true);

// z_post = stop_gradient(z_base)·M + z_delta across vocabularies.
Tensor<float> compose_logits_mapped(const Tensor<float>& z_base, const VocabMap& map,
                                    const Tensor<float>& z_delta, bool stop_gradient = true);

// Proxy-tuning baseline delta: log_softmax(z_expert) - log_softmax(z_base).
Tensor<float> proxy_delta(const Tensor<float>& z_expert, const Tensor<float>& z_base);

struct GuidedSequence {
  Tensor<float> z_post;
  Tensor<float> z_delta;
};

// Full-sequence composed logits for a shared-vocabulary token sequence; the
// training path. stop_gradient=false is a test-only mode.
GuidedSequence guided_sequence_logits(const GuidedModel& g, const std::vector<int>& tokens,
                                      bool stop_gradient = true);

// Next-token composed logits over the value vocabulary for paired contexts
// that detokenize to the same text.
std::vector<float> guided_next_logits(const GuidedModel& g, const std::vector<int>& value_context,
                                      const std::vector<int>& base_context);

struct GenParams {
  int max_new_tokens = 32;
  float temperature = 0.0f;  // <= 0 behaves as greedy
  uint64_t seed = 0;
  bool greedy = true;
  bool ignore_eos = false;  // fixed-length decodes for benchmarking
};

struct GenResult {
  std::string text;            // full surface text (prompt + continuation)
  std::string completion;      // generated continuation only
  std::vector<int> value_ids;  // final value-vocabulary context
  bool truncated = false;      // hit a length limit before eos
};

GenResult generate(const GuidedModel& g, const std::string& prompt, const GenParams& params);

}  // namespace ivl
