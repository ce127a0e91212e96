#include "ivl/composition.hpp"

#include <algorithm>
#include <future>
#include <random>

#include "ivl/error.hpp"
#include "ivl/ops.hpp"

namespace ivl {

Scheme scheme_from_string(const std::string& name) {
  if (name == "residual") return Scheme::kResidual;
  if (name == "cascade") return Scheme::kCascade;
  if (name == "cascade+") return Scheme::kCascadePlus;
  if (name == "probe") return Scheme::kLinearProbe;
  if (name == "proxy") return Scheme::kProxyDelta;
  throw ConfigError("unknown connection scheme '" + name + "'");
}

std::string scheme_to_string(Scheme s) {
  switch (s) {
    case Scheme::kResidual: return "residual";
    case Scheme::kCascade: return "cascade";
    case Scheme::kCascadePlus: return "cascade+";
    case Scheme::kLinearProbe: return "probe";
    case Scheme::kProxyDelta: return "proxy";
  }
  return "?";
}

int64_t GuidedModel::value_vocab_size() const {
  if (value) return value->config.vocab_size;
  if (probe) return probe->config.vocab_size;
  if (expert) return expert->config.vocab_size;
  if (base) return base->config.vocab_size;  // base-alone pass-through
  throw ConfigError("guided model: no model attached");
}

Tensor<float> cascade_input(const Tensor<float>& p_base, const Tensor<float>& w_embed,
                            const Tensor<float>& h_embed, Scheme variant) {
  if (variant != Scheme::kCascade && variant != Scheme::kCascadePlus)
    throw ConfigError("cascade_input: scheme must be cascade or cascade+");
  Tensor<float> fused = matmul(p_base, w_embed);
  if (variant == Scheme::kCascadePlus) fused = add(fused, h_embed);
  return fused;
}

Tensor<float> compose_logits(const Tensor<float>& z_base, const Tensor<float>& z_delta,
                             bool stop_gradient) {
  if (z_base.shape() != z_delta.shape())
    throw ShapeError("compose_logits: shapes " + shape_str(z_base.shape()) + " and " +
                     shape_str(z_delta.shape()) + " differ");
  return add(stop_gradient ? detach(z_base) : z_base, z_delta);
}

Tensor<float> compose_logits_mapped(const Tensor<float>& z_base, const VocabMap& map,
                                    const Tensor<float>& z_delta, bool stop_gradient) {
  Tensor<float> zb = stop_gradient ? detach(z_base) : z_base;
  Tensor<float> mapped = map_logits_rows(zb, map);
  if (mapped.shape() != z_delta.shape())
    throw ShapeError("compose_logits_mapped: mapped " + shape_str(mapped.shape()) +
                     " vs delta " + shape_str(z_delta.shape()));
  return add(mapped, z_delta);
}

Tensor<float> proxy_delta(const Tensor<float>& z_expert, const Tensor<float>& z_base) {
  if (z_expert.shape() != z_base.shape())
    throw ShapeError("proxy_delta: shapes " + shape_str(z_expert.shape()) + " and " +
                     shape_str(z_base.shape()) + " differ");
  return subtract(log_softmax_rows(z_expert), log_softmax_rows(z_base));
}

GuidedSequence guided_sequence_logits(const GuidedModel& g, const std::vector<int>& tokens,
                                      bool stop_gradient) {
  if (!g.base) throw ConfigError("guided model: base missing");
  if (g.vocab_map)
    throw ConfigError(
        "guided_sequence_logits: full-sequence composition requires a shared vocabulary; "
        "cross-vocabulary runs go through guided_next_logits");
  Tensor<float> z_base = forward_logits(*g.base, tokens);
  Tensor<float> zb = stop_gradient ? detach(z_base) : z_base;
  Tensor<float> z_delta;
  switch (g.scheme) {
    case Scheme::kResidual:
      // A residual model without a value network degenerates to the base
      // alone; eval and bench lean on this.
      z_delta = g.value ? forward_logits(*g.value, tokens) : Tensor<float>::zeros(zb.shape());
      break;
    case Scheme::kCascade:
    case Scheme::kCascadePlus: {
      Tensor<float> p_base = softmax_rows(zb);
      Tensor<float> h_embed = embed_tokens(*g.value, tokens);
      z_delta = forward_from_hidden(*g.value, cascade_input(p_base, g.value->w_embed, h_embed,
                                                            g.scheme));
      break;
    }
    case Scheme::kLinearProbe: {
      Tensor<float> x = matmul(softmax_rows(zb), g.base->w_embed);
      z_delta = forward_probe(*g.probe, x);
      break;
    }
    case Scheme::kProxyDelta: {
      Tensor<float> z_expert = forward_logits(*g.expert, tokens);
      z_delta = proxy_delta(z_expert, zb);
      break;
    }
  }
  GuidedSequence out;
  out.z_delta = z_delta;
  out.z_post = add(zb, z_delta);
  return out;
}

namespace {

std::vector<float> last_row(const Tensor<float>& t) {
  const int64_t r = t.rows(), c = t.cols();
  return std::vector<float>(t.data().begin() + (r - 1) * c, t.data().end());
}

}  // namespace

std::vector<float> guided_next_logits(const GuidedModel& g, const std::vector<int>& value_context,
                                      const std::vector<int>& base_context) {
  if (!g.base) throw ConfigError("guided model: base missing");
  if (value_context.empty() || base_context.empty())
    throw ConfigError("guided_next_logits: empty context");
  if (g.base_tokenizer && g.value_tokenizer) {
    if (g.value_tokenizer->decode(value_context) != g.base_tokenizer->decode(base_context))
      throw Error("guided_next_logits: contexts detokenize to different texts");
  }

  auto base_forward = [&] { return forward_logits(*g.base, base_context); };

  std::vector<float> base_row, delta_row;
  switch (g.scheme) {
    case Scheme::kResidual: {
      if (!g.value) {
        Tensor<float> z_base = base_forward();
        base_row = last_row(z_base);
        delta_row.assign(g.vocab_map ? static_cast<size_t>(g.vocab_map->cols)
                                     : base_row.size(),
                         0.0f);
        break;
      }
      Tensor<float> z_base, z_delta;
      if (g.parallel_residual) {
        // The residual value forward needs no base outputs, so both forwards
        // may run concurrently and join before composition.
        auto fut = std::async(std::launch::async, base_forward);
        z_delta = forward_logits(*g.value, value_context);
        z_base = fut.get();
      } else {
        z_base = base_forward();
        z_delta = forward_logits(*g.value, value_context);
      }
      base_row = last_row(z_base);
      delta_row = last_row(z_delta);
      break;
    }
    case Scheme::kCascade:
    case Scheme::kCascadePlus: {
      if (g.vocab_map && value_context.size() != base_context.size())
        throw Error(
            "guided_next_logits: cascade schemes need position-aligned contexts across "
            "vocabularies; tokenizations have different lengths");
      Tensor<float> z_base = base_forward();
      Tensor<float> zb = g.vocab_map ? map_logits_rows(z_base, *g.vocab_map) : z_base;
      Tensor<float> p_base = softmax_rows(zb);
      Tensor<float> h_embed = embed_tokens(*g.value, value_context);
      Tensor<float> z_delta = forward_from_hidden(
          *g.value, cascade_input(p_base, g.value->w_embed, h_embed, g.scheme));
      base_row = last_row(z_base);
      delta_row = last_row(z_delta);
      break;
    }
    case Scheme::kLinearProbe: {
      if (g.vocab_map)
        throw ConfigError("guided_next_logits: probe scheme does not support vocabulary maps");
      Tensor<float> z_base = base_forward();
      Tensor<float> x = matmul(softmax_rows(z_base), g.base->w_embed);
      Tensor<float> z_delta = forward_probe(*g.probe, x);
      base_row = last_row(z_base);
      delta_row = last_row(z_delta);
      break;
    }
    case Scheme::kProxyDelta: {
      if (g.vocab_map)
        throw ConfigError("guided_next_logits: proxy scheme does not support vocabulary maps");
      Tensor<float> z_base = base_forward();
      Tensor<float> z_expert = forward_logits(*g.expert, base_context);
      Tensor<float> delta = proxy_delta(z_expert, z_base);
      base_row = last_row(z_base);
      delta_row = last_row(delta);
      break;
    }
  }

  std::vector<float> mapped =
      g.vocab_map ? map_logits(base_row, *g.vocab_map) : std::move(base_row);
  if (mapped.size() != delta_row.size())
    throw ShapeError("guided_next_logits: base row of " + std::to_string(mapped.size()) +
                     " vs delta row of " + std::to_string(delta_row.size()));
  for (size_t i = 0; i < mapped.size(); ++i) mapped[i] += delta_row[i];
  return mapped;
}

namespace {

int pick_token(const std::vector<float>& logits, const GenParams& params, std::mt19937_64& rng) {
  if (params.greedy || params.temperature <= 0.0f) {
    // Ties break toward the lowest id.
    return static_cast<int>(std::max_element(logits.begin(), logits.end()) - logits.begin());
  }
  std::vector<double> p(logits.size());
  double mx = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp((static_cast<double>(logits[i]) - mx) / params.temperature);
    sum += p[i];
  }
  double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng) * sum;
  double acc = 0.0;
  for (size_t i = 0; i < p.size(); ++i) {
    acc += p[i];
    if (u <= acc) return static_cast<int>(i);
  }
  return static_cast<int>(p.size()) - 1;
}

}  // namespace

GenResult generate(const GuidedModel& g, const std::string& prompt, const GenParams& params) {
  if (!g.base_tokenizer || !g.value_tokenizer)
    throw ConfigError("generate: guided model needs both tokenizers");
  const Tokenizer& vtok = *g.value_tokenizer;
  const Tokenizer& btok = *g.base_tokenizer;

  GenResult out;
  out.value_ids.push_back(vtok.vocab().specials.bos);
  for (int id : vtok.encode(prompt)) out.value_ids.push_back(id);
  std::string text = vtok.decode(out.value_ids);
  const size_t prompt_surface_len = text.size();
  std::mt19937_64 rng(params.seed);

  const int64_t value_limit =
      g.value ? g.value->config.max_seq_len : g.base->config.max_seq_len;
  for (int step = 0; step < params.max_new_tokens; ++step) {
    // Shared vocabulary: the base conditions on the exact sampled ids.
    // Re-encoding the decoded text is only needed across tokenizers, and can
    // merge differently than the sampled sequence did.
    std::vector<int> base_ctx;
    if (g.vocab_map) {
      base_ctx.push_back(btok.vocab().specials.bos);
      for (int id : btok.encode(text)) base_ctx.push_back(id);
    } else {
      base_ctx = out.value_ids;
    }
    if (static_cast<int64_t>(out.value_ids.size()) >= value_limit ||
        static_cast<int64_t>(base_ctx.size()) >= g.base->config.max_seq_len) {
      out.truncated = true;
      break;
    }
    std::vector<float> row = guided_next_logits(g, out.value_ids, base_ctx);
    int next = pick_token(row, params, rng);
    if (next == vtok.vocab().specials.eos && !params.ignore_eos) break;
    out.value_ids.push_back(next);
    text = vtok.decode(out.value_ids);
    if (step == params.max_new_tokens - 1) out.truncated = true;
  }
  out.text = text;
  out.completion = text.substr(std::min(text.size(), prompt_surface_len));
  return out;
}

}  // namespace ivl
