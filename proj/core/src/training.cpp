#include "ivl/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <random>

#include "ivl/ops.hpp"

namespace ivl {

Sample make_demo_sample(const DemoPair& demo, const Tokenizer& tok, int max_length) {
  std::vector<int> ids{tok.vocab().specials.bos};
  for (int id : tok.encode(demo.prompt)) ids.push_back(id);
  const size_t prompt_len = ids.size();
  for (int id : tok.encode(demo.response)) ids.push_back(id);
  ids.push_back(tok.vocab().specials.eos);
  if (static_cast<int>(ids.size()) > max_length + 1) ids.resize(max_length + 1);

  Sample s;
  s.inputs.assign(ids.begin(), ids.end() - 1);
  s.targets.assign(ids.begin() + 1, ids.end());
  s.mask.resize(s.targets.size());
  for (size_t t = 0; t < s.targets.size(); ++t) s.mask[t] = (t + 1 >= prompt_len) ? 1 : 0;
  return s;
}

Sample make_lm_sample(const std::string& text, const Tokenizer& tok, int max_length) {
  std::vector<int> ids{tok.vocab().specials.bos};
  for (int id : tok.encode(text)) ids.push_back(id);
  ids.push_back(tok.vocab().specials.eos);
  if (static_cast<int>(ids.size()) > max_length + 1) ids.resize(max_length + 1);
  Sample s;
  s.inputs.assign(ids.begin(), ids.end() - 1);
  s.targets.assign(ids.begin() + 1, ids.end());
  s.mask.assign(s.targets.size(), 1);
  return s;
}

LossMetrics loss_step(const GuidedModel& g, const Batch& batch, double lambda_l1,
                      bool stop_gradient) {
  if (batch.samples.empty()) throw NumericError("loss_step: empty batch");
  Tensor<float> ce_sum = Tensor<float>::scalar(0.0f);
  Tensor<float> abs_sum = Tensor<float>::scalar(0.0f);
  int64_t masked_total = 0;
  int64_t delta_total = 0;
  for (const auto& s : batch.samples) {
    int64_t count = std::count(s.mask.begin(), s.mask.end(), uint8_t(1));
    if (count == 0) continue;
    GuidedSequence seq = guided_sequence_logits(g, s.inputs, stop_gradient);
    Tensor<float> ce = cross_entropy_rows(seq.z_post, s.targets, s.mask);
    ce_sum = add(ce_sum, scale(ce, static_cast<float>(count)));
    masked_total += count;
    abs_sum = add(abs_sum, scale(l1_mean(seq.z_delta), static_cast<float>(seq.z_delta.numel())));
    delta_total += seq.z_delta.numel();
  }
  if (masked_total == 0) throw NumericError("loss_step: all positions masked out");
  Tensor<float> ce_mean = scale(ce_sum, 1.0f / static_cast<float>(masked_total));
  Tensor<float> l1 = scale(abs_sum, 1.0f / static_cast<float>(delta_total));
  LossMetrics m;
  m.ce = ce_mean.item();
  m.l1 = l1.item();
  m.mean_abs_delta = m.l1;
  m.loss = lambda_l1 != 0.0 ? add(ce_mean, scale(l1, static_cast<float>(lambda_l1))) : ce_mean;
  if (!std::isfinite(m.loss.item()))
    throw NumericError("loss_step: non-finite loss (divergence?)");
  return m;
}

void OptimizerState::init(const std::vector<Tensor<float>*>& params) {
  m.clear();
  v.clear();
  for (auto* p : params) {
    m.emplace_back(p->data().size(), 0.0f);
    v.emplace_back(p->data().size(), 0.0f);
  }
  step = 0;
}

void adamw_step(const std::vector<Tensor<float>*>& params, OptimizerState& state,
                const TrainingConfig& cfg, double lr) {
  if (state.m.size() != params.size()) throw ConfigError("adamw_step: state not initialized");
  ++state.step;
  double clip_scale = 1.0;
  if (cfg.grad_clip > 0) {
    double sq = 0.0;
    for (auto* p : params) {
      if (!p->has_grad()) continue;
      for (float gv : p->grad()) sq += static_cast<double>(gv) * gv;
    }
    double norm = std::sqrt(sq);
    if (norm > cfg.grad_clip) clip_scale = cfg.grad_clip / norm;
  }
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (size_t k = 0; k < params.size(); ++k) {
    auto& data = params[k]->raw_data();
    auto& mk = state.m[k];
    auto& vk = state.v[k];
    const bool has_grad = params[k]->has_grad();
    for (size_t i = 0; i < data.size(); ++i) {
      double g = has_grad ? static_cast<double>(params[k]->grad()[i]) * clip_scale : 0.0;
      double m1 = cfg.beta1 * mk[i] + (1.0 - cfg.beta1) * g;
      double v1 = cfg.beta2 * vk[i] + (1.0 - cfg.beta2) * g * g;
      mk[i] = static_cast<float>(m1);
      vk[i] = static_cast<float>(v1);
      double update = (m1 / bc1) / (std::sqrt(v1 / bc2) + cfg.eps);
      data[i] = static_cast<float>(data[i] * (1.0 - lr * cfg.weight_decay) - lr * update);
    }
  }
}

double cosine_warmup_lr(int64_t step, int64_t total_steps, double warmup_ratio, double base_lr) {
  if (step < 0 || step > total_steps) throw ConfigError("cosine_warmup_lr: step out of range");
  const int64_t warmup =
      static_cast<int64_t>(std::ceil(warmup_ratio * static_cast<double>(total_steps)));
  if (step <= warmup)
    return warmup == 0 ? base_lr
                       : base_lr * static_cast<double>(step) / static_cast<double>(warmup);
  const double t = static_cast<double>(step - warmup) / static_cast<double>(total_steps - warmup);
  return base_lr * 0.5 * (1.0 + std::cos(M_PI * t));
}

namespace {

// Deterministic shuffled index stream over a dataset, reshuffled per pass.
class IndexStream {
 public:
  IndexStream(size_t n, uint64_t seed) : n_(n), rng_(seed) { refill(); }

  size_t next() {
    if (pos_ == idx_.size()) refill();
    return idx_[pos_++];
  }

 private:
  void refill() {
    idx_.resize(n_);
    std::iota(idx_.begin(), idx_.end(), size_t(0));
    std::shuffle(idx_.begin(), idx_.end(), rng_);
    pos_ = 0;
  }
  size_t n_;
  std::mt19937_64 rng_;
  std::vector<size_t> idx_;
  size_t pos_ = 0;
};

void emit_log(std::ostream* os, const TrainLogEntry& e) {
  if (!os) return;
  (*os) << "step=" << e.step << " base=" << e.base_id << " loss=" << e.loss << " ce=" << e.ce
        << " l1=" << e.l1 << " lr=" << e.lr << "\n";
}

}  // namespace

TrainResult train_value(const std::vector<const Transformer<float>*>& bases,
                        const std::vector<std::string>& base_ids, Transformer<float>* value,
                        GatedProbe<float>* probe, Scheme scheme,
                        const std::vector<DemoPair>& data, const Tokenizer& tok,
                        const TrainingConfig& cfg, std::ostream* log_stream) {
  cfg.validate();
  if (bases.empty()) throw ConfigError("train_value: at least one base required");
  if (data.empty()) throw ConfigError("train_value: empty dataset");
  const int64_t vocab = static_cast<int64_t>(tok.vocab_size());
  for (const auto* b : bases)
    if (b->config.vocab_size != vocab)
      throw ConfigError("train_value: base vocabulary " + std::to_string(b->config.vocab_size) +
                        " does not match value vocabulary " + std::to_string(vocab) +
                        " (curriculum requires a shared vocabulary)");

  std::vector<uint64_t> base_checksums;
  for (const auto* b : bases) base_checksums.push_back(const_cast<Transformer<float>*>(b)->checksum());

  std::vector<Sample> samples;
  samples.reserve(data.size());
  for (const auto& d : data) samples.push_back(make_demo_sample(d, tok, cfg.max_length));

  std::vector<Tensor<float>*> params;
  if (scheme == Scheme::kLinearProbe) {
    if (!probe) throw ConfigError("train_value: probe scheme needs a probe");
    probe->set_requires_grad(true);
    params = probe->parameters();
  } else {
    if (!value) throw ConfigError("train_value: value network missing");
    value->set_requires_grad(true);
    params = value->parameters();
  }
  OptimizerState opt;
  opt.init(params);

  const int64_t steps_per_epoch =
      (static_cast<int64_t>(samples.size()) + cfg.global_batch - 1) / cfg.global_batch;
  const int64_t total_steps =
      cfg.max_steps > 0 ? cfg.max_steps : static_cast<int64_t>(cfg.epochs) * steps_per_epoch;
  const int64_t per_base = total_steps / static_cast<int64_t>(bases.size());

  IndexStream stream(samples.size(), cfg.seed);
  TrainResult result;
  for (int64_t step = 0; step < total_steps; ++step) {
    const size_t base_idx =
        std::min(bases.size() - 1, static_cast<size_t>(per_base > 0 ? step / per_base : 0));
    GuidedModel g;
    g.base = bases[base_idx];
    g.value = value;
    g.probe = probe;
    g.scheme = scheme;

    Batch batch;
    for (int b = 0; b < cfg.global_batch; ++b) batch.samples.push_back(samples[stream.next()]);

    TapeScope<float> scope;
    LossMetrics m = loss_step(g, batch, cfg.lambda_l1);
    backward(m.loss);
    const double lr = cosine_warmup_lr(step, total_steps, cfg.warmup_ratio, cfg.learning_rate);
    adamw_step(params, opt, cfg, lr);
    for (auto* p : params) p->zero_grad();

    TrainLogEntry e{step, base_idx < base_ids.size() ? base_ids[base_idx] : "base",
                    m.loss.item(), m.ce, m.l1, lr};
    emit_log(log_stream, e);
    result.log.push_back(std::move(e));
    result.final_ce = m.ce;
  }

  for (size_t i = 0; i < bases.size(); ++i)
    if (const_cast<Transformer<float>*>(bases[i])->checksum() != base_checksums[i])
      throw Error("train_value: frozen base '" +
                  (i < base_ids.size() ? base_ids[i] : std::to_string(i)) + "' changed");
  if (scheme == Scheme::kLinearProbe) probe->set_requires_grad(false);
  else value->set_requires_grad(false);
  return result;
}

TrainResult pretrain_lm(Transformer<float>& model, const std::vector<std::string>& texts,
                        const Tokenizer& tok, const TrainingConfig& cfg,
                        std::ostream* log_stream) {
  cfg.validate();
  if (texts.empty()) throw ConfigError("pretrain_lm: empty corpus");
  std::vector<Sample> samples;
  samples.reserve(texts.size());
  for (const auto& t : texts) samples.push_back(make_lm_sample(t, tok, cfg.max_length));

  model.set_requires_grad(true);
  auto params = model.parameters();
  OptimizerState opt;
  opt.init(params);

  const int64_t steps_per_epoch =
      (static_cast<int64_t>(samples.size()) + cfg.global_batch - 1) / cfg.global_batch;
  const int64_t total_steps =
      cfg.max_steps > 0 ? cfg.max_steps : static_cast<int64_t>(cfg.epochs) * steps_per_epoch;

  IndexStream stream(samples.size(), cfg.seed);
  TrainResult result;
  for (int64_t step = 0; step < total_steps; ++step) {
    TapeScope<float> scope;
    Tensor<float> ce_sum = Tensor<float>::scalar(0.0f);
    int64_t count_total = 0;
    for (int b = 0; b < cfg.global_batch; ++b) {
      const Sample& s = samples[stream.next()];
      Tensor<float> logits = forward_logits(model, s.inputs);
      Tensor<float> ce = cross_entropy_rows(logits, s.targets, s.mask);
      int64_t count = static_cast<int64_t>(s.mask.size());
      ce_sum = add(ce_sum, scale(ce, static_cast<float>(count)));
      count_total += count;
    }
    Tensor<float> loss = scale(ce_sum, 1.0f / static_cast<float>(count_total));
    if (!std::isfinite(loss.item()))
      throw NumericError("pretrain_lm: non-finite loss at step " + std::to_string(step));
    backward(loss);
    const double lr = cosine_warmup_lr(step, total_steps, cfg.warmup_ratio, cfg.learning_rate);
    adamw_step(params, opt, cfg, lr);
    model.zero_grads();

    TrainLogEntry e{step, "pretrain", loss.item(), loss.item(), 0.0, lr};
    emit_log(log_stream, e);
    result.log.push_back(std::move(e));
    result.final_ce = loss.item();
  }
  model.set_requires_grad(false);
  return result;
}

}  // namespace ivl
