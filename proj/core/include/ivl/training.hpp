#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "ivl/composition.hpp"
#include "ivl/corpus.hpp"
#include "ivl/tokenizer.hpp"
#include "ivl/transformer.hpp"

namespace ivl {

struct TrainingConfig {
  double learning_rate = 1e-4;
  double warmup_ratio = 0.04;
  int epochs = 3;
  int global_batch = 32;
  int max_length = 64;
  double lambda_l1 = 1.0;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double grad_clip = 1.0;  // global norm; <= 0 disables clipping
  uint64_t seed = 0;
  int max_steps = 0;  // 0: epochs × batches-per-epoch

  void validate() const {
    if (learning_rate <= 0 || global_batch <= 0 || max_length <= 0 || epochs <= 0)
      throw ConfigError("training config: rates and sizes must be positive");
    if (warmup_ratio < 0 || warmup_ratio >= 1)
      throw ConfigError("training config: warmup_ratio must be in [0,1)");
  }
};

// One padded-free training sequence: inputs shifted against targets, mask
// true only on response (supervised) positions.
struct Sample {
  std::vector<int> inputs;
  std::vector<int> targets;
  std::vector<uint8_t> mask;
};

struct Batch {
  std::vector<Sample> samples;
};

// [bos] + prompt + response + [eos], supervision restricted to the response.
Sample make_demo_sample(const DemoPair& demo, const Tokenizer& tok, int max_length);

// Plain next-token sample supervised on every position.
Sample make_lm_sample(const std::string& text, const Tokenizer& tok, int max_length);

struct LossMetrics {
  Tensor<float> loss;  // ce + λ·mean|z_delta|
  double ce = 0;
  double l1 = 0;
  double mean_abs_delta = 0;
};

// Eq-style objective over one batch: masked cross entropy of the composed
// logits plus λ times the mean absolute delta logit. stop_gradient=false is a
// test-only mode for verifying the frozen-base contract.
LossMetrics loss_step(const GuidedModel& g, const Batch& batch, double lambda_l1,
                      bool stop_gradient = true);

struct OptimizerState {
  std::vector<std::vector<float>> m, v;
  int64_t step = 0;

  void init(const std::vector<Tensor<float>*>& params);
};

// Decoupled-weight-decay Adam with bias correction; applies global-norm
// gradient clipping when cfg.grad_clip > 0.
void adamw_step(const std::vector<Tensor<float>*>& params, OptimizerState& state,
                const TrainingConfig& cfg, double lr);

// Linear ramp to base_lr over ceil(warmup_ratio·total) steps, then cosine
// decay to zero at total_steps.
double cosine_warmup_lr(int64_t step, int64_t total_steps, double warmup_ratio, double base_lr);

struct TrainLogEntry {
  int64_t step = 0;
  std::string base_id;
  double loss = 0, ce = 0, l1 = 0, lr = 0;
};

struct TrainResult {
  std::vector<TrainLogEntry> log;
  double final_ce = 0;
};

// Value-network training against one or more frozen bases sharing the value
// vocabulary. Multiple bases run as a curriculum with the total step budget
// split equally, in order. Base parameters are checksum-verified unchanged.
TrainResult train_value(const std::vector<const Transformer<float>*>& bases,
                        const std::vector<std::string>& base_ids, Transformer<float>* value,
                        GatedProbe<float>* probe, Scheme scheme,
                        const std::vector<DemoPair>& data, const Tokenizer& tok,
                        const TrainingConfig& cfg, std::ostream* log_stream = nullptr);

// Plain next-token pretraining of a base model; aborts on divergence.
TrainResult pretrain_lm(Transformer<float>& model, const std::vector<std::string>& texts,
                        const Tokenizer& tok, const TrainingConfig& cfg,
                        std::ostream* log_stream = nullptr);

}  // namespace ivl
