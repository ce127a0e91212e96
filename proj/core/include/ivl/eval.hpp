#pragma once

#include <string>
#include <vector>

#include "ivl/composition.hpp"
#include "ivl/corpus.hpp"
#include "ivl/training.hpp"

namespace ivl {

// Perplexity of the composed (or base-alone, when no value network is
// attached) distribution over demonstrations; masked scores response
// positions only, unmasked every position. Requires a shared vocabulary;
// cross-vocabulary models go through eval_perplexity_mapped.
double eval_perplexity(const GuidedModel& g, const std::vector<DemoPair>& demos,
                       const Tokenizer& tok, int max_length, bool masked = true,
                       double* mean_abs_delta = nullptr);

// Plain next-token perplexity of a language model over raw texts.
double eval_lm_perplexity(const Transformer<float>& model, const std::vector<std::string>& texts,
                          const Tokenizer& tok, int max_length);

// Masked perplexity across vocabularies: every response position is scored
// with a paired-context next-token pass, detokenizing the value-side prefix
// and re-tokenizing it for the base. Quadratic in sequence length.
double eval_perplexity_mapped(const GuidedModel& g, const std::vector<DemoPair>& demos,
                              int max_length, bool masked = true);

// Greedy exact-match accuracy: generated completion vs expected response,
// compared after whitespace normalization.
double eval_task_accuracy(const GuidedModel& g, const std::vector<DemoPair>& demos,
                          const GenParams& params);

struct EvalRow {
  std::string base_id;
  std::string mode;  // "base" or "guided"
  double perplexity = 0;
  double task_accuracy = 0;
  double mean_abs_delta = 0;
};

struct EvalReport {
  std::vector<EvalRow> rows;

  std::string to_table() const;
  const EvalRow& find(const std::string& base_id, const std::string& mode) const;
};

// One base to plug the value network into, with an optional vocabulary map
// when its tokenizer differs from the value network's.
struct TransferBase {
  std::string id;
  const Transformer<float>* model = nullptr;
  const Tokenizer* tokenizer = nullptr;
  const VocabMap* map = nullptr;  // null: shared vocabulary
};

// Plugs one trained value network into each base in turn and reports
// perplexity and task accuracy for the base alone and the guided pair.
// `proto` carries the value network, scheme, and value tokenizer; its base
// fields are ignored.
EvalReport transfer_experiment(const GuidedModel& proto, const std::vector<TransferBase>& bases,
                               const std::vector<DemoPair>& eval_demos,
                               const std::vector<DemoPair>& task_demos, const GenParams& params,
                               int max_length);

struct BenchRow {
  std::string config_id;
  int length = 0;           // decoded tokens per run
  double mean_seconds = 0;  // wall time averaged over runs
  double tokens_per_second = 0;
  double peak_rss_mb = 0;  // process high-water mark after the runs
};

// Times fixed-length greedy decodes, averaged over `runs` runs per
// (config, length) cell. Peak memory is the process-wide high-water mark and
// therefore only increases across cells.
std::vector<BenchRow> bench_inference(
    const std::vector<std::pair<std::string, const GuidedModel*>>& configs,
    const std::vector<int>& lengths, int runs = 5, const std::string& prompt = "the fox");

std::string bench_table(const std::vector<BenchRow>& rows);

double peak_rss_mb();

}  // namespace ivl
