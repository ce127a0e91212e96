#include "ivl/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "ivl/error.hpp"
#include "ivl/ops.hpp"

namespace ivl {

namespace {

std::string normalize_ws(const std::string& s) {
  std::string out;
  bool in_space = true;  // also trims leading whitespace
  for (char c : s) {
    if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
      if (!in_space) out.push_back(' ');
      in_space = true;
    } else {
      out.push_back(c);
      in_space = false;
    }
  }
  while (!out.empty() && out.back() == ' ') out.pop_back();
  return out;
}

double nll_of_row(const std::vector<float>& logits, int target) {
  if (target < 0 || target >= static_cast<int>(logits.size()))
    throw ShapeError("eval: target " + std::to_string(target) + " out of range");
  double mx = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (float v : logits) sum += std::exp(static_cast<double>(v) - mx);
  return -(static_cast<double>(logits[static_cast<size_t>(target)]) - mx - std::log(sum));
}

}  // namespace

double eval_perplexity(const GuidedModel& g, const std::vector<DemoPair>& demos,
                       const Tokenizer& tok, int max_length, bool masked,
                       double* mean_abs_delta) {
  if (demos.empty()) throw ConfigError("eval_perplexity: empty demo set");
  Batch batch;
  for (const auto& d : demos) {
    Sample s = make_demo_sample(d, tok, max_length);
    if (!masked) std::fill(s.mask.begin(), s.mask.end(), uint8_t(1));
    batch.samples.push_back(std::move(s));
  }
  LossMetrics m = loss_step(g, batch, 0.0);
  if (mean_abs_delta) *mean_abs_delta = m.mean_abs_delta;
  return std::exp(m.ce);
}

double eval_lm_perplexity(const Transformer<float>& model, const std::vector<std::string>& texts,
                          const Tokenizer& tok, int max_length) {
  if (texts.empty()) throw ConfigError("eval_lm_perplexity: empty text set");
  double total = 0.0;
  int64_t count = 0;
  for (const auto& text : texts) {
    Sample s = make_lm_sample(text, tok, max_length);
    Tensor<float> logits = forward_logits(model, s.inputs);
    int64_t n = 0;
    for (auto m : s.mask) n += m ? 1 : 0;
    if (n == 0) continue;
    total += cross_entropy_rows(logits, s.targets, s.mask).item() * static_cast<double>(n);
    count += n;
  }
  if (count == 0) throw NumericError("eval_lm_perplexity: no scoreable positions");
  return std::exp(total / static_cast<double>(count));
}

double eval_perplexity_mapped(const GuidedModel& g, const std::vector<DemoPair>& demos,
                              int max_length, bool masked) {
  if (!g.base_tokenizer || !g.value_tokenizer)
    throw ConfigError("eval_perplexity_mapped: guided model needs both tokenizers");
  if (demos.empty()) throw ConfigError("eval_perplexity_mapped: empty demo set");
  const Tokenizer& vtok = *g.value_tokenizer;
  const Tokenizer& btok = *g.base_tokenizer;
  double total = 0.0;
  int64_t count = 0;
  for (const auto& d : demos) {
    Sample s = make_demo_sample(d, vtok, max_length);
    std::vector<int> value_ctx;
    for (size_t t = 0; t < s.inputs.size(); ++t) {
      value_ctx.push_back(s.inputs[t]);
      if (masked && !s.mask[t]) continue;
      std::string text = vtok.decode(value_ctx);
      std::vector<int> base_ctx;
      base_ctx.push_back(btok.vocab().specials.bos);
      for (int id : btok.encode(text)) base_ctx.push_back(id);
      if (static_cast<int64_t>(base_ctx.size()) > g.base->config.max_seq_len) break;
      std::vector<float> row = guided_next_logits(g, value_ctx, base_ctx);
      total += nll_of_row(row, s.targets[t]);
      ++count;
    }
  }
  if (count == 0) throw NumericError("eval_perplexity_mapped: no scoreable positions");
  return std::exp(total / static_cast<double>(count));
}

double eval_task_accuracy(const GuidedModel& g, const std::vector<DemoPair>& demos,
                          const GenParams& params) {
  if (demos.empty()) throw ConfigError("eval_task_accuracy: empty demo set");
  int64_t hits = 0;
  for (const auto& d : demos) {
    GenResult r = generate(g, d.prompt, params);
    if (normalize_ws(r.completion) == normalize_ws(d.response)) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(demos.size());
}

std::string EvalReport::to_table() const {
  std::ostringstream os;
  os << std::left << std::setw(12) << "base" << std::setw(8) << "mode" << std::right
     << std::setw(12) << "ppl" << std::setw(10) << "acc" << std::setw(14) << "mean|dz|" << "\n";
  os << std::string(56, '-') << "\n";
  os << std::fixed;
  for (const auto& r : rows) {
    os << std::left << std::setw(12) << r.base_id << std::setw(8) << r.mode << std::right
       << std::setprecision(4) << std::setw(12) << r.perplexity << std::setprecision(3)
       << std::setw(10) << r.task_accuracy << std::setprecision(5) << std::setw(14)
       << r.mean_abs_delta << "\n";
  }
  return os.str();
}

const EvalRow& EvalReport::find(const std::string& base_id, const std::string& mode) const {
  for (const auto& r : rows)
    if (r.base_id == base_id && r.mode == mode) return r;
  throw ConfigError("eval report: no row for (" + base_id + ", " + mode + ")");
}

EvalReport transfer_experiment(const GuidedModel& proto, const std::vector<TransferBase>& bases,
                               const std::vector<DemoPair>& eval_demos,
                               const std::vector<DemoPair>& task_demos, const GenParams& params,
                               int max_length) {
  if (bases.empty()) throw ConfigError("transfer_experiment: no bases");
  EvalReport report;
  for (const auto& b : bases) {
    if (!b.model || !b.tokenizer)
      throw ConfigError("transfer_experiment: base '" + b.id + "' missing model or tokenizer");

    GuidedModel alone;
    alone.base = b.model;
    alone.scheme = Scheme::kResidual;
    alone.base_tokenizer = b.tokenizer;
    alone.value_tokenizer = b.tokenizer;
    EvalRow row_alone;
    row_alone.base_id = b.id;
    row_alone.mode = "base";
    row_alone.perplexity = eval_perplexity(alone, eval_demos, *b.tokenizer, max_length);
    row_alone.task_accuracy = eval_task_accuracy(alone, task_demos, params);
    report.rows.push_back(row_alone);

    GuidedModel guided = proto;
    guided.base = b.model;
    guided.base_tokenizer = b.tokenizer;
    guided.vocab_map = b.map;
    EvalRow row_guided;
    row_guided.base_id = b.id;
    row_guided.mode = "guided";
    if (b.map) {
      row_guided.perplexity = eval_perplexity_mapped(guided, eval_demos, max_length);
    } else {
      row_guided.perplexity = eval_perplexity(guided, eval_demos, *guided.value_tokenizer,
                                              max_length, true, &row_guided.mean_abs_delta);
    }
    row_guided.task_accuracy = eval_task_accuracy(guided, task_demos, params);
    report.rows.push_back(row_guided);
  }
  return report;
}

double peak_rss_mb() {
  std::ifstream f("/proc/self/status");
  std::string line;
  while (std::getline(f, line)) {
    if (line.rfind("VmHWM:", 0) == 0) {
      std::istringstream is(line.substr(6));
      double kb = 0;
      is >> kb;
      return kb / 1024.0;
    }
  }
  return 0.0;
}

std::vector<BenchRow> bench_inference(
    const std::vector<std::pair<std::string, const GuidedModel*>>& configs,
    const std::vector<int>& lengths, int runs, const std::string& prompt) {
  if (configs.empty() || lengths.empty() || runs <= 0)
    throw ConfigError("bench_inference: needs configs, lengths, and runs > 0");
  std::vector<BenchRow> rows;
  for (const auto& [id, g] : configs) {
    for (int len : lengths) {
      GenParams params;
      params.max_new_tokens = len;
      params.greedy = true;
      params.ignore_eos = true;
      generate(*g, prompt, params);  // warmup, untimed
      double total = 0.0;
      int decoded = 0;
      for (int r = 0; r < runs; ++r) {
        auto t0 = std::chrono::steady_clock::now();
        GenResult res = generate(*g, prompt, params);
        auto t1 = std::chrono::steady_clock::now();
        total += std::chrono::duration<double>(t1 - t0).count();
        decoded = static_cast<int>(res.value_ids.size()) -
                  (1 + static_cast<int>(g->value_tokenizer->encode(prompt).size()));
      }
      BenchRow row;
      row.config_id = id;
      row.length = decoded;
      row.mean_seconds = total / runs;
      row.tokens_per_second = row.mean_seconds > 0 ? decoded / row.mean_seconds : 0.0;
      row.peak_rss_mb = peak_rss_mb();
      rows.push_back(row);
    }
  }
  return rows;
}

std::string bench_table(const std::vector<BenchRow>& rows) {
  std::ostringstream os;
  os << std::left << std::setw(16) << "config" << std::right << std::setw(8) << "tokens"
     << std::setw(12) << "sec/run" << std::setw(12) << "tok/s" << std::setw(14) << "peak MB"
     << "\n";
  os << std::string(62, '-') << "\n";
  os << std::fixed;
  for (const auto& r : rows) {
    os << std::left << std::setw(16) << r.config_id << std::right << std::setw(8) << r.length
       << std::setprecision(4) << std::setw(12) << r.mean_seconds << std::setprecision(1)
       << std::setw(12) << r.tokens_per_second << std::setw(14) << r.peak_rss_mb << "\n";
  }
  return os.str();
}

}  // namespace ivl
