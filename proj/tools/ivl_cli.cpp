// Experiment harness: corpus generation, tokenizer and model training, guided
// generation, transfer evaluation, vocabulary mapping, and timing runs.

#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "ivl/checkpoint.hpp"
#include "ivl/composition.hpp"
#include "ivl/config.hpp"
#include "ivl/corpus.hpp"
#include "ivl/eval.hpp"
#include "ivl/tokenizer.hpp"
#include "ivl/training.hpp"
#include "ivl/transformer.hpp"
#include "ivl/vocab_map.hpp"

namespace {

using namespace ivl;

constexpr const char* kCorpusTag = "ivl-corpus/1";
constexpr const char* kReportTag = "ivl-report/1";

void write_plain_corpus(const std::string& path, const std::vector<std::string>& lines) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path);
  f << kCorpusTag << " plain\n";
  for (const auto& l : lines) f << l << "\n";
}

void write_demo_corpus(const std::string& path, const std::vector<DemoPair>& demos) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path);
  f << kCorpusTag << " demos\n";
  for (const auto& d : demos) f << d.prompt << "\t" << d.response << "\n";
}

std::string read_corpus_header(std::ifstream& f, const std::string& path) {
  std::string header;
  if (!std::getline(f, header) || header.rfind(kCorpusTag, 0) != 0)
    throw IoError(path + ": not a corpus file (missing '" + std::string(kCorpusTag) + "' tag)");
  std::istringstream is(header);
  std::string tag, kind;
  is >> tag >> kind;
  return kind;
}

std::vector<std::string> load_plain_corpus(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot read " + path);
  if (read_corpus_header(f, path) != "plain") throw IoError(path + ": expected a plain corpus");
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(f, line))
    if (!line.empty()) lines.push_back(line);
  return lines;
}

std::vector<DemoPair> load_demo_corpus(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot read " + path);
  if (read_corpus_header(f, path) != "demos")
    throw IoError(path + ": expected a demonstration corpus");
  std::vector<DemoPair> demos;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    size_t tab = line.find('\t');
    if (tab == std::string::npos) throw IoError(path + ": demo line without tab: " + line);
    demos.push_back({line.substr(0, tab), line.substr(tab + 1)});
  }
  return demos;
}

// Flags override the config file; a flag the user did not pass falls back to
// the namespaced config key, then to the built-in default.
struct Settings {
  Config cfg;
  CLI::App* sub = nullptr;

  const CLI::Option* given(const std::string& flag) const {
    const CLI::Option* opt = sub->get_option_no_throw(flag);
    return opt && opt->count() > 0 ? opt : nullptr;
  }
  std::string str(const std::string& flag, const std::string& key, const std::string& def) const {
    if (const auto* opt = given(flag)) return opt->as<std::string>();
    return cfg.get_or(key, def);
  }
  std::string require_str(const std::string& flag, const std::string& key) const {
    if (const auto* opt = given(flag)) return opt->as<std::string>();
    return cfg.require(key);  // throws naming the key
  }
  int64_t num(const std::string& flag, const std::string& key, int64_t def) const {
    if (const auto* opt = given(flag)) return opt->as<int64_t>();
    return cfg.get_int(key, def);
  }
  double real(const std::string& flag, const std::string& key, double def) const {
    if (const auto* opt = given(flag)) return opt->as<double>();
    return cfg.get_double(key, def);
  }
  bool flag(const std::string& flag_name, const std::string& key, bool def) const {
    if (given(flag_name)) return true;
    return cfg.get_bool(key, def);
  }
};

TrainingConfig training_config(const Settings& s) {
  TrainingConfig tc;
  tc.learning_rate = s.real("--lr", "train.learning_rate", tc.learning_rate);
  tc.warmup_ratio = s.real("--warmup-ratio", "train.warmup_ratio", tc.warmup_ratio);
  tc.epochs = static_cast<int>(s.num("--epochs", "train.epochs", tc.epochs));
  tc.global_batch = static_cast<int>(s.num("--batch", "train.global_batch", tc.global_batch));
  tc.max_length = static_cast<int>(s.num("--max-length", "train.max_length", tc.max_length));
  tc.lambda_l1 = s.real("--lambda", "train.lambda_l1", tc.lambda_l1);
  tc.weight_decay = s.real("--weight-decay", "train.weight_decay", tc.weight_decay);
  tc.grad_clip = s.real("--grad-clip", "train.grad_clip", tc.grad_clip);
  tc.seed = static_cast<uint64_t>(s.num("--seed", "train.seed", 0));
  tc.max_steps = static_cast<int>(s.num("--max-steps", "train.max_steps", tc.max_steps));
  tc.validate();
  return tc;
}

void add_training_flags(CLI::App* sub) {
  sub->add_option("--lr", "learning rate")->type_name("FLOAT");
  sub->add_option("--warmup-ratio", "warmup fraction of total steps");
  sub->add_option("--epochs", "training epochs");
  sub->add_option("--batch", "global batch size");
  sub->add_option("--max-length", "max sequence length per sample");
  sub->add_option("--weight-decay", "decoupled weight decay");
  sub->add_option("--grad-clip", "global-norm gradient clip; <= 0 disables");
  sub->add_option("--max-steps", "hard step cap (0: epochs decide)");
  sub->add_option("--log", "training log file");
}

std::unique_ptr<std::ofstream> open_log(const Settings& s, std::ostream** stream) {
  std::string path = s.str("--log", "train.log", "");
  *stream = nullptr;
  if (path.empty()) return nullptr;
  auto f = std::make_unique<std::ofstream>(path);
  if (!*f) throw IoError("cannot write " + path);
  *stream = f.get();
  return f;
}

// Shared model-loading flags for generate / eval / bench.
struct LoadedModels {
  Tokenizer value_tok, base_tok;
  std::optional<Transformer<float>> base, value, expert;
  std::optional<GatedProbe<float>> probe;
  std::optional<VocabMap> map;
  GuidedModel guided;
};

void add_model_flags(CLI::App* sub) {
  sub->add_option("--tokenizer", "value-side tokenizer file");
  sub->add_option("--base-tokenizer", "base-side tokenizer (defaults to --tokenizer)");
  sub->add_option("--base", "base model checkpoint");
  sub->add_option("--value", "value network checkpoint");
  sub->add_option("--probe", "probe checkpoint (scheme probe)");
  sub->add_option("--expert", "expert checkpoint (scheme proxy)");
  sub->add_option("--scheme", "residual | cascade | cascade+ | probe | proxy");
  sub->add_option("--map", "vocabulary map file for cross-vocabulary runs");
  sub->add_flag("--parallel", "run residual base and value forwards concurrently");
}

LoadedModels load_models(const Settings& s) {
  LoadedModels m;
  m.value_tok = Tokenizer::load(s.require_str("--tokenizer", "model.tokenizer"));
  std::string btok_path = s.str("--base-tokenizer", "model.base_tokenizer", "");
  m.base_tok = btok_path.empty() ? m.value_tok : Tokenizer::load(btok_path);
  m.base = load_checkpoint(s.require_str("--base", "model.base"));

  std::string value_path = s.str("--value", "model.value", "");
  if (!value_path.empty()) m.value = load_checkpoint(value_path);
  std::string probe_path = s.str("--probe", "model.probe", "");
  if (!probe_path.empty()) m.probe = load_probe_checkpoint(probe_path);
  std::string expert_path = s.str("--expert", "model.expert", "");
  if (!expert_path.empty()) m.expert = load_checkpoint(expert_path);
  std::string map_path = s.str("--map", "model.map", "");
  if (!map_path.empty()) m.map = VocabMap::load(map_path);

  m.guided.base = &*m.base;
  m.guided.scheme = scheme_from_string(s.str("--scheme", "model.scheme", "residual"));
  if (m.value) m.guided.value = &*m.value;
  if (m.probe) m.guided.probe = &*m.probe;
  if (m.expert) m.guided.expert = &*m.expert;
  if (m.map) m.guided.vocab_map = &*m.map;
  m.guided.base_tokenizer = &m.base_tok;
  m.guided.value_tokenizer = &m.value_tok;
  m.guided.parallel_residual = s.flag("--parallel", "model.parallel", false);
  return m;
}

int cmd_tokenizer_train(const Settings& s) {
  auto corpus = load_plain_corpus(s.require_str("--corpus", "tokenizer.corpus"));
  std::string demos_path = s.str("--demos", "tokenizer.demos", "");
  if (!demos_path.empty())
    for (const auto& t : demo_texts(load_demo_corpus(demos_path))) corpus.push_back(t);
  int vocab_size = static_cast<int>(s.num("--vocab-size", "tokenizer.vocab_size", 512));
  uint64_t seed = static_cast<uint64_t>(s.num("--seed", "tokenizer.seed", 0));
  Tokenizer tok = train_bpe(corpus, vocab_size, seed);
  std::string out = s.require_str("--out", "tokenizer.out");
  tok.save(out);
  std::cout << "tokenizer: vocab " << tok.vocab_size() << ", checksum " << hex64(tok.checksum())
            << " -> " << out << "\n";
  return 0;
}

int cmd_corpus_gen(const Settings& s) {
  std::string kind = s.str("--kind", "corpus.kind", "plain");
  int size = static_cast<int>(s.num("--size", "corpus.size", 200));
  uint64_t seed = static_cast<uint64_t>(s.num("--seed", "corpus.seed", 0));
  std::string out = s.require_str("--out", "corpus.out");
  if (kind == "plain") {
    write_plain_corpus(out, gen_plain_corpus(s.str("--grammar", "corpus.grammar", "simple"),
                                             size, seed));
  } else if (kind == "demos") {
    write_demo_corpus(out, gen_demo_corpus(s.str("--task", "corpus.task", "reverse"), size, seed));
  } else {
    throw ConfigError("corpus-gen: unknown kind '" + kind + "' (plain | demos)");
  }
  std::cout << "corpus: " << kind << " x" << size << " -> " << out << "\n";
  return 0;
}

int cmd_pretrain(const Settings& s) {
  Tokenizer tok = Tokenizer::load(s.require_str("--tokenizer", "model.tokenizer"));
  auto corpus = load_plain_corpus(s.require_str("--corpus", "pretrain.corpus"));
  TransformerConfig cfg = preset_config(s.str("--preset", "model.preset", "base-S"));
  cfg.vocab_size = tok.vocab_size();
  cfg.max_seq_len = s.num("--max-seq-len", "model.max_seq_len", cfg.max_seq_len);
  TrainingConfig tc = training_config(s);
  Transformer<float> model = make_transformer<float>(cfg, tc.seed);

  std::ostream* log = nullptr;
  auto log_file = open_log(s, &log);
  TrainResult r = pretrain_lm(model, corpus, tok, tc, log);
  std::string out = s.require_str("--out", "pretrain.out");
  save_checkpoint(model, out);
  std::cout << "pretrain: final ce " << r.final_ce << ", checksum " << hex64(model.checksum())
            << " -> " << out << "\n";
  return 0;
}

int cmd_train_value(const Settings& s) {
  Tokenizer tok = Tokenizer::load(s.require_str("--tokenizer", "model.tokenizer"));
  auto demos = load_demo_corpus(s.require_str("--demos", "train.demos"));
  Scheme scheme = scheme_from_string(s.str("--scheme", "model.scheme", "residual"));
  TrainingConfig tc = training_config(s);

  std::vector<std::string> base_paths;
  if (s.sub->count("--base") > 0)
    base_paths = s.sub->get_option("--base")->as<std::vector<std::string>>();
  std::string curriculum = s.str("--curriculum", "train.curriculum", "");
  if (!curriculum.empty()) {
    std::istringstream is(curriculum);
    std::string item;
    while (std::getline(is, item, ','))
      if (!item.empty()) base_paths.push_back(item);
  }
  if (base_paths.empty() && s.cfg.has("model.base")) base_paths.push_back(s.cfg.require("model.base"));
  if (base_paths.empty()) throw ConfigError("config: missing required key 'model.base'");

  std::vector<Transformer<float>> bases;
  std::vector<const Transformer<float>*> base_ptrs;
  std::vector<std::string> base_ids;
  for (const auto& p : base_paths) bases.push_back(load_checkpoint(p));
  for (size_t i = 0; i < bases.size(); ++i) {
    base_ptrs.push_back(&bases[i]);
    base_ids.push_back(base_paths[i]);
  }

  std::ostream* log = nullptr;
  auto log_file = open_log(s, &log);
  std::string out = s.require_str("--out", "train.out");

  if (scheme == Scheme::kLinearProbe) {
    ProbeConfig pc;
    pc.d_in = bases[0].config.d_model;
    pc.d_ff = static_cast<int64_t>(s.num("--probe-dff", "model.probe_dff", 128));
    pc.vocab_size = tok.vocab_size();
    GatedProbe<float> probe = make_probe<float>(pc, tc.seed);
    TrainResult r = train_value(base_ptrs, base_ids, nullptr, &probe, scheme, demos, tok, tc, log);
    save_probe_checkpoint(probe, out);
    std::cout << "train-value: final ce " << r.final_ce << " -> " << out << "\n";
    return 0;
  }

  TransformerConfig vc = preset_config(s.str("--preset", "model.preset", "value-XS"));
  vc.vocab_size = tok.vocab_size();
  vc.max_seq_len = s.num("--max-seq-len", "model.max_seq_len", vc.max_seq_len);
  std::string init = s.str("--init", "model.init", "random");
  Transformer<float> value =
      init == "random"
          ? init_value_network(ValueInit::kRandom, vc, tc.seed)
          : init_value_network(ValueInit::kPretrainedCheckpoint, vc, tc.seed,
                               s.require_str("--init-checkpoint", "model.init_checkpoint"));
  TrainResult r = train_value(base_ptrs, base_ids, &value, nullptr, scheme, demos, tok, tc, log);
  save_checkpoint(value, out);
  std::cout << "train-value: final ce " << r.final_ce << ", checksum " << hex64(value.checksum())
            << " -> " << out << "\n";
  return 0;
}

int cmd_generate(const Settings& s) {
  LoadedModels m = load_models(s);
  GenParams p;
  p.max_new_tokens = static_cast<int>(s.num("--max-new", "generate.max_new_tokens", 32));
  p.temperature = static_cast<float>(s.real("--temperature", "generate.temperature", 0.0));
  p.greedy = p.temperature <= 0.0f;
  p.seed = static_cast<uint64_t>(s.num("--seed", "generate.seed", 0));
  GenResult r = generate(m.guided, s.require_str("--prompt", "generate.prompt"), p);
  std::cout << r.text << "\n";
  if (r.truncated) std::cerr << "(truncated at length limit)\n";
  return 0;
}

void write_report(const std::string& path, const Settings& s, const std::string& body) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path);
  f << kReportTag << "\n";
  std::istringstream cfg(s.cfg.serialize());
  std::string line;
  while (std::getline(cfg, line)) f << "# " << line << "\n";
  f << body;
}

int cmd_eval(const Settings& s) {
  LoadedModels m = load_models(s);
  auto demos = load_demo_corpus(s.require_str("--demos", "eval.demos"));
  int max_length = static_cast<int>(s.num("--max-length", "eval.max_length", 64));
  bool masked = !s.flag("--unmasked", "eval.unmasked", false);

  double mean_abs_delta = 0;
  double ppl = m.map ? eval_perplexity_mapped(m.guided, demos, max_length, masked)
                     : eval_perplexity(m.guided, demos, m.value_tok, max_length, masked,
                                       &mean_abs_delta);
  GenParams p;
  p.max_new_tokens = static_cast<int>(s.num("--max-new", "eval.max_new_tokens", 16));
  double acc = eval_task_accuracy(m.guided, demos, p);

  std::ostringstream body;
  body << "row ppl=" << ppl << " acc=" << acc << " mean_abs_delta=" << mean_abs_delta << "\n";
  std::cout << "ppl " << ppl << "  acc " << acc << "  mean|dz| " << mean_abs_delta << "\n";
  std::string out = s.str("--out", "eval.out", "");
  if (!out.empty()) write_report(out, s, body.str());
  return 0;
}

// --plug-base entries: id=ckpt[:tokenizer[:map]]
TransferBase parse_transfer_base(const std::string& spec, std::vector<std::unique_ptr<Transformer<float>>>& models,
                                 std::vector<std::unique_ptr<Tokenizer>>& toks,
                                 std::vector<std::unique_ptr<VocabMap>>& maps,
                                 const Tokenizer& value_tok) {
  size_t eq = spec.find('=');
  if (eq == std::string::npos)
    throw ConfigError("transfer: base spec needs id=checkpoint[:tokenizer[:map]]: " + spec);
  TransferBase b;
  b.id = spec.substr(0, eq);
  std::string rest = spec.substr(eq + 1);
  std::vector<std::string> parts;
  std::istringstream is(rest);
  std::string item;
  while (std::getline(is, item, ':')) parts.push_back(item);
  if (parts.empty() || parts.size() > 3)
    throw ConfigError("transfer: base spec needs id=checkpoint[:tokenizer[:map]]: " + spec);
  models.push_back(std::make_unique<Transformer<float>>(load_checkpoint(parts[0])));
  b.model = models.back().get();
  if (parts.size() >= 2 && !parts[1].empty()) {
    toks.push_back(std::make_unique<Tokenizer>(Tokenizer::load(parts[1])));
    b.tokenizer = toks.back().get();
  } else {
    b.tokenizer = &value_tok;
  }
  if (parts.size() == 3 && !parts[2].empty()) {
    maps.push_back(std::make_unique<VocabMap>(VocabMap::load(parts[2])));
    b.map = maps.back().get();
  }
  if (b.map == nullptr && b.model->config.vocab_size != value_tok.vocab_size())
    throw ConfigError("transfer: base '" + b.id +
                      "' has a different vocabulary and no map was supplied");
  return b;
}

int cmd_transfer(const Settings& s) {
  Tokenizer value_tok = Tokenizer::load(s.require_str("--tokenizer", "model.tokenizer"));
  Scheme scheme = scheme_from_string(s.str("--scheme", "model.scheme", "residual"));

  std::optional<Transformer<float>> value;
  std::optional<GatedProbe<float>> probe;
  std::string value_path = s.str("--value", "model.value", "");
  std::string probe_path = s.str("--probe", "model.probe", "");
  if (value_path.empty() && probe_path.empty())
    throw ConfigError("config: missing required key 'model.value'");
  if (!value_path.empty()) value = load_checkpoint(value_path);
  if (!probe_path.empty()) probe = load_probe_checkpoint(probe_path);

  GuidedModel proto;
  proto.scheme = scheme;
  if (value) proto.value = &*value;
  if (probe) proto.probe = &*probe;
  proto.value_tokenizer = &value_tok;

  auto eval_demos = load_demo_corpus(s.require_str("--demos", "eval.demos"));
  std::string tasks_path = s.str("--tasks", "eval.tasks", "");
  auto task_demos = tasks_path.empty() ? eval_demos : load_demo_corpus(tasks_path);

  std::vector<std::unique_ptr<Transformer<float>>> models;
  std::vector<std::unique_ptr<Tokenizer>> toks;
  std::vector<std::unique_ptr<VocabMap>> maps;
  std::vector<TransferBase> bases;
  if (s.sub->count("--plug-base") == 0)
    throw ConfigError("config: missing required key 'transfer.bases' (--plug-base)");
  for (const auto& spec : s.sub->get_option("--plug-base")->as<std::vector<std::string>>())
    bases.push_back(parse_transfer_base(spec, models, toks, maps, value_tok));

  GenParams p;
  p.max_new_tokens = static_cast<int>(s.num("--max-new", "eval.max_new_tokens", 16));
  int max_length = static_cast<int>(s.num("--max-length", "eval.max_length", 64));

  EvalReport report = transfer_experiment(proto, bases, eval_demos, task_demos, p, max_length);
  std::cout << report.to_table();

  std::ostringstream body;
  for (const auto& r : report.rows)
    body << "row base=" << r.base_id << " mode=" << r.mode << " ppl=" << r.perplexity
         << " acc=" << r.task_accuracy << " mean_abs_delta=" << r.mean_abs_delta << "\n";
  std::string out = s.str("--out", "eval.out", "");
  if (!out.empty()) write_report(out, s, body.str());
  return 0;
}

SparsifySpec sparsify_from(const Settings& s) {
  SparsifySpec spec;
  int64_t top_k = s.num("--top-k", "map.top_k", 0);
  if (top_k > 0) {
    spec.mode = SparsifySpec::Mode::kTopK;
    spec.top_k = static_cast<int>(top_k);
  } else {
    spec.min_weight = s.real("--min-weight", "map.min_weight", spec.min_weight);
  }
  return spec;
}

int cmd_map_vocab(const Settings& s) {
  Tokenizer tok_b = Tokenizer::load(s.require_str("--tokenizer-base", "map.tokenizer_base"));
  Tokenizer tok_v = Tokenizer::load(s.require_str("--tokenizer-value", "map.tokenizer_value"));
  auto corpus = load_plain_corpus(s.require_str("--corpus", "map.corpus"));
  VocabMap map = build_vocab_map(tok_b, tok_v, corpus, sparsify_from(s));
  std::string out = s.require_str("--out", "map.out");
  map.save(out);
  std::cout << "map: " << map.rows << " -> " << map.cols << ", " << map.zero_rows().size()
            << " unobserved rows -> " << out << "\n";
  return 0;
}

int cmd_overlap(const Settings& s) {
  Tokenizer tok_b = Tokenizer::load(s.require_str("--tokenizer-base", "map.tokenizer_base"));
  Tokenizer tok_v = Tokenizer::load(s.require_str("--tokenizer-value", "map.tokenizer_value"));
  auto corpus = load_plain_corpus(s.require_str("--corpus", "map.corpus"));
  std::string map_path = s.str("--map", "map.path", "");
  VocabMap map = map_path.empty() ? build_vocab_map(tok_b, tok_v, corpus, sparsify_from(s))
                                  : VocabMap::load(map_path);
  std::cout << "overlap ratio: " << overlap_ratio(map, tok_b, tok_v, corpus) << "\n";
  return 0;
}

int cmd_bench(const Settings& s) {
  LoadedModels m = load_models(s);
  GuidedModel alone;
  alone.base = m.guided.base;
  alone.scheme = Scheme::kResidual;
  alone.base_tokenizer = &m.base_tok;
  alone.value_tokenizer = &m.base_tok;

  std::vector<std::pair<std::string, const GuidedModel*>> configs;
  configs.push_back({"base", &alone});
  if (m.value || m.probe || m.expert) configs.push_back({"guided", &m.guided});

  std::vector<int> lengths;
  std::istringstream is(s.str("--lengths", "bench.lengths", "128,512,1024"));
  std::string item;
  while (std::getline(is, item, ',')) lengths.push_back(std::stoi(item));
  int runs = static_cast<int>(s.num("--runs", "bench.runs", 5));
  std::string prompt = s.str("--prompt", "bench.prompt", "the fox");

  auto rows = bench_inference(configs, lengths, runs, prompt);
  std::cout << bench_table(rows);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"transferable post-training via logit-delta value networks"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  std::string config_path;
  app.add_option("--config", config_path, "structured-text config file (flags override)");

  struct SubDef {
    const char* name;
    const char* desc;
    int (*run)(const Settings&);
  };
  const std::vector<SubDef> defs = {
      {"tokenizer-train", "train a byte-pair tokenizer on a plain corpus", cmd_tokenizer_train},
      {"corpus-gen", "generate a synthetic plain or demonstration corpus", cmd_corpus_gen},
      {"pretrain", "next-token pretraining of a base model", cmd_pretrain},
      {"train-value", "train a value network against frozen bases", cmd_train_value},
      {"generate", "guided greedy or sampled generation", cmd_generate},
      {"eval", "perplexity and task accuracy of one model combination", cmd_eval},
      {"transfer", "plug one value network into several bases and compare", cmd_transfer},
      {"map-vocab", "build a cross-vocabulary transition map", cmd_map_vocab},
      {"overlap", "alignment overlap ratio between two tokenizers", cmd_overlap},
      {"bench", "decode timing and peak memory at several lengths", cmd_bench},
  };

  std::map<std::string, const SubDef*> by_name;
  for (const auto& d : defs) {
    CLI::App* sub = app.add_subcommand(d.name, d.desc);
    sub->allow_extras(false);
    by_name[d.name] = &d;

    sub->add_option("--out", "output path");
    sub->add_option("--seed", "rng seed");
    if (std::string(d.name) == "tokenizer-train") {
      sub->add_option("--corpus", "plain corpus file");
      sub->add_option("--demos", "demonstration corpus folded into training text");
      sub->add_option("--vocab-size", "target vocabulary size");
    } else if (std::string(d.name) == "corpus-gen") {
      sub->add_option("--kind", "plain | demos");
      sub->add_option("--grammar", "plain grammar id (simple | wide)");
      sub->add_option("--task", "demo task id (reverse | qa | style)");
      sub->add_option("--size", "number of lines / pairs");
    } else if (std::string(d.name) == "pretrain") {
      sub->add_option("--tokenizer", "tokenizer file");
      sub->add_option("--corpus", "plain corpus file");
      sub->add_option("--preset", "base-S | base-M | value-XS");
      sub->add_option("--max-seq-len", "model context length");
      add_training_flags(sub);
    } else if (std::string(d.name) == "train-value") {
      sub->add_option("--tokenizer", "value vocabulary tokenizer");
      sub->add_option("--demos", "demonstration corpus file");
      sub->add_option("--base", "frozen base checkpoint (repeatable)")->take_all();
      sub->add_option("--curriculum", "comma-separated base checkpoints, trained in order");
      sub->add_option("--preset", "value network preset");
      sub->add_option("--max-seq-len", "value context length");
      sub->add_option("--scheme", "residual | cascade | cascade+ | probe");
      sub->add_option("--lambda", "L1 penalty weight on delta logits");
      sub->add_option("--init", "random | pretrained");
      sub->add_option("--init-checkpoint", "checkpoint for --init pretrained");
      sub->add_option("--probe-dff", "probe hidden width (scheme probe)");
      add_training_flags(sub);
    } else if (std::string(d.name) == "generate") {
      add_model_flags(sub);
      sub->add_option("--prompt", "prompt text");
      sub->add_option("--max-new", "max generated tokens");
      sub->add_option("--temperature", "sampling temperature (0: greedy)");
    } else if (std::string(d.name) == "eval") {
      add_model_flags(sub);
      sub->add_option("--demos", "demonstration corpus file");
      sub->add_option("--max-length", "max scored sequence length");
      sub->add_option("--max-new", "max generated tokens for accuracy");
      sub->add_flag("--unmasked", "score all positions, not only responses");
    } else if (std::string(d.name) == "transfer") {
      sub->add_option("--tokenizer", "value vocabulary tokenizer");
      sub->add_option("--value", "value network checkpoint");
      sub->add_option("--probe", "probe checkpoint");
      sub->add_option("--scheme", "connection scheme");
      sub->add_option("--demos", "evaluation demonstration corpus");
      sub->add_option("--tasks", "task corpus (defaults to --demos)");
      sub->add_option("--plug-base", "id=checkpoint[:tokenizer[:map]] (repeatable)")->take_all();
      sub->add_option("--max-length", "max scored sequence length");
      sub->add_option("--max-new", "max generated tokens for accuracy");
    } else if (std::string(d.name) == "map-vocab" || std::string(d.name) == "overlap") {
      sub->add_option("--tokenizer-base", "base-side tokenizer");
      sub->add_option("--tokenizer-value", "value-side tokenizer");
      sub->add_option("--corpus", "alignment corpus (plain)");
      sub->add_option("--min-weight", "drop map entries below this weight");
      sub->add_option("--top-k", "keep only the k strongest entries per row");
      if (std::string(d.name) == "overlap") sub->add_option("--map", "existing map file");
    } else if (std::string(d.name) == "bench") {
      add_model_flags(sub);
      sub->add_option("--lengths", "comma-separated decode lengths");
      sub->add_option("--runs", "timed runs per cell");
      sub->add_option("--prompt", "bench prompt");
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);  // usage text, exit 0
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    Settings s;
    if (!config_path.empty()) s.cfg = Config::load(config_path);
    CLI::App* sub = app.get_subcommands().front();
    s.sub = sub;
    return by_name.at(sub->get_name())->run(s);
  } catch (const ivl::ConfigError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
