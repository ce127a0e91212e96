#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "ivl/checkpoint.hpp"
#include "ivl/config.hpp"
#include "ivl/corpus.hpp"
#include "ivl/error.hpp"
#include "ivl/eval.hpp"

using namespace ivl;

namespace {

std::string temp_path(const char* name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

struct CmdResult {
  int exit_code = -1;
  std::string output;
};

CmdResult run_cli(const std::string& args) {
  std::string cmd = std::string(IVL_CLI_PATH) + " " + args + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  CmdResult r;
  char buf[512];
  while (fgets(buf, sizeof(buf), pipe)) r.output += buf;
  int status = pclose(pipe);
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

struct Fixture {
  Tokenizer tok;
  TransformerConfig cfg;
  Transformer<float> base;
  Transformer<float> zero_base;  // all parameters zero: uniform distribution
  std::vector<DemoPair> demos;

  Fixture() {
    demos = gen_demo_corpus("reverse", 24, 5);
    tok = train_bpe(demo_texts(demos), 64, 0);
    cfg.d_model = 16;
    cfg.n_layers = 2;
    cfg.n_heads = 2;
    cfg.d_ff = 32;
    cfg.vocab_size = tok.vocab_size();
    cfg.max_seq_len = 32;
    base = make_transformer<float>(cfg, 1);
    zero_base = make_transformer<float>(cfg, 1);
    for (auto* p : zero_base.parameters())
      std::fill(p->raw_data().begin(), p->raw_data().end(), 0.0f);
  }

  GuidedModel guided(const Transformer<float>* b, Transformer<float>* value) {
    GuidedModel g;
    g.base = b;
    g.value = value;
    g.base_tokenizer = &tok;
    g.value_tokenizer = &tok;
    return g;
  }
};

}  // namespace

TEST_CASE("config text: comments, whitespace, types, round trip") {
  Config c = Config::parse(
      "# leading comment\n"
      "format = ivl-config/1\n"
      "train.learning_rate = 0.003\n"
      "  model.d_model =  128 \n"
      "\n"
      "eval.masked = true\n"
      "run.name = smoke-a\n");
  CHECK(c.require("run.name") == "smoke-a");
  CHECK(c.get_int("model.d_model", 0) == 128);
  CHECK(c.get_double("train.learning_rate", 0) == doctest::Approx(0.003));
  CHECK(c.get_bool("eval.masked", false));
  CHECK(c.get_bool("eval.missing", true));
  CHECK(c.get_or("absent", "dflt") == "dflt");
  CHECK(c.has("model.d_model"));
  CHECK(!c.has("nope"));

  Config back = Config::parse(c.serialize());
  CHECK(back.values() == c.values());

  try {
    c.require("train.epochs");
    FAIL("expected a missing-key error");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("train.epochs") != std::string::npos);
  }
  CHECK_THROWS_AS(Config::parse("format = ivl-config/99\n"), ConfigError);
  CHECK_THROWS_AS(Config::parse("no equals sign\n"), ConfigError);
  CHECK_THROWS_AS(Config::load("/nonexistent/conf.txt"), IoError);

  // Files (unlike in-memory text) must carry the format tag.
  std::string untagged = temp_path("ivl_conf_untagged.txt");
  { std::ofstream(untagged) << "train.lr = 1\n"; }
  CHECK_THROWS_AS(Config::load(untagged), ConfigError);
  std::remove(untagged.c_str());
}

TEST_CASE("corpus generators: determinism, size, task semantics") {
  auto a = gen_plain_corpus("simple", 40, 9);
  auto b = gen_plain_corpus("simple", 40, 9);
  CHECK(a == b);
  CHECK(a.size() == 40);
  CHECK(a != gen_plain_corpus("simple", 40, 10));
  // Pangram lines keep the full alphabet present.
  CHECK(a[0].find("quick brown fox") != std::string::npos);

  auto rev = gen_demo_corpus("reverse", 30, 4);
  CHECK(rev.size() == 30);
  for (const auto& d : rev) {
    REQUIRE(d.prompt.size() > 5);
    CHECK(d.prompt.substr(0, 3) == "R: ");
    CHECK(d.prompt.back() == '=');
    std::string payload = d.prompt.substr(3, d.prompt.size() - 5);
    std::string want(payload.rbegin(), payload.rend());
    CHECK(d.response == want);
  }

  auto qa = gen_demo_corpus("qa", 20, 4);
  for (const auto& d : qa) {
    CHECK(d.prompt.find("Q: color of ") == 0);
    CHECK(d.response.find("A: ") == 0);
  }
  bool sky_blue = false;
  for (const auto& d : qa)
    if (d.prompt == "Q: color of sky =") sky_blue = d.response == "A: blue";
  auto style = gen_demo_corpus("style", 10, 4);
  for (const auto& d : style) CHECK(d.response == "yes please");
  (void)sky_blue;

  CHECK_THROWS_AS(gen_plain_corpus("nope", 5, 0), ConfigError);
  CHECK_THROWS_AS(gen_demo_corpus("nope", 5, 0), ConfigError);

  auto texts = demo_texts(rev);
  REQUIRE(texts.size() == rev.size());
  CHECK(texts[0] == rev[0].prompt + " " + rev[0].response);
}

TEST_CASE("an all-zero model is scored at exactly vocabulary-size perplexity") {
  Fixture f;
  GuidedModel g = f.guided(&f.zero_base, nullptr);
  double ppl = eval_perplexity(g, f.demos, f.tok, 24);
  CHECK(ppl == doctest::Approx(double(f.tok.vocab_size())).epsilon(1e-4));
  double lm = eval_lm_perplexity(f.zero_base, demo_texts(f.demos), f.tok, 24);
  CHECK(lm == doctest::Approx(double(f.tok.vocab_size())).epsilon(1e-4));
}

TEST_CASE("zero-delta guided perplexity equals the base alone") {
  Fixture f;
  auto fresh = init_value_network(ValueInit::kRandom, f.cfg, 7);
  GuidedModel alone = f.guided(&f.base, nullptr);
  GuidedModel zeroed = f.guided(&f.base, &fresh);
  double mad = -1;
  double p1 = eval_perplexity(alone, f.demos, f.tok, 24);
  double p2 = eval_perplexity(zeroed, f.demos, f.tok, 24, true, &mad);
  CHECK(p1 == doctest::Approx(p2).epsilon(1e-9));
  CHECK(mad == 0.0);
  CHECK(p1 > 1.0);
  // Unmasked scoring covers more positions and differs in general.
  double pu = eval_perplexity(alone, f.demos, f.tok, 24, false);
  CHECK(pu > 1.0);
}

TEST_CASE("masked perplexity matches a by-hand two-position computation") {
  Fixture f;
  DemoPair d = f.demos[0];
  GuidedModel g = f.guided(&f.base, nullptr);
  double ppl = eval_perplexity(g, {d}, f.tok, 24);

  Sample s = make_demo_sample(d, f.tok, 24);
  TensorF z = forward_logits(f.base, s.inputs);
  double nll = 0;
  int64_t count = 0;
  for (size_t t = 0; t < s.targets.size(); ++t) {
    if (!s.mask[t]) continue;
    double mx = -1e30, lse = 0;
    for (int64_t j = 0; j < z.cols(); ++j) mx = std::max(mx, double(z.at(t, j)));
    for (int64_t j = 0; j < z.cols(); ++j) lse += std::exp(double(z.at(t, j)) - mx);
    nll += mx + std::log(lse) - double(z.at(t, s.targets[t]));
    ++count;
  }
  CHECK(ppl == doctest::Approx(std::exp(nll / count)).epsilon(1e-4));
}

TEST_CASE("cross-vocabulary scoring reduces to the plain path for uniform models") {
  Fixture f;
  auto fresh = init_value_network(ValueInit::kRandom, f.cfg, 7);
  GuidedModel g = f.guided(&f.zero_base, &fresh);
  VocabMap id = VocabMap::identity(f.tok.vocab_size());
  g.vocab_map = &id;
  double ppl = eval_perplexity_mapped(g, {f.demos[0], f.demos[1]}, 24);
  CHECK(ppl == doctest::Approx(double(f.tok.vocab_size())).epsilon(1e-3));
}

TEST_CASE("task accuracy: bounded, deterministic, zero for a degenerate model") {
  Fixture f;
  GenParams p;
  p.max_new_tokens = 8;
  GuidedModel g = f.guided(&f.base, nullptr);
  double acc = eval_task_accuracy(g, f.demos, p);
  CHECK(acc >= 0.0);
  CHECK(acc <= 1.0);
  CHECK(acc == eval_task_accuracy(g, f.demos, p));
  // The all-zero model emits only the argmax-0 token; completions are empty.
  GuidedModel z = f.guided(&f.zero_base, nullptr);
  CHECK(eval_task_accuracy(z, f.demos, p) == 0.0);
}

TEST_CASE("transfer report: one base/guided row pair per base") {
  Fixture f;
  auto fresh = init_value_network(ValueInit::kRandom, f.cfg, 7);
  GuidedModel proto = f.guided(nullptr, &fresh);
  auto base2 = make_transformer<float>(f.cfg, 11);
  std::vector<TransferBase> bases = {{"alpha", &f.base, &f.tok, nullptr},
                                     {"beta", &base2, &f.tok, nullptr}};
  GenParams p;
  p.max_new_tokens = 6;
  EvalReport rep = transfer_experiment(proto, bases, f.demos,
                                       {f.demos.begin(), f.demos.begin() + 6}, p, 24);
  REQUIRE(rep.rows.size() == 4);
  for (const auto& id : {"alpha", "beta"}) {
    const EvalRow& b = rep.find(id, "base");
    const EvalRow& g = rep.find(id, "guided");
    // Fresh value network: guided must replicate the base exactly.
    CHECK(g.perplexity == doctest::Approx(b.perplexity).epsilon(1e-9));
    CHECK(g.mean_abs_delta == 0.0);
    CHECK(b.mean_abs_delta == 0.0);
  }
  CHECK_THROWS_AS(rep.find("gamma", "base"), ConfigError);
  std::string table = rep.to_table();
  CHECK(table.find("alpha") != std::string::npos);
  CHECK(table.find("guided") != std::string::npos);
  CHECK(table.find("ppl") != std::string::npos);
  CHECK_THROWS_AS(transfer_experiment(proto, {}, f.demos, f.demos, p, 24), ConfigError);
}

TEST_CASE("decode benchmarking: per-cell stats behave") {
  Fixture f;
  GuidedModel g = f.guided(&f.base, nullptr);
  auto rows = bench_inference({{"base", &g}}, {2, 8}, 2);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].length == 2);
  CHECK(rows[1].length == 8);
  for (const auto& r : rows) {
    CHECK(r.config_id == "base");
    CHECK(r.mean_seconds > 0.0);
    CHECK(r.tokens_per_second ==
          doctest::Approx(double(r.length) / r.mean_seconds).epsilon(1e-9));
    CHECK(r.peak_rss_mb > 0.0);
  }
  CHECK(rows[1].mean_seconds > rows[0].mean_seconds);  // 4x the decode work
  std::string table = bench_table(rows);
  CHECK(table.find("tok/s") != std::string::npos);
  CHECK(table.find("base") != std::string::npos);
  CHECK(peak_rss_mb() > 0.0);
}

TEST_CASE("cli: exit codes for help, bad usage, missing config keys") {
  CHECK(run_cli("--help").exit_code == 0);
  CHECK(run_cli("").exit_code == 1);
  CHECK(run_cli("frobnicate").exit_code == 1);
  CmdResult missing = run_cli("eval");
  CHECK(missing.exit_code == 1);
  CHECK(missing.output.find("missing") != std::string::npos);
}

TEST_CASE("cli: corpus, tokenizer, and map pipeline round trips on disk") {
  std::string dir = temp_path("ivl_cli_harness");
  std::filesystem::create_directories(dir);
  auto in = [&](const char* n) { return dir + "/" + n; };

  CmdResult c1 = run_cli("corpus-gen --kind plain --grammar simple --size 40 --seed 3 --out " +
                         in("plain.txt"));
  REQUIRE(c1.exit_code == 0);
  CmdResult c2 = run_cli("corpus-gen --kind demos --task reverse --size 16 --seed 3 --out " +
                         in("demos.tsv"));
  REQUIRE(c2.exit_code == 0);
  CmdResult t1 = run_cli("tokenizer-train --corpus " + in("plain.txt") + " --vocab-size 72 --out " +
                         in("tok_a.txt"));
  REQUIRE(t1.exit_code == 0);
  CmdResult t2 = run_cli("tokenizer-train --corpus " + in("plain.txt") + " --vocab-size 56 --out " +
                         in("tok_b.txt"));
  REQUIRE(t2.exit_code == 0);
  Tokenizer tok_a = Tokenizer::load(in("tok_a.txt"));
  CHECK(tok_a.vocab_size() == 72);

  CmdResult m = run_cli("map-vocab --tokenizer-base " + in("tok_a.txt") + " --tokenizer-value " +
                        in("tok_b.txt") + " --corpus " + in("plain.txt") + " --out " +
                        in("map.bin"));
  REQUIRE(m.exit_code == 0);
  VocabMap map = VocabMap::load(in("map.bin"));
  CHECK(map.rows == 72);
  CHECK(map.cols == 56);

  CmdResult ov = run_cli("overlap --tokenizer-base " + in("tok_a.txt") + " --tokenizer-value " +
                         in("tok_b.txt") + " --corpus " + in("plain.txt") + " --map " +
                         in("map.bin"));
  CHECK(ov.exit_code == 0);
  CHECK(ov.output.find("overlap") != std::string::npos);

  std::filesystem::remove_all(dir);
}
