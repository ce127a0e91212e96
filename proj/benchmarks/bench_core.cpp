#include <benchmark/benchmark.h>

#include <random>

#include "ivl/composition.hpp"
#include "ivl/corpus.hpp"
#include "ivl/ops.hpp"
#include "ivl/tokenizer.hpp"
#include "ivl/transformer.hpp"
#include "ivl/vocab_map.hpp"

namespace {

using namespace ivl;

void BM_Gemm(benchmark::State& state) {
  const int64_t n = state.range(0);
  std::mt19937_64 rng(0);
  Tensor<float> a = Tensor<float>::randn({n, n}, rng, 1.0f);
  Tensor<float> b = Tensor<float>::randn({n, n}, rng, 1.0f);
  for (auto _ : state) {
    Tensor<float> c = matmul(a, b);
    benchmark::DoNotOptimize(c.data().data());
  }
  state.SetItemsProcessed(state.iterations() * n * n * n);
}
BENCHMARK(BM_Gemm)->Arg(64)->Arg(128)->Arg(256);

struct Fixture {
  Tokenizer tok;
  Transformer<float> base, value;
  std::vector<int> ctx;

  Fixture() {
    auto corpus = gen_plain_corpus("simple", 120, 0);
    tok = train_bpe(corpus, 96, 0);
    TransformerConfig cfg = preset_config("value-XS");
    cfg.vocab_size = tok.vocab_size();
    base = make_transformer<float>(cfg, 1);
    value = make_transformer<float>(cfg, 2);
    ctx.push_back(tok.vocab().specials.bos);
    for (int id : tok.encode("the quick brown fox jumps over the lazy dog")) ctx.push_back(id);
  }
};

Fixture& fixture() {
  static Fixture f;
  return f;
}

void BM_BaseForward(benchmark::State& state) {
  Fixture& f = fixture();
  for (auto _ : state) {
    Tensor<float> z = forward_logits(f.base, f.ctx);
    benchmark::DoNotOptimize(z.data().data());
  }
}
BENCHMARK(BM_BaseForward);

void BM_GuidedNextResidual(benchmark::State& state) {
  Fixture& f = fixture();
  GuidedModel g;
  g.base = &f.base;
  g.value = &f.value;
  g.scheme = Scheme::kResidual;
  g.parallel_residual = state.range(0) != 0;
  for (auto _ : state) {
    auto row = guided_next_logits(g, f.ctx, f.ctx);
    benchmark::DoNotOptimize(row.data());
  }
}
BENCHMARK(BM_GuidedNextResidual)->Arg(0)->Arg(1);

void BM_GuidedNextCascade(benchmark::State& state) {
  Fixture& f = fixture();
  GuidedModel g;
  g.base = &f.base;
  g.value = &f.value;
  g.scheme = Scheme::kCascade;
  for (auto _ : state) {
    auto row = guided_next_logits(g, f.ctx, f.ctx);
    benchmark::DoNotOptimize(row.data());
  }
}
BENCHMARK(BM_GuidedNextCascade);

void BM_MapLogitsRows(benchmark::State& state) {
  Fixture& f = fixture();
  VocabMap map = VocabMap::identity(f.tok.vocab_size());
  std::mt19937_64 rng(3);
  Tensor<float> z = Tensor<float>::randn({32, f.tok.vocab_size()}, rng, 1.0f);
  for (auto _ : state) {
    Tensor<float> m = map_logits_rows(z, map);
    benchmark::DoNotOptimize(m.data().data());
  }
}
BENCHMARK(BM_MapLogitsRows);

}  // namespace

BENCHMARK_MAIN();
