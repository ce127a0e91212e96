#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <random>

#include "doctest.h"
#include "ivl/checkpoint.hpp"
#include "ivl/composition.hpp"
#include "ivl/corpus.hpp"
#include "ivl/error.hpp"

using namespace ivl;

namespace {

struct Fixture {
  Tokenizer tok;
  Transformer<float> base;
  Transformer<float> zero_value;
  Transformer<float> trained_like;  // random unembed: nonzero deltas

  Fixture() {
    auto corpus = gen_plain_corpus("simple", 60, 5);
    tok = train_bpe(corpus, 72, 0);
    TransformerConfig cfg;
    cfg.d_model = 16;
    cfg.n_layers = 2;
    cfg.n_heads = 2;
    cfg.d_ff = 32;
    cfg.vocab_size = tok.vocab_size();
    cfg.max_seq_len = 24;
    base = make_transformer<float>(cfg, 1);
    zero_value = init_value_network(ValueInit::kRandom, cfg, 2);
    trained_like = make_transformer<float>(cfg, 3);
  }

  GuidedModel guided(Transformer<float>* value, Scheme s = Scheme::kResidual) {
    GuidedModel g;
    g.base = &base;
    g.value = value;
    g.scheme = s;
    g.base_tokenizer = &tok;
    g.value_tokenizer = &tok;
    return g;
  }
};

}  // namespace

TEST_CASE("compose_logits adds delta to base bitwise") {
  std::mt19937_64 rng(1);
  TensorF zb = TensorF::randn({4, 9}, rng, 2.0f);
  TensorF zd = TensorF::randn({4, 9}, rng, 2.0f);
  TensorF zp = compose_logits(zb, zd);
  for (size_t i = 0; i < zp.data().size(); ++i)
    CHECK(zp.data()[i] == zb.data()[i] + zd.data()[i]);
}

TEST_CASE("compose_logits stop-gradient blocks the base side only") {
  std::mt19937_64 rng(2);
  for (bool sg : {true, false}) {
    TapeScope<float> scope;
    TensorF zb = TensorF::randn({3, 5}, rng, 1.0f, true);
    TensorF zd = TensorF::randn({3, 5}, rng, 1.0f, true);
    TensorF loss = sum_all(compose_logits(zb, zd, sg));
    backward(loss);
    CHECK(zd.has_grad());
    for (float g : zd.grad()) CHECK(g == 1.0f);
    if (sg) {
      CHECK(!zb.has_grad());
    } else {
      CHECK(zb.has_grad());
      for (float g : zb.grad()) CHECK(g == 1.0f);
    }
  }
}

TEST_CASE("cascade_input: one-hot rows select embedding rows") {
  std::mt19937_64 rng(3);
  TensorF w_embed = TensorF::randn({6, 4}, rng, 1.0f);
  TensorF h_embed = TensorF::randn({2, 4}, rng, 1.0f);
  std::vector<float> p(2 * 6, 0.0f);
  p[0 * 6 + 3] = 1.0f;
  p[1 * 6 + 0] = 1.0f;
  TensorF pb({2, 6}, p);
  TensorF h = cascade_input(pb, w_embed, h_embed, Scheme::kCascade);
  REQUIRE(h.shape() == Shape{2, 4});
  for (int64_t j = 0; j < 4; ++j) {
    CHECK(h.at(0, j) == doctest::Approx(w_embed.at(3, j)));
    CHECK(h.at(1, j) == doctest::Approx(w_embed.at(0, j)));
  }
  TensorF hp = cascade_input(pb, w_embed, h_embed, Scheme::kCascadePlus);
  for (int64_t i = 0; i < 2; ++i)
    for (int64_t j = 0; j < 4; ++j)
      CHECK(hp.at(i, j) == doctest::Approx(h.at(i, j) + h_embed.at(i, j)));
}

TEST_CASE("cascade_input: uniform distribution gives the embedding column means") {
  std::mt19937_64 rng(4);
  TensorF w_embed = TensorF::randn({5, 3}, rng, 1.0f);
  TensorF h_embed = TensorF::zeros({1, 3});
  TensorF pb = TensorF::full({1, 5}, 0.2f);
  TensorF h = cascade_input(pb, w_embed, h_embed, Scheme::kCascade);
  for (int64_t j = 0; j < 3; ++j) {
    double mean = 0;
    for (int64_t i = 0; i < 5; ++i) mean += w_embed.at(i, j);
    mean /= 5.0;
    CHECK(h.at(0, j) == doctest::Approx(mean).epsilon(1e-5));
  }
}

TEST_CASE("cascade_input matches an explicit loop oracle") {
  std::mt19937_64 rng(5);
  TensorF w_embed = TensorF::randn({7, 4}, rng, 1.0f);
  TensorF h_embed = TensorF::randn({3, 4}, rng, 1.0f);
  TensorF logits = TensorF::randn({3, 7}, rng, 1.0f);
  TensorF pb = softmax_rows(logits);
  TensorF h = cascade_input(pb, w_embed, h_embed, Scheme::kCascadePlus);
  for (int64_t i = 0; i < 3; ++i)
    for (int64_t j = 0; j < 4; ++j) {
      double want = h_embed.at(i, j);
      for (int64_t v = 0; v < 7; ++v) want += double(pb.at(i, v)) * double(w_embed.at(v, j));
      CHECK(h.at(i, j) == doctest::Approx(want).epsilon(1e-4));
    }
  CHECK_THROWS_AS(cascade_input(pb, w_embed, h_embed, Scheme::kResidual), Error);
}

TEST_CASE("proxy_delta: shift invariance and softmax-ratio oracle") {
  std::mt19937_64 rng(6);
  TensorF ze = TensorF::randn({2, 8}, rng, 2.0f);
  TensorF zb = TensorF::randn({2, 8}, rng, 2.0f);
  TensorF d = proxy_delta(ze, zb);
  REQUIRE(d.shape() == Shape{2, 8});

  // Oracle: log(softmax(ze)/softmax(zb)) elementwise.
  auto softmax_row = [](const TensorF& z, int64_t r) {
    std::vector<double> p(static_cast<size_t>(z.cols()));
    double mx = -1e30, sum = 0;
    for (int64_t j = 0; j < z.cols(); ++j) mx = std::max(mx, double(z.at(r, j)));
    for (int64_t j = 0; j < z.cols(); ++j) sum += (p[j] = std::exp(double(z.at(r, j)) - mx));
    for (auto& v : p) v /= sum;
    return p;
  };
  for (int64_t r = 0; r < 2; ++r) {
    auto pe = softmax_row(ze, r), pb = softmax_row(zb, r);
    for (int64_t j = 0; j < 8; ++j)
      CHECK(d.at(r, j) == doctest::Approx(std::log(pe[j] / pb[j])).epsilon(1e-4));
  }

  // Adding row-constants to either input leaves the delta unchanged.
  TensorF ze2 = add(ze, TensorF::full({2, 8}, 5.0f));
  TensorF zb2 = add(zb, TensorF::full({2, 8}, -3.0f));
  TensorF d2 = proxy_delta(ze2, zb2);
  for (size_t i = 0; i < d.data().size(); ++i)
    CHECK(d2.data()[i] == doctest::Approx(d.data()[i]).epsilon(1e-4));
}

TEST_CASE("compose_logits_mapped with the identity map equals compose_logits") {
  std::mt19937_64 rng(7);
  TensorF zb = TensorF::randn({3, 6}, rng, 1.0f);
  TensorF zd = TensorF::randn({3, 6}, rng, 1.0f);
  VocabMap id = VocabMap::identity(6);
  TensorF a = compose_logits_mapped(zb, id, zd);
  TensorF b = compose_logits(zb, zd);
  for (size_t i = 0; i < a.data().size(); ++i) CHECK(a.data()[i] == b.data()[i]);
}

TEST_CASE("compose_logits_mapped matches a dense matrix oracle") {
  std::mt19937_64 rng(8);
  VocabMap map;
  map.rows = 4;
  map.cols = 3;
  map.entries = {{{0, 0.5f}, {1, 0.5f}}, {{2, 1.0f}}, {{0, 1.0f}}, {{1, 0.25f}, {2, 0.75f}}};
  TensorF zb = TensorF::randn({2, 4}, rng, 1.0f);
  TensorF zd = TensorF::randn({2, 3}, rng, 1.0f);
  TensorF out = compose_logits_mapped(zb, map, zd);
  REQUIRE(out.shape() == Shape{2, 3});
  std::vector<std::vector<double>> dense(4, std::vector<double>(3, 0.0));
  for (int64_t i = 0; i < 4; ++i)
    for (auto& [j, w] : map.entries[static_cast<size_t>(i)]) dense[i][j] = w;
  for (int64_t r = 0; r < 2; ++r)
    for (int64_t j = 0; j < 3; ++j) {
      double want = zd.at(r, j);
      for (int64_t i = 0; i < 4; ++i) want += double(zb.at(r, i)) * dense[i][j];
      CHECK(out.at(r, j) == doctest::Approx(want).epsilon(1e-5));
    }
}

TEST_CASE("residual with a fresh value network reproduces the base bitwise") {
  Fixture f;
  GuidedModel g = f.guided(&f.zero_value);
  auto ids = f.tok.encode("the fox sees the moon");
  ids.insert(ids.begin(), f.tok.vocab().specials.bos);
  TensorF zb = forward_logits(f.base, ids);
  GuidedSequence gs = guided_sequence_logits(g, ids);
  for (size_t i = 0; i < zb.data().size(); ++i) {
    CHECK(gs.z_post.data()[i] == zb.data()[i]);
    CHECK(gs.z_delta.data()[i] == 0.0f);
  }
}

TEST_CASE("sequential and concurrent residual forwards agree bitwise") {
  Fixture f;
  GuidedModel g = f.guided(&f.trained_like);
  auto ids = f.tok.encode("a dog sees a bird");
  ids.insert(ids.begin(), f.tok.vocab().specials.bos);
  GuidedSequence seq = guided_sequence_logits(g, ids);
  g.parallel_residual = true;
  GuidedSequence par = guided_sequence_logits(g, ids);
  CHECK(seq.z_post.shape() == par.z_post.shape());
  for (size_t i = 0; i < seq.z_post.data().size(); ++i) {
    CHECK(seq.z_post.data()[i] == par.z_post.data()[i]);
    CHECK(seq.z_delta.data()[i] == par.z_delta.data()[i]);
  }
}

TEST_CASE("cascade schemes produce deltas from base probabilities") {
  Fixture f;
  for (Scheme s : {Scheme::kCascade, Scheme::kCascadePlus}) {
    GuidedModel g = f.guided(&f.trained_like, s);
    auto ids = f.tok.encode("the cat sees the sun");
    ids.insert(ids.begin(), f.tok.vocab().specials.bos);
    GuidedSequence gs = guided_sequence_logits(g, ids);
    TensorF zb = forward_logits(f.base, ids);
    CHECK(gs.z_post.shape() == zb.shape());
    for (size_t i = 0; i < zb.data().size(); ++i)
      CHECK(gs.z_post.data()[i] == doctest::Approx(zb.data()[i] + gs.z_delta.data()[i]));
  }
}

TEST_CASE("guided_next_logits with an identity map matches the unmapped path") {
  Fixture f;
  GuidedModel g = f.guided(&f.trained_like);
  auto ids = f.tok.encode("the fox sees");
  ids.insert(ids.begin(), f.tok.vocab().specials.bos);
  std::vector<float> plain = guided_next_logits(g, ids, ids);
  VocabMap id = VocabMap::identity(f.tok.vocab_size());
  g.vocab_map = &id;
  std::vector<float> mapped = guided_next_logits(g, ids, ids);
  REQUIRE(plain.size() == mapped.size());
  size_t arg_a = 0, arg_b = 0;
  for (size_t i = 0; i < plain.size(); ++i) {
    CHECK(mapped[i] == plain[i]);  // identity map must be exact
    if (plain[i] > plain[arg_a]) arg_a = i;
    if (mapped[i] > mapped[arg_b]) arg_b = i;
  }
  CHECK(arg_a == arg_b);
}

TEST_CASE("generation with no value network is base-alone greedy") {
  Fixture f;
  GuidedModel plain = f.guided(nullptr);
  GuidedModel zeroed = f.guided(&f.zero_value);
  GenParams p;
  p.max_new_tokens = 8;
  GenResult a = generate(plain, "the fox", p);
  GenResult b = generate(zeroed, "the fox", p);
  CHECK(a.text == b.text);
  CHECK(a.value_ids == b.value_ids);
}

TEST_CASE("temperature zero equals the greedy flag") {
  Fixture f;
  GuidedModel g = f.guided(&f.trained_like);
  GenParams greedy;
  greedy.max_new_tokens = 10;
  greedy.greedy = true;
  GenParams temp0;
  temp0.max_new_tokens = 10;
  temp0.greedy = false;
  temp0.temperature = 0.0f;
  CHECK(generate(g, "a dog", greedy).text == generate(g, "a dog", temp0).text);
}

TEST_CASE("sampled generation is seed-deterministic") {
  Fixture f;
  GuidedModel g = f.guided(&f.trained_like);
  GenParams p;
  p.max_new_tokens = 12;
  p.greedy = false;
  p.temperature = 1.0f;
  p.seed = 99;
  CHECK(generate(g, "the sun", p).text == generate(g, "the sun", p).text);
  p.ignore_eos = true;
  GenResult fixed = generate(g, "the sun", p);
  CHECK(static_cast<int>(fixed.value_ids.size()) >= p.max_new_tokens);
}

TEST_CASE("scheme names round trip and unknown names throw") {
  for (Scheme s : {Scheme::kResidual, Scheme::kCascade, Scheme::kCascadePlus, Scheme::kLinearProbe,
                   Scheme::kProxyDelta})
    CHECK(scheme_from_string(scheme_to_string(s)) == s);
  CHECK_THROWS_AS(scheme_from_string("banana"), ConfigError);
}

TEST_CASE("linear-probe and proxy-delta schemes compose like residual") {
  Fixture f;
  auto ids = f.tok.encode("the moon");
  ids.insert(ids.begin(), f.tok.vocab().specials.bos);
  TensorF zb = forward_logits(f.base, ids);

  ProbeConfig pc{f.base.config.d_model, 16, f.tok.vocab_size()};
  auto probe = make_probe<float>(pc, 9);
  GuidedModel gp = f.guided(nullptr, Scheme::kLinearProbe);
  gp.probe = &probe;
  GuidedSequence ps = guided_sequence_logits(gp, ids);
  // Fresh probe: zero delta, so base reproduced exactly.
  for (size_t i = 0; i < zb.data().size(); ++i) CHECK(ps.z_post.data()[i] == zb.data()[i]);

  GuidedModel gx = f.guided(nullptr, Scheme::kProxyDelta);
  gx.expert = &f.trained_like;
  GuidedSequence xs = guided_sequence_logits(gx, ids);
  TensorF want = add(zb, proxy_delta(forward_logits(f.trained_like, ids), zb));
  for (size_t i = 0; i < zb.data().size(); ++i)
    CHECK(xs.z_post.data()[i] == doctest::Approx(want.data()[i]).epsilon(1e-5));
}
