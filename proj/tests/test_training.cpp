#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <numeric>
#include <sstream>

#include "doctest.h"
#include "ivl/checkpoint.hpp"
#include "ivl/corpus.hpp"
#include "ivl/error.hpp"
#include "ivl/training.hpp"

using namespace ivl;

namespace {

struct Fixture {
  Tokenizer tok;
  std::vector<DemoPair> demos;
  TransformerConfig cfg;
  Transformer<float> base;

  Fixture() {
    demos = gen_demo_corpus("reverse", 64, 3);
    auto texts = demo_texts(demos);
    tok = train_bpe(texts, 64, 0);
    cfg.d_model = 16;
    cfg.n_layers = 2;
    cfg.n_heads = 2;
    cfg.d_ff = 32;
    cfg.vocab_size = tok.vocab_size();
    cfg.max_seq_len = 32;
    base = make_transformer<float>(cfg, 1);
  }

  GuidedModel guided(Transformer<float>* value) {
    GuidedModel g;
    g.base = &base;
    g.value = value;
    g.base_tokenizer = &tok;
    g.value_tokenizer = &tok;
    return g;
  }

  TrainingConfig tcfg() {
    TrainingConfig c;
    c.learning_rate = 3e-3;
    c.global_batch = 8;
    c.max_length = 24;
    c.seed = 7;
    return c;
  }
};

// Independent masked cross entropy in double precision.
double oracle_masked_ce(const TensorF& logits, const std::vector<int>& targets,
                        const std::vector<uint8_t>& mask) {
  double sum = 0;
  int64_t count = 0;
  for (size_t t = 0; t < targets.size(); ++t) {
    if (!mask[t]) continue;
    double mx = -1e30;
    for (int64_t j = 0; j < logits.cols(); ++j)
      mx = std::max(mx, double(logits.at(static_cast<int64_t>(t), j)));
    double lse = 0;
    for (int64_t j = 0; j < logits.cols(); ++j)
      lse += std::exp(double(logits.at(static_cast<int64_t>(t), j)) - mx);
    lse = mx + std::log(lse);
    sum += lse - double(logits.at(static_cast<int64_t>(t), targets[t]));
    ++count;
  }
  return sum / static_cast<double>(count);
}

}  // namespace

TEST_CASE("demo samples: layout, response-only mask, truncation") {
  Fixture f;
  DemoPair d{"ab cd", "dc ba"};
  Sample s = make_demo_sample(d, f.tok, 24);
  auto p_ids = f.tok.encode(d.prompt);
  auto r_ids = f.tok.encode(d.response);
  REQUIRE(s.inputs.size() == s.targets.size());
  REQUIRE(s.mask.size() == s.targets.size());
  CHECK(s.inputs[0] == f.tok.vocab().specials.bos);
  CHECK(s.inputs.size() == 1 + p_ids.size() + r_ids.size());
  CHECK(s.targets.back() == f.tok.vocab().specials.eos);
  // Shift: targets[t] == inputs[t+1].
  for (size_t t = 0; t + 1 < s.inputs.size(); ++t) CHECK(s.targets[t] == s.inputs[t + 1]);
  // Mask covers exactly the response tokens plus eos.
  int64_t supervised = std::count(s.mask.begin(), s.mask.end(), uint8_t(1));
  CHECK(supervised == static_cast<int64_t>(r_ids.size()) + 1);
  for (size_t t = 0; t < p_ids.size(); ++t) CHECK(s.mask[t] == 0);

  Sample cut = make_demo_sample(d, f.tok, 4);
  CHECK(cut.inputs.size() == 4);
  CHECK(cut.targets.size() == 4);

  Sample lm = make_lm_sample("ab cd", f.tok, 24);
  for (uint8_t m : lm.mask) CHECK(m == 1);
  CHECK(lm.inputs[0] == f.tok.vocab().specials.bos);
}

TEST_CASE("loss_step cross entropy matches an independent oracle") {
  Fixture f;
  auto value = make_transformer<float>(f.cfg, 2);
  GuidedModel g = f.guided(&value);
  Batch batch;
  batch.samples.push_back(make_demo_sample(f.demos[0], f.tok, 24));
  batch.samples.push_back(make_demo_sample(f.demos[1], f.tok, 24));

  LossMetrics m = loss_step(g, batch, 0.0);
  double want = 0;
  int64_t count = 0;
  double abs_sum = 0;
  int64_t abs_count = 0;
  for (const auto& s : batch.samples) {
    TensorF zb = forward_logits(f.base, s.inputs);
    TensorF zd = forward_logits(value, s.inputs);
    std::vector<float> buf(zb.data());
    for (size_t i = 0; i < buf.size(); ++i) buf[i] += zd.data()[i];
    TensorF zp(zb.shape(), buf);
    int64_t c = std::count(s.mask.begin(), s.mask.end(), uint8_t(1));
    want += oracle_masked_ce(zp, s.targets, s.mask) * static_cast<double>(c);
    count += c;
    for (float v : zd.data()) abs_sum += std::abs(double(v));
    abs_count += zd.numel();
  }
  CHECK(m.ce == doctest::Approx(want / count).epsilon(1e-4));
  CHECK(m.l1 == doctest::Approx(abs_sum / abs_count).epsilon(1e-4));
  CHECK(m.loss.item() == doctest::Approx(m.ce).epsilon(1e-6));  // lambda 0

  LossMetrics reg = loss_step(g, batch, 0.7);
  CHECK(reg.loss.item() == doctest::Approx(reg.ce + 0.7 * reg.l1).epsilon(1e-5));
  CHECK(reg.ce == doctest::Approx(m.ce).epsilon(1e-6));
}

TEST_CASE("a fresh value network scores exactly like the base alone") {
  Fixture f;
  auto value = init_value_network(ValueInit::kRandom, f.cfg, 5);
  GuidedModel g = f.guided(&value);
  Batch batch;
  batch.samples.push_back(make_demo_sample(f.demos[2], f.tok, 24));
  LossMetrics m = loss_step(g, batch, 1.0);
  CHECK(m.l1 == 0.0);
  CHECK(m.mean_abs_delta == 0.0);
  const Sample& s = batch.samples[0];
  TensorF zb = forward_logits(f.base, s.inputs);
  CHECK(m.ce == doctest::Approx(oracle_masked_ce(zb, s.targets, s.mask)).epsilon(1e-4));
}

TEST_CASE("adamw: no-op without gradients, pure decay with weight decay") {
  TensorF p({2}, {1.0f, -2.0f});
  std::vector<Tensor<float>*> params{&p};
  OptimizerState st;
  st.init(params);
  TrainingConfig cfg;
  cfg.grad_clip = 0;
  adamw_step(params, st, cfg, 0.1);
  CHECK(p.data()[0] == 1.0f);
  CHECK(p.data()[1] == -2.0f);

  cfg.weight_decay = 0.5;
  adamw_step(params, st, cfg, 0.1);
  CHECK(p.data()[0] == doctest::Approx(1.0 * (1.0 - 0.1 * 0.5)));
  CHECK(p.data()[1] == doctest::Approx(-2.0 * (1.0 - 0.1 * 0.5)));
}

TEST_CASE("adamw first step follows the bias-corrected update rule") {
  TensorF p({1}, {0.5f});
  std::vector<Tensor<float>*> params{&p};
  OptimizerState st;
  st.init(params);
  TrainingConfig cfg;
  cfg.grad_clip = 0;
  p.mutable_grad()[0] = 0.3f;
  adamw_step(params, st, cfg, 0.01);
  // First step: m_hat = g, v_hat = g^2, so the update is g/(|g|+eps) = sign(g).
  const double want = 0.5 - 0.01 * (0.3 / (std::sqrt(0.3 * 0.3) + cfg.eps));
  CHECK(p.data()[0] == doctest::Approx(want).epsilon(1e-6));
}

TEST_CASE("global-norm clipping equals pre-scaled gradients") {
  TensorF a({2}, {1.0f, 1.0f});
  TensorF b({2}, {1.0f, 1.0f});
  std::vector<Tensor<float>*> pa{&a}, pb{&b};
  OptimizerState sa, sb;
  sa.init(pa);
  sb.init(pb);
  TrainingConfig clip;
  clip.grad_clip = 1.0;
  TrainingConfig noclip;
  noclip.grad_clip = 0;
  a.mutable_grad() = {3.0f, 4.0f};  // norm 5 -> scale 0.2
  b.mutable_grad() = {0.6f, 0.8f};
  adamw_step(pa, sa, clip, 0.05);
  adamw_step(pb, sb, noclip, 0.05);
  CHECK(a.data()[0] == doctest::Approx(b.data()[0]).epsilon(1e-6));
  CHECK(a.data()[1] == doctest::Approx(b.data()[1]).epsilon(1e-6));

  // Below the threshold nothing is scaled.
  OptimizerState sc;
  TensorF c({2}, {1.0f, 1.0f});
  std::vector<Tensor<float>*> pc{&c};
  sc.init(pc);
  TensorF d({2}, {1.0f, 1.0f});
  std::vector<Tensor<float>*> pd{&d};
  OptimizerState sd;
  sd.init(pd);
  c.mutable_grad() = {0.3f, 0.4f};
  d.mutable_grad() = {0.3f, 0.4f};
  adamw_step(pc, sc, clip, 0.05);
  adamw_step(pd, sd, noclip, 0.05);
  CHECK(c.data()[0] == d.data()[0]);
  CHECK(c.data()[1] == d.data()[1]);
}

TEST_CASE("learning-rate schedule: warmup ramp, peak, cosine tail") {
  const double base_lr = 2e-3;
  const int64_t total = 100;
  const double ratio = 0.1;  // warmup = 10 steps
  CHECK(cosine_warmup_lr(0, total, ratio, base_lr) == 0.0);
  CHECK(cosine_warmup_lr(5, total, ratio, base_lr) == doctest::Approx(base_lr * 0.5));
  CHECK(cosine_warmup_lr(10, total, ratio, base_lr) == doctest::Approx(base_lr));
  CHECK(cosine_warmup_lr(total, total, ratio, base_lr) == doctest::Approx(0.0).epsilon(1e-12));
  // Halfway through decay: cos(pi/2) -> base_lr/2.
  CHECK(cosine_warmup_lr(55, total, ratio, base_lr) == doctest::Approx(base_lr * 0.5));
  // Monotone non-increasing after warmup.
  double prev = cosine_warmup_lr(10, total, ratio, base_lr);
  for (int64_t s = 11; s <= total; ++s) {
    double lr = cosine_warmup_lr(s, total, ratio, base_lr);
    CHECK(lr <= prev + 1e-15);
    prev = lr;
  }
  CHECK(cosine_warmup_lr(0, 50, 0.0, base_lr) == base_lr);  // no warmup
  CHECK_THROWS_AS(cosine_warmup_lr(-1, total, ratio, base_lr), ConfigError);
  CHECK_THROWS_AS(cosine_warmup_lr(total + 1, total, ratio, base_lr), ConfigError);
}

TEST_CASE("training smoke: loss drops, base frozen, schedule logged") {
  Fixture f;
  auto value = init_value_network(ValueInit::kRandom, f.cfg, 9);
  TrainingConfig cfg = f.tcfg();
  cfg.max_steps = 60;
  cfg.lambda_l1 = 0.1;
  uint64_t base_sum = f.base.checksum();
  uint64_t value_sum = value.checksum();
  TrainResult r = train_value({&f.base}, {"b0"}, &value, nullptr, Scheme::kResidual, f.demos,
                              f.tok, cfg);
  REQUIRE(r.log.size() == 60);
  CHECK(f.base.checksum() == base_sum);
  CHECK(value.checksum() != value_sum);  // parameters actually moved
  double head = 0, tail = 0;
  for (int i = 0; i < 10; ++i) {
    head += r.log[static_cast<size_t>(i)].ce;
    tail += r.log[r.log.size() - 1 - static_cast<size_t>(i)].ce;
  }
  CHECK(tail < head);
  for (size_t i = 0; i < r.log.size(); ++i) {
    CHECK(r.log[i].step == static_cast<int64_t>(i));
    CHECK(r.log[i].lr ==
          doctest::Approx(cosine_warmup_lr(static_cast<int64_t>(i), 60, cfg.warmup_ratio,
                                           cfg.learning_rate)));
    CHECK(r.log[i].base_id == "b0");
  }
  CHECK(r.final_ce == r.log.back().ce);
}

TEST_CASE("curriculum: the step budget splits equally and in order") {
  Fixture f;
  auto base2 = make_transformer<float>(f.cfg, 21);
  auto value = init_value_network(ValueInit::kRandom, f.cfg, 9);
  TrainingConfig cfg = f.tcfg();
  cfg.max_steps = 12;
  std::ostringstream log;
  TrainResult r = train_value({&f.base, &base2}, {"first", "second"}, &value, nullptr,
                              Scheme::kResidual, f.demos, f.tok, cfg, &log);
  REQUIRE(r.log.size() == 12);
  for (size_t i = 0; i < 6; ++i) CHECK(r.log[i].base_id == "first");
  for (size_t i = 6; i < 12; ++i) CHECK(r.log[i].base_id == "second");
  // The streamed log carries one line per step with the same base ids.
  std::string text = log.str();
  CHECK(std::count(text.begin(), text.end(), '\n') == 12);
  CHECK(text.find("base=first") != std::string::npos);
  CHECK(text.find("base=second") != std::string::npos);
}

TEST_CASE("training is deterministic in the seed") {
  Fixture f;
  TrainingConfig cfg = f.tcfg();
  cfg.max_steps = 15;
  auto v1 = init_value_network(ValueInit::kRandom, f.cfg, 9);
  auto v2 = init_value_network(ValueInit::kRandom, f.cfg, 9);
  TrainResult r1 = train_value({&f.base}, {"b"}, &v1, nullptr, Scheme::kResidual, f.demos, f.tok, cfg);
  TrainResult r2 = train_value({&f.base}, {"b"}, &v2, nullptr, Scheme::kResidual, f.demos, f.tok, cfg);
  CHECK(v1.checksum() == v2.checksum());
  REQUIRE(r1.log.size() == r2.log.size());
  for (size_t i = 0; i < r1.log.size(); ++i) {
    CHECK(r1.log[i].loss == r2.log[i].loss);
    CHECK(r1.log[i].ce == r2.log[i].ce);
  }
}

TEST_CASE("every value parameter tensor receives gradient flow") {
  Fixture f;
  auto value = make_transformer<float>(f.cfg, 31);
  GuidedModel g = f.guided(&value);
  Batch batch;
  batch.samples.push_back(make_demo_sample(f.demos[0], f.tok, 24));
  value.set_requires_grad(true);
  TapeScope<float> scope;
  LossMetrics m = loss_step(g, batch, 1.0);
  backward(m.loss);
  for (auto& [name, t] : value.named_parameters()) {
    INFO("parameter ", name);
    REQUIRE(t->has_grad());
    double norm = 0;
    for (float gv : t->grad()) norm += double(gv) * gv;
    CHECK(norm > 0.0);
  }
  // The frozen base never accumulates gradients.
  for (auto* t : f.base.parameters()) CHECK(!t->has_grad());
}

TEST_CASE("stop-gradient off leaks gradients into the base (test-only mode)") {
  Fixture f;
  auto value = make_transformer<float>(f.cfg, 31);
  GuidedModel g = f.guided(&value);
  Batch batch;
  batch.samples.push_back(make_demo_sample(f.demos[0], f.tok, 24));
  value.set_requires_grad(true);
  f.base.set_requires_grad(true);
  {
    TapeScope<float> scope;
    LossMetrics m = loss_step(g, batch, 0.0, /*stop_gradient=*/false);
    backward(m.loss);
    bool any = false;
    for (auto* t : f.base.parameters()) any = any || t->has_grad();
    CHECK(any);
  }
  f.base.zero_grads();
  f.base.set_requires_grad(false);
  value.zero_grads();
  {
    TapeScope<float> scope;
    LossMetrics m = loss_step(g, batch, 0.0, /*stop_gradient=*/true);
    backward(m.loss);
    for (auto* t : f.base.parameters()) CHECK(!t->has_grad());
  }
}

TEST_CASE("training input validation") {
  Fixture f;
  auto value = init_value_network(ValueInit::kRandom, f.cfg, 9);
  TrainingConfig cfg = f.tcfg();
  CHECK_THROWS_AS(
      train_value({}, {}, &value, nullptr, Scheme::kResidual, f.demos, f.tok, cfg), ConfigError);
  CHECK_THROWS_AS(
      train_value({&f.base}, {"b"}, &value, nullptr, Scheme::kResidual, {}, f.tok, cfg),
      ConfigError);
  CHECK_THROWS_AS(
      train_value({&f.base}, {"b"}, nullptr, nullptr, Scheme::kResidual, f.demos, f.tok, cfg),
      ConfigError);
  CHECK_THROWS_AS(train_value({&f.base}, {"b"}, &value, nullptr, Scheme::kLinearProbe, f.demos,
                              f.tok, cfg),
                  ConfigError);
  TransformerConfig other = f.cfg;
  other.vocab_size = f.cfg.vocab_size + 1;
  auto mismatched = make_transformer<float>(other, 1);
  CHECK_THROWS_AS(train_value({&mismatched}, {"b"}, &value, nullptr, Scheme::kResidual, f.demos,
                              f.tok, cfg),
                  ConfigError);
  TrainingConfig bad = cfg;
  bad.warmup_ratio = 1.5;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("language-model pretraining reduces next-token loss") {
  auto corpus = gen_plain_corpus("simple", 48, 5);
  Tokenizer tok = train_bpe(corpus, 64, 0);
  TransformerConfig cfg;
  cfg.d_model = 16;
  cfg.n_layers = 1;
  cfg.n_heads = 2;
  cfg.d_ff = 32;
  cfg.vocab_size = tok.vocab_size();
  cfg.max_seq_len = 24;
  auto model = make_transformer<float>(cfg, 2);
  TrainingConfig tc;
  tc.learning_rate = 3e-3;
  tc.global_batch = 8;
  tc.max_length = 20;
  tc.max_steps = 40;
  TrainResult r = pretrain_lm(model, corpus, tok, tc);
  REQUIRE(r.log.size() == 40);
  double head = (r.log[0].ce + r.log[1].ce + r.log[2].ce) / 3;
  double tail = (r.log[37].ce + r.log[38].ce + r.log[39].ce) / 3;
  CHECK(tail < head);
  CHECK_THROWS_AS(pretrain_lm(model, {}, tok, tc), ConfigError);
}

TEST_CASE("probe training moves only probe parameters") {
  Fixture f;
  ProbeConfig pc{f.cfg.d_model, 16, f.tok.vocab_size()};
  auto probe = make_probe<float>(pc, 40);
  TrainingConfig cfg = f.tcfg();
  cfg.learning_rate = 1e-2;
  cfg.max_steps = 80;
  uint64_t base_sum = f.base.checksum();
  uint64_t probe_sum = probe.checksum();
  TrainResult r = train_value({&f.base}, {"b"}, nullptr, &probe, Scheme::kLinearProbe, f.demos,
                              f.tok, cfg);
  REQUIRE(r.log.size() == 80);
  CHECK(f.base.checksum() == base_sum);
  CHECK(probe.checksum() != probe_sum);
  double head = 0, tail = 0;
  for (int i = 0; i < 10; ++i) {
    head += r.log[static_cast<size_t>(i)].ce;
    tail += r.log[r.log.size() - 1 - static_cast<size_t>(i)].ce;
  }
  CHECK(tail < head);
}
