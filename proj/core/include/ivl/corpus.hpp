#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace ivl {

struct DemoPair {
  std::string prompt;
  std::string response;

  std::string full_text() const { return prompt + " " + response; }
};

struct CorpusSpec {
  enum class Kind { kPlain, kDemonstrations };
  Kind kind = Kind::kPlain;
  std::string grammar = "simple";  // plain: grammar id; demonstrations: task id
  int size = 0;
  uint64_t seed = 0;
};

// Weighted toy-grammar sentences for pretraining. Grammars: "simple", "wide".
std::vector<std::string> gen_plain_corpus(const std::string& grammar, int size, uint64_t seed);

// Deterministic toy post-training tasks. Tasks: "reverse" (respond with the
// reversed prompt payload), "qa" (fixed-form answers over a small fact
// table), "style" (echo with a politeness suffix).
std::vector<DemoPair> gen_demo_corpus(const std::string& task, int size, uint64_t seed);

// Surface texts of demonstrations (tokenizer training / mapping corpora).
std::vector<std::string> demo_texts(const std::vector<DemoPair>& demos);

}  // namespace ivl
