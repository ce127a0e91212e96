#include "ivl/corpus.hpp"

#include <algorithm>
#include <random>

#include "ivl/error.hpp"

namespace ivl {

namespace {

const char* kPangram = "the quick brown fox jumps over the lazy dog";

struct Grammar {
  std::vector<std::string> subjects;
  std::vector<std::string> verbs;
  std::vector<std::string> objects;
  std::vector<double> subject_weights;
};

Grammar grammar_for(const std::string& id) {
  if (id == "simple") {
    return {{"the fox", "the dog", "a bird", "the cat", "a mouse", "the owl"},
            {"jumps over", "runs past", "sees", "likes", "follows", "watches"},
            {"the fence", "a tree", "the river", "a stone", "the moon", "the barn"},
            {4, 3, 2, 2, 1, 1}};
  }
  if (id == "wide") {
    return {{"a quiet whale", "the green frog", "an old crow", "the small crab", "a grey wolf"},
            {"swims under", "hops onto", "circles", "ignores", "guards"},
            {"the pier", "a leaf", "the cliff", "a shell", "the den"},
            {1, 1, 2, 3, 4}};
  }
  throw ConfigError("unknown grammar id '" + id + "'");
}

template <class T>
const T& weighted_pick(const std::vector<T>& items, const std::vector<double>& weights,
                       std::mt19937_64& rng) {
  double total = 0.0;
  for (double w : weights) total += w;
  double u = std::uniform_real_distribution<double>(0.0, total)(rng);
  for (size_t i = 0; i < items.size(); ++i) {
    u -= weights[i];
    if (u <= 0.0) return items[i];
  }
  return items.back();
}

std::string random_payload(std::mt19937_64& rng, int min_len, int max_len) {
  int len = static_cast<int>(std::uniform_int_distribution<int>(min_len, max_len)(rng));
  std::string s;
  for (int i = 0; i < len; ++i)
    s.push_back(static_cast<char>('a' + std::uniform_int_distribution<int>(0, 25)(rng)));
  return s;
}

const std::vector<std::pair<std::string, std::string>>& fact_table() {
  static const std::vector<std::pair<std::string, std::string>> table = {
      {"sky", "blue"},   {"grass", "green"}, {"snow", "white"}, {"coal", "black"},
      {"blood", "red"},  {"sun", "yellow"},  {"plum", "purple"}, {"rust", "orange"},
  };
  return table;
}

}  // namespace

std::vector<std::string> gen_plain_corpus(const std::string& grammar, int size, uint64_t seed) {
  Grammar g = grammar_for(grammar);
  std::mt19937_64 rng(seed);
  std::vector<std::string> out;
  out.reserve(static_cast<size_t>(size));
  std::vector<double> uniform(g.verbs.size(), 1.0);
  for (int i = 0; i < size; ++i) {
    if (i % 17 == 0) {
      // Pangram lines keep the full letter inventory in every corpus.
      out.emplace_back(kPangram);
      continue;
    }
    const std::string& s = weighted_pick(g.subjects, g.subject_weights, rng);
    const std::string& v = weighted_pick(g.verbs, uniform, rng);
    const std::string& o = weighted_pick(g.objects, uniform, rng);
    out.push_back(s + " " + v + " " + o);
  }
  return out;
}

std::vector<DemoPair> gen_demo_corpus(const std::string& task, int size, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<DemoPair> out;
  out.reserve(static_cast<size_t>(size));
  if (task == "reverse") {
    for (int i = 0; i < size; ++i) {
      std::string payload = random_payload(rng, 3, 5);
      std::string reversed(payload.rbegin(), payload.rend());
      out.push_back({"R: " + payload + " =", reversed});
    }
  } else if (task == "qa") {
    const auto& table = fact_table();
    for (int i = 0; i < size; ++i) {
      const auto& [subject, color] =
          table[std::uniform_int_distribution<size_t>(0, table.size() - 1)(rng)];
      out.push_back({"Q: color of " + subject + " =", "A: " + color});
    }
  } else if (task == "style") {
    auto sentences = gen_plain_corpus("simple", size, seed + 1);
    for (int i = 0; i < size; ++i) out.push_back({sentences[i] + " =", "yes please"});
  } else {
    throw ConfigError("unknown task id '" + task + "'");
  }
  return out;
}

std::vector<std::string> demo_texts(const std::vector<DemoPair>& demos) {
  std::vector<std::string> out;
  out.reserve(demos.size());
  for (const auto& d : demos) out.push_back(d.full_text());
  return out;
}

}  // namespace ivl
