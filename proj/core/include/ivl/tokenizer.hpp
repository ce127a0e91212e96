#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

namespace ivl {

// Word-initial tokens carry this reserved prefix character; it renders as a
// word separator on decode.
inline constexpr char kWordStartMarker = '\x01';

struct Specials {
  int bos = 0;
  int eos = 1;
  int pad = 2;
  int unk = 3;
  static constexpr int count = 4;
};

struct Vocabulary {
  std::vector<std::string> id_to_token;
  std::unordered_map<std::string, int> token_to_id;
  Specials specials;

  int size() const { return static_cast<int>(id_to_token.size()); }
  bool is_special(int id) const {
    return id == specials.bos || id == specials.eos || id == specials.pad || id == specials.unk;
  }
  int lookup(const std::string& token) const {
    auto it = token_to_id.find(token);
    return it == token_to_id.end() ? specials.unk : it->second;
  }
};

struct EncodeStats {
  int64_t unknown_symbols = 0;
};

class Tokenizer {
 public:
  Tokenizer() = default;
  Tokenizer(Vocabulary vocab, std::vector<std::pair<std::string, std::string>> merges)
      : vocab_(std::move(vocab)), merges_(std::move(merges)) {}

  const Vocabulary& vocab() const { return vocab_; }
  const std::vector<std::pair<std::string, std::string>>& merges() const { return merges_; }
  int vocab_size() const { return vocab_.size(); }

  std::vector<int> encode(const std::string& text, EncodeStats* stats = nullptr) const;
  std::string decode(const std::vector<int>& ids) const;

  std::string serialize() const;
  static Tokenizer deserialize(const std::string& text);
  void save(const std::string& path) const;
  static Tokenizer load(const std::string& path);

  uint64_t checksum() const;

 private:
  Vocabulary vocab_;
  std::vector<std::pair<std::string, std::string>> merges_;
};

// Greedy highest-frequency pair merging; ties broken lexicographically on the
// (left, right) pair. Deterministic in (corpus, vocab_size, seed).
Tokenizer train_bpe(const std::vector<std::string>& corpus, int vocab_size, uint64_t seed = 0);

// Removes the word-start marker if present; identity otherwise. Idempotent.
std::string strip_prefix(const std::string& token);

// Escaping used by the tokenizer file format: backslash, space and
// non-printable bytes become \xHH so files are portable byte-for-byte.
std::string escape_token(const std::string& s);
std::string unescape_token(const std::string& s);

}  // namespace ivl
