#include "ivl/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "ivl/error.hpp"
#include "ivl/hash.hpp"

namespace ivl {

namespace {

const char* kFormatTag = "IVLTOK v1";

std::vector<std::string> split_words(const std::string& text) {
  std::vector<std::string> words;
  std::string cur;
  for (char ch : text) {
    if (std::isspace(static_cast<unsigned char>(ch))) {
      if (!cur.empty()) {
        words.push_back(cur);
        cur.clear();
      }
    } else {
      cur.push_back(ch);
    }
  }
  if (!cur.empty()) words.push_back(cur);
  return words;
}

// Word as its initial symbol sequence: marker, then one symbol per character.
std::vector<std::string> word_symbols(const std::string& word) {
  std::vector<std::string> syms;
  syms.emplace_back(1, kWordStartMarker);
  for (char ch : word) syms.emplace_back(1, ch);
  return syms;
}

void apply_merge(std::vector<std::string>& syms, const std::string& left,
                 const std::string& right) {
  size_t w = 0;
  for (size_t i = 0; i < syms.size();) {
    if (i + 1 < syms.size() && syms[i] == left && syms[i + 1] == right) {
      syms[w++] = left + right;
      i += 2;
    } else {
      if (w != i) syms[w] = std::move(syms[i]);
      ++w;
      ++i;
    }
  }
  syms.resize(w);
}

}  // namespace

std::string strip_prefix(const std::string& token) {
  if (!token.empty() && token[0] == kWordStartMarker) return token.substr(1);
  return token;
}

std::string escape_token(const std::string& s) {
  std::string out;
  for (unsigned char ch : s) {
    if (ch == '\\') {
      out += "\\\\";
    } else if (std::isprint(ch) && ch != ' ') {
      out.push_back(static_cast<char>(ch));
    } else {
      char buf[5];
      std::snprintf(buf, sizeof(buf), "\\x%02x", ch);
      out += buf;
    }
  }
  return out;
}

std::string unescape_token(const std::string& s) {
  std::string out;
  for (size_t i = 0; i < s.size();) {
    if (s[i] == '\\') {
      if (i + 1 < s.size() && s[i + 1] == '\\') {
        out.push_back('\\');
        i += 2;
      } else if (i + 3 < s.size() && s[i + 1] == 'x') {
        out.push_back(static_cast<char>(std::stoi(s.substr(i + 2, 2), nullptr, 16)));
        i += 4;
      } else {
        throw IoError("tokenizer: bad escape in '" + s + "'");
      }
    } else {
      out.push_back(s[i++]);
    }
  }
  return out;
}

Tokenizer train_bpe(const std::vector<std::string>& corpus, int vocab_size, uint64_t /*seed*/) {
  if (corpus.empty()) throw ConfigError("train_bpe: empty corpus");

  // Unique words with frequencies; merges operate on word symbol sequences.
  std::map<std::string, int64_t> word_freq;
  for (const auto& text : corpus)
    for (const auto& w : split_words(text)) ++word_freq[w];

  std::vector<std::pair<std::vector<std::string>, int64_t>> words;
  std::set<std::string> base_symbols;
  for (const auto& [w, f] : word_freq) {
    auto syms = word_symbols(w);
    for (const auto& s : syms) base_symbols.insert(s);
    words.emplace_back(std::move(syms), f);
  }

  const int base_count = Specials::count + static_cast<int>(base_symbols.size());
  if (vocab_size < base_count)
    throw ConfigError("train_bpe: vocab_size " + std::to_string(vocab_size) +
                      " below base symbol count " + std::to_string(base_count));

  std::vector<std::pair<std::string, std::string>> merges;
  std::set<std::string> vocab_tokens(base_symbols);
  while (static_cast<int>(vocab_tokens.size()) + Specials::count < vocab_size) {
    std::map<std::pair<std::string, std::string>, int64_t> pair_counts;
    for (const auto& [syms, f] : words)
      for (size_t i = 0; i + 1 < syms.size(); ++i)
        pair_counts[{syms[i], syms[i + 1]}] += f;
    const std::pair<std::string, std::string>* best = nullptr;
    int64_t best_count = 0;
    for (const auto& [pair, count] : pair_counts) {
      if (count > best_count) {
        best = &pair;
        best_count = count;
      }
      // std::map iteration is lexicographic, so first max wins ties.
    }
    if (!best) break;  // no adjacent pairs left anywhere
    merges.push_back(*best);
    vocab_tokens.insert(best->first + best->second);
    for (auto& [syms, f] : words) apply_merge(syms, best->first, best->second);
  }

  Vocabulary vocab;
  vocab.id_to_token = {"<bos>", "<eos>", "<pad>", "<unk>"};
  for (const auto& s : base_symbols) vocab.id_to_token.push_back(s);
  for (const auto& [l, r] : merges) vocab.id_to_token.push_back(l + r);
  for (int i = 0; i < static_cast<int>(vocab.id_to_token.size()); ++i)
    vocab.token_to_id[vocab.id_to_token[i]] = i;
  return Tokenizer(std::move(vocab), std::move(merges));
}

std::vector<int> Tokenizer::encode(const std::string& text, EncodeStats* stats) const {
  std::vector<int> ids;
  for (const auto& word : split_words(text)) {
    auto syms = word_symbols(word);
    for (const auto& [l, r] : merges_) apply_merge(syms, l, r);
    for (const auto& s : syms) {
      int id = vocab_.lookup(s);
      if (id == vocab_.specials.unk && stats) ++stats->unknown_symbols;
      ids.push_back(id);
    }
  }
  return ids;
}

std::string Tokenizer::decode(const std::vector<int>& ids) const {
  std::string surface;
  for (int id : ids) {
    if (id < 0 || id >= vocab_.size())
      throw IoError("decode: id " + std::to_string(id) + " out of range [0," +
                    std::to_string(vocab_.size()) + ")");
    if (vocab_.is_special(id)) continue;
    surface += vocab_.id_to_token[id];
  }
  // Markers become separators lazily, so leading or trailing markers add no
  // stray spaces.
  std::string out;
  bool pending_space = false;
  for (char ch : surface) {
    if (ch == kWordStartMarker) {
      pending_space = true;
    } else {
      if (pending_space && !out.empty()) out.push_back(' ');
      pending_space = false;
      out.push_back(ch);
    }
  }
  return out;
}

std::string Tokenizer::serialize() const {
  std::ostringstream os;
  os << kFormatTag << "\n";
  os << "specials bos " << vocab_.specials.bos << " eos " << vocab_.specials.eos << " pad "
     << vocab_.specials.pad << " unk " << vocab_.specials.unk << "\n";
  os << "vocab " << vocab_.size() << "\n";
  for (int i = 0; i < vocab_.size(); ++i)
    os << i << " " << escape_token(vocab_.id_to_token[i]) << "\n";
  os << "merges " << merges_.size() << "\n";
  for (const auto& [l, r] : merges_) os << escape_token(l) << " " << escape_token(r) << "\n";
  return os.str();
}

Tokenizer Tokenizer::deserialize(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line) || line != kFormatTag)
    throw IoError("tokenizer: unknown format tag '" + line + "'");
  Vocabulary vocab;
  std::string kw;
  is >> kw;
  if (kw != "specials") throw IoError("tokenizer: expected specials line");
  std::string name;
  for (int i = 0; i < Specials::count; ++i) {
    int id;
    is >> name >> id;
    if (name == "bos") vocab.specials.bos = id;
    else if (name == "eos") vocab.specials.eos = id;
    else if (name == "pad") vocab.specials.pad = id;
    else if (name == "unk") vocab.specials.unk = id;
    else throw IoError("tokenizer: unknown special '" + name + "'");
  }
  int n;
  is >> kw >> n;
  if (kw != "vocab") throw IoError("tokenizer: expected vocab line");
  vocab.id_to_token.resize(n);
  for (int i = 0; i < n; ++i) {
    int id;
    std::string tok;
    is >> id >> tok;
    if (id < 0 || id >= n) throw IoError("tokenizer: vocab id out of range");
    vocab.id_to_token[id] = unescape_token(tok);
  }
  for (int i = 0; i < n; ++i) vocab.token_to_id[vocab.id_to_token[i]] = i;
  int m;
  is >> kw >> m;
  if (kw != "merges") throw IoError("tokenizer: expected merges line");
  std::vector<std::pair<std::string, std::string>> merges(m);
  for (int i = 0; i < m; ++i) {
    std::string l, r;
    is >> l >> r;
    merges[i] = {unescape_token(l), unescape_token(r)};
  }
  return Tokenizer(std::move(vocab), std::move(merges));
}

void Tokenizer::save(const std::string& path) const {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("tokenizer: cannot write " + path);
  f << serialize();
}

Tokenizer Tokenizer::load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("tokenizer: cannot read " + path);
  std::ostringstream os;
  os << f.rdbuf();
  return deserialize(os.str());
}

uint64_t Tokenizer::checksum() const { return fnv1a64(serialize()); }

}  // namespace ivl
