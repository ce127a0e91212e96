#include "ivl/vocab_map.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "ivl/error.hpp"
#include "ivl/hash.hpp"

namespace ivl {

namespace {

const char* kFormatTag = "IVLMAP v1";

template <class V>
void write_le(std::ostream& os, V v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <class V>
V read_le(std::istream& is) {
  V v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(V));
  if (!is) throw IoError("vocab map: truncated file");
  return v;
}

}  // namespace

int edit_distance(const std::string& a, const std::string& b) {
  const size_t n = a.size(), m = b.size();
  std::vector<int> prev(m + 1), cur(m + 1);
  for (size_t j = 0; j <= m; ++j) prev[j] = static_cast<int>(j);
  for (size_t i = 1; i <= n; ++i) {
    cur[0] = static_cast<int>(i);
    for (size_t j = 1; j <= m; ++j) {
      int sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({sub, prev[j] + 1, cur[j - 1] + 1});
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

AlignmentPath dtw_align(
    const std::vector<std::string>& seq_a, const std::vector<std::string>& seq_b,
    const std::function<double(const std::string&, const std::string&)>& cost) {
  if (seq_a.empty() || seq_b.empty()) throw ConfigError("dtw_align: empty sequence");
  const size_t n = seq_a.size(), m = seq_b.size();
  std::vector<double> acc(n * m);
  std::vector<uint8_t> move(n * m);  // 0 diag, 1 advance a, 2 advance b
  for (size_t i = 0; i < n; ++i) {
    for (size_t j = 0; j < m; ++j) {
      const double c = cost(seq_a[i], seq_b[j]);
      if (i == 0 && j == 0) {
        acc[0] = c;
        continue;
      }
      double best = std::numeric_limits<double>::infinity();
      uint8_t mv = 0;
      if (i > 0 && j > 0) {
        best = acc[(i - 1) * m + (j - 1)];
        mv = 0;
      }
      if (i > 0 && acc[(i - 1) * m + j] < best) {
        best = acc[(i - 1) * m + j];
        mv = 1;
      }
      if (j > 0 && acc[i * m + (j - 1)] < best) {
        best = acc[i * m + (j - 1)];
        mv = 2;
      }
      acc[i * m + j] = best + c;
      move[i * m + j] = mv;
    }
  }
  AlignmentPath path;
  size_t i = n - 1, j = m - 1;
  while (true) {
    path.pairs.emplace_back(static_cast<int>(i), static_cast<int>(j));
    if (i == 0 && j == 0) break;
    switch (move[i * m + j]) {
      case 0: --i; --j; break;
      case 1: --i; break;
      default: --j; break;
    }
  }
  std::reverse(path.pairs.begin(), path.pairs.end());
  return path;
}

double dtw_cost(const AlignmentPath& path, const std::vector<std::string>& seq_a,
                const std::vector<std::string>& seq_b,
                const std::function<double(const std::string&, const std::string&)>& cost) {
  double total = 0.0;
  for (const auto& [i, j] : path.pairs) total += cost(seq_a[i], seq_b[j]);
  return total;
}

VocabMap VocabMap::identity(int64_t n) {
  VocabMap m;
  m.rows = n;
  m.cols = n;
  m.entries.resize(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) m.entries[static_cast<size_t>(i)] = {{static_cast<int>(i), 1.0f}};
  return m;
}

std::vector<int> VocabMap::zero_rows() const {
  std::vector<int> out;
  for (int64_t i = 0; i < rows; ++i)
    if (entries[static_cast<size_t>(i)].empty()) out.push_back(static_cast<int>(i));
  return out;
}

int VocabMap::argmax_col(int64_t i) const {
  const auto& row = entries[static_cast<size_t>(i)];
  if (row.empty()) return -1;
  const auto* best = &row[0];
  for (const auto& e : row)
    if (e.second > best->second) best = &e;
  return best->first;
}

VocabMap build_vocab_map(const Tokenizer& tok_b, const Tokenizer& tok_v,
                         const std::vector<std::string>& corpus, const SparsifySpec& sparsify) {
  if (corpus.empty()) throw ConfigError("build_vocab_map: empty corpus");
  const int64_t n = tok_b.vocab_size(), m = tok_v.vocab_size();
  std::vector<std::map<int, int64_t>> counts(static_cast<size_t>(n));

  for (const auto& text : corpus) {
    std::vector<int> ids_b = tok_b.encode(text);
    std::vector<int> ids_v = tok_v.encode(text);
    if (ids_b.empty() || ids_v.empty()) continue;
    std::vector<std::string> strs_b, strs_v;
    for (int id : ids_b) strs_b.push_back(strip_prefix(tok_b.vocab().id_to_token[id]));
    for (int id : ids_v) strs_v.push_back(strip_prefix(tok_v.vocab().id_to_token[id]));
    AlignmentPath path = dtw_align(strs_b, strs_v, [](const std::string& a, const std::string& b) {
      return static_cast<double>(edit_distance(a, b));
    });
    for (const auto& [i, j] : path.pairs) ++counts[static_cast<size_t>(ids_b[i])][ids_v[j]];
  }

  VocabMap map;
  map.rows = n;
  map.cols = m;
  map.sparsify = sparsify;
  map.tok_b_checksum = tok_b.checksum();
  map.tok_v_checksum = tok_v.checksum();
  map.entries.resize(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    const auto& row_counts = counts[static_cast<size_t>(i)];
    if (row_counts.empty()) {
      // Unobserved base token: weight-1 fallback when the identical surface
      // token exists in the value vocabulary; specials stay zero rows.
      if (!tok_b.vocab().is_special(static_cast<int>(i))) {
        const std::string& tok = tok_b.vocab().id_to_token[static_cast<size_t>(i)];
        auto it = tok_v.vocab().token_to_id.find(tok);
        if (it != tok_v.vocab().token_to_id.end() &&
            !tok_v.vocab().is_special(it->second)) {
          map.entries[static_cast<size_t>(i)] = {{it->second, 1.0f}};
        }
      }
      continue;
    }
    int64_t total = 0;
    for (const auto& [j, c] : row_counts) total += c;
    std::vector<std::pair<int, float>> row;
    for (const auto& [j, c] : row_counts)
      row.emplace_back(j, static_cast<float>(static_cast<double>(c) / static_cast<double>(total)));
    if (sparsify.mode == SparsifySpec::Mode::kMinWeight) {
      std::erase_if(row, [&](const auto& e) { return e.second < sparsify.min_weight; });
    } else {
      if (static_cast<int>(row.size()) > sparsify.top_k) {
        std::partial_sort(row.begin(), row.begin() + sparsify.top_k, row.end(),
                          [](const auto& a, const auto& b) { return a.second > b.second; });
        row.resize(static_cast<size_t>(sparsify.top_k));
        std::sort(row.begin(), row.end());
      }
    }
    if (row.empty()) {
      // Everything fell below the threshold; keep the single strongest entry
      // so an observed token never degrades to a zero row.
      auto best = std::max_element(
          row_counts.begin(), row_counts.end(),
          [](const auto& a, const auto& b) { return a.second < b.second; });
      row.emplace_back(best->first, 1.0f);
    }
    double sum = 0.0;
    for (const auto& [j, w] : row) sum += w;
    for (auto& [j, w] : row) w = static_cast<float>(w / sum);
    map.entries[static_cast<size_t>(i)] = std::move(row);
  }
  return map;
}

std::vector<float> map_logits(const std::vector<float>& z_row, const VocabMap& map) {
  if (static_cast<int64_t>(z_row.size()) != map.rows)
    throw ShapeError("map_logits: row length " + std::to_string(z_row.size()) +
                     " does not match map rows " + std::to_string(map.rows));
  std::vector<float> out(static_cast<size_t>(map.cols), 0.0f);
  for (int64_t i = 0; i < map.rows; ++i)
    for (const auto& [j, w] : map.entries[static_cast<size_t>(i)])
      out[static_cast<size_t>(j)] += w * z_row[static_cast<size_t>(i)];
  return out;
}

double overlap_ratio(const VocabMap& map, const Tokenizer& tok_b, const Tokenizer& tok_v,
                     const std::vector<std::string>& corpus) {
  if (corpus.empty()) return 0.0;
  double sum = 0.0;
  int64_t texts = 0;
  for (const auto& text : corpus) {
    std::vector<int> golden = tok_v.encode(text);
    if (golden.empty()) continue;
    std::vector<int> ids_b = tok_b.encode(text);
    std::map<int, int64_t> golden_counts;
    for (int id : golden) ++golden_counts[id];
    int64_t hits = 0;
    for (int id : ids_b) {
      int j = map.argmax_col(id);
      if (j < 0) continue;
      auto it = golden_counts.find(j);
      if (it != golden_counts.end() && it->second > 0) {
        --it->second;
        ++hits;
      }
    }
    sum += static_cast<double>(hits) / static_cast<double>(golden.size());
    ++texts;
  }
  return texts == 0 ? 0.0 : sum / static_cast<double>(texts);
}

void VocabMap::save(const std::string& path) const {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("vocab map: cannot write " + path);
  f << kFormatTag << "\n";
  f << "n " << rows << " m " << cols << " tok_b " << hex64(tok_b_checksum) << " tok_v "
    << hex64(tok_v_checksum) << " mode "
    << (sparsify.mode == SparsifySpec::Mode::kMinWeight ? "min_weight" : "top_k") << " param "
    << (sparsify.mode == SparsifySpec::Mode::kMinWeight ? sparsify.min_weight
                                                        : static_cast<double>(sparsify.top_k))
    << "\n";
  f << "BINARY\n";
  int64_t nonzero = 0;
  for (const auto& row : entries) nonzero += row.empty() ? 0 : 1;
  write_le<int64_t>(f, nonzero);
  for (int64_t i = 0; i < rows; ++i) {
    const auto& row = entries[static_cast<size_t>(i)];
    if (row.empty()) continue;
    write_le<int32_t>(f, static_cast<int32_t>(i));
    write_le<int32_t>(f, static_cast<int32_t>(row.size()));
    for (const auto& [j, w] : row) {
      write_le<int32_t>(f, j);
      write_le<float>(f, w);
    }
  }
}

VocabMap VocabMap::load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("vocab map: cannot read " + path);
  std::string line;
  std::getline(f, line);
  if (line != kFormatTag) throw IoError("vocab map: unknown format tag '" + line + "'");
  std::getline(f, line);
  VocabMap map;
  {
    std::istringstream hs(line);
    std::string kw, mode, tb, tv;
    double param;
    hs >> kw >> map.rows;
    hs >> kw >> map.cols;
    hs >> kw >> tb >> kw >> tv;
    hs >> kw >> mode >> kw >> param;
    map.tok_b_checksum = std::stoull(tb, nullptr, 16);
    map.tok_v_checksum = std::stoull(tv, nullptr, 16);
    if (mode == "min_weight") {
      map.sparsify.mode = SparsifySpec::Mode::kMinWeight;
      map.sparsify.min_weight = param;
    } else {
      map.sparsify.mode = SparsifySpec::Mode::kTopK;
      map.sparsify.top_k = static_cast<int>(param);
    }
  }
  std::getline(f, line);
  if (line != "BINARY") throw IoError("vocab map: missing BINARY marker");
  map.entries.resize(static_cast<size_t>(map.rows));
  int64_t nonzero = read_le<int64_t>(f);
  for (int64_t r = 0; r < nonzero; ++r) {
    int32_t id = read_le<int32_t>(f);
    int32_t count = read_le<int32_t>(f);
    if (id < 0 || id >= map.rows) throw IoError("vocab map: row id out of range");
    auto& row = map.entries[static_cast<size_t>(id)];
    for (int32_t k = 0; k < count; ++k) {
      int32_t col = read_le<int32_t>(f);
      float w = read_le<float>(f);
      if (col < 0 || col >= map.cols) throw IoError("vocab map: column out of range");
      row.emplace_back(col, w);
    }
  }
  return map;
}

std::string VocabMap::text_export() const {
  std::ostringstream os;
  os << kFormatTag << " text\n";
  os << "n " << rows << " m " << cols << "\n";
  for (int64_t i = 0; i < rows; ++i) {
    const auto& row = entries[static_cast<size_t>(i)];
    if (row.empty()) continue;
    os << i << ":";
    for (const auto& [j, w] : row) os << " (" << j << "," << w << ")";
    os << "\n";
  }
  return os.str();
}

}  // namespace ivl
