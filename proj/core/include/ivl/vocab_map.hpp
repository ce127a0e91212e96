#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ivl/tensor.hpp"
#include "ivl/tokenizer.hpp"

namespace ivl {

// Monotone alignment between two token sequences: starts at (0,0), ends at
// (len_a-1, len_b-1), each step advances i, j, or both by one.
struct AlignmentPath {
  std::vector<std::pair<int, int>> pairs;
};

int edit_distance(const std::string& a, const std::string& b);

// Minimum-cost monotone alignment; ties broken preferring the diagonal move,
// then advancing the first sequence.
AlignmentPath dtw_align(const std::vector<std::string>& seq_a, const std::vector<std::string>& seq_b,
                        const std::function<double(const std::string&, const std::string&)>& cost);

double dtw_cost(const AlignmentPath& path, const std::vector<std::string>& seq_a,
                const std::vector<std::string>& seq_b,
                const std::function<double(const std::string&, const std::string&)>& cost);

struct SparsifySpec {
  enum class Mode { kMinWeight, kTopK };
  Mode mode = Mode::kMinWeight;
  double min_weight = 0.01;
  int top_k = 8;
};

// Sparse row-stochastic transition matrix from base vocabulary (n rows) to
// value vocabulary (m columns). Rows never observed during alignment stay
// empty unless an exact-string fallback entry exists.
struct VocabMap {
  int64_t rows = 0;
  int64_t cols = 0;
  std::vector<std::vector<std::pair<int, float>>> entries;  // per row, sorted by column
  SparsifySpec sparsify;
  uint64_t tok_b_checksum = 0;
  uint64_t tok_v_checksum = 0;

  static VocabMap identity(int64_t n);

  std::vector<int> zero_rows() const;
  bool row_is_zero(int64_t i) const { return entries[static_cast<size_t>(i)].empty(); }
  int argmax_col(int64_t i) const;  // -1 for zero rows

  void save(const std::string& path) const;
  static VocabMap load(const std::string& path);
  std::string text_export() const;
};

VocabMap build_vocab_map(const Tokenizer& tok_b, const Tokenizer& tok_v,
                         const std::vector<std::string>& corpus, const SparsifySpec& sparsify);

std::vector<float> map_logits(const std::vector<float>& z_row, const VocabMap& map);

template <class T>
Tensor<T> map_logits(const Tensor<T>& z_row, const VocabMap& map) {
  if (z_row.ndim() != 1 || z_row.shape()[0] != map.rows)
    throw ShapeError("map_logits: row " + shape_str(z_row.shape()) + " does not match map rows " +
                     std::to_string(map.rows));
  std::vector<T> out(static_cast<size_t>(map.cols), T(0));
  for (int64_t i = 0; i < map.rows; ++i)
    for (const auto& [j, w] : map.entries[static_cast<size_t>(i)])
      out[static_cast<size_t>(j)] += static_cast<T>(w) * z_row.data()[static_cast<size_t>(i)];
  return Tensor<T>({map.cols}, std::move(out));
}

// Maps every row of a [T×n] matrix; plain data transform, not taped (mapped
// base logits are always behind a stop-gradient).
template <class T>
Tensor<T> map_logits_rows(const Tensor<T>& z, const VocabMap& map) {
  if (z.ndim() != 2 || z.cols() != map.rows)
    throw ShapeError("map_logits_rows: " + shape_str(z.shape()) + " does not match map rows " +
                     std::to_string(map.rows));
  const int64_t t = z.rows();
  std::vector<T> out(static_cast<size_t>(t * map.cols), T(0));
  for (int64_t r = 0; r < t; ++r) {
    const T* src = z.data().data() + r * map.rows;
    T* dst = out.data() + r * map.cols;
    for (int64_t i = 0; i < map.rows; ++i)
      for (const auto& [j, w] : map.entries[static_cast<size_t>(i)])
        dst[j] += static_cast<T>(w) * src[i];
  }
  return Tensor<T>({t, map.cols}, std::move(out));
}

// Mean multiset overlap between argmax-mapped base tokenizations and golden
// value tokenizations over the corpus.
double overlap_ratio(const VocabMap& map, const Tokenizer& tok_b, const Tokenizer& tok_v,
                     const std::vector<std::string>& corpus);

}  // namespace ivl
