#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "ivl/tensor.hpp"

namespace ivl {

namespace detail {

// C[m×n] = (or +=) A[m×k] · B[k×n]
template <class T>
void gemm_nn(const T* A, const T* B, T* C, int64_t m, int64_t k, int64_t n, bool accumulate) {
#pragma omp parallel for if (m * n * k > 16384)
  for (int64_t i = 0; i < m; ++i) {
    T* c = C + i * n;
    if (!accumulate) std::fill(c, c + n, T(0));
    const T* a = A + i * k;
    for (int64_t kk = 0; kk < k; ++kk) {
      T av = a[kk];
      if (av == T(0)) continue;
      const T* b = B + kk * n;
      for (int64_t j = 0; j < n; ++j) c[j] += av * b[j];
    }
  }
}

// C[m×n] += A[m×k] · B[n×k]ᵀ
template <class T>
void gemm_nt_acc(const T* A, const T* B, T* C, int64_t m, int64_t k, int64_t n) {
#pragma omp parallel for if (m * n * k > 16384)
  for (int64_t i = 0; i < m; ++i) {
    const T* a = A + i * k;
    T* c = C + i * n;
    for (int64_t j = 0; j < n; ++j) {
      const T* b = B + j * k;
      T s = T(0);
      for (int64_t kk = 0; kk < k; ++kk) s += a[kk] * b[kk];
      c[j] += s;
    }
  }
}

// C[k×n] += A[m×k]ᵀ · B[m×n]
template <class T>
void gemm_tn_acc(const T* A, const T* B, T* C, int64_t m, int64_t k, int64_t n) {
#pragma omp parallel for if (m * n * k > 16384)
  for (int64_t kk = 0; kk < k; ++kk) {
    T* c = C + kk * n;
    for (int64_t i = 0; i < m; ++i) {
      T av = A[i * k + kk];
      if (av == T(0)) continue;
      const T* b = B + i * n;
      for (int64_t j = 0; j < n; ++j) c[j] += av * b[j];
    }
  }
}

template <class T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()) + " differ");
}

// Registers a backward closure for `out` if a tape is active and any input
// wants gradients. The closure must early-return when out has no gradient.
template <class T, class F>
void record(Tensor<T>& out, bool any_input_rg, F&& fn) {
  auto* tape = Tape<T>::current();
  if (tape && any_input_rg) {
    out.set_requires_grad(true);
    tape->track_output(out.ptr());
    tape->record(std::forward<F>(fn));
  }
}

template <class T>
void require_2d(const Tensor<T>& t, const char* op) {
  if (t.ndim() != 2)
    throw ShapeError(std::string(op) + ": expected 2-d tensor, got " + shape_str(t.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_2d(a, "matmul");
  detail::require_2d(b, "matmul");
  if (a.cols() != b.rows())
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  const int64_t m = a.rows(), k = a.cols(), n = b.cols();
  std::vector<T> buf(static_cast<size_t>(m * n));
  detail::gemm_nn(a.data().data(), b.data().data(), buf.data(), m, k, n, false);
  Tensor<T> out({m, n}, std::move(buf));
  auto ap = a.ptr(), bp = b.ptr(), op = out.ptr();
  detail::record(out, a.requires_grad() || b.requires_grad(), [ap, bp, op, m, k, n] {
    if (op->grad.empty()) return;
    const T* g = op->grad.data();
    if (ap->requires_grad) {
      ap->ensure_grad();
      detail::gemm_nt_acc(g, bp->data.data(), ap->grad.data(), m, n, k);
    }
    if (bp->requires_grad) {
      bp->ensure_grad();
      detail::gemm_tn_acc(ap->data.data(), g, bp->grad.data(), m, k, n);
    }
  });
  return out;
}

template <class T>
Tensor<T> transpose(const Tensor<T>& t) {
  detail::require_2d(t, "transpose");
  const int64_t r = t.rows(), c = t.cols();
  std::vector<T> buf(static_cast<size_t>(r * c));
  for (int64_t i = 0; i < r; ++i)
    for (int64_t j = 0; j < c; ++j) buf[j * r + i] = t.data()[i * c + j];
  Tensor<T> out({c, r}, std::move(buf));
  auto tp = t.ptr(), op = out.ptr();
  detail::record(out, t.requires_grad(), [tp, op, r, c] {
    if (op->grad.empty()) return;
    tp->ensure_grad();
    for (int64_t i = 0; i < r; ++i)
      for (int64_t j = 0; j < c; ++j) tp->grad[i * c + j] += op->grad[j * r + i];
  });
  return out;
}

template <class T>
Tensor<T> reshape(const Tensor<T>& t, Shape shape) {
  if (numel_of(shape) != t.numel())
    throw ShapeError("reshape: cannot view " + shape_str(t.shape()) + " as " + shape_str(shape));
  Tensor<T> out(std::move(shape), t.data());
  auto tp = t.ptr(), op = out.ptr();
  detail::record(out, t.requires_grad(), [tp, op] {
    if (op->grad.empty()) return;
    tp->ensure_grad();
    for (size_t i = 0; i < op->grad.size(); ++i) tp->grad[i] += op->grad[i];
  });
  return out;
}

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<T> buf(a.data());
  for (size_t i = 0; i < buf.size(); ++i) buf[i] += b.data()[i];
  Tensor<T> out(a.shape(), std::move(buf));
  auto ap = a.ptr(), bp = b.ptr(), op = out.ptr();
  detail::record(out, a.requires_grad() || b.requires_grad(), [ap, bp, op] {
    if (op->grad.empty()) return;
    if (ap->requires_grad) {
      ap->ensure_grad();
      for (size_t i = 0; i < op->grad.size(); ++i) ap->grad[i] += op->grad[i];
    }
    if (bp->requires_grad) {
      bp->ensure_grad();
      for (size_t i = 0; i < op->grad.size(); ++i) bp->grad[i] += op->grad[i];
    }
  });
  return out;
}

template <class T>
Tensor<T> subtract(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "subtract");
  std::vector<T> buf(a.data());
  for (size_t i = 0; i < buf.size(); ++i) buf[i] -= b.data()[i];
  Tensor<T> out(a.shape(), std::move(buf));
  auto ap = a.ptr(), bp = b.ptr(), op = out.ptr();
  detail::record(out, a.requires_grad() || b.requires_grad(), [ap, bp, op] {
    if (op->grad.empty()) return;
    if (ap->requires_grad) {
      ap->ensure_grad();
      for (size_t i = 0; i < op->grad.size(); ++i) ap->grad[i] += op->grad[i];
    }
    if (bp->requires_grad) {
      bp->ensure_grad();
      for (size_t i = 0; i < op->grad.size(); ++i) bp->grad[i] -= op->grad[i];
    }
  });
  return out;
}

template <class T>
Tensor<T> multiply(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "multiply");
  std::vector<T> buf(a.data());
  for (size_t i = 0; i < buf.size(); ++i) buf[i] *= b.data()[i];
  Tensor<T> out(a.shape(), std::move(buf));
  auto ap = a.ptr(), bp = b.ptr(), op = out.ptr();
  detail::record(out, a.requires_grad() || b.requires_grad(), [ap, bp, op] {
    if (op->grad.empty()) return;
    if (ap->requires_grad) {
      ap->ensure_grad();
      for (size_t i = 0; i < op->grad.size(); ++i) ap->grad[i] += op->grad[i] * bp->data[i];
    }
    if (bp->requires_grad) {
      bp->ensure_grad();
      for (size_t i = 0; i < op->grad.size(); ++i) bp->grad[i] += op->grad[i] * ap->data[i];
    }
  });
  return out;
}

template <class T>
Tensor<T> scale(const Tensor<T>& t, T c) {
  std::vector<T> buf(t.data());
  for (auto& v : buf) v *= c;
  Tensor<T> out(t.shape(), std::move(buf));
  auto tp = t.ptr(), op = out.ptr();
  detail::record(out, t.requires_grad(), [tp, op, c] {
    if (op->grad.empty()) return;
    tp->ensure_grad();
    for (size_t i = 0; i < op->grad.size(); ++i) tp->grad[i] += op->grad[i] * c;
  });
  return out;
}

// t[R×C] + row-broadcast bias v[C]
template <class T>
Tensor<T> add_rowvec(const Tensor<T>& t, const Tensor<T>& v) {
  detail::require_2d(t, "add_rowvec");
  if (v.ndim() != 1 || v.shape()[0] != t.cols())
    throw ShapeError("add_rowvec: bias " + shape_str(v.shape()) + " does not match " +
                     shape_str(t.shape()));
  const int64_t r = t.rows(), c = t.cols();
  std::vector<T> buf(t.data());
  for (int64_t i = 0; i < r; ++i)
    for (int64_t j = 0; j < c; ++j) buf[i * c + j] += v.data()[j];
  Tensor<T> out(t.shape(), std::move(buf));
  auto tp = t.ptr(), vp = v.ptr(), op = out.ptr();
  detail::record(out, t.requires_grad() || v.requires_grad(), [tp, vp, op, r, c] {
    if (op->grad.empty()) return;
    if (tp->requires_grad) {
      tp->ensure_grad();
      for (size_t i = 0; i < op->grad.size(); ++i) tp->grad[i] += op->grad[i];
    }
    if (vp->requires_grad) {
      vp->ensure_grad();
      for (int64_t i = 0; i < r; ++i)
        for (int64_t j = 0; j < c; ++j) vp->grad[j] += op->grad[i * c + j];
    }
  });
  return out;
}

template <class T>
Tensor<T> silu(const Tensor<T>& t) {
  std::vector<T> buf(t.data().size());
  for (size_t i = 0; i < buf.size(); ++i) {
    T x = t.data()[i];
    buf[i] = x / (T(1) + std::exp(-x));
  }
  Tensor<T> out(t.shape(), std::move(buf));
  auto tp = t.ptr(), op = out.ptr();
  detail::record(out, t.requires_grad(), [tp, op] {
    if (op->grad.empty()) return;
    tp->ensure_grad();
    for (size_t i = 0; i < op->grad.size(); ++i) {
      T x = tp->data[i];
      T s = T(1) / (T(1) + std::exp(-x));
      tp->grad[i] += op->grad[i] * s * (T(1) + x * (T(1) - s));
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Normalization / attention helpers
// ---------------------------------------------------------------------------

// Row-wise RMS normalization with learned gain: y = x / rms(x) * w.
template <class T>
Tensor<T> rmsnorm_rows(const Tensor<T>& t, const Tensor<T>& w, T eps = T(1e-5)) {
  detail::require_2d(t, "rmsnorm_rows");
  if (w.ndim() != 1 || w.shape()[0] != t.cols())
    throw ShapeError("rmsnorm_rows: gain " + shape_str(w.shape()) + " does not match " +
                     shape_str(t.shape()));
  const int64_t r = t.rows(), c = t.cols();
  std::vector<T> buf(static_cast<size_t>(r * c));
  std::vector<T> inv_rms(static_cast<size_t>(r));
  for (int64_t i = 0; i < r; ++i) {
    const T* x = t.data().data() + i * c;
    T ms = T(0);
    for (int64_t j = 0; j < c; ++j) ms += x[j] * x[j];
    T inv = T(1) / std::sqrt(ms / static_cast<T>(c) + eps);
    inv_rms[static_cast<size_t>(i)] = inv;
    for (int64_t j = 0; j < c; ++j) buf[i * c + j] = x[j] * inv * w.data()[j];
  }
  Tensor<T> out(t.shape(), std::move(buf));
  auto tp = t.ptr(), wp = w.ptr(), op = out.ptr();
  detail::record(out, t.requires_grad() || w.requires_grad(), [tp, wp, op, r, c, inv_rms] {
    if (op->grad.empty()) return;
    for (int64_t i = 0; i < r; ++i) {
      const T* g = op->grad.data() + i * c;
      const T* x = tp->data.data() + i * c;
      const T inv = inv_rms[static_cast<size_t>(i)];
      if (wp->requires_grad) {
        wp->ensure_grad();
        for (int64_t j = 0; j < c; ++j) wp->grad[j] += g[j] * x[j] * inv;
      }
      if (tp->requires_grad) {
        tp->ensure_grad();
        T dot = T(0);
        for (int64_t j = 0; j < c; ++j) dot += g[j] * wp->data[j] * x[j];
        const T k = dot * inv * inv * inv / static_cast<T>(c);
        for (int64_t j = 0; j < c; ++j) tp->grad[i * c + j] += g[j] * wp->data[j] * inv - x[j] * k;
      }
    }
  });
  return out;
}

// Gather rows of an embedding table; backward scatter-adds into the table.
template <class T>
Tensor<T> embedding(const Tensor<T>& table, const std::vector<int>& ids) {
  detail::require_2d(table, "embedding");
  const int64_t v = table.rows(), d = table.cols();
  const int64_t n = static_cast<int64_t>(ids.size());
  std::vector<T> buf(static_cast<size_t>(n * d));
  for (int64_t i = 0; i < n; ++i) {
    if (ids[i] < 0 || ids[i] >= v)
      throw ShapeError("embedding: id " + std::to_string(ids[i]) + " out of range [0," +
                       std::to_string(v) + ")");
    std::copy_n(table.data().data() + static_cast<int64_t>(ids[i]) * d, d, buf.data() + i * d);
  }
  Tensor<T> out({n, d}, std::move(buf));
  auto tp = table.ptr(), op = out.ptr();
  detail::record(out, table.requires_grad(), [tp, op, ids, d, n] {
    if (op->grad.empty()) return;
    tp->ensure_grad();
    for (int64_t i = 0; i < n; ++i) {
      T* dst = tp->grad.data() + static_cast<int64_t>(ids[i]) * d;
      const T* g = op->grad.data() + i * d;
      for (int64_t j = 0; j < d; ++j) dst[j] += g[j];
    }
  });
  return out;
}

template <class T>
Tensor<T> slice_cols(const Tensor<T>& t, int64_t start, int64_t len) {
  detail::require_2d(t, "slice_cols");
  if (start < 0 || len <= 0 || start + len > t.cols())
    throw ShapeError("slice_cols: [" + std::to_string(start) + "," + std::to_string(start + len) +
                     ") out of " + shape_str(t.shape()));
  const int64_t r = t.rows(), c = t.cols();
  std::vector<T> buf(static_cast<size_t>(r * len));
  for (int64_t i = 0; i < r; ++i)
    std::copy_n(t.data().data() + i * c + start, len, buf.data() + i * len);
  Tensor<T> out({r, len}, std::move(buf));
  auto tp = t.ptr(), op = out.ptr();
  detail::record(out, t.requires_grad(), [tp, op, r, c, start, len] {
    if (op->grad.empty()) return;
    tp->ensure_grad();
    for (int64_t i = 0; i < r; ++i)
      for (int64_t j = 0; j < len; ++j) tp->grad[i * c + start + j] += op->grad[i * len + j];
  });
  return out;
}

template <class T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const int64_t r = parts[0].rows();
  int64_t total = 0;
  bool rg = false;
  for (const auto& p : parts) {
    detail::require_2d(p, "concat_cols");
    if (p.rows() != r) throw ShapeError("concat_cols: row counts differ");
    total += p.cols();
    rg = rg || p.requires_grad();
  }
  std::vector<T> buf(static_cast<size_t>(r * total));
  int64_t off = 0;
  for (const auto& p : parts) {
    const int64_t c = p.cols();
    for (int64_t i = 0; i < r; ++i)
      std::copy_n(p.data().data() + i * c, c, buf.data() + i * total + off);
    off += c;
  }
  Tensor<T> out({r, total}, std::move(buf));
  std::vector<std::shared_ptr<TensorData<T>>> ptrs;
  std::vector<int64_t> widths;
  for (const auto& p : parts) {
    ptrs.push_back(p.ptr());
    widths.push_back(p.cols());
  }
  auto op = out.ptr();
  detail::record(out, rg, [ptrs, widths, op, r, total] {
    if (op->grad.empty()) return;
    int64_t off = 0;
    for (size_t k = 0; k < ptrs.size(); ++k) {
      const int64_t c = widths[k];
      if (ptrs[k]->requires_grad) {
        ptrs[k]->ensure_grad();
        for (int64_t i = 0; i < r; ++i)
          for (int64_t j = 0; j < c; ++j)
            ptrs[k]->grad[i * c + j] += op->grad[i * total + off + j];
      }
      off += c;
    }
  });
  return out;
}

// Adds a large negative constant to entries above the diagonal of a square
// score matrix (query rows, key columns). Gradient passes only through the
// unmasked entries' identity term.
template <class T>
Tensor<T> causal_mask_add(const Tensor<T>& scores) {
  detail::require_2d(scores, "causal_mask_add");
  if (scores.rows() != scores.cols())
    throw ShapeError("causal_mask_add: expected square scores, got " + shape_str(scores.shape()));
  const int64_t n = scores.rows();
  const T neg = T(-1e9);
  std::vector<T> buf(scores.data());
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = i + 1; j < n; ++j) buf[i * n + j] += neg;
  Tensor<T> out(scores.shape(), std::move(buf));
  auto sp = scores.ptr(), op = out.ptr();
  detail::record(out, scores.requires_grad(), [sp, op] {
    if (op->grad.empty()) return;
    sp->ensure_grad();
    for (size_t i = 0; i < op->grad.size(); ++i) sp->grad[i] += op->grad[i];
  });
  return out;
}

// ---------------------------------------------------------------------------
// Softmax family
// ---------------------------------------------------------------------------

template <class T>
void require_finite(const Tensor<T>& t, const char* op) {
  for (T v : t.data())
    if (!std::isfinite(v)) throw NumericError(std::string(op) + ": non-finite input");
}

template <class T>
Tensor<T> softmax_rows(const Tensor<T>& t) {
  detail::require_2d(t, "softmax_rows");
  const int64_t r = t.rows(), c = t.cols();
  std::vector<T> buf(static_cast<size_t>(r * c));
  for (int64_t i = 0; i < r; ++i) {
    const T* x = t.data().data() + i * c;
    T mx = x[0];
    for (int64_t j = 1; j < c; ++j) mx = std::max(mx, x[j]);
    if (!std::isfinite(mx)) throw NumericError("softmax_rows: non-finite input");
    T sum = T(0);
    for (int64_t j = 0; j < c; ++j) {
      T e = std::exp(x[j] - mx);
      buf[i * c + j] = e;
      sum += e;
    }
    for (int64_t j = 0; j < c; ++j) buf[i * c + j] /= sum;
  }
  Tensor<T> out(t.shape(), std::move(buf));
  auto tp = t.ptr(), op = out.ptr();
  detail::record(out, t.requires_grad(), [tp, op, r, c] {
    if (op->grad.empty()) return;
    tp->ensure_grad();
    for (int64_t i = 0; i < r; ++i) {
      const T* g = op->grad.data() + i * c;
      const T* p = op->data.data() + i * c;
      T dot = T(0);
      for (int64_t j = 0; j < c; ++j) dot += g[j] * p[j];
      for (int64_t j = 0; j < c; ++j) tp->grad[i * c + j] += p[j] * (g[j] - dot);
    }
  });
  return out;
}

template <class T>
Tensor<T> log_softmax_rows(const Tensor<T>& t) {
  detail::require_2d(t, "log_softmax_rows");
  const int64_t r = t.rows(), c = t.cols();
  std::vector<T> buf(static_cast<size_t>(r * c));
  for (int64_t i = 0; i < r; ++i) {
    const T* x = t.data().data() + i * c;
    T mx = x[0];
    for (int64_t j = 1; j < c; ++j) mx = std::max(mx, x[j]);
    if (!std::isfinite(mx)) throw NumericError("log_softmax_rows: non-finite input");
    T sum = T(0);
    for (int64_t j = 0; j < c; ++j) sum += std::exp(x[j] - mx);
    T lse = mx + std::log(sum);
    for (int64_t j = 0; j < c; ++j) buf[i * c + j] = x[j] - lse;
  }
  Tensor<T> out(t.shape(), std::move(buf));
  auto tp = t.ptr(), op = out.ptr();
  detail::record(out, t.requires_grad(), [tp, op, r, c] {
    if (op->grad.empty()) return;
    tp->ensure_grad();
    for (int64_t i = 0; i < r; ++i) {
      const T* g = op->grad.data() + i * c;
      const T* lp = op->data.data() + i * c;
      T gsum = T(0);
      for (int64_t j = 0; j < c; ++j) gsum += g[j];
      for (int64_t j = 0; j < c; ++j) tp->grad[i * c + j] += g[j] - std::exp(lp[j]) * gsum;
    }
  });
  return out;
}

// Mean of -log softmax(logits)[target] over mask-enabled rows.
template <class T>
Tensor<T> cross_entropy_rows(const Tensor<T>& logits, const std::vector<int>& targets,
                             const std::vector<uint8_t>& mask) {
  detail::require_2d(logits, "cross_entropy_rows");
  const int64_t r = logits.rows(), c = logits.cols();
  if (static_cast<int64_t>(targets.size()) != r || static_cast<int64_t>(mask.size()) != r)
    throw ShapeError("cross_entropy_rows: targets/mask length does not match " +
                     std::to_string(r) + " rows");
  int64_t count = 0;
  for (auto m : mask) count += m ? 1 : 0;
  if (count == 0) throw NumericError("cross_entropy_rows: all positions masked out");
  T total = T(0);
  std::vector<T> logp(static_cast<size_t>(r * c));
  for (int64_t i = 0; i < r; ++i) {
    if (!mask[i]) continue;
    if (targets[i] < 0 || targets[i] >= c)
      throw ShapeError("cross_entropy_rows: target " + std::to_string(targets[i]) +
                       " out of range [0," + std::to_string(c) + ")");
    const T* x = logits.data().data() + i * c;
    T mx = x[0];
    for (int64_t j = 1; j < c; ++j) mx = std::max(mx, x[j]);
    T sum = T(0);
    for (int64_t j = 0; j < c; ++j) sum += std::exp(x[j] - mx);
    T lse = mx + std::log(sum);
    for (int64_t j = 0; j < c; ++j) logp[i * c + j] = x[j] - lse;
    total -= logp[i * c + targets[i]];
  }
  Tensor<T> out = Tensor<T>::scalar(total / static_cast<T>(count));
  auto lp = logits.ptr(), op = out.ptr();
  detail::record(out, logits.requires_grad(), [lp, op, targets, mask, logp, r, c, count] {
    if (op->grad.empty()) return;
    lp->ensure_grad();
    const T g = op->grad[0] / static_cast<T>(count);
    for (int64_t i = 0; i < r; ++i) {
      if (!mask[i]) continue;
      for (int64_t j = 0; j < c; ++j) {
        T p = std::exp(logp[i * c + j]);
        lp->grad[i * c + j] += g * (p - (j == targets[i] ? T(1) : T(0)));
      }
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> sum_all(const Tensor<T>& t) {
  T s = T(0);
  for (T v : t.data()) s += v;
  Tensor<T> out = Tensor<T>::scalar(s);
  auto tp = t.ptr(), op = out.ptr();
  detail::record(out, t.requires_grad(), [tp, op] {
    if (op->grad.empty()) return;
    tp->ensure_grad();
    for (auto& g : tp->grad) g += op->grad[0];
  });
  return out;
}

template <class T>
Tensor<T> mean_all(const Tensor<T>& t) {
  if (t.numel() == 0) throw NumericError("mean_all: empty tensor");
  Tensor<T> s = sum_all(t);
  return scale(s, T(1) / static_cast<T>(t.numel()));
}

// Mean absolute value; subgradient is sign(x)/numel with sign(0) = 0.
template <class T>
Tensor<T> l1_mean(const Tensor<T>& t) {
  if (t.numel() == 0) throw NumericError("l1_mean: empty tensor");
  T s = T(0);
  for (T v : t.data()) s += std::abs(v);
  const T n = static_cast<T>(t.numel());
  Tensor<T> out = Tensor<T>::scalar(s / n);
  auto tp = t.ptr(), op = out.ptr();
  detail::record(out, t.requires_grad(), [tp, op, n] {
    if (op->grad.empty()) return;
    tp->ensure_grad();
    const T g = op->grad[0] / n;
    for (size_t i = 0; i < tp->data.size(); ++i) {
      T x = tp->data[i];
      tp->grad[i] += g * (x > T(0) ? T(1) : (x < T(0) ? T(-1) : T(0)));
    }
  });
  return out;
}

// Value-identical tensor cut off from the tape: gradients never flow past it.
template <class T>
Tensor<T> detach(const Tensor<T>& t) {
  return Tensor<T>(t.shape(), t.data(), false);
}

}  // namespace ivl
