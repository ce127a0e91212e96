#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "ivl/error.hpp"

namespace ivl {

using Shape = std::vector<int64_t>;

inline int64_t numel_of(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ")";
  return os.str();
}

template <class T>
struct TensorData {
  Shape shape;
  std::vector<T> data;
  bool requires_grad = false;
  std::vector<T> grad;  // empty until a gradient is deposited

  void ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), T(0));
  }
};

// Reverse-mode tape. One tape is active per thread at a time; ops record
// backward closures only while a tape is installed and an input requires grad.
template <class T>
class Tape {
 public:
  void record(std::function<void()> fn) { nodes_.push_back(std::move(fn)); }
  void track_output(std::shared_ptr<TensorData<T>> out) { outputs_.push_back(std::move(out)); }

  void run_backward() {
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
  }

  // Non-leaf grads are transient per backward call; only leaves accumulate
  // across repeated calls.
  void reset_output_grads() {
    for (auto& p : outputs_) p->grad.clear();
  }

  size_t size() const { return nodes_.size(); }
  void clear() {
    nodes_.clear();
    outputs_.clear();
  }

  static Tape*& current() {
    thread_local Tape* t = nullptr;
    return t;
  }

 private:
  std::vector<std::function<void()>> nodes_;
  std::vector<std::shared_ptr<TensorData<T>>> outputs_;
};

// RAII scope installing a fresh tape on the current thread.
template <class T>
class TapeScope {
 public:
  TapeScope() : prev_(Tape<T>::current()) { Tape<T>::current() = &tape_; }
  ~TapeScope() { Tape<T>::current() = prev_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

  Tape<T>& tape() { return tape_; }

 private:
  Tape<T> tape_;
  Tape<T>* prev_;
};

template <class T>
class Tensor {
 public:
  Tensor() : p_(std::make_shared<TensorData<T>>()) {}

  Tensor(Shape shape, std::vector<T> data, bool requires_grad = false)
      : p_(std::make_shared<TensorData<T>>()) {
    if (numel_of(shape) != static_cast<int64_t>(data.size()))
      throw ShapeError("tensor: shape " + shape_str(shape) + " does not match buffer of " +
                       std::to_string(data.size()) + " elements");
    p_->shape = std::move(shape);
    p_->data = std::move(data);
    p_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    std::vector<T> d(static_cast<size_t>(numel_of(shape)), T(0));
    return Tensor(std::move(shape), std::move(d), requires_grad);
  }

  static Tensor full(Shape shape, T value, bool requires_grad = false) {
    std::vector<T> d(static_cast<size_t>(numel_of(shape)), value);
    return Tensor(std::move(shape), std::move(d), requires_grad);
  }

  static Tensor scalar(T value) { return Tensor({}, {value}); }

  // Gaussian init via Box-Muller on a caller-owned engine, so sampling is
  // bit-stable across standard library implementations.
  static Tensor randn(Shape shape, std::mt19937_64& rng, T stddev = T(1),
                      bool requires_grad = false) {
    size_t n = static_cast<size_t>(numel_of(shape));
    std::vector<T> d(n);
    for (size_t i = 0; i < n; i += 2) {
      double u1 = 0.0;
      while (u1 <= 1e-300) u1 = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
      double u2 = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
      double r = std::sqrt(-2.0 * std::log(u1));
      d[i] = static_cast<T>(r * std::cos(2.0 * M_PI * u2) * stddev);
      if (i + 1 < n) d[i + 1] = static_cast<T>(r * std::sin(2.0 * M_PI * u2) * stddev);
    }
    return Tensor(std::move(shape), std::move(d), requires_grad);
  }

  const Shape& shape() const { return p_->shape; }
  int64_t numel() const { return static_cast<int64_t>(p_->data.size()); }
  int64_t ndim() const { return static_cast<int64_t>(p_->shape.size()); }
  int64_t rows() const { return p_->shape.size() == 2 ? p_->shape[0] : throw_not2d(); }
  int64_t cols() const { return p_->shape.size() == 2 ? p_->shape[1] : throw_not2d(); }
  bool is_scalar() const { return p_->data.size() == 1 && p_->shape.empty(); }

  const std::vector<T>& data() const { return p_->data; }
  std::vector<T>& raw_data() { return p_->data; }  // optimizer in-place updates only

  bool requires_grad() const { return p_->requires_grad; }
  void set_requires_grad(bool rg) { p_->requires_grad = rg; }

  bool has_grad() const { return !p_->grad.empty(); }
  const std::vector<T>& grad() const {
    if (p_->grad.empty()) throw Error("tensor: gradient not populated");
    return p_->grad;
  }
  std::vector<T>& mutable_grad() {
    p_->ensure_grad();
    return p_->grad;
  }
  void zero_grad() { p_->grad.clear(); }

  T item() const {
    if (p_->data.size() != 1)
      throw ShapeError("tensor: item() on non-scalar " + shape_str(p_->shape));
    return p_->data[0];
  }

  T at(int64_t r, int64_t c) const { return p_->data[static_cast<size_t>(r * cols() + c)]; }

  std::shared_ptr<TensorData<T>> ptr() const { return p_; }

  static std::string dtype_name() {
    if constexpr (std::is_same_v<T, float>) return "float32";
    else return "float64";
  }

 private:
  int64_t throw_not2d() const {
    throw ShapeError("tensor: expected 2-d tensor, got " + shape_str(p_->shape));
  }
  std::shared_ptr<TensorData<T>> p_;
};

// Seeds d(loss)/d(loss)=1 and replays the active tape in reverse order.
// Gradients accumulate across calls until cleared.
template <class T>
void backward(const Tensor<T>& loss) {
  if (loss.numel() != 1)
    throw ShapeError("backward: loss must be scalar, got " + shape_str(loss.shape()));
  Tape<T>* tape = Tape<T>::current();
  if (!tape) throw Error("backward: no active tape on this thread");
  tape->reset_output_grads();
  auto p = loss.ptr();
  p->ensure_grad();
  p->grad[0] += T(1);
  tape->run_backward();
}

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

}  // namespace ivl
