#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "ivl/ops.hpp"
#include "ivl/tensor.hpp"

namespace ivl {

struct GradCheckEntry {
  std::string name;
  double max_rel_err = 0.0;
  int64_t checked = 0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_err = 0.0;
};

// Central finite-difference comparison of analytic gradients.
// `f` must be a deterministic scalar function of the given parameters.
// Checks up to `samples_per_param` randomly chosen entries per parameter.
template <class T>
GradCheckReport finite_diff_check(const std::function<Tensor<T>()>& f,
                                  std::vector<Tensor<T>> params,
                                  const std::vector<std::string>& names, T eps,
                                  int samples_per_param = 16, uint64_t seed = 0) {
  if (eps <= T(0)) throw NumericError("finite_diff_check: eps must be positive");
  // Analytic pass.
  std::vector<std::vector<T>> analytic(params.size());
  {
    TapeScope<T> scope;
    for (auto& p : params) p.set_requires_grad(true);
    Tensor<T> loss = f();
    backward(loss);
    for (size_t k = 0; k < params.size(); ++k)
      analytic[k] = params[k].has_grad() ? params[k].grad()
                                         : std::vector<T>(params[k].data().size(), T(0));
    for (auto& p : params) p.zero_grad();
  }
  std::mt19937_64 rng(seed);
  GradCheckReport report;
  for (size_t k = 0; k < params.size(); ++k) {
    GradCheckEntry entry;
    entry.name = k < names.size() ? names[k] : ("param" + std::to_string(k));
    auto& buf = params[k].raw_data();
    const int64_t n = static_cast<int64_t>(buf.size());
    const int64_t want = std::min<int64_t>(n, samples_per_param);
    for (int64_t s = 0; s < want; ++s) {
      int64_t idx = want == n ? s
                              : static_cast<int64_t>(std::uniform_int_distribution<uint64_t>(
                                    0, static_cast<uint64_t>(n - 1))(rng));
      const T orig = buf[idx];
      buf[idx] = orig + eps;
      T fp = f().item();
      buf[idx] = orig - eps;
      T fm = f().item();
      buf[idx] = orig;
      const double numeric = (static_cast<double>(fp) - static_cast<double>(fm)) /
                             (2.0 * static_cast<double>(eps));
      const double a = static_cast<double>(analytic[k][idx]);
      const double denom = std::max({1.0, std::abs(a), std::abs(numeric)});
      entry.max_rel_err = std::max(entry.max_rel_err, std::abs(a - numeric) / denom);
      ++entry.checked;
    }
    report.max_rel_err = std::max(report.max_rel_err, entry.max_rel_err);
    report.entries.push_back(std::move(entry));
  }
  return report;
}

}  // namespace ivl
