#pragma once

// Independent reference computations for the test suites. Nothing here calls
// into the library's numerics: every routine is a direct double-precision
// transcription of the defining formula.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "omni/model.hpp"
#include "omni/rng.hpp"
#include "omni/tensor.hpp"

namespace oracle {

inline std::vector<double> matmul(std::span<const float> a, std::span<const float> b, std::size_t n, std::size_t k,
                                  std::size_t m) {
  std::vector<double> c(n * m, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      double s = 0.0;
      for (std::size_t t = 0; t < k; ++t) s += static_cast<double>(a[i * k + t]) * b[t * m + j];
      c[i * m + j] = s;
    }
  return c;
}

inline std::vector<double> layer_norm(std::span<const float> x, std::size_t rows, std::size_t cols,
                                      std::span<const float> gain, std::span<const float> bias, double eps) {
  std::vector<double> out(rows * cols);
  for (std::size_t r = 0; r < rows; ++r) {
    double mean = 0.0;
    for (std::size_t c = 0; c < cols; ++c) mean += x[r * cols + c];
    mean /= static_cast<double>(cols);
    double var = 0.0;
    for (std::size_t c = 0; c < cols; ++c) var += (x[r * cols + c] - mean) * (x[r * cols + c] - mean);
    var /= static_cast<double>(cols);
    for (std::size_t c = 0; c < cols; ++c)
      out[r * cols + c] = (x[r * cols + c] - mean) / std::sqrt(var + eps) * gain[c] + bias[c];
  }
  return out;
}

/// Mean over unmasked rows of log(sum_j exp(z_j)) - z_target.
inline double cross_entropy(std::span<const float> logits, std::size_t rows, std::size_t cols,
                            std::span<const std::int32_t> targets, std::span<const std::uint8_t> mask) {
  double total = 0.0;
  std::size_t n = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (!mask[r]) continue;
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) s += std::exp(static_cast<double>(logits[r * cols + c]));
    total += std::log(s) - logits[r * cols + static_cast<std::size_t>(targets[r])];
    ++n;
  }
  return total / static_cast<double>(n);
}

inline double cosine(std::span<const double> a, std::span<const double> b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return dot / std::sqrt(na * nb);
}

inline std::vector<float> random_vector(omni::Rng& rng, std::size_t n, double scale = 1.0) {
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(rng.normal() * scale);
  return v;
}

/// Agreement rule for gradient checks: |a - n| <= max(rel * max(|a|, |n|), abs_floor).
inline bool grad_close(double analytic, double numeric, double rel = 1e-3, double abs_floor = 1e-2) {
  return std::abs(analytic - numeric) <= std::max(rel * std::max(std::abs(analytic), std::abs(numeric)), abs_floor);
}

struct GradCheckResult {
  std::size_t checked = 0;
  std::size_t failures = 0;
  double worst_abs = 0.0;
  std::string worst_name;
};

/// Central differences (step h) of `loss` with respect to every element of
/// every tensor in `params`, compared against the gradients already stored in
/// those tensors. `loss` must recompute the forward pass from the current
/// parameter values.
inline GradCheckResult finite_difference_check(const std::vector<omni::NamedTensor>& params,
                                               const std::function<double()>& loss, double h = 1e-3) {
  GradCheckResult r;
  for (const auto& p : params) {
    omni::Tensor t = p.tensor;
    const std::vector<float> analytic(t.grad().begin(), t.grad().end());
    auto w = t.mutable_data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const float orig = w[i];
      const float hi = static_cast<float>(orig + h), lo = static_cast<float>(orig - h);
      w[i] = hi;
      const double up = loss();
      w[i] = lo;
      const double down = loss();
      w[i] = orig;
      // Divide by the step actually representable in f32.
      const double numeric = (up - down) / (static_cast<double>(hi) - static_cast<double>(lo));
      ++r.checked;
      const double diff = std::abs(numeric - analytic[i]);
      if (diff > r.worst_abs) {
        r.worst_abs = diff;
        r.worst_name = p.name + "[" + std::to_string(i) + "]";
      }
      if (!grad_close(analytic[i], numeric)) ++r.failures;
    }
  }
  return r;
}

}  // namespace oracle
