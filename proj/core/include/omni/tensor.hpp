#pragma once

// Dense f32 tensors with tape-based reverse-mode differentiation.
//
// A Tensor is a cheap handle to shared storage. Ops are free functions that
// take the Tape they record onto; an op records a backward closure only when
// the tape is recording and at least one input requires a gradient. The tape
// holds closures in execution order, so running them in reverse is a valid
// reverse-mode schedule.
//
// Shapes are rank 1 or 2 (row-major). A scalar is shape {1}.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace omni {

using Shape = std::vector<std::size_t>;
/// Per-row boolean mask (std::vector<bool> is not contiguous).
using Mask = std::vector<std::uint8_t>;

std::size_t shape_numel(const Shape& shape) noexcept;
std::string shape_str(const Shape& shape);

namespace detail {
struct TensorImpl {
  Shape shape;
  std::vector<float> data;
  std::vector<float> grad;  // empty until first accumulation (or zero_grad)
  bool requires_grad = false;
  bool grad_touched = false;  // set whenever backward accumulates into grad

  float* grad_buffer();
};
}  // namespace detail

class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<float> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor scalar(float v, bool requires_grad = false);

  bool defined() const noexcept { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const { return impl_->data.size(); }
  /// Rows of a rank-2 tensor; 1 for rank 1.
  std::size_t rows() const;
  /// Last extent.
  std::size_t cols() const;

  std::span<const float> data() const { return impl_->data; }
  /// Direct write access. Only parameters owned by a model or optimizer
  /// should be written through this; tensors consumed by an op are immutable.
  std::span<float> mutable_data() { return impl_->data; }
  float item() const;
  float at(std::size_t r, std::size_t c) const { return impl_->data[r * cols() + c]; }

  bool requires_grad() const noexcept { return impl_ && impl_->requires_grad; }
  void set_requires_grad(bool v) { impl_->requires_grad = v; }
  bool has_grad() const noexcept { return impl_ && !impl_->grad.empty(); }
  /// Gradient buffer; all zeros if nothing was accumulated yet.
  std::span<const float> grad() const;
  std::span<float> mutable_grad();
  /// Zero-fills the gradient buffer (allocating it) and clears the touched flag.
  void zero_grad();
  /// True if backward accumulated into this tensor since the last zero_grad.
  bool grad_touched() const noexcept { return impl_ && impl_->grad_touched; }

  /// Deep copy of data (no grad, same requires_grad flag).
  Tensor clone() const;
  /// Same storage identity.
  bool same_storage(const Tensor& other) const noexcept { return impl_ == other.impl_; }

  detail::TensorImpl* impl() const noexcept { return impl_.get(); }
  const std::shared_ptr<detail::TensorImpl>& shared_impl() const noexcept { return impl_; }

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  bool recording() const noexcept { return recording_; }
  void set_recording(bool on) noexcept { recording_ = on; }

  void record(std::function<void()> backward_fn);
  std::size_t size() const noexcept { return ops_.size(); }
  bool consumed() const noexcept { return consumed_; }

  /// Seeds d(loss)/d(loss) = 1 and runs every recorded closure in reverse.
  /// The loss must have exactly one element. A tape can be replayed once;
  /// call reset() before recording a new graph.
  void backward(const Tensor& loss);
  void reset();

 private:
  std::vector<std::function<void()>> ops_;
  bool recording_ = true;
  bool consumed_ = false;
};

/// Free-function spelling of tape.backward(loss).
void backward(Tape& tape, const Tensor& loss);

// ---- ops -----------------------------------------------------------------

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b);
Tensor transpose(Tape& tape, const Tensor& a);
Tensor add(Tape& tape, const Tensor& a, const Tensor& b);
Tensor mul(Tape& tape, const Tensor& a, const Tensor& b);
Tensor scale(Tape& tape, const Tensor& a, float s);
/// x [n, d] + bias [d] broadcast over rows.
Tensor add_bias(Tape& tape, const Tensor& x, const Tensor& bias);
/// x [n, k] * w [k, d] + b [d].
Tensor linear(Tape& tape, const Tensor& x, const Tensor& w, const Tensor& b);
/// tanh-approximated GELU.
Tensor gelu(Tape& tape, const Tensor& x);
/// Normalizes each row over the last axis; statistics accumulate in double.
Tensor layer_norm(Tape& tape, const Tensor& x, const Tensor& gain, const Tensor& bias, float eps);
/// Row-wise softmax of a square score matrix with entries j > i masked out.
Tensor causal_softmax(Tape& tape, const Tensor& scores);
/// Rows of `table` selected by ids.
Tensor embedding(Tape& tape, const Tensor& table, std::span<const std::int32_t> ids);
/// Rows [start, start + count) of x.
Tensor slice_rows(Tape& tape, const Tensor& x, std::size_t start, std::size_t count);
Tensor gather_rows(Tape& tape, const Tensor& x, std::span<const std::size_t> rows);
Tensor concat_rows(Tape& tape, std::span<const Tensor> parts);
Tensor slice_cols(Tape& tape, const Tensor& x, std::size_t start, std::size_t count);
Tensor concat_cols(Tape& tape, std::span<const Tensor> parts);
Tensor sum(Tape& tape, const Tensor& x);
/// Column means, [n, d] -> [1, d].
Tensor mean_rows(Tape& tape, const Tensor& x);
/// Mean negative log-likelihood of targets over rows where mask is true.
/// logits [n, V]; targets and mask have n entries. Throws "empty loss" if
/// every row is masked out.
Tensor softmax_cross_entropy(Tape& tape, const Tensor& logits, std::span<const std::int32_t> targets,
                             std::span<const std::uint8_t> mask);

}  // namespace omni
