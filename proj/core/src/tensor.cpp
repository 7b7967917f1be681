#include "omni/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "omni/error.hpp"

namespace omni {

using detail::TensorImpl;
using ImplPtr = std::shared_ptr<TensorImpl>;

std::size_t shape_numel(const Shape& shape) noexcept {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

float* TensorImpl::grad_buffer() {
  if (grad.empty()) grad.assign(data.size(), 0.0f);
  grad_touched = true;
  return grad.data();
}

Tensor::Tensor(Shape shape, std::vector<float> data, bool requires_grad) {
  if (shape.empty() || shape.size() > 2) {
    throw ShapeError("tensor rank must be 1 or 2, got shape " + shape_str(shape));
  }
  if (shape_numel(shape) != data.size()) {
    throw ShapeError("tensor shape " + shape_str(shape) + " holds " + std::to_string(shape_numel(shape)) +
                     " values but data has " + std::to_string(data.size()));
  }
  impl_ = std::make_shared<TensorImpl>();
  impl_->shape = std::move(shape);
  impl_->data = std::move(data);
  impl_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  const auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<float>(n, 0.0f), requires_grad);
}

Tensor Tensor::scalar(float v, bool requires_grad) { return Tensor({1}, {v}, requires_grad); }

const Shape& Tensor::shape() const {
  if (!impl_) throw Error("use of undefined tensor");
  return impl_->shape;
}

std::size_t Tensor::rows() const { return rank() == 2 ? shape()[0] : 1; }
std::size_t Tensor::cols() const { return shape().back(); }

float Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return impl_->data[0];
}

std::span<const float> Tensor::grad() const {
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0f);
  return impl_->grad;
}

std::span<float> Tensor::mutable_grad() {
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0f);
  return impl_->grad;
}

void Tensor::zero_grad() {
  impl_->grad.assign(impl_->data.size(), 0.0f);
  impl_->grad_touched = false;
}

Tensor Tensor::clone() const { return Tensor(shape(), impl_->data, impl_->requires_grad); }

void Tape::record(std::function<void()> backward_fn) {
  if (consumed_) throw Error("tape already consumed by backward; call reset() before recording");
  ops_.push_back(std::move(backward_fn));
}

void Tape::backward(const Tensor& loss) {
  if (consumed_) throw Error("backward called twice on the same tape without reset()");
  if (!loss.defined() || loss.numel() != 1) {
    throw ShapeError("backward needs a scalar loss, got shape " +
                     (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
  }
  consumed_ = true;
  if (!loss.requires_grad()) {
    ops_.clear();
    return;
  }
  loss.impl()->grad_buffer()[0] += 1.0f;
  for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
  ops_.clear();
}

void Tape::reset() {
  ops_.clear();
  consumed_ = false;
}

void backward(Tape& tape, const Tensor& loss) { tape.backward(loss); }

namespace {

bool wants_grad(const Tape& tape, std::initializer_list<const Tensor*> inputs) {
  if (!tape.recording()) return false;
  return std::any_of(inputs.begin(), inputs.end(), [](const Tensor* t) { return t->requires_grad(); });
}

Tensor make(Shape shape, std::vector<float> data, bool requires_grad) {
  return Tensor(std::move(shape), std::move(data), requires_grad);
}

void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2) throw ShapeError(std::string(op) + ": expected a matrix, got shape " + shape_str(t.shape()));
}

// C[m,n] += A[m,k] * B[k,n]. A 4 x 64 tile of C stays in local accumulators
// across the whole k loop; every element still sums over p in order.
void gemm_acc(const float* a, const float* b, float* c, std::size_t m, std::size_t k, std::size_t n) {
  constexpr std::size_t kRows = 4, kCols = 64;
  float acc[kRows][kCols];
  for (std::size_t i0 = 0; i0 < m; i0 += kRows) {
    const std::size_t ri = std::min(kRows, m - i0);
    for (std::size_t j0 = 0; j0 < n; j0 += kCols) {
      const std::size_t cj = std::min(kCols, n - j0);
      for (std::size_t r = 0; r < ri; ++r)
        for (std::size_t j = 0; j < cj; ++j) acc[r][j] = c[(i0 + r) * n + j0 + j];
      for (std::size_t p = 0; p < k; ++p) {
        const float* brow = b + p * n + j0;
        for (std::size_t r = 0; r < ri; ++r) {
          const float av = a[(i0 + r) * k + p];
          float* ar = acc[r];
          for (std::size_t j = 0; j < cj; ++j) ar[j] += av * brow[j];
        }
      }
      for (std::size_t r = 0; r < ri; ++r)
        for (std::size_t j = 0; j < cj; ++j) c[(i0 + r) * n + j0 + j] = acc[r][j];
    }
  }
}

// C[k,n] += A[m,k]^T * B[m,n]
void gemm_tn_acc(const float* a, const float* b, float* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const float* arow = a + i * k;
    const float* brow = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const float av = arow[p];
      float* crow = c + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

std::vector<float> transposed(const float* a, std::size_t r, std::size_t c) {
  std::vector<float> t(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) t[j * r + i] = a[i * c + j];
  return t;
}

}  // namespace

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k) {
    throw ShapeError("matmul: inner extents differ for " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  std::vector<float> out(m * n, 0.0f);
  gemm_acc(a.data().data(), b.data().data(), out.data(), m, k, n);
  const bool rg = wants_grad(tape, {&a, &b});
  Tensor result = make({m, n}, std::move(out), rg);
  if (rg) {
    tape.record([ai = a.shared_impl(), bi = b.shared_impl(), oi = result.shared_impl(), m, k, n] {
      if (oi->grad.empty()) return;
      const float* g = oi->grad.data();
      if (ai->requires_grad) {
        const auto bt = transposed(bi->data.data(), k, n);  // [n,k]
        gemm_acc(g, bt.data(), ai->grad_buffer(), m, n, k);
      }
      if (bi->requires_grad) gemm_tn_acc(ai->data.data(), g, bi->grad_buffer(), m, k, n);
    });
  }
  return result;
}

Tensor transpose(Tape& tape, const Tensor& a) {
  require_rank2(a, "transpose");
  const std::size_t r = a.shape()[0], c = a.shape()[1];
  const bool rg = wants_grad(tape, {&a});
  Tensor result = make({c, r}, transposed(a.data().data(), r, c), rg);
  if (rg) {
    tape.record([ai = a.shared_impl(), oi = result.shared_impl(), r, c] {
      if (oi->grad.empty()) return;
      float* ga = ai->grad_buffer();
      const float* g = oi->grad.data();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += g[j * r + i];
    });
  }
  return result;
}

Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("add: shapes differ " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  std::vector<float> out(a.numel());
  const auto ad = a.data(), bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] + bd[i];
  const bool rg = wants_grad(tape, {&a, &b});
  Tensor result = make(a.shape(), std::move(out), rg);
  if (rg) {
    tape.record([ai = a.shared_impl(), bi = b.shared_impl(), oi = result.shared_impl()] {
      if (oi->grad.empty()) return;
      const auto& g = oi->grad;
      for (auto* t : {ai.get(), bi.get()}) {
        if (!t->requires_grad) continue;
        float* gt = t->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) gt[i] += g[i];
      }
    });
  }
  return result;
}

Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("mul: shapes differ " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  std::vector<float> out(a.numel());
  const auto ad = a.data(), bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] * bd[i];
  const bool rg = wants_grad(tape, {&a, &b});
  Tensor result = make(a.shape(), std::move(out), rg);
  if (rg) {
    tape.record([ai = a.shared_impl(), bi = b.shared_impl(), oi = result.shared_impl()] {
      if (oi->grad.empty()) return;
      const auto& g = oi->grad;
      if (ai->requires_grad) {
        float* ga = ai->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bi->data[i];
      }
      if (bi->requires_grad) {
        float* gb = bi->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * ai->data[i];
      }
    });
  }
  return result;
}

Tensor scale(Tape& tape, const Tensor& a, float s) {
  std::vector<float> out(a.numel());
  const auto ad = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] * s;
  const bool rg = wants_grad(tape, {&a});
  Tensor result = make(a.shape(), std::move(out), rg);
  if (rg) {
    tape.record([ai = a.shared_impl(), oi = result.shared_impl(), s] {
      if (oi->grad.empty()) return;
      float* ga = ai->grad_buffer();
      for (std::size_t i = 0; i < oi->grad.size(); ++i) ga[i] += oi->grad[i] * s;
    });
  }
  return result;
}

Tensor add_bias(Tape& tape, const Tensor& x, const Tensor& bias) {
  require_rank2(x, "add_bias");
  const std::size_t n = x.shape()[0], d = x.shape()[1];
  if (bias.numel() != d) {
    throw ShapeError("add_bias: bias " + shape_str(bias.shape()) + " does not match " + shape_str(x.shape()));
  }
  std::vector<float> out(x.data().begin(), x.data().end());
  const auto bd = bias.data();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] += bd[j];
  const bool rg = wants_grad(tape, {&x, &bias});
  Tensor result = make({n, d}, std::move(out), rg);
  if (rg) {
    tape.record([xi = x.shared_impl(), bi = bias.shared_impl(), oi = result.shared_impl(), n, d] {
      if (oi->grad.empty()) return;
      const float* g = oi->grad.data();
      if (xi->requires_grad) {
        float* gx = xi->grad_buffer();
        for (std::size_t i = 0; i < n * d; ++i) gx[i] += g[i];
      }
      if (bi->requires_grad) {
        float* gb = bi->grad_buffer();
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < d; ++j) gb[j] += g[i * d + j];
      }
    });
  }
  return result;
}

Tensor linear(Tape& tape, const Tensor& x, const Tensor& w, const Tensor& b) {
  return add_bias(tape, matmul(tape, x, w), b);
}

Tensor gelu(Tape& tape, const Tensor& x) {
  constexpr float kC = 0.7978845608028654f;  // sqrt(2/pi)
  constexpr float kA = 0.044715f;
  const auto xd = x.data();
  std::vector<float> out(xd.size()), th(xd.size());
  for (std::size_t i = 0; i < xd.size(); ++i) {
    const float v = xd[i];
    th[i] = std::tanh(kC * (v + kA * v * v * v));
    out[i] = 0.5f * v * (1.0f + th[i]);
  }
  const bool rg = wants_grad(tape, {&x});
  Tensor result = make(x.shape(), std::move(out), rg);
  if (rg) {
    tape.record([xi = x.shared_impl(), oi = result.shared_impl(), th = std::move(th)] {
      if (oi->grad.empty()) return;
      float* gx = xi->grad_buffer();
      for (std::size_t i = 0; i < xi->data.size(); ++i) {
        const float v = xi->data[i];
        const float t = th[i];
        const float dt = (1.0f - t * t) * kC * (1.0f + 3.0f * kA * v * v);
        gx[i] += oi->grad[i] * (0.5f * (1.0f + t) + 0.5f * v * dt);
      }
    });
  }
  return result;
}

Tensor layer_norm(Tape& tape, const Tensor& x, const Tensor& gain, const Tensor& bias, float eps) {
  if (!(eps > 0.0f)) throw InvalidArgument("layer_norm: eps must be positive");
  const std::size_t d = x.cols();
  const std::size_t n = x.numel() / d;
  if (gain.numel() != d || bias.numel() != d) {
    throw ShapeError("layer_norm: gain " + shape_str(gain.shape()) + " / bias " + shape_str(bias.shape()) +
                     " must match last extent of " + shape_str(x.shape()));
  }
  const auto xd = x.data(), gd = gain.data(), bd = bias.data();
  std::vector<float> out(n * d), xhat(n * d), rstd(n);
  for (std::size_t i = 0; i < n; ++i) {
    const float* row = xd.data() + i * d;
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += row[j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double c = row[j] - mean;
      var += c * c;
    }
    var /= static_cast<double>(d);
    const double rs = 1.0 / std::sqrt(var + static_cast<double>(eps));
    rstd[i] = static_cast<float>(rs);
    for (std::size_t j = 0; j < d; ++j) {
      const float h = static_cast<float>((row[j] - mean) * rs);
      xhat[i * d + j] = h;
      out[i * d + j] = h * gd[j] + bd[j];
    }
  }
  const bool rg = wants_grad(tape, {&x, &gain, &bias});
  Tensor result = make(x.shape(), std::move(out), rg);
  if (rg) {
    tape.record([xi = x.shared_impl(), gi = gain.shared_impl(), bi = bias.shared_impl(), oi = result.shared_impl(),
                 xhat = std::move(xhat), rstd = std::move(rstd), n, d] {
      if (oi->grad.empty()) return;
      const float* g = oi->grad.data();
      if (gi->requires_grad) {
        float* gg = gi->grad_buffer();
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < d; ++j) gg[j] += g[i * d + j] * xhat[i * d + j];
      }
      if (bi->requires_grad) {
        float* gb = bi->grad_buffer();
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < d; ++j) gb[j] += g[i * d + j];
      }
      if (xi->requires_grad) {
        float* gx = xi->grad_buffer();
        for (std::size_t i = 0; i < n; ++i) {
          double mean_dh = 0.0, mean_dh_h = 0.0;
          for (std::size_t j = 0; j < d; ++j) {
            const double dh = static_cast<double>(g[i * d + j]) * gi->data[j];
            mean_dh += dh;
            mean_dh_h += dh * xhat[i * d + j];
          }
          mean_dh /= static_cast<double>(d);
          mean_dh_h /= static_cast<double>(d);
          for (std::size_t j = 0; j < d; ++j) {
            const double dh = static_cast<double>(g[i * d + j]) * gi->data[j];
            gx[i * d + j] += static_cast<float>(rstd[i] * (dh - mean_dh - xhat[i * d + j] * mean_dh_h));
          }
        }
      }
    });
  }
  return result;
}

Tensor causal_softmax(Tape& tape, const Tensor& scores) {
  require_rank2(scores, "causal_softmax");
  const std::size_t n = scores.shape()[0];
  if (scores.shape()[1] != n) throw ShapeError("causal_softmax: expected square scores, got " + shape_str(scores.shape()));
  const auto sd = scores.data();
  std::vector<float> out(n * n, 0.0f);
  for (std::size_t i = 0; i < n; ++i) {
    const float* row = sd.data() + i * n;
    float mx = row[0];
    for (std::size_t j = 1; j <= i; ++j) mx = std::max(mx, row[j]);
    double total = 0.0;
    for (std::size_t j = 0; j <= i; ++j) {
      const float e = std::exp(row[j] - mx);
      out[i * n + j] = e;
      total += e;
    }
    const float inv = static_cast<float>(1.0 / total);
    for (std::size_t j = 0; j <= i; ++j) out[i * n + j] *= inv;
  }
  const bool rg = wants_grad(tape, {&scores});
  Tensor result = make({n, n}, std::move(out), rg);
  if (rg) {
    tape.record([si = scores.shared_impl(), oi = result.shared_impl(), n] {
      if (oi->grad.empty()) return;
      const float* g = oi->grad.data();
      const float* p = oi->data.data();
      float* gs = si->grad_buffer();
      for (std::size_t i = 0; i < n; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j <= i; ++j) dot += static_cast<double>(g[i * n + j]) * p[i * n + j];
        const float fdot = static_cast<float>(dot);
        for (std::size_t j = 0; j <= i; ++j) gs[i * n + j] += p[i * n + j] * (g[i * n + j] - fdot);
      }
    });
  }
  return result;
}

Tensor embedding(Tape& tape, const Tensor& table, std::span<const std::int32_t> ids) {
  require_rank2(table, "embedding");
  const std::size_t v = table.shape()[0], d = table.shape()[1];
  std::vector<float> out(ids.size() * d);
  const auto td = table.data();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= v) {
      throw RangeError("embedding: id " + std::to_string(ids[i]) + " outside table of " + std::to_string(v) + " rows");
    }
    std::copy_n(td.data() + static_cast<std::size_t>(ids[i]) * d, d, out.data() + i * d);
  }
  const bool rg = wants_grad(tape, {&table});
  Tensor result = make({ids.size(), d}, std::move(out), rg);
  if (rg) {
    tape.record([ti = table.shared_impl(), oi = result.shared_impl(), idv = std::vector<std::int32_t>(ids.begin(), ids.end()), d] {
      if (oi->grad.empty()) return;
      float* gt = ti->grad_buffer();
      for (std::size_t i = 0; i < idv.size(); ++i) {
        float* dst = gt + static_cast<std::size_t>(idv[i]) * d;
        const float* src = oi->grad.data() + i * d;
        for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
      }
    });
  }
  return result;
}

Tensor gather_rows(Tape& tape, const Tensor& x, std::span<const std::size_t> rows) {
  require_rank2(x, "gather_rows");
  const std::size_t n = x.shape()[0], d = x.shape()[1];
  std::vector<float> out(rows.size() * d);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= n) throw RangeError("gather_rows: row " + std::to_string(rows[i]) + " of " + shape_str(x.shape()));
    std::copy_n(x.data().data() + rows[i] * d, d, out.data() + i * d);
  }
  const bool rg = wants_grad(tape, {&x});
  Tensor result = make({rows.size(), d}, std::move(out), rg);
  if (rg) {
    tape.record([xi = x.shared_impl(), oi = result.shared_impl(), rv = std::vector<std::size_t>(rows.begin(), rows.end()), d] {
      if (oi->grad.empty()) return;
      float* gx = xi->grad_buffer();
      for (std::size_t i = 0; i < rv.size(); ++i)
        for (std::size_t j = 0; j < d; ++j) gx[rv[i] * d + j] += oi->grad[i * d + j];
    });
  }
  return result;
}

Tensor slice_rows(Tape& tape, const Tensor& x, std::size_t start, std::size_t count) {
  std::vector<std::size_t> rows(count);
  std::iota(rows.begin(), rows.end(), start);
  return gather_rows(tape, x, rows);
}

Tensor concat_rows(Tape& tape, std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const std::size_t d = parts[0].cols();
  std::size_t n = 0;
  bool rg = false;
  for (const auto& p : parts) {
    require_rank2(p, "concat_rows");
    if (p.cols() != d) throw ShapeError("concat_rows: column mismatch " + shape_str(parts[0].shape()) + " vs " + shape_str(p.shape()));
    n += p.rows();
    rg = rg || p.requires_grad();
  }
  rg = rg && tape.recording();
  std::vector<float> out;
  out.reserve(n * d);
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  Tensor result = make({n, d}, std::move(out), rg);
  if (rg) {
    std::vector<ImplPtr> impls;
    for (const auto& p : parts) impls.push_back(p.shared_impl());
    tape.record([impls = std::move(impls), oi = result.shared_impl()] {
      if (oi->grad.empty()) return;
      std::size_t off = 0;
      for (const auto& pi : impls) {
        const std::size_t len = pi->data.size();
        if (pi->requires_grad) {
          float* gp = pi->grad_buffer();
          for (std::size_t i = 0; i < len; ++i) gp[i] += oi->grad[off + i];
        }
        off += len;
      }
    });
  }
  return result;
}

Tensor slice_cols(Tape& tape, const Tensor& x, std::size_t start, std::size_t count) {
  require_rank2(x, "slice_cols");
  const std::size_t n = x.shape()[0], d = x.shape()[1];
  if (start + count > d) throw ShapeError("slice_cols: columns [" + std::to_string(start) + "," + std::to_string(start + count) + ") of " + shape_str(x.shape()));
  std::vector<float> out(n * count);
  for (std::size_t i = 0; i < n; ++i) std::copy_n(x.data().data() + i * d + start, count, out.data() + i * count);
  const bool rg = wants_grad(tape, {&x});
  Tensor result = make({n, count}, std::move(out), rg);
  if (rg) {
    tape.record([xi = x.shared_impl(), oi = result.shared_impl(), n, d, start, count] {
      if (oi->grad.empty()) return;
      float* gx = xi->grad_buffer();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < count; ++j) gx[i * d + start + j] += oi->grad[i * count + j];
    });
  }
  return result;
}

Tensor concat_cols(Tape& tape, std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const std::size_t n = parts[0].rows();
  std::size_t d = 0;
  bool rg = false;
  for (const auto& p : parts) {
    require_rank2(p, "concat_cols");
    if (p.rows() != n) throw ShapeError("concat_cols: row mismatch " + shape_str(parts[0].shape()) + " vs " + shape_str(p.shape()));
    d += p.cols();
    rg = rg || p.requires_grad();
  }
  rg = rg && tape.recording();
  std::vector<float> out(n * d);
  std::size_t off = 0;
  for (const auto& p : parts) {
    const std::size_t c = p.cols();
    for (std::size_t i = 0; i < n; ++i) std::copy_n(p.data().data() + i * c, c, out.data() + i * d + off);
    off += c;
  }
  Tensor result = make({n, d}, std::move(out), rg);
  if (rg) {
    std::vector<ImplPtr> impls;
    for (const auto& p : parts) impls.push_back(p.shared_impl());
    tape.record([impls = std::move(impls), oi = result.shared_impl(), n, d] {
      if (oi->grad.empty()) return;
      std::size_t off = 0;
      for (const auto& pi : impls) {
        const std::size_t c = pi->shape[1];
        if (pi->requires_grad) {
          float* gp = pi->grad_buffer();
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < c; ++j) gp[i * c + j] += oi->grad[i * d + off + j];
        }
        off += c;
      }
    });
  }
  return result;
}

Tensor sum(Tape& tape, const Tensor& x) {
  double total = 0.0;
  for (float v : x.data()) total += v;
  const bool rg = wants_grad(tape, {&x});
  Tensor result = make({1}, {static_cast<float>(total)}, rg);
  if (rg) {
    tape.record([xi = x.shared_impl(), oi = result.shared_impl()] {
      if (oi->grad.empty()) return;
      const float g = oi->grad[0];
      float* gx = xi->grad_buffer();
      for (std::size_t i = 0; i < xi->data.size(); ++i) gx[i] += g;
    });
  }
  return result;
}

Tensor mean_rows(Tape& tape, const Tensor& x) {
  require_rank2(x, "mean_rows");
  const std::size_t n = x.shape()[0], d = x.shape()[1];
  if (n == 0) throw ShapeError("mean_rows: no rows");
  std::vector<double> acc(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) acc[j] += x.data()[i * d + j];
  std::vector<float> out(d);
  for (std::size_t j = 0; j < d; ++j) out[j] = static_cast<float>(acc[j] / static_cast<double>(n));
  const bool rg = wants_grad(tape, {&x});
  Tensor result = make({1, d}, std::move(out), rg);
  if (rg) {
    tape.record([xi = x.shared_impl(), oi = result.shared_impl(), n, d] {
      if (oi->grad.empty()) return;
      float* gx = xi->grad_buffer();
      const float inv = 1.0f / static_cast<float>(n);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) gx[i * d + j] += oi->grad[j] * inv;
    });
  }
  return result;
}

Tensor softmax_cross_entropy(Tape& tape, const Tensor& logits, std::span<const std::int32_t> targets,
                             std::span<const std::uint8_t> mask) {
  require_rank2(logits, "softmax_cross_entropy");
  const std::size_t n = logits.shape()[0], v = logits.shape()[1];
  if (targets.size() != n || mask.size() != n) {
    throw ShapeError("softmax_cross_entropy: " + std::to_string(targets.size()) + " targets / " +
                     std::to_string(mask.size()) + " mask entries for logits " + shape_str(logits.shape()));
  }
  std::size_t count = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!mask[i]) continue;
    if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= v) {
      throw RangeError("softmax_cross_entropy: target " + std::to_string(targets[i]) + " outside vocabulary of " + std::to_string(v));
    }
    ++count;
  }
  if (count == 0) throw Error("empty loss: every position is masked out");

  const auto ld = logits.data();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!mask[i]) continue;
    const float* row = ld.data() + i * v;
    const float mx = *std::max_element(row, row + v);
    double s = 0.0;
    for (std::size_t j = 0; j < v; ++j) s += std::exp(static_cast<double>(row[j]) - mx);
    total += std::log(s) + mx - row[targets[i]];
  }
  const bool rg = wants_grad(tape, {&logits});
  Tensor result = make({1}, {static_cast<float>(total / static_cast<double>(count))}, rg);
  if (rg) {
    tape.record([li = logits.shared_impl(), oi = result.shared_impl(), tv = std::vector<std::int32_t>(targets.begin(), targets.end()),
                 mv = Mask(mask.begin(), mask.end()), n, v, count] {
      if (oi->grad.empty()) return;
      const double g = static_cast<double>(oi->grad[0]) / static_cast<double>(count);
      float* gl = li->grad_buffer();
      for (std::size_t i = 0; i < n; ++i) {
        if (!mv[i]) continue;
        const float* row = li->data.data() + i * v;
        const float mx = *std::max_element(row, row + v);
        double s = 0.0;
        for (std::size_t j = 0; j < v; ++j) s += std::exp(static_cast<double>(row[j]) - mx);
        for (std::size_t j = 0; j < v; ++j) {
          const double p = std::exp(static_cast<double>(row[j]) - mx) / s;
          const double onehot = static_cast<std::int32_t>(j) == tv[i] ? 1.0 : 0.0;
          gl[i * v + j] += static_cast<float>(g * (p - onehot));
        }
      }
    });
  }
  return result;
}

}  // namespace omni
