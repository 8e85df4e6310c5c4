#include "rupformer/tensor.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "rupformer/errors.hpp"

namespace rupf {

namespace {

thread_local bool g_grad_enabled = true;

using RowMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;
using MutMap = Eigen::Map<RowMatrix>;

bool tracks(std::initializer_list<const Tensor*> inputs) {
  if (!g_grad_enabled) return false;
  return std::any_of(inputs.begin(), inputs.end(), [](const Tensor* t) { return t->requires_grad(); });
}

Tensor make_output(Shape shape, std::vector<float> data, bool track) {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  impl->requires_grad = track;
  return Tensor(std::move(impl));
}

void record(const Tensor& output, std::initializer_list<const Tensor*> inputs, std::function<void()> fn) {
  std::vector<std::shared_ptr<TensorImpl>> ins;
  ins.reserve(inputs.size());
  for (const Tensor* t : inputs) ins.push_back(t->impl_ptr());
  Tape::current().record(output, std::move(ins), std::move(fn));
}

// Gradient buffer of an input, or nullptr when the input is not tracked.
float* grad_of(TensorImpl* t) {
  if (!t->requires_grad) return nullptr;
  t->ensure_grad();
  return t->grad.data();
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

std::size_t leading(const Shape& s, std::size_t trailing_axes) {
  std::size_t n = 1;
  for (std::size_t i = 0; i + trailing_axes < s.size(); ++i) n *= s[i];
  return n;
}

}  // namespace

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

void TensorImpl::ensure_grad() {
  if (grad.empty()) grad.assign(data.size(), 0.0F);
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0F, requires_grad); }

Tensor Tensor::full(Shape shape, float value, bool requires_grad) {
  const std::size_t n = numel(shape);
  return make_output(std::move(shape), std::vector<float>(n, value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<float> values, bool requires_grad) {
  if (numel(shape) != values.size()) {
    throw DimensionError("tensor: shape " + shape_str(shape) + " needs " + std::to_string(numel(shape)) +
                         " values, got " + std::to_string(values.size()));
  }
  return make_output(std::move(shape), std::move(values), requires_grad);
}

Tensor Tensor::scalar(float value) { return make_output({}, {value}, false); }

float Tensor::item() const {
  if (size() != 1) throw DimensionError("item: tensor of shape " + shape_str(shape()) + " is not a scalar");
  return impl_->data[0];
}

std::span<float> Tensor::mutable_grad() {
  impl_->ensure_grad();
  return impl_->grad;
}

void Tensor::zero_grad() {
  if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0F);
}

Tensor Tensor::detach() const { return make_output(shape(), impl_->data, false); }

// ---------------------------------------------------------------------------

Tape& Tape::current() {
  thread_local Tape tape;
  return tape;
}

void Tape::record(const Tensor& output, std::vector<std::shared_ptr<TensorImpl>> inputs,
                  std::function<void()> backward) {
  output.impl()->node_id = static_cast<std::int64_t>(entries_.size());
  output.impl()->generation = generation_;
  entries_.push_back({std::move(inputs), output.impl_ptr(), std::move(backward)});
}

void Tape::clear() {
  entries_.clear();
  ++generation_;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

void backward(const Tensor& loss) {
  if (loss.size() != 1) {
    throw DimensionError("backward: loss must be a scalar, got shape " + shape_str(loss.shape()));
  }
  Tape& tape = Tape::current();
  TensorImpl* root = loss.impl();
  if (root->node_id < 0) {
    // Constant or leaf loss: nothing upstream to differentiate.
    if (root->requires_grad) {
      root->ensure_grad();
      root->grad[0] += 1.0F;
    }
    tape.clear();
    return;
  }
  if (root->generation != tape.generation() || static_cast<std::size_t>(root->node_id) >= tape.size()) {
    throw Error("backward: the tape for this loss was already consumed; run the forward pass again");
  }
  root->ensure_grad();
  root->grad[0] += 1.0F;
  const auto& entries = tape.entries();
  for (auto i = root->node_id; i >= 0; --i) {
    const auto& entry = entries[static_cast<std::size_t>(i)];
    if (!entry.output->grad.empty()) entry.backward();
  }
  tape.clear();
}

// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  const bool batched = a.rank() == 3 && b.rank() == 3;
  if (!((a.rank() == 2 && b.rank() == 2) || batched) || a.shape().back() != b.shape()[b.rank() - 2] ||
      (batched && a.dim(0) != b.dim(0))) {
    throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  const std::size_t batch = batched ? a.dim(0) : 1;
  const std::size_t m = a.shape()[a.rank() - 2];
  const std::size_t k = a.shape().back();
  const std::size_t n = b.shape().back();
  std::vector<float> out(batch * m * n, 0.0F);
  const auto em = static_cast<Eigen::Index>(m);
  const auto ek = static_cast<Eigen::Index>(k);
  const auto en = static_cast<Eigen::Index>(n);

  if (!batched) {
    MutMap(out.data(), em, en).noalias() = ConstMap(a.data().data(), em, ek) * ConstMap(b.data().data(), ek, en);
  } else {
    const float* pa = a.data().data();
    const float* pb = b.data().data();
    for (std::size_t s = 0; s < batch; ++s) {
      const float* as = pa + s * m * k;
      const float* bs = pb + s * k * n;
      float* cs = out.data() + s * m * n;
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          const float av = as[i * k + p];
          for (std::size_t j = 0; j < n; ++j) cs[i * n + j] += av * bs[p * n + j];
        }
      }
    }
  }

  Shape shape = batched ? Shape{batch, m, n} : Shape{m, n};
  const bool track = tracks({&a, &b});
  Tensor result = make_output(std::move(shape), std::move(out), track);
  if (track) {
    TensorImpl* ai = a.impl();
    TensorImpl* bi = b.impl();
    TensorImpl* ci = result.impl();
    record(result, {&a, &b}, [=] {
      float* ga = grad_of(ai);
      float* gb = grad_of(bi);
      const float* gc = ci->grad.data();
      if (!batched) {
        ConstMap dc(gc, em, en);
        if (ga) MutMap(ga, em, ek).noalias() += dc * ConstMap(bi->data.data(), ek, en).transpose();
        if (gb) MutMap(gb, ek, en).noalias() += ConstMap(ai->data.data(), em, ek).transpose() * dc;
        return;
      }
      for (std::size_t s = 0; s < batch; ++s) {
        const float* as = ai->data.data() + s * m * k;
        const float* bs = bi->data.data() + s * k * n;
        const float* dcs = gc + s * m * n;
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t p = 0; p < k; ++p) {
            float acc = 0.0F;
            for (std::size_t j = 0; j < n; ++j) {
              acc += dcs[i * n + j] * bs[p * n + j];
              if (gb) gb[s * k * n + p * n + j] += as[i * k + p] * dcs[i * n + j];
            }
            if (ga) ga[s * m * k + i * k + p] += acc;
          }
        }
      }
    });
  }
  return result;
}

Tensor transpose_last(const Tensor& x) {
  if (x.rank() < 2) throw DimensionError("transpose_last: rank < 2 for shape " + shape_str(x.shape()));
  std::vector<std::size_t> axes(x.rank());
  std::iota(axes.begin(), axes.end(), std::size_t{0});
  std::swap(axes[x.rank() - 1], axes[x.rank() - 2]);
  return permute(x, axes);
}

Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes) {
  const std::size_t r = x.rank();
  std::vector<bool> seen(r, false);
  if (axes.size() != r) throw DimensionError("permute: axis list does not match rank of " + shape_str(x.shape()));
  for (auto ax : axes) {
    if (ax >= r || seen[ax]) throw DimensionError("permute: invalid axis permutation");
    seen[ax] = true;
  }
  Shape out_shape(r);
  for (std::size_t i = 0; i < r; ++i) out_shape[i] = x.dim(axes[i]);

  std::vector<std::size_t> in_strides(r, 1);
  for (std::size_t i = r; i-- > 1;) in_strides[i - 1] = in_strides[i] * x.dim(i);
  // For each output flat index, compute the source flat index.
  const std::size_t n = x.size();
  std::vector<std::size_t> source(n);
  std::vector<std::size_t> counter(r, 0);
  for (std::size_t flat = 0; flat < n; ++flat) {
    std::size_t src = 0;
    for (std::size_t i = 0; i < r; ++i) src += counter[i] * in_strides[axes[i]];
    source[flat] = src;
    for (std::size_t i = r; i-- > 0;) {
      if (++counter[i] < out_shape[i]) break;
      counter[i] = 0;
    }
  }
  std::vector<float> out(n);
  const float* px = x.data().data();
  for (std::size_t flat = 0; flat < n; ++flat) out[flat] = px[source[flat]];

  const bool track = tracks({&x});
  Tensor result = make_output(std::move(out_shape), std::move(out), track);
  if (track) {
    TensorImpl* xi = x.impl();
    TensorImpl* yi = result.impl();
    record(result, {&x}, [xi, yi, source = std::move(source)] {
      float* gx = grad_of(xi);
      if (!gx) return;
      for (std::size_t flat = 0; flat < source.size(); ++flat) gx[source[flat]] += yi->grad[flat];
    });
  }
  return result;
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.size()) {
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  const bool track = tracks({&x});
  Tensor result = make_output(std::move(shape), std::vector<float>(x.data().begin(), x.data().end()), track);
  if (track) {
    TensorImpl* xi = x.impl();
    TensorImpl* yi = result.impl();
    record(result, {&x}, [xi, yi] {
      float* gx = grad_of(xi);
      if (!gx) return;
      for (std::size_t i = 0; i < yi->grad.size(); ++i) gx[i] += yi->grad[i];
    });
  }
  return result;
}

namespace {

template <typename Forward, typename Backward>
Tensor binary_same_shape(const Tensor& a, const Tensor& b, const char* name, Forward fwd, Backward bwd) {
  require_same_shape(a, b, name);
  std::vector<float> out(a.size());
  const float* pa = a.data().data();
  const float* pb = b.data().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(pa[i], pb[i]);
  const bool track = tracks({&a, &b});
  Tensor result = make_output(a.shape(), std::move(out), track);
  if (track) {
    TensorImpl* ai = a.impl();
    TensorImpl* bi = b.impl();
    TensorImpl* ci = result.impl();
    record(result, {&a, &b}, [=] {
      float* ga = grad_of(ai);
      float* gb = grad_of(bi);
      for (std::size_t i = 0; i < ci->grad.size(); ++i) {
        bwd(ai->data[i], bi->data[i], ci->grad[i], ga ? &ga[i] : nullptr, gb ? &gb[i] : nullptr);
      }
    });
  }
  return result;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_same_shape(
      a, b, "add", [](float x, float y) { return x + y; },
      [](float, float, float g, float* ga, float* gb) {
        if (ga) *ga += g;
        if (gb) *gb += g;
      });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_same_shape(
      a, b, "sub", [](float x, float y) { return x - y; },
      [](float, float, float g, float* ga, float* gb) {
        if (ga) *ga += g;
        if (gb) *gb -= g;
      });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_same_shape(
      a, b, "mul", [](float x, float y) { return x * y; },
      [](float x, float y, float g, float* ga, float* gb) {
        if (ga) *ga += g * y;
        if (gb) *gb += g * x;
      });
}

Tensor scale(const Tensor& x, float factor) {
  std::vector<float> out(x.data().begin(), x.data().end());
  for (auto& v : out) v *= factor;
  const bool track = tracks({&x});
  Tensor result = make_output(x.shape(), std::move(out), track);
  if (track) {
    TensorImpl* xi = x.impl();
    TensorImpl* yi = result.impl();
    record(result, {&x}, [xi, yi, factor] {
      float* gx = grad_of(xi);
      if (!gx) return;
      for (std::size_t i = 0; i < yi->grad.size(); ++i) gx[i] += factor * yi->grad[i];
    });
  }
  return result;
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  if (x.rank() == 0 || bias.rank() != 1 || bias.dim(0) != x.shape().back()) {
    throw DimensionError("add_bias: bias " + shape_str(bias.shape()) + " does not match last axis of " +
                         shape_str(x.shape()));
  }
  const std::size_t n = bias.dim(0);
  std::vector<float> out(x.data().begin(), x.data().end());
  const float* pb = bias.data().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += pb[i % n];
  const bool track = tracks({&x, &bias});
  Tensor result = make_output(x.shape(), std::move(out), track);
  if (track) {
    TensorImpl* xi = x.impl();
    TensorImpl* bi = bias.impl();
    TensorImpl* yi = result.impl();
    record(result, {&x, &bias}, [xi, bi, yi, n] {
      float* gx = grad_of(xi);
      float* gb = grad_of(bi);
      for (std::size_t i = 0; i < yi->grad.size(); ++i) {
        if (gx) gx[i] += yi->grad[i];
        if (gb) gb[i % n] += yi->grad[i];
      }
    });
  }
  return result;
}

Tensor relu(const Tensor& x) {
  std::vector<float> out(x.data().begin(), x.data().end());
  for (auto& v : out) v = v > 0.0F ? v : 0.0F;
  const bool track = tracks({&x});
  Tensor result = make_output(x.shape(), std::move(out), track);
  if (track) {
    TensorImpl* xi = x.impl();
    TensorImpl* yi = result.impl();
    record(result, {&x}, [xi, yi] {
      float* gx = grad_of(xi);
      if (!gx) return;
      for (std::size_t i = 0; i < yi->grad.size(); ++i) {
        if (xi->data[i] > 0.0F) gx[i] += yi->grad[i];
      }
    });
  }
  return result;
}

Tensor dropout(const Tensor& x, float p, bool training, Rng& rng) {
  if (!(p >= 0.0F && p < 1.0F)) throw DomainError("dropout: probability must lie in [0, 1), got " + std::to_string(p));
  if (!training || p == 0.0F) return x;
  const float keep_scale = 1.0F / (1.0F - p);
  std::vector<float> mask(x.size());
  for (auto& m : mask) m = rng.uniform() < p ? 0.0F : keep_scale;
  std::vector<float> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] * mask[i];
  const bool track = tracks({&x});
  Tensor result = make_output(x.shape(), std::move(out), track);
  if (track) {
    TensorImpl* xi = x.impl();
    TensorImpl* yi = result.impl();
    record(result, {&x}, [xi, yi, mask = std::move(mask)] {
      float* gx = grad_of(xi);
      if (!gx) return;
      for (std::size_t i = 0; i < mask.size(); ++i) gx[i] += mask[i] * yi->grad[i];
    });
  }
  return result;
}

Tensor embedding_lookup(const Tensor& table, std::span<const std::int32_t> indices) {
  if (table.rank() != 2) throw DimensionError("embedding_lookup: table must be 2-D, got " + shape_str(table.shape()));
  const std::size_t rows = table.dim(0);
  const std::size_t d = table.dim(1);
  std::vector<std::int32_t> idx(indices.begin(), indices.end());
  std::vector<float> out(idx.size() * d);
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] < 0 || static_cast<std::size_t>(idx[r]) >= rows) {
      throw DomainError("embedding_lookup: index " + std::to_string(idx[r]) + " out of range for table with " +
                        std::to_string(rows) + " rows");
    }
    std::copy_n(table.data().data() + static_cast<std::size_t>(idx[r]) * d, d, out.data() + r * d);
  }
  const bool track = tracks({&table});
  Tensor result = make_output({idx.size(), d}, std::move(out), track);
  if (track) {
    TensorImpl* ti = table.impl();
    TensorImpl* yi = result.impl();
    record(result, {&table}, [ti, yi, d, idx = std::move(idx)] {
      float* gt = grad_of(ti);
      if (!gt) return;
      for (std::size_t r = 0; r < idx.size(); ++r) {
        float* row = gt + static_cast<std::size_t>(idx[r]) * d;
        for (std::size_t j = 0; j < d; ++j) row[j] += yi->grad[r * d + j];
      }
    });
  }
  return result;
}

Tensor concat(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  Shape shape = parts.front().shape();
  if (shape.empty()) throw DimensionError("concat: scalars cannot be concatenated");
  std::size_t rows = 0;
  bool track = false;
  for (const auto& p : parts) {
    if (p.rank() != shape.size() || !std::equal(shape.begin() + 1, shape.end(), p.shape().begin() + 1)) {
      throw DimensionError("concat: shape " + shape_str(p.shape()) + " incompatible with " + shape_str(shape));
    }
    rows += p.dim(0);
    track = track || (grad_enabled() && p.requires_grad());
  }
  shape[0] = rows;
  std::vector<float> out;
  out.reserve(numel(shape));
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  Tensor result = make_output(std::move(shape), std::move(out), track);
  if (track) {
    std::vector<std::shared_ptr<TensorImpl>> ins;
    for (const auto& p : parts) ins.push_back(p.impl_ptr());
    TensorImpl* yi = result.impl();
    std::vector<TensorImpl*> raw;
    for (const auto& p : parts) raw.push_back(p.impl());
    Tape::current().record(result, std::move(ins), [yi, raw] {
      std::size_t offset = 0;
      for (TensorImpl* p : raw) {
        float* gp = grad_of(p);
        if (gp) {
          for (std::size_t i = 0; i < p->data.size(); ++i) gp[i] += yi->grad[offset + i];
        }
        offset += p->data.size();
      }
    });
  }
  return result;
}

Tensor slice(const Tensor& x, std::size_t begin, std::size_t end) {
  if (x.rank() == 0 || begin > end || end > x.dim(0)) {
    throw DimensionError("slice: rows [" + std::to_string(begin) + ", " + std::to_string(end) + ") out of range for " +
                         shape_str(x.shape()));
  }
  const std::size_t row = x.size() / x.dim(0);
  Shape shape = x.shape();
  shape[0] = end - begin;
  std::vector<float> out(x.data().begin() + static_cast<std::ptrdiff_t>(begin * row),
                         x.data().begin() + static_cast<std::ptrdiff_t>(end * row));
  const bool track = tracks({&x});
  Tensor result = make_output(std::move(shape), std::move(out), track);
  if (track) {
    TensorImpl* xi = x.impl();
    TensorImpl* yi = result.impl();
    const std::size_t offset = begin * row;
    record(result, {&x}, [xi, yi, offset] {
      float* gx = grad_of(xi);
      if (!gx) return;
      for (std::size_t i = 0; i < yi->grad.size(); ++i) gx[offset + i] += yi->grad[i];
    });
  }
  return result;
}

Tensor slice_last(const Tensor& x, std::size_t begin, std::size_t end) {
  if (x.rank() == 0 || begin > end || end > x.shape().back()) {
    throw DimensionError("slice_last: columns [" + std::to_string(begin) + ", " + std::to_string(end) +
                         ") out of range for " + shape_str(x.shape()));
  }
  const std::size_t cols = x.shape().back();
  const std::size_t width = end - begin;
  const std::size_t rows = leading(x.shape(), 1);
  Shape shape = x.shape();
  shape.back() = width;
  std::vector<float> out(rows * width);
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(x.data().data() + r * cols + begin, width, out.data() + r * width);
  }
  const bool track = tracks({&x});
  Tensor result = make_output(std::move(shape), std::move(out), track);
  if (track) {
    TensorImpl* xi = x.impl();
    TensorImpl* yi = result.impl();
    record(result, {&x}, [xi, yi, rows, cols, begin, width] {
      float* gx = grad_of(xi);
      if (!gx) return;
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < width; ++j) gx[r * cols + begin + j] += yi->grad[r * width + j];
      }
    });
  }
  return result;
}

namespace {

Tensor reduce_scaled(const Tensor& x, double factor) {
  double acc = 0.0;
  for (float v : x.data()) acc += v;
  const bool track = tracks({&x});
  Tensor result = make_output({}, {static_cast<float>(acc * factor)}, track);
  if (track) {
    TensorImpl* xi = x.impl();
    TensorImpl* yi = result.impl();
    const auto f = static_cast<float>(factor);
    record(result, {&x}, [xi, yi, f] {
      float* gx = grad_of(xi);
      if (!gx) return;
      const float g = yi->grad[0] * f;
      for (std::size_t i = 0; i < xi->data.size(); ++i) gx[i] += g;
    });
  }
  return result;
}

}  // namespace

Tensor sum(const Tensor& x) { return reduce_scaled(x, 1.0); }

Tensor mean(const Tensor& x) {
  if (x.size() == 0) throw DimensionError("mean: empty tensor");
  return reduce_scaled(x, 1.0 / static_cast<double>(x.size()));
}

Tensor softmax_lastdim(const Tensor& x, std::span<const float> mask) {
  if (x.rank() == 0 || x.shape().back() == 0) {
    throw DimensionError("softmax_lastdim: last axis must be non-empty, got " + shape_str(x.shape()));
  }
  const std::size_t cols = x.shape().back();
  const std::size_t rows = leading(x.shape(), 1);
  std::size_t mask_rows = 0;
  if (!mask.empty()) {
    if (mask.size() % cols != 0 || rows % (mask.size() / cols) != 0) {
      throw DimensionError("softmax_lastdim: mask of " + std::to_string(mask.size()) + " entries incompatible with " +
                           shape_str(x.shape()));
    }
    mask_rows = mask.size() / cols;
  }
  std::vector<float> out(x.size());
  const float* px = x.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const float* in = px + r * cols;
    const float* m = mask.empty() ? nullptr : mask.data() + (r % mask_rows) * cols;
    float* y = out.data() + r * cols;
    float mx = -std::numeric_limits<float>::infinity();
    for (std::size_t j = 0; j < cols; ++j) {
      y[j] = m ? in[j] + m[j] : in[j];
      mx = std::max(mx, y[j]);
    }
    if (mx == -std::numeric_limits<float>::infinity()) {
      throw DomainError("softmax_lastdim: row " + std::to_string(r) + " is fully masked");
    }
    double total = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      y[j] = std::exp(y[j] - mx);
      total += y[j];
    }
    const auto inv = static_cast<float>(1.0 / total);
    for (std::size_t j = 0; j < cols; ++j) y[j] *= inv;
  }
  const bool track = tracks({&x});
  Tensor result = make_output(x.shape(), std::move(out), track);
  if (track) {
    TensorImpl* xi = x.impl();
    TensorImpl* yi = result.impl();
    record(result, {&x}, [xi, yi, rows, cols] {
      float* gx = grad_of(xi);
      if (!gx) return;
      for (std::size_t r = 0; r < rows; ++r) {
        const float* y = yi->data.data() + r * cols;
        const float* gy = yi->grad.data() + r * cols;
        double dot = 0.0;
        for (std::size_t j = 0; j < cols; ++j) dot += static_cast<double>(gy[j]) * y[j];
        for (std::size_t j = 0; j < cols; ++j) gx[r * cols + j] += y[j] * (gy[j] - static_cast<float>(dot));
      }
    });
  }
  return result;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, float eps) {
  if (x.rank() == 0 || x.shape().back() == 0) {
    throw DimensionError("layer_norm: last axis must be non-empty, got " + shape_str(x.shape()));
  }
  const std::size_t cols = x.shape().back();
  if (gain.shape() != Shape{cols} || bias.shape() != Shape{cols}) {
    throw DimensionError("layer_norm: gain " + shape_str(gain.shape()) + " / bias " + shape_str(bias.shape()) +
                         " must match last axis of " + shape_str(x.shape()));
  }
  const std::size_t rows = leading(x.shape(), 1);
  std::vector<float> out(x.size());
  std::vector<float> xhat(x.size());
  std::vector<float> rstd(rows);
  const float* px = x.data().data();
  const float* g = gain.data().data();
  const float* b = bias.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const float* in = px + r * cols;
    double mu = 0.0;
    for (std::size_t j = 0; j < cols; ++j) mu += in[j];
    mu /= static_cast<double>(cols);
    double var = 0.0;
    for (std::size_t j = 0; j < cols; ++j) var += (in[j] - mu) * (in[j] - mu);
    var /= static_cast<double>(cols);
    const double inv = 1.0 / std::sqrt(var + eps);
    rstd[r] = static_cast<float>(inv);
    for (std::size_t j = 0; j < cols; ++j) {
      const auto h = static_cast<float>((in[j] - mu) * inv);
      xhat[r * cols + j] = h;
      out[r * cols + j] = h * g[j] + b[j];
    }
  }
  const bool track = tracks({&x, &gain, &bias});
  Tensor result = make_output(x.shape(), std::move(out), track);
  if (track) {
    TensorImpl* xi = x.impl();
    TensorImpl* gi = gain.impl();
    TensorImpl* bi = bias.impl();
    TensorImpl* yi = result.impl();
    record(result, {&x, &gain, &bias},
           [xi, gi, bi, yi, rows, cols, xhat = std::move(xhat), rstd = std::move(rstd)] {
             float* gx = grad_of(xi);
             float* gg = grad_of(gi);
             float* gb = grad_of(bi);
             std::vector<float> dxhat(cols);
             for (std::size_t r = 0; r < rows; ++r) {
               const float* gy = yi->grad.data() + r * cols;
               const float* h = xhat.data() + r * cols;
               double mean_d = 0.0;
               double mean_dh = 0.0;
               for (std::size_t j = 0; j < cols; ++j) {
                 if (gg) gg[j] += gy[j] * h[j];
                 if (gb) gb[j] += gy[j];
                 dxhat[j] = gy[j] * gi->data[j];
                 mean_d += dxhat[j];
                 mean_dh += static_cast<double>(dxhat[j]) * h[j];
               }
               if (!gx) continue;
               mean_d /= static_cast<double>(cols);
               mean_dh /= static_cast<double>(cols);
               for (std::size_t j = 0; j < cols; ++j) {
                 gx[r * cols + j] +=
                     rstd[r] * static_cast<float>(dxhat[j] - mean_d - h[j] * mean_dh);
               }
             }
           });
  }
  return result;
}

Tensor pinball(const Tensor& prediction, const Tensor& target, float quantile) {
  if (!(quantile > 0.0F && quantile < 1.0F)) {
    throw DomainError("pinball: quantile must lie in (0, 1), got " + std::to_string(quantile));
  }
  if (prediction.size() != target.size() || prediction.size() == 0) {
    throw DimensionError("pinball: prediction " + shape_str(prediction.shape()) + " vs target " +
                         shape_str(target.shape()));
  }
  const std::size_t n = prediction.size();
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double y = target.data()[i];
    const double yhat = prediction.data()[i];
    acc += y > yhat ? quantile * (y - yhat) : (1.0 - quantile) * (yhat - y);
  }
  const bool track = tracks({&prediction});
  Tensor result = make_output({}, {static_cast<float>(acc / static_cast<double>(n))}, track);
  if (track) {
    TensorImpl* pi = prediction.impl();
    TensorImpl* ti = target.impl();
    TensorImpl* yi = result.impl();
    record(result, {&prediction, &target}, [pi, ti, yi, quantile, n] {
      float* gp = grad_of(pi);
      if (!gp) return;
      const float g = yi->grad[0] / static_cast<float>(n);
      for (std::size_t i = 0; i < n; ++i) {
        gp[i] += ti->data[i] > pi->data[i] ? -quantile * g : (1.0F - quantile) * g;
      }
    });
  }
  return result;
}

std::vector<float> causal_mask(std::size_t t) {
  std::vector<float> mask(t * t, 0.0F);
  for (std::size_t i = 0; i < t; ++i) {
    for (std::size_t j = i + 1; j < t; ++j) mask[i * t + j] = -std::numeric_limits<float>::infinity();
  }
  return mask;
}

}  // namespace rupf
