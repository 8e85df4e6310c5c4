#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "rupformer/rng.hpp"

namespace rupf {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct TensorImpl {
  Shape shape;
  std::vector<float> data;
  std::vector<float> grad;  // empty until a gradient is accumulated
  bool requires_grad = false;
  std::int64_t node_id = -1;  // position on the tape, -1 for leaves/constants
  std::uint64_t generation = 0;

  void ensure_grad();
};

// Dense row-major float32 tensor with shared ownership of its storage. Copies
// are shallow: two Tensor handles may refer to the same parameter.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, float value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<float> values, bool requires_grad = false);
  static Tensor scalar(float value);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return impl_->shape.at(axis); }
  std::size_t size() const { return impl_->data.size(); }

  std::span<const float> data() const { return impl_->data; }
  std::span<float> mutable_data() { return impl_->data; }
  float at(std::size_t flat_index) const { return impl_->data.at(flat_index); }
  float item() const;

  bool requires_grad() const { return impl_->requires_grad; }
  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const float> grad() const { return impl_->grad; }
  std::span<float> mutable_grad();
  void zero_grad();

  std::int64_t node_id() const { return impl_->node_id; }

  /// Detached copy: same values, no gradient tracking.
  Tensor detach() const;

  TensorImpl* impl() const { return impl_.get(); }
  const std::shared_ptr<TensorImpl>& impl_ptr() const { return impl_; }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

// Ordered record of differentiable operations. Entries are appended in
// execution order, so the list is topologically sorted by construction.
class Tape {
 public:
  struct Entry {
    std::vector<std::shared_ptr<TensorImpl>> inputs;
    std::shared_ptr<TensorImpl> output;
    std::function<void()> backward;
  };

  /// The calling thread's tape.
  static Tape& current();

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  std::uint64_t generation() const { return generation_; }
  const std::vector<Entry>& entries() const { return entries_; }

  void record(const Tensor& output, std::vector<std::shared_ptr<TensorImpl>> inputs,
              std::function<void()> backward);
  void clear();

 private:
  std::vector<Entry> entries_;
  std::uint64_t generation_ = 1;
};

/// Whether operations on the calling thread are recorded.
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Reverse sweep from a scalar loss. Gradients accumulate into every tensor
/// with requires_grad; the tape is cleared afterward.
void backward(const Tensor& loss);

// ---------------------------------------------------------------------------
// Operations. Each one records a backward rule when any input requires grad.

/// [m,k]x[k,n] -> [m,n], or batched [b,m,k]x[b,k,n] -> [b,m,n].
Tensor matmul(const Tensor& a, const Tensor& b);
/// Swaps the last two axes.
Tensor transpose_last(const Tensor& x);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes);
Tensor reshape(const Tensor& x, Shape shape);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, float factor);
/// Adds a vector along the last axis of x.
Tensor add_bias(const Tensor& x, const Tensor& bias);
Tensor relu(const Tensor& x);
/// Inverted dropout. Identity when training is false.
Tensor dropout(const Tensor& x, float p, bool training, Rng& rng);

/// Gathers rows of a [rows, d] table -> [indices.size(), d].
Tensor embedding_lookup(const Tensor& table, std::span<const std::int32_t> indices);
/// Concatenation along axis 0.
Tensor concat(const std::vector<Tensor>& parts);
/// Rows [begin, end) along axis 0.
Tensor slice(const Tensor& x, std::size_t begin, std::size_t end);
/// Columns [begin, end) along the last axis.
Tensor slice_last(const Tensor& x, std::size_t begin, std::size_t end);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

/// Softmax over the last axis. `mask`, when non-empty, is an additive
/// [rows_per_matrix, last] mask repeated over leading batches; entries of
/// -infinity receive exactly zero weight.
Tensor softmax_lastdim(const Tensor& x, std::span<const float> mask = {});

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, float eps = 1e-5F);

/// Mean pinball loss between a prediction column and targets (no grad on targets).
Tensor pinball(const Tensor& prediction, const Tensor& target, float quantile);

/// Additive causal mask for a t x t attention matrix.
std::vector<float> causal_mask(std::size_t t);

}  // namespace rupf
