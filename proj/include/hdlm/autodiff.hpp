#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <span>
#include <vector>

#include "hdlm/flop_counter.hpp"
#include "hdlm/tensor.hpp"

namespace hdlm::num {

class Tape;

// Handle to a value recorded on a Tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::uint32_t id) : tape_(tape), id_(id) {}

  Tape* tape() const noexcept { return tape_; }
  std::uint32_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;

 private:
  Tape* tape_ = nullptr;
  std::uint32_t id_ = 0;
};

// Boolean attention mask, rows = queries, cols = keys.
struct Mask {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> allow;

  bool operator()(std::size_t i, std::size_t j) const { return allow[i * cols + j] != 0; }
  friend bool operator==(const Mask&, const Mask&) = default;
};

// Query i (at absolute index offset + i) may attend key j iff j <= offset + i.
Mask causal_mask(std::size_t queries, std::size_t offset = 0);

// Records executed operations for reverse-mode differentiation. Single owner;
// not safe to append from two threads.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor& grad_out)>;

  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad = false);
  Var constant(Tensor value) { return leaf(std::move(value), false); }
  // Leaf that refers to an external tensor instead of copying it. The tensor
  // must outlive the tape and stay unmodified while the tape is in use.
  Var leaf_ref(const Tensor& external, bool requires_grad = false);

  const Tensor& value(Var v) const;
  bool requires_grad(Var v) const;
  // Gradient accumulated by the last backward(); zeros if the value was unused.
  Tensor grad(Var v) const;

  // Reverse sweep from a scalar loss recorded on this tape.
  void backward(Var loss);

  bool recording() const noexcept { return record_; }
  std::size_t size() const noexcept { return nodes_.size(); }

  void set_counter(FlopCounter* counter) noexcept { counter_ = counter; }
  FlopCounter* counter() const noexcept { return counter_; }
  OpCategory category() const noexcept { return category_; }
  void set_category(OpCategory c) noexcept { category_ = c; }

  // Used by operation implementations.
  Var push(Tensor value, bool requires_grad, BackwardFn fn);
  Tensor& grad_buffer(std::uint32_t id);
  void check_owner(Var v) const;
  void count_matmul(OpCategory category, std::uint64_t flops_forward, std::uint64_t flops_backward);
  void count_excluded(std::uint64_t forward, std::uint64_t backward);

 private:
  struct Node {
    Tensor value;
    const Tensor* external = nullptr;
    Tensor grad;

    const Tensor& get() const { return external ? *external : value; }
    bool requires_grad = false;
    BackwardFn backward;
  };

  bool record_;
  std::deque<Node> nodes_;
  FlopCounter* counter_ = nullptr;
  OpCategory category_ = OpCategory::kOther;
};

// Sets the tape's counting category for the lifetime of the scope.
class CategoryScope {
 public:
  CategoryScope(Tape& tape, OpCategory c) : tape_(tape), saved_(tape.category()) {
    tape.set_category(c);
  }
  ~CategoryScope() { tape_.set_category(saved_); }
  CategoryScope(const CategoryScope&) = delete;
  CategoryScope& operator=(const CategoryScope&) = delete;

 private:
  Tape& tape_;
  OpCategory saved_;
};

inline constexpr double kRmsNormEps = 1e-5;

// a[m,k] * b[k,n]
Var matmul(Var a, Var b);
// a[m,k] * b[n,k]^T
Var matmul_nt(Var a, Var b);
Var add(Var a, Var b);
Var scale(Var a, double s);
Var sum(Var a);
Var softmax_rows(Var x);
// Masked-out entries get probability exactly 0. Every row must allow at least one key.
Var masked_softmax_rows(Var x, const Mask& mask);
Var rms_norm(Var x, Var gain, double eps = kRmsNormEps);
Var gelu(Var x);
// Rotary position encoding applied independently to each head_dim block of
// the columns; row r is rotated by positions[r].
Var rope(Var x, std::span<const std::size_t> positions, std::size_t head_dim);
Var slice_cols(Var x, std::size_t start, std::size_t width);
Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
Var embedding(Var table, std::span<const int> ids);
// Mean over active rows of -log softmax(logits)[target].
Var cross_entropy(Var logits, std::span<const int> targets, std::span<const std::uint8_t> active);
// Copies the value into a fresh leaf with no gradient path.
Var detach(Var x);

// Pure kernels, shared with test oracles that want the same arithmetic.
Tensor matmul_kernel(const Tensor& a, const Tensor& b);
void rope_rotate(std::span<double> row, std::size_t position, std::size_t head_dim, bool inverse);

}  // namespace hdlm::num
