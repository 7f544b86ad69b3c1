#pragma once

#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace gat {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

class Tape;

namespace detail {

inline constexpr std::size_t kNoNode = std::numeric_limits<std::size_t>::max();

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until a backward pass touches the node
  bool requires_grad = false;
  std::size_t id = kNoNode;  // position on the owning tape, kNoNode for leaves
  const Tape* tape = nullptr;

  void ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
  }
};

using NodePtr = std::shared_ptr<Node>;

}  // namespace detail

/// Dense row-major array of doubles with rank at most 3.
///
/// A Tensor is a cheap handle; copies share storage. Tensors created while a
/// Tape is active and derived from a tensor that requires gradients are
/// recorded on that tape. Tensors with no tape linkage are never mutated by
/// library code and may be shared between threads.
class Tensor {
 public:
  Tensor();
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor filled(Shape shape, double value);
  static Tensor scalar(double value);
  /// Row-major matrix from nested rows.
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor vector(std::initializer_list<double> values);

  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t size() const { return node_->value.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  /// Extent of the last axis (1 for scalars).
  std::size_t cols() const;
  /// Product of all axes but the last.
  std::size_t rows() const;

  std::span<const double> values() const { return node_->value; }
  /// In-place access for optimizers and perturbation. Mutating a tensor that
  /// has already been consumed by a recorded operation invalidates backward.
  std::span<double> mutable_values() { return node_->value; }

  double operator[](std::size_t i) const { return node_->value[i]; }
  double at(std::size_t r, std::size_t c) const;
  double at(std::size_t b, std::size_t r, std::size_t c) const;
  double item() const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool flag) { node_->requires_grad = flag; }
  bool has_grad() const { return !node_->grad.empty(); }
  /// Gradient buffer; all zeros if no backward pass reached this tensor.
  std::vector<double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  /// Copy of the values with no gradient and no tape linkage.
  Tensor detach() const;
  Tensor clone(bool requires_grad) const;

  bool is_leaf() const { return node_->id == detail::kNoNode; }
  std::size_t node_id() const { return node_->id; }
  const detail::NodePtr& node() const { return node_; }
  explicit Tensor(detail::NodePtr node) : node_(std::move(node)) {}

 private:
  detail::NodePtr node_;
};

/// Recorded operations of one forward pass, replayed in reverse by backward().
///
/// The tape is rebuilt for every forward pass. A tape must not be shared
/// between threads; the active tape is tracked per thread.
class Tape {
 public:
  struct Op {
    std::string_view name;
    std::vector<detail::NodePtr> inputs;
    detail::NodePtr output;
    std::function<void(const Op&)> backward;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Populate gradients of every requires-grad tensor reachable from `loss`.
  /// Leaf gradients accumulate; intermediate gradients are reset first.
  void backward(const Tensor& loss);

  std::size_t size() const { return ops_.size(); }
  const std::vector<Op>& ops() const { return ops_; }

  /// Tape receiving new operations on this thread, or nullptr.
  static Tape* current();

  /// Append an operation whose output has already been computed.
  void record(std::string_view name, std::vector<detail::NodePtr> inputs,
              const detail::NodePtr& output, std::function<void(const Op&)> backward);

 private:
  friend class TapeScope;
  std::vector<Op> ops_;
};

/// Makes a tape current for the lifetime of the scope. Scopes nest.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

/// Suspends recording on this thread; forward passes compute values only.
class NoGradScope {
 public:
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape* previous_;
};

}  // namespace gat
