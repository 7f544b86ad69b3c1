#include "gat/tensor.hpp"

#include <algorithm>
#include <sstream>

#include "gat/error.hpp"

namespace gat {

namespace {
thread_local Tape* g_current_tape = nullptr;
}  // namespace

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor() : node_(std::make_shared<detail::Node>()) {
  node_->value.assign(1, 0.0);
}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad)
    : node_(std::make_shared<detail::Node>()) {
  if (shape.size() > 3) throw DimensionError("tensor rank exceeds 3: " + to_string(shape));
  if (numel(shape) != values.size()) {
    throw DimensionError("tensor of shape " + to_string(shape) + " given " +
                         std::to_string(values.size()) + " values");
  }
  node_->shape = std::move(shape);
  node_->value = std::move(values);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  auto n = numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::filled(Shape shape, double value) {
  auto n = numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::scalar(double value) { return Tensor({}, {value}); }

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  std::size_t r = rows.size();
  std::size_t c = r ? rows.begin()->size() : 0;
  std::vector<double> values;
  values.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw DimensionError("ragged matrix literal");
    values.insert(values.end(), row.begin(), row.end());
  }
  return Tensor({r, c}, std::move(values));
}

Tensor Tensor::vector(std::initializer_list<double> values) {
  return Tensor({values.size()}, std::vector<double>(values));
}

std::size_t Tensor::cols() const { return rank() == 0 ? 1 : node_->shape.back(); }

std::size_t Tensor::rows() const {
  std::size_t n = 1;
  for (std::size_t i = 0; i + 1 < rank(); ++i) n *= node_->shape[i];
  return n;
}

double Tensor::at(std::size_t r, std::size_t c) const {
  return node_->value[r * cols() + c];
}

double Tensor::at(std::size_t b, std::size_t r, std::size_t c) const {
  return node_->value[(b * dim(1) + r) * dim(2) + c];
}

double Tensor::item() const {
  if (size() != 1) throw DimensionError("item() on tensor of shape " + to_string(shape()));
  return node_->value[0];
}

std::vector<double> Tensor::grad() const {
  if (node_->grad.empty()) return std::vector<double>(size(), 0.0);
  return node_->grad;
}

std::span<double> Tensor::mutable_grad() {
  node_->ensure_grad();
  return node_->grad;
}

void Tensor::zero_grad() {
  if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

Tensor Tensor::detach() const { return clone(false); }

Tensor Tensor::clone(bool requires_grad) const {
  return Tensor(node_->shape, node_->value, requires_grad);
}

Tape* Tape::current() { return g_current_tape; }

void Tape::record(std::string_view name, std::vector<detail::NodePtr> inputs,
                  const detail::NodePtr& output, std::function<void(const Op&)> backward) {
  output->id = ops_.size();
  output->tape = this;
  output->requires_grad = true;
  ops_.push_back(Op{name, std::move(inputs), output, std::move(backward)});
}

void Tape::backward(const Tensor& loss) {
  if (loss.size() != 1) {
    throw DimensionError("backward requires a scalar loss, got shape " + to_string(loss.shape()));
  }
  const auto& root = loss.node();
  if (root->id == detail::kNoNode) {
    if (root->requires_grad) {
      root->ensure_grad();
      root->grad[0] += 1.0;
    }
    return;
  }
  if (root->tape != this) throw Error("backward called on a tape that did not record the loss");

  for (auto& op : ops_) op.output->grad.clear();
  root->ensure_grad();
  root->grad[0] = 1.0;
  for (std::size_t i = root->id + 1; i-- > 0;) {
    const Op& op = ops_[i];
    if (op.output->grad.empty()) continue;
    op.backward(op);
  }
}

TapeScope::TapeScope(Tape& tape) : previous_(g_current_tape) { g_current_tape = &tape; }
TapeScope::~TapeScope() { g_current_tape = previous_; }

NoGradScope::NoGradScope() : previous_(g_current_tape) { g_current_tape = nullptr; }
NoGradScope::~NoGradScope() { g_current_tape = previous_; }

}  // namespace gat
