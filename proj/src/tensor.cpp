#include "a2rnet/tensor.hpp"

#include <atomic>
#include <sstream>

namespace a2r {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (int e : shape) {
    if (e < 0) throw DimensionError("negative extent in shape " + shape_str(shape));
    n *= static_cast<std::size_t>(e);
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::vector<std::size_t> row_major_strides(const Shape& shape) {
  std::vector<std::size_t> strides(shape.size(), 1);
  for (int i = static_cast<int>(shape.size()) - 2; i >= 0; --i) {
    strides[i] = strides[i + 1] * static_cast<std::size_t>(shape[i + 1]);
  }
  return strides;
}

namespace macs {
namespace {
thread_local std::uint64_t counter = 0;
}
void reset() { counter = 0; }
std::uint64_t count() { return counter; }
void add(std::uint64_t n) { counter += n; }
}  // namespace macs

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  std::size_t n = numel(shape);
  Tensor t;
  t.shape_ = std::move(shape);
  t.values_ = std::make_shared<std::vector<Scalar>>(n, 0.0);
  t.set_requires_grad(requires_grad);
  return t;
}

Tensor Tensor::full(Shape shape, Scalar value, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  for (Scalar& v : *t.values_) v = value;
  return t;
}

Tensor Tensor::from_values(Shape shape, std::vector<Scalar> values, bool requires_grad) {
  if (numel(shape) != values.size()) {
    throw DimensionError("shape " + shape_str(shape) + " expects " +
                         std::to_string(numel(shape)) + " values, got " +
                         std::to_string(values.size()));
  }
  Tensor t;
  t.shape_ = std::move(shape);
  t.values_ = std::make_shared<std::vector<Scalar>>(std::move(values));
  t.set_requires_grad(requires_grad);
  return t;
}

Tensor Tensor::scalar(Scalar value) { return from_values({1}, {value}); }

Scalar Tensor::value() const {
  if (size() != 1) {
    throw ContractError("scalar accessor on tensor of shape " + shape_str(shape_));
  }
  return (*values_)[0];
}

std::span<const Scalar> Tensor::grad() const {
  if (!grad_) throw ContractError("gradient requested but no grad buffer present");
  return {grad_->data(), grad_->size()};
}

void Tensor::zero_grad() {
  if (!values_) return;
  if (!grad_) {
    grad_ = std::make_shared<std::vector<Scalar>>(values_->size(), 0.0);
  } else {
    std::fill(grad_->begin(), grad_->end(), 0.0);
  }
}

std::shared_ptr<std::vector<Scalar>> Tensor::ensure_grad_buffer() const {
  if (!grad_) grad_ = std::make_shared<std::vector<Scalar>>(values_->size(), 0.0);
  return grad_;
}

Tensor Tensor::detached(bool requires_grad) const {
  Tensor t;
  t.shape_ = shape_;
  t.values_ = values_;
  t.set_requires_grad(requires_grad);
  return t;
}

Tensor Tensor::clone() const {
  Tensor t;
  t.shape_ = shape_;
  if (values_) t.values_ = std::make_shared<std::vector<Scalar>>(*values_);
  return t;
}

namespace {
std::atomic<std::uint64_t> next_tape_id{1};
thread_local Tape* active_tape = nullptr;
}  // namespace

Tape::Tape() : id_(next_tape_id.fetch_add(1)) {}

Tape* Tape::active() { return active_tape; }

int Tape::record_leaf(std::size_t size, std::shared_ptr<std::vector<Scalar>> grad_sink) {
  Node n;
  n.size = size;
  n.leaf_sink = std::move(grad_sink);
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

int Tape::record_op(std::size_t size, Vjp vjp) {
  Node n;
  n.size = size;
  n.vjp = std::move(vjp);
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

Scalar* Tape::BackwardContext::adjoint_of(int node) {
  auto& buf = adjoints_[static_cast<std::size_t>(node)];
  if (buf.empty()) buf.assign(tape_.nodes_[static_cast<std::size_t>(node)].size, 0.0);
  return buf.data();
}

void Tape::run_backward(int seed_node) {
  if (seed_node < 0 || seed_node >= static_cast<int>(nodes_.size())) {
    throw ContractError("backward seed node is not on this tape");
  }
  if (nodes_[static_cast<std::size_t>(seed_node)].size != 1) {
    throw ContractError("backward requires a scalar seed");
  }
  std::vector<std::vector<Scalar>> adjoints(nodes_.size());
  adjoints[static_cast<std::size_t>(seed_node)].assign(1, 1.0);
  for (int i = seed_node; i >= 0; --i) {
    auto& adj = adjoints[static_cast<std::size_t>(i)];
    if (adj.empty()) continue;
    Node& node = nodes_[static_cast<std::size_t>(i)];
    if (node.leaf_sink) {
      auto& sink = *node.leaf_sink;
      for (std::size_t j = 0; j < sink.size(); ++j) sink[j] += adj[j];
    } else if (node.vjp) {
      BackwardContext ctx(*this, adjoints, adj.data());
      node.vjp(ctx);
    }
    adj.clear();
    adj.shrink_to_fit();
  }
}

void Tape::clear() { nodes_.clear(); }

TapeScope::TapeScope(Tape& tape) : previous_(active_tape) { active_tape = &tape; }
TapeScope::~TapeScope() { active_tape = previous_; }

NoTapeScope::NoTapeScope() : previous_(active_tape) { active_tape = nullptr; }
NoTapeScope::~NoTapeScope() { active_tape = previous_; }

int node_for(const Tensor& t, Tape& tape) {
  if (t.tape_id() == tape.id() && t.node() >= 0) return t.node();
  if (!t.requires_grad()) return -1;
  int node = tape.record_leaf(t.size(), t.ensure_grad_buffer());
  t.bind_node(tape.id(), node);
  return node;
}

bool tracked(const Tensor& t) {
  Tape* tape = Tape::active();
  if (!tape) return false;
  return t.requires_grad() || (t.tape_id() == tape->id() && t.node() >= 0);
}

void backward(const Tensor& loss) {
  if (loss.size() != 1) {
    throw ContractError("backward requires a scalar loss, got shape " +
                        shape_str(loss.shape()));
  }
  Tape* tape = Tape::active();
  if (!tape) throw ContractError("backward called without an active tape");
  if (loss.tape_id() != tape->id() || loss.node() < 0) {
    throw ContractError("loss is not recorded on the active tape");
  }
  tape->run_backward(loss.node());
}

}  // namespace a2r
