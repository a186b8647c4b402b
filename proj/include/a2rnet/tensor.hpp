#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "a2rnet/common.hpp"

namespace a2r {

class Tape;

// Dense row-major floating tensor. Copies are shallow: they share the value
// and gradient buffers. Values are treated as immutable once the tensor has
// been consumed by an operation; gradients accumulate in place.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, Scalar value, bool requires_grad = false);
  static Tensor from_values(Shape shape, std::vector<Scalar> values,
                            bool requires_grad = false);
  static Tensor scalar(Scalar value);

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int axis) const { return shape_[static_cast<std::size_t>(axis)]; }
  std::size_t size() const { return values_ ? values_->size() : 0; }
  bool empty() const { return size() == 0; }

  std::span<const Scalar> values() const { return {values_->data(), values_->size()}; }
  // Mutable access is for construction and optimizer updates; never mutate a
  // tensor that is already recorded on a live tape.
  std::span<Scalar> mutable_values() { return {values_->data(), values_->size()}; }

  // Scalar accessor; requires size() == 1.
  Scalar value() const;

  bool requires_grad() const { return requires_grad_; }
  // Turning the flag on allocates the gradient buffer immediately so that
  // shallow copies made afterwards share it; a lazily allocated buffer would
  // be invisible to copies taken before the allocation.
  void set_requires_grad(bool on) {
    requires_grad_ = on;
    if (on) ensure_grad_buffer();
  }
  bool has_grad() const { return grad_ != nullptr; }
  std::span<const Scalar> grad() const;
  void zero_grad();
  void clear_grad() { grad_.reset(); }

  // Shares the value buffer; drops gradient state and tape linkage.
  Tensor detached(bool requires_grad = false) const;
  // Deep copy of the values; no gradient state.
  Tensor clone() const;

  // Tape linkage (used by the operation kernels and backward()).
  const std::shared_ptr<std::vector<Scalar>>& values_ptr() const { return values_; }
  const std::shared_ptr<std::vector<Scalar>>& grad_ptr() const { return grad_; }
  std::shared_ptr<std::vector<Scalar>> ensure_grad_buffer() const;
  std::uint64_t tape_id() const { return tape_id_; }
  int node() const { return node_; }
  void bind_node(std::uint64_t tape_id, int node) const {
    tape_id_ = tape_id;
    node_ = node;
  }

 private:
  Shape shape_;
  std::shared_ptr<std::vector<Scalar>> values_;
  mutable std::shared_ptr<std::vector<Scalar>> grad_;
  bool requires_grad_ = false;
  // Cache of the most recent recording of this tensor. Tape ids are globally
  // unique, so a stale cache can never collide with a newer tape.
  mutable std::uint64_t tape_id_ = 0;
  mutable int node_ = -1;
};

// Recording tape for reverse-mode differentiation. Nodes are stored in
// creation order; backward() visits them in strict reverse order. A tape and
// the tensors recorded on it belong to one execution context at a time.
class Tape {
 public:
  class BackwardContext {
   public:
    BackwardContext(Tape& tape, std::vector<std::vector<Scalar>>& adjoints,
                    const Scalar* out_adjoint)
        : tape_(tape), adjoints_(adjoints), out_adjoint_(out_adjoint) {}
    const Scalar* out_adjoint() const { return out_adjoint_; }
    // Adjoint buffer of a parent node, zero-initialized on first access.
    Scalar* adjoint_of(int node);

   private:
    Tape& tape_;
    std::vector<std::vector<Scalar>>& adjoints_;
    const Scalar* out_adjoint_;
  };

  using Vjp = std::function<void(BackwardContext&)>;

  Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  std::uint64_t id() const { return id_; }
  std::size_t node_count() const { return nodes_.size(); }

  int record_leaf(std::size_t size, std::shared_ptr<std::vector<Scalar>> grad_sink);
  int record_op(std::size_t size, Vjp vjp);

  // Reverse accumulation from a scalar seed node. Leaf adjoints are added
  // into their gradient sinks; existing gradient content is kept.
  void run_backward(int seed_node);

  // Releases every node context; the tape restarts from an empty node list.
  void clear();

  static Tape* active();

 private:
  struct Node {
    std::size_t size = 0;
    Vjp vjp;                                          // null for leaves
    std::shared_ptr<std::vector<Scalar>> leaf_sink;   // null for ops
  };

  std::uint64_t id_;
  std::vector<Node> nodes_;
};

// Activates a tape on the current thread for the scope's lifetime.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

// Suppresses recording for the scope's lifetime (inference / finite
// difference evaluations).
class NoTapeScope {
 public:
  NoTapeScope();
  ~NoTapeScope();
  NoTapeScope(const NoTapeScope&) = delete;
  NoTapeScope& operator=(const NoTapeScope&) = delete;

 private:
  Tape* previous_;
};

// Reverse accumulation from a scalar loss recorded on the active tape.
// Gradients land in the grad buffer of every requires_grad leaf reachable
// from the loss, summed over all uses.
void backward(const Tensor& loss);

// Node id of `t` on `tape`, recording a leaf on first use. Returns -1 for
// tensors that do not participate in differentiation.
int node_for(const Tensor& t, Tape& tape);

// True when an op consuming `t` must record itself on the active tape.
bool tracked(const Tensor& t);

}  // namespace a2r
