#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "sesf/error.hpp"
#include "sesf/rng.hpp"

namespace sesf {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct TensorNode;
using NodePtr = std::shared_ptr<TensorNode>;

// Per-backward-pass scratch gradients, addressed by node. Leaf gradients are
// folded into the persistent grad buffers only at the end of a pass, so
// repeated backward calls accumulate cleanly. unordered_map keeps references
// stable while callbacks insert slots for their inputs.
class BackwardCtx {
 public:
  std::vector<double>& grad_of(const NodePtr& node);

 private:
  std::unordered_map<const TensorNode*, std::vector<double>> slots_;
};

using BackwardFn = std::function<void(BackwardCtx&, const std::vector<double>& out_grad)>;

struct TensorNode {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // persistent; empty until first accumulation
  bool requires_grad = false;
  std::uint64_t id = 0;
  const char* op = "leaf";
  std::vector<NodePtr> inputs;
  BackwardFn backward;  // null for leaves
};

}  // namespace detail

// Dense row-major 64-bit float tensor participating in reverse-mode
// differentiation. Copying a Tensor copies the handle, not the storage.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_values(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  // Uniform in [-bound, bound].
  static Tensor uniform(Shape shape, double bound, Rng& rng, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t size() const;
  std::size_t rank() const { return shape().size(); }
  bool requires_grad() const;
  std::uint64_t node_id() const;
  const char* op_name() const;

  std::span<const double> values() const;
  std::span<double> values_mut();
  double item() const;  // scalar tensors only

  std::span<const double> grad() const;  // empty when no gradient accumulated yet
  std::span<double> grad_mut();          // allocates zeros on first use
  bool has_grad() const;
  void zero_grad();

  // Drops the recorded inputs/backward rule, keeping values. Used to make
  // constants out of computed tensors.
  Tensor detached() const;

  detail::NodePtr node() const { return node_; }
  static Tensor wrap(detail::NodePtr node);

 private:
  detail::NodePtr node_;
};

// Recorded computation reaching one scalar root, in topological order.
// Rebuilt each forward pass (define-by-run).
class Tape {
 public:
  explicit Tape(const Tensor& root);

  // Seeds d(root)/d(root) = 1 and replays every recorded op backward once,
  // adding the resulting leaf gradients into the persistent grad buffers.
  void backward();

  std::size_t num_ops() const { return ops_.size(); }

 private:
  detail::NodePtr root_;
  std::vector<detail::NodePtr> ops_;     // non-leaf nodes, ascending id
  std::vector<detail::NodePtr> leaves_;  // parameters reachable from root
};

// Convenience wrapper: Tape(root).backward().
void backward(const Tensor& root);

// While alive, ops do not record backward rules even if inputs require
// gradients. Used for evaluation and benchmarking.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

namespace detail {
// Throws NumericFault naming `op` if any value is non-finite.
void check_finite(const char* op, const std::vector<double>& values);
Tensor make_op_output(const char* op, Shape shape, std::vector<double> values,
                      std::vector<NodePtr> inputs, BackwardFn backward);
}  // namespace detail

}  // namespace sesf
