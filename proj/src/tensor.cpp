#include "sesf/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace sesf {

namespace {
std::atomic<std::uint64_t> g_next_node_id{1};
thread_local bool g_grad_enabled = true;
}  // namespace

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
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

namespace detail {

std::vector<double>& BackwardCtx::grad_of(const NodePtr& node) {
  auto it = slots_.find(node.get());
  if (it == slots_.end()) {
    it = slots_.emplace(node.get(), std::vector<double>(node->values.size(), 0.0)).first;
  }
  return it->second;
}

void check_finite(const char* op, const std::vector<double>& values) {
  for (double v : values) {
    if (!std::isfinite(v)) {
      throw NumericFault(std::string("non-finite value produced by op '") + op + "'");
    }
  }
}

Tensor make_op_output(const char* op, Shape shape, std::vector<double> values,
                      std::vector<NodePtr> inputs, BackwardFn backward) {
  check_finite(op, values);
  auto node = std::make_shared<TensorNode>();
  node->shape = std::move(shape);
  if (shape_size(node->shape) != values.size()) {
    throw ContractViolation(std::string(op) + ": output buffer does not match shape " + shape_str(node->shape));
  }
  node->values = std::move(values);
  node->id = g_next_node_id.fetch_add(1);
  node->op = op;
  bool needs_grad = false;
  if (g_grad_enabled) {
    for (const auto& in : inputs) {
      if (in->requires_grad) needs_grad = true;
    }
  }
  if (needs_grad) {
    node->requires_grad = true;
    node->inputs = std::move(inputs);
    node->backward = std::move(backward);
  }
  return Tensor::wrap(std::move(node));
}

}  // namespace detail

Tensor Tensor::wrap(detail::NodePtr node) {
  Tensor t;
  t.node_ = std::move(node);
  return t;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  std::vector<double> v(shape_size(shape), 0.0);
  return from_values(std::move(shape), std::move(v), requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  std::vector<double> v(shape_size(shape), value);
  return from_values(std::move(shape), std::move(v), requires_grad);
}

Tensor Tensor::from_values(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape_size(shape) != values.size()) {
    throw ContractViolation("tensor creation: " + std::to_string(values.size()) +
                            " values do not fill shape " + shape_str(shape));
  }
  detail::check_finite("create", values);
  auto node = std::make_shared<detail::TensorNode>();
  node->shape = std::move(shape);
  node->values = std::move(values);
  node->requires_grad = requires_grad;
  node->id = g_next_node_id.fetch_add(1);
  return wrap(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from_values({1}, {value}, requires_grad);
}

Tensor Tensor::uniform(Shape shape, double bound, Rng& rng, bool requires_grad) {
  std::vector<double> v(shape_size(shape));
  for (double& x : v) x = rng.uniform(-bound, bound);
  return from_values(std::move(shape), std::move(v), requires_grad);
}

const Shape& Tensor::shape() const { return node_->shape; }
std::size_t Tensor::size() const { return node_->values.size(); }
bool Tensor::requires_grad() const { return node_->requires_grad; }
std::uint64_t Tensor::node_id() const { return node_->id; }
const char* Tensor::op_name() const { return node_->op; }

std::span<const double> Tensor::values() const { return node_->values; }
std::span<double> Tensor::values_mut() { return node_->values; }

double Tensor::item() const {
  if (size() != 1) {
    throw ContractViolation("item(): tensor of shape " + shape_str(shape()) + " is not scalar");
  }
  return node_->values[0];
}

std::span<const double> Tensor::grad() const { return node_->grad; }

std::span<double> Tensor::grad_mut() {
  if (node_->grad.empty()) node_->grad.assign(node_->values.size(), 0.0);
  return node_->grad;
}

bool Tensor::has_grad() const { return !node_->grad.empty(); }

void Tensor::zero_grad() {
  if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

Tensor Tensor::detached() const {
  return from_values(node_->shape, node_->values, false);
}

Tape::Tape(const Tensor& root) {
  if (!root.defined()) throw ContractViolation("backward: undefined root");
  if (root.size() != 1) {
    throw ContractViolation("backward: root must be scalar, got shape " + shape_str(root.shape()));
  }
  if (!root.requires_grad()) {
    throw ContractViolation("backward: root is detached from every parameter (empty gradient)");
  }
  root_ = root.node();
  std::unordered_set<const detail::TensorNode*> visited;
  std::vector<detail::NodePtr> stack{root_};
  while (!stack.empty()) {
    detail::NodePtr n = std::move(stack.back());
    stack.pop_back();
    if (!visited.insert(n.get()).second) continue;
    for (const auto& in : n->inputs) stack.push_back(in);
    if (n->backward) {
      ops_.push_back(std::move(n));
    } else if (n->requires_grad) {
      leaves_.push_back(std::move(n));
    }
  }
  // Node ids increase as ops execute, so ascending id is a topological order.
  std::sort(ops_.begin(), ops_.end(),
            [](const detail::NodePtr& a, const detail::NodePtr& b) { return a->id < b->id; });
}

void Tape::backward() {
  detail::BackwardCtx ctx;
  ctx.grad_of(root_)[0] = 1.0;
  for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) {
    const detail::NodePtr& node = *it;
    node->backward(ctx, ctx.grad_of(node));
  }
  for (const auto& leaf : leaves_) {
    const std::vector<double>& local = ctx.grad_of(leaf);
    if (leaf->grad.empty()) leaf->grad.assign(leaf->values.size(), 0.0);
    for (std::size_t i = 0; i < local.size(); ++i) leaf->grad[i] += local[i];
  }
}

void backward(const Tensor& root) { Tape(root).backward(); }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

}  // namespace sesf
