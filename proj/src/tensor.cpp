// SPDX-License-Identifier: Apache-2.0
#include "moelab/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <sstream>
#include <unordered_set>

namespace moelab {

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << "x";
    os << s[i];
  }
  os << "]";
  return os.str();
}

Index shape_size(const Shape& s) {
  Index n = 1;
  for (Index d : s) n *= d;
  return n;
}

namespace detail {

namespace {
std::atomic<std::uint64_t> g_seq{1};
}

Node::Node() : seq(g_seq.fetch_add(1, std::memory_order_relaxed)) {}

Index Node::rows2d() const {
  if (shape.size() >= 3) throw ShapeError("2-D view of rank-" + std::to_string(shape.size()) +
                                          " tensor " + shape_str(shape));
  if (shape.size() == 2) return shape[0];
  return 1;
}

Index Node::cols2d() const {
  if (shape.size() >= 3) throw ShapeError("2-D view of rank-" + std::to_string(shape.size()) +
                                          " tensor " + shape_str(shape));
  if (shape.size() == 2) return shape[1];
  if (shape.size() == 1) return shape[0];
  return 1;
}

}  // namespace detail

namespace {

Tensor make_leaf(Shape shape, Arr data, bool requires_grad) {
  if (shape_size(shape) != data.size())
    throw ShapeError("leaf data length " + std::to_string(data.size()) +
                     " does not match shape " + shape_str(shape));
  for (Index d : shape)
    if (d <= 0) throw ShapeError("non-positive dimension in shape " + shape_str(shape));
  auto n = std::make_shared<detail::Node>();
  n->shape = std::move(shape);
  n->value = std::move(data);
  n->requires_grad = requires_grad;
  n->leaf = true;
  return Tensor::wrap(std::move(n));
}

}  // namespace

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  Arr a = Arr::Zero(shape_size(shape));
  return make_leaf(std::move(shape), std::move(a), requires_grad);
}

Tensor Tensor::full(Shape shape, double v, bool requires_grad) {
  Arr a = Arr::Constant(shape_size(shape), v);
  return make_leaf(std::move(shape), std::move(a), requires_grad);
}

Tensor Tensor::scalar(double v, bool requires_grad) {
  return full({1}, v, requires_grad);
}

Tensor Tensor::from_vector(Shape shape, const std::vector<double>& data, bool requires_grad) {
  Arr a(static_cast<Index>(data.size()));
  for (Index i = 0; i < a.size(); ++i) a[i] = data[static_cast<std::size_t>(i)];
  return make_leaf(std::move(shape), std::move(a), requires_grad);
}

Tensor Tensor::from_array(Shape shape, Arr data, bool requires_grad) {
  return make_leaf(std::move(shape), std::move(data), requires_grad);
}

Tensor Tensor::from_matrix(const RowMat& m, bool requires_grad) {
  Arr a = Eigen::Map<const Arr>(m.data(), m.size());
  return make_leaf({m.rows(), m.cols()}, std::move(a), requires_grad);
}

Tensor Tensor::randn(Shape shape, Rng& rng, double stddev, bool requires_grad) {
  Arr a(shape_size(shape));
  for (Index i = 0; i < a.size(); ++i) a[i] = rng.normal(0.0, stddev);
  return make_leaf(std::move(shape), std::move(a), requires_grad);
}

const Shape& Tensor::shape() const { return node_->shape; }
Index Tensor::size() const { return node_->size(); }
bool Tensor::requires_grad() const { return node_->requires_grad; }

const Tensor& Tensor::set_requires_grad(bool v) const {
  if (!node_->leaf) throw std::logic_error("set_requires_grad: only leaves can be toggled");
  node_->requires_grad = v;
  return *this;
}

double Tensor::value() const {
  if (size() != 1) throw ShapeError("scalar read of tensor with shape " + shape_str(shape()));
  return node_->value[0];
}

double Tensor::at(Index r, Index c) const { return node_->value[r * cols() + c]; }

ConstMatMap Tensor::matrix() const {
  return ConstMatMap(node_->value.data(), rows(), cols());
}

Arr& Tensor::leaf_array() const {
  if (!node_->leaf) throw std::logic_error("leaf_array: in-place mutation of a derived value");
  return node_->value;
}

bool Tensor::has_grad() const { return node_ && node_->grad.size() > 0; }

const Arr& Tensor::grad() const {
  if (!has_grad()) throw std::logic_error("grad: no gradient recorded for this tensor");
  return node_->grad;
}

ConstMatMap Tensor::grad_matrix() const {
  return ConstMatMap(grad().data(), rows(), cols());
}

void Tensor::zero_grad() const { node_->grad.resize(0); }

Tensor Tensor::wrap(std::shared_ptr<detail::Node> n) {
  Tensor t;
  t.node_ = std::move(n);
  return t;
}

void backward(const Tensor& loss) {
  detail::Node* root = loss.node().get();
  if (root == nullptr) throw std::logic_error("backward: undefined tensor");
  if (root->size() != 1)
    throw ShapeError("backward: loss must be scalar, got shape " + shape_str(root->shape));
  if (!root->requires_grad) return;  // constant loss: nothing depends on a leaf

  // Reachable gradient-requiring subgraph, then reverse recording order.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<detail::Node*> stack{root};
  seen.insert(root);
  while (!stack.empty()) {
    detail::Node* n = stack.back();
    stack.pop_back();
    order.push_back(n);
    for (const auto& p : n->parents) {
      if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
    }
  }
  std::sort(order.begin(), order.end(),
            [](const detail::Node* a, const detail::Node* b) { return a->seq > b->seq; });

  root->ensure_grad();
  root->grad[0] = 1.0;
  for (detail::Node* n : order) {
    if (n->backprop && n->grad.size() > 0) n->backprop(*n);
  }
}

}  // namespace moelab
