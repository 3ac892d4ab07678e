// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "moelab/errors.hpp"
#include "moelab/rng.hpp"

namespace moelab {

using Index = Eigen::Index;
using Shape = std::vector<Index>;
using Arr = Eigen::ArrayXd;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

std::string shape_str(const Shape& s);
Index shape_size(const Shape& s);

namespace detail {

/// One recorded operation (or leaf) on the differentiation graph.
/// Nodes are created in topological order; `seq` captures that order and
/// drives the reverse sweep. The graph is a DAG of shared_ptr parent links,
/// so intermediates are freed as soon as the last Tensor handle referencing
/// them goes away.
struct Node {
  Shape shape;
  Arr value;
  Arr grad;  // empty until the first accumulation
  bool requires_grad = false;
  bool leaf = false;
  std::uint64_t seq = 0;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backprop;

  Node();

  Index size() const { return value.size(); }
  /// 2-D interpretation: scalars are 1x1, rank-1 tensors are row vectors.
  Index rows2d() const;
  Index cols2d() const;
  void ensure_grad() {
    if (grad.size() == 0) grad = Arr::Zero(value.size());
  }
};

}  // namespace detail

/// Dense 64-bit-float tensor participating in a reverse-mode
/// differentiation graph. Value-semantics handle: copying a Tensor copies
/// the handle, not the buffer.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double v, bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);
  static Tensor from_vector(Shape shape, const std::vector<double>& data,
                            bool requires_grad = false);
  static Tensor from_array(Shape shape, Arr data, bool requires_grad = false);
  static Tensor from_matrix(const RowMat& m, bool requires_grad = false);
  static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0,
                      bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }

  const Shape& shape() const;
  int rank() const { return static_cast<int>(shape().size()); }
  Index size() const;
  Index dim(int i) const { return shape().at(static_cast<std::size_t>(i)); }
  Index rows() const { return node_->rows2d(); }
  Index cols() const { return node_->cols2d(); }

  bool requires_grad() const;
  const Tensor& set_requires_grad(bool v) const;

  /// Scalar read; throws ShapeError unless size() == 1.
  double value() const;
  double at(Index i) const { return node_->value[i]; }
  double at(Index r, Index c) const;

  const Arr& array() const { return node_->value; }
  ConstMatMap matrix() const;

  /// In-place access to a leaf's buffer (optimizer updates, checkpoint
  /// restore). Throws on non-leaf nodes: derived values are never mutated.
  Arr& leaf_array() const;

  bool has_grad() const;
  const Arr& grad() const;
  ConstMatMap grad_matrix() const;
  void zero_grad() const;

  const std::shared_ptr<detail::Node>& node() const { return node_; }
  static Tensor wrap(std::shared_ptr<detail::Node> n);

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Reverse sweep from a scalar loss. Every gradient-requiring node
/// reachable from `loss` is visited exactly once, in reverse recording
/// order, and every gradient-requiring leaf ends up holding dLoss/dLeaf.
/// Calling backward on a constant scalar is a no-op.
void backward(const Tensor& loss);

}  // namespace moelab
