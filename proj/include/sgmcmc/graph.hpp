#pragma once

#include <array>
#include <cstddef>
#include <functional>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sgmcmc/tensor.hpp"

namespace sgmcmc {

/// Extent marking the batch (observation) axis of a placeholder. It is only
/// resolved when data is fed, so a graph accepts minibatches of any size.
inline constexpr std::size_t kBatch = std::numeric_limits<std::size_t>::max();

enum class OpKind {
  constant,
  variable,
  placeholder,
  add,
  subtract,
  multiply,
  divide,
  negate,
  matmul,
  reduce_sum,
  exp,
  log,
  abs,
  square,
  sqrt,
  rsqrt,
  sigmoid,
  softmax,
  broadcast_add,
  reshape,
  normal,
  mvnormal_diag,
  laplace,
  gamma,
  categorical,
  mixture2,
};

std::string_view to_string(OpKind op);

/// Handle to a node inside the builder that created it.
struct NodeId {
  std::size_t index = 0;
};

/// Values supplied for placeholders and variables, by reference.
using Feed = std::map<std::string, std::reference_wrapper<const Tensor>, std::less<>>;

Feed make_feed(const TensorMap& tensors);

struct GradientResult {
  double value = 0.0;
  TensorMap gradients;
};

class Graph;

/// Declares nodes in topological order. Shapes are checked as nodes are
/// added; a bad shape throws ShapeError here rather than during evaluation.
class GraphBuilder {
 public:
  NodeId constant(Tensor value);
  NodeId constant(double value) { return constant(Tensor::scalar(value)); }
  NodeId variable(std::string name, Shape shape);
  /// Data feed whose first axis is the batch axis; `row_shape` is the shape
  /// of a single observation.
  NodeId placeholder(std::string name, Shape row_shape);
  /// Data feed with a fully fixed shape (no batch axis).
  NodeId fixed_placeholder(std::string name, Shape shape);

  NodeId add(NodeId a, NodeId b);
  NodeId subtract(NodeId a, NodeId b);
  NodeId multiply(NodeId a, NodeId b);
  NodeId divide(NodeId a, NodeId b);
  NodeId negate(NodeId a);
  NodeId matmul(NodeId a, NodeId b);
  NodeId reduce_sum(NodeId a);
  NodeId exp(NodeId a);
  NodeId log(NodeId a);
  NodeId abs(NodeId a);
  NodeId square(NodeId a);
  NodeId sqrt(NodeId a);
  NodeId rsqrt(NodeId a);
  NodeId sigmoid(NodeId a);
  /// Softmax over the last axis, computed with max subtraction.
  NodeId softmax(NodeId a);
  /// Adds vector `v` ([k]) to every row of matrix `m` ([rows,k]).
  NodeId broadcast_add(NodeId m, NodeId v);
  /// `shape` may start with kBatch when `a` is batched.
  NodeId reshape(NodeId a, Shape shape);

  NodeId normal(NodeId x, NodeId loc, NodeId scale);
  NodeId laplace(NodeId x, NodeId loc, NodeId scale);
  NodeId gamma(NodeId x, NodeId shape, NodeId rate);
  NodeId mvnormal_diag(NodeId x, NodeId mean, NodeId scale);
  NodeId categorical(NodeId labels, NodeId probs);
  NodeId mixture2(NodeId x, std::array<double, 2> weights, NodeId mean1,
                  NodeId scale1, NodeId mean2, NodeId scale2);

  /// Names a node so it can be requested from the built graph.
  void output(std::string name, NodeId node);

  const Shape& shape(NodeId node) const;

  Graph build() &&;

 private:
  NodeId push(OpKind op, std::vector<std::size_t> inputs, Shape shape);
  const Shape& in_shape(NodeId id) const;
  void check(NodeId id) const;

  friend class Graph;
  struct NodeData {
    OpKind op;
    std::vector<std::size_t> inputs;
    Shape shape;
    Tensor value;
    std::string name;
    std::array<double, 2> weights{};
    bool differentiable = false;
  };
  std::vector<NodeData> nodes_;
  std::map<std::string, std::size_t, std::less<>> leaves_;
  std::map<std::string, std::size_t, std::less<>> outputs_;
};

/// Immutable expression DAG. Evaluation is a pure function of the feed, so a
/// Graph may be shared between threads.
class Graph {
 public:
  /// Forward values of the named outputs.
  TensorMap eval(const Feed& feed, std::span<const std::string> outputs) const;
  TensorMap eval(const TensorMap& feed, std::span<const std::string> outputs) const;
  Tensor eval(const Feed& feed, std::string_view output) const;

  /// Reverse-mode gradient of a scalar output with respect to variables.
  GradientResult grad(std::string_view objective,
                      std::span<const std::string> wrt, const Feed& feed) const;
  GradientResult grad(std::string_view objective,
                      std::span<const std::string> wrt,
                      const TensorMap& feed) const;

  std::vector<std::string> variables() const;
  std::vector<std::string> placeholders() const;
  bool has_output(std::string_view name) const;
  const Shape& output_shape(std::string_view name) const;
  /// Declared shape of a variable or placeholder (placeholders carry kBatch).
  const Shape& leaf_shape(std::string_view name) const;
  std::size_t node_count() const noexcept { return nodes_.size(); }

 private:
  friend class GraphBuilder;
  using NodeData = GraphBuilder::NodeData;

  std::size_t output_index(std::string_view name) const;
  std::vector<char> needed_mask(std::span<const std::size_t> roots) const;
  std::vector<Tensor> forward(const Feed& feed, const std::vector<char>& needed) const;

  std::vector<NodeData> nodes_;
  std::map<std::string, std::size_t, std::less<>> leaves_;
  std::map<std::string, std::size_t, std::less<>> outputs_;
};

}  // namespace sgmcmc
