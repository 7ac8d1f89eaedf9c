#include "sgmcmc/graph.hpp"

#include <algorithm>
#include <cmath>
#include <optional>

#include "sgmcmc/distributions.hpp"
#include "sgmcmc/errors.hpp"

namespace sgmcmc {
namespace {

std::string shape_str(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ",";
    out += shape[i] == kBatch ? std::string("batch") : std::to_string(shape[i]);
  }
  return out + "]";
}

[[noreturn]] void shape_fail(OpKind op, const std::string& detail) {
  throw ShapeError(std::string(to_string(op)) + ": " + detail);
}

bool is_scalar_shape(const Shape& s) { return s.empty(); }

Shape elementwise_shape(OpKind op, const Shape& a, const Shape& b) {
  if (is_scalar_shape(a)) return b;
  if (is_scalar_shape(b)) return a;
  if (a != b) shape_fail(op, "operand shapes " + shape_str(a) + " and " + shape_str(b) + " differ");
  return a;
}

Shape per_row_shape(const Shape& x) {
  return x.empty() ? Shape{} : Shape{x[0]};
}

void check_param_like(OpKind op, const Shape& x, const Shape& p) {
  if (!is_scalar_shape(p) && p != x) {
    shape_fail(op, "parameter shape " + shape_str(p) + " must be scalar or " + shape_str(x));
  }
}

void check_last_axis_param(OpKind op, const Shape& x, const Shape& p) {
  if (x.empty() || x.size() > 2) shape_fail(op, "x must be [k] or [n,k], got " + shape_str(x));
  if (p.size() != 1 || p[0] != x.back() || p[0] == kBatch) {
    shape_fail(op, "parameter shape " + shape_str(p) + " must be [" +
                       std::to_string(x.back()) + "]");
  }
}

Shape last_axis_output(const Shape& x) {
  return x.size() == 1 ? Shape{} : Shape{x[0]};
}

inline double at(const Tensor& t, std::size_t i) { return t.is_scalar() ? t[0] : t[i]; }

/// Adds `g` into `acc`, reducing to a scalar when the target is a scalar.
void accumulate(Tensor& acc, const Tensor& g, const Shape& target) {
  if (acc.size() == 0 || acc.shape() != target) {
    acc = Tensor(target);
  }
  if (target.empty() && !g.is_scalar()) {
    double s = 0.0;
    for (double v : g.data()) s += v;
    acc[0] += s;
    return;
  }
  for (std::size_t i = 0; i < g.size(); ++i) acc[i] += g[i];
}

Tensor elementwise_binary(const Tensor& a, const Tensor& b, double (*fn)(double, double)) {
  const Tensor& shaped = a.is_scalar() ? b : a;
  if (!a.is_scalar() && !b.is_scalar() && a.shape() != b.shape()) {
    throw ShapeError("runtime operand shapes " + to_string(a.shape()) + " and " +
                     to_string(b.shape()) + " differ");
  }
  Tensor out(shaped.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fn(at(a, i), at(b, i));
  return out;
}

template <typename Fn>
Tensor elementwise_unary(const Tensor& a, Fn fn) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = fn(a[i]);
  return out;
}

Tensor matmul_values(const Tensor& a, const Tensor& b) {
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k) {
    throw ShapeError("matmul runtime shapes " + to_string(a.shape()) + " x " +
                     to_string(b.shape()));
  }
  Tensor out(Shape{m, n});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      if (av == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += av * b[p * n + j];
    }
  }
  return out;
}

Tensor softmax_values(const Tensor& a) {
  Tensor out(a.shape());
  const std::size_t k = a.shape().back();
  const std::size_t rows = a.size() / k;
  for (std::size_t r = 0; r < rows; ++r) {
    double m = -INFINITY;
    for (std::size_t j = 0; j < k; ++j) m = std::max(m, a[r * k + j]);
    double total = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      const double e = std::exp(a[r * k + j] - m);
      out[r * k + j] = e;
      total += e;
    }
    for (std::size_t j = 0; j < k; ++j) out[r * k + j] /= total;
  }
  return out;
}

}  // namespace

std::string_view to_string(OpKind op) {
  switch (op) {
    case OpKind::constant: return "constant";
    case OpKind::variable: return "variable";
    case OpKind::placeholder: return "placeholder";
    case OpKind::add: return "add";
    case OpKind::subtract: return "subtract";
    case OpKind::multiply: return "multiply";
    case OpKind::divide: return "divide";
    case OpKind::negate: return "negate";
    case OpKind::matmul: return "matmul";
    case OpKind::reduce_sum: return "reduce_sum";
    case OpKind::exp: return "exp";
    case OpKind::log: return "log";
    case OpKind::abs: return "abs";
    case OpKind::square: return "square";
    case OpKind::sqrt: return "sqrt";
    case OpKind::rsqrt: return "rsqrt";
    case OpKind::sigmoid: return "sigmoid";
    case OpKind::softmax: return "softmax";
    case OpKind::broadcast_add: return "broadcast_add";
    case OpKind::reshape: return "reshape";
    case OpKind::normal: return "logdensity_normal";
    case OpKind::mvnormal_diag: return "logdensity_mvnormal_diag";
    case OpKind::laplace: return "logdensity_laplace";
    case OpKind::gamma: return "logdensity_gamma";
    case OpKind::categorical: return "logdensity_categorical";
    case OpKind::mixture2: return "logdensity_mixture2";
  }
  return "unknown";
}

Feed make_feed(const TensorMap& tensors) {
  Feed feed;
  for (const auto& [name, t] : tensors) feed.emplace(name, std::cref(t));
  return feed;
}

// ---------------------------------------------------------------------------
// GraphBuilder

void GraphBuilder::check(NodeId id) const {
  if (id.index >= nodes_.size()) {
    throw ShapeError("node id " + std::to_string(id.index) + " does not belong to this builder");
  }
}

const Shape& GraphBuilder::in_shape(NodeId id) const {
  check(id);
  return nodes_[id.index].shape;
}

const Shape& GraphBuilder::shape(NodeId node) const { return in_shape(node); }

NodeId GraphBuilder::push(OpKind op, std::vector<std::size_t> inputs, Shape shape) {
  NodeData node{op, std::move(inputs), std::move(shape), Tensor(), {}, {}, false};
  node.differentiable = op == OpKind::variable;
  for (std::size_t in : node.inputs) node.differentiable |= nodes_[in].differentiable;
  nodes_.push_back(std::move(node));
  return NodeId{nodes_.size() - 1};
}

NodeId GraphBuilder::constant(Tensor value) {
  Shape shape = value.shape();
  NodeId id = push(OpKind::constant, {}, std::move(shape));
  nodes_[id.index].value = std::move(value);
  return id;
}

NodeId GraphBuilder::variable(std::string name, Shape shape) {
  if (std::find(shape.begin(), shape.end(), kBatch) != shape.end()) {
    throw ShapeError("variable '" + name + "' cannot have a batch axis");
  }
  if (leaves_.contains(name)) throw ShapeError("duplicate leaf name '" + name + "'");
  NodeId id = push(OpKind::variable, {}, std::move(shape));
  nodes_[id.index].name = name;
  leaves_.emplace(std::move(name), id.index);
  return id;
}

NodeId GraphBuilder::placeholder(std::string name, Shape row_shape) {
  if (leaves_.contains(name)) throw ShapeError("duplicate leaf name '" + name + "'");
  Shape shape{kBatch};
  shape.insert(shape.end(), row_shape.begin(), row_shape.end());
  NodeId id = push(OpKind::placeholder, {}, std::move(shape));
  nodes_[id.index].name = name;
  leaves_.emplace(std::move(name), id.index);
  return id;
}

NodeId GraphBuilder::fixed_placeholder(std::string name, Shape shape) {
  if (leaves_.contains(name)) throw ShapeError("duplicate leaf name '" + name + "'");
  NodeId id = push(OpKind::placeholder, {}, std::move(shape));
  nodes_[id.index].name = name;
  leaves_.emplace(std::move(name), id.index);
  return id;
}

NodeId GraphBuilder::add(NodeId a, NodeId b) {
  return push(OpKind::add, {a.index, b.index}, elementwise_shape(OpKind::add, in_shape(a), in_shape(b)));
}
NodeId GraphBuilder::subtract(NodeId a, NodeId b) {
  return push(OpKind::subtract, {a.index, b.index},
              elementwise_shape(OpKind::subtract, in_shape(a), in_shape(b)));
}
NodeId GraphBuilder::multiply(NodeId a, NodeId b) {
  return push(OpKind::multiply, {a.index, b.index},
              elementwise_shape(OpKind::multiply, in_shape(a), in_shape(b)));
}
NodeId GraphBuilder::divide(NodeId a, NodeId b) {
  return push(OpKind::divide, {a.index, b.index},
              elementwise_shape(OpKind::divide, in_shape(a), in_shape(b)));
}
NodeId GraphBuilder::negate(NodeId a) { return push(OpKind::negate, {a.index}, in_shape(a)); }
NodeId GraphBuilder::exp(NodeId a) { return push(OpKind::exp, {a.index}, in_shape(a)); }
NodeId GraphBuilder::log(NodeId a) { return push(OpKind::log, {a.index}, in_shape(a)); }
NodeId GraphBuilder::abs(NodeId a) { return push(OpKind::abs, {a.index}, in_shape(a)); }
NodeId GraphBuilder::square(NodeId a) { return push(OpKind::square, {a.index}, in_shape(a)); }
NodeId GraphBuilder::sqrt(NodeId a) { return push(OpKind::sqrt, {a.index}, in_shape(a)); }
NodeId GraphBuilder::rsqrt(NodeId a) { return push(OpKind::rsqrt, {a.index}, in_shape(a)); }
NodeId GraphBuilder::sigmoid(NodeId a) { return push(OpKind::sigmoid, {a.index}, in_shape(a)); }

NodeId GraphBuilder::matmul(NodeId a, NodeId b) {
  const Shape& sa = in_shape(a);
  const Shape& sb = in_shape(b);
  if (sa.size() != 2 || sb.size() != 2) {
    shape_fail(OpKind::matmul, "operands must be matrices, got " + shape_str(sa) + " and " + shape_str(sb));
  }
  if (sa[1] != sb[0] || sb[0] == kBatch) {
    shape_fail(OpKind::matmul, "inner extents of " + shape_str(sa) + " and " + shape_str(sb) + " differ");
  }
  return push(OpKind::matmul, {a.index, b.index}, Shape{sa[0], sb[1]});
}

NodeId GraphBuilder::reduce_sum(NodeId a) {
  in_shape(a);
  return push(OpKind::reduce_sum, {a.index}, Shape{});
}

NodeId GraphBuilder::softmax(NodeId a) {
  const Shape& s = in_shape(a);
  if (s.empty() || s.back() == kBatch) shape_fail(OpKind::softmax, "needs a fixed last axis, got " + shape_str(s));
  return push(OpKind::softmax, {a.index}, s);
}

NodeId GraphBuilder::broadcast_add(NodeId m, NodeId v) {
  const Shape& sm = in_shape(m);
  const Shape& sv = in_shape(v);
  if (sm.size() != 2 || sv.size() != 1 || sv[0] != sm[1]) {
    shape_fail(OpKind::broadcast_add, "cannot add " + shape_str(sv) + " onto rows of " + shape_str(sm));
  }
  return push(OpKind::broadcast_add, {m.index, v.index}, sm);
}

NodeId GraphBuilder::reshape(NodeId a, Shape shape) {
  const Shape& s = in_shape(a);
  const bool batched = !s.empty() && s[0] == kBatch;
  const bool target_batched = !shape.empty() && shape[0] == kBatch;
  if (batched != target_batched) {
    shape_fail(OpKind::reshape, "batch axis must stay leading: " + shape_str(s) + " -> " + shape_str(shape));
  }
  auto trailing = [](const Shape& x, bool skip_first) {
    std::size_t n = 1;
    for (std::size_t i = skip_first ? 1 : 0; i < x.size(); ++i) {
      if (x[i] == kBatch) throw ShapeError("reshape: batch axis only allowed first");
      n *= x[i];
    }
    return n;
  };
  if (trailing(s, batched) != trailing(shape, batched)) {
    shape_fail(OpKind::reshape, "element counts differ: " + shape_str(s) + " -> " + shape_str(shape));
  }
  NodeId id = push(OpKind::reshape, {a.index}, shape);
  return id;
}

NodeId GraphBuilder::normal(NodeId x, NodeId loc, NodeId scale) {
  const Shape& sx = in_shape(x);
  check_param_like(OpKind::normal, sx, in_shape(loc));
  check_param_like(OpKind::normal, sx, in_shape(scale));
  return push(OpKind::normal, {x.index, loc.index, scale.index}, per_row_shape(sx));
}

NodeId GraphBuilder::laplace(NodeId x, NodeId loc, NodeId scale) {
  const Shape& sx = in_shape(x);
  check_param_like(OpKind::laplace, sx, in_shape(loc));
  check_param_like(OpKind::laplace, sx, in_shape(scale));
  return push(OpKind::laplace, {x.index, loc.index, scale.index}, per_row_shape(sx));
}

NodeId GraphBuilder::gamma(NodeId x, NodeId shape, NodeId rate) {
  const Shape& sx = in_shape(x);
  check_param_like(OpKind::gamma, sx, in_shape(shape));
  check_param_like(OpKind::gamma, sx, in_shape(rate));
  return push(OpKind::gamma, {x.index, shape.index, rate.index}, per_row_shape(sx));
}

NodeId GraphBuilder::mvnormal_diag(NodeId x, NodeId mean, NodeId scale) {
  const Shape& sx = in_shape(x);
  check_last_axis_param(OpKind::mvnormal_diag, sx, in_shape(mean));
  check_last_axis_param(OpKind::mvnormal_diag, sx, in_shape(scale));
  return push(OpKind::mvnormal_diag, {x.index, mean.index, scale.index}, last_axis_output(sx));
}

NodeId GraphBuilder::categorical(NodeId labels, NodeId probs) {
  const Shape& sl = in_shape(labels);
  const Shape& sp = in_shape(probs);
  if (sl.empty() || sl.size() > 2 || sl != sp || sl.back() == kBatch) {
    shape_fail(OpKind::categorical, "labels " + shape_str(sl) + " and probs " + shape_str(sp) +
                                        " must share shape [K] or [n,K]");
  }
  return push(OpKind::categorical, {labels.index, probs.index}, last_axis_output(sl));
}

NodeId GraphBuilder::mixture2(NodeId x, std::array<double, 2> weights, NodeId mean1,
                              NodeId scale1, NodeId mean2, NodeId scale2) {
  const Shape& sx = in_shape(x);
  for (NodeId p : {mean1, scale1, mean2, scale2}) {
    check_last_axis_param(OpKind::mixture2, sx, in_shape(p));
  }
  if (weights[0] < 0.0 || weights[1] < 0.0 || std::abs(weights[0] + weights[1] - 1.0) > 1e-12) {
    throw DomainError("mixture weights must be non-negative and sum to 1");
  }
  NodeId id = push(OpKind::mixture2, {x.index, mean1.index, scale1.index, mean2.index, scale2.index},
                   last_axis_output(sx));
  nodes_[id.index].weights = weights;
  return id;
}

void GraphBuilder::output(std::string name, NodeId node) {
  check(node);
  if (outputs_.contains(name)) throw ShapeError("duplicate output name '" + name + "'");
  outputs_.emplace(std::move(name), node.index);
}

Graph GraphBuilder::build() && {
  Graph g;
  g.nodes_ = std::move(nodes_);
  g.leaves_ = std::move(leaves_);
  g.outputs_ = std::move(outputs_);
  return g;
}

// ---------------------------------------------------------------------------
// Graph

std::size_t Graph::output_index(std::string_view name) const {
  auto it = outputs_.find(name);
  if (it == outputs_.end()) throw UnknownVariable("no output named '" + std::string(name) + "'");
  return it->second;
}

bool Graph::has_output(std::string_view name) const { return outputs_.find(name) != outputs_.end(); }

const Shape& Graph::output_shape(std::string_view name) const { return nodes_[output_index(name)].shape; }

const Shape& Graph::leaf_shape(std::string_view name) const {
  auto it = leaves_.find(name);
  if (it == leaves_.end()) throw UnknownVariable("no variable or placeholder named '" + std::string(name) + "'");
  return nodes_[it->second].shape;
}

std::vector<std::string> Graph::variables() const {
  std::vector<std::string> out;
  for (const auto& [name, idx] : leaves_) {
    if (nodes_[idx].op == OpKind::variable) out.push_back(name);
  }
  return out;
}

std::vector<std::string> Graph::placeholders() const {
  std::vector<std::string> out;
  for (const auto& [name, idx] : leaves_) {
    if (nodes_[idx].op == OpKind::placeholder) out.push_back(name);
  }
  return out;
}

std::vector<char> Graph::needed_mask(std::span<const std::size_t> roots) const {
  std::vector<char> needed(nodes_.size(), 0);
  for (std::size_t r : roots) needed[r] = 1;
  for (std::size_t i = nodes_.size(); i-- > 0;) {
    if (!needed[i]) continue;
    for (std::size_t in : nodes_[i].inputs) needed[in] = 1;
  }
  return needed;
}

std::vector<Tensor> Graph::forward(const Feed& feed, const std::vector<char>& needed) const {
  std::vector<Tensor> values(nodes_.size());
  std::optional<std::size_t> batch;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (!needed[i]) continue;
    const NodeData& node = nodes_[i];
    auto in = [&](std::size_t k) -> const Tensor& { return values[node.inputs[k]]; };
    switch (node.op) {
      case OpKind::constant:
        values[i] = node.value;
        break;
      case OpKind::variable:
      case OpKind::placeholder: {
        auto it = feed.find(node.name);
        if (it == feed.end()) {
          throw MissingFeed("no value fed for " + std::string(to_string(node.op)) + " '" + node.name + "'");
        }
        const Tensor& t = it->second.get();
        const bool batched = !node.shape.empty() && node.shape[0] == kBatch;
        bool ok = t.rank() == node.shape.size();
        for (std::size_t d = batched ? 1 : 0; ok && d < node.shape.size(); ++d) ok = t.shape()[d] == node.shape[d];
        if (!ok) {
          throw ShapeError("'" + node.name + "' declared " + shape_str(node.shape) + " but fed " +
                           to_string(t.shape()));
        }
        if (batched) {
          if (batch && *batch != t.shape()[0]) {
            throw ShapeError("placeholder '" + node.name + "' fed " + std::to_string(t.shape()[0]) +
                             " rows, other feeds have " + std::to_string(*batch));
          }
          batch = t.shape()[0];
        }
        values[i] = t;
        break;
      }
      case OpKind::add:
        values[i] = elementwise_binary(in(0), in(1), [](double a, double b) { return a + b; });
        break;
      case OpKind::subtract:
        values[i] = elementwise_binary(in(0), in(1), [](double a, double b) { return a - b; });
        break;
      case OpKind::multiply:
        values[i] = elementwise_binary(in(0), in(1), [](double a, double b) { return a * b; });
        break;
      case OpKind::divide:
        values[i] = elementwise_binary(in(0), in(1), [](double a, double b) { return a / b; });
        break;
      case OpKind::negate:
        values[i] = elementwise_unary(in(0), [](double a) { return -a; });
        break;
      case OpKind::exp:
        values[i] = elementwise_unary(in(0), [](double a) { return std::exp(a); });
        break;
      case OpKind::log:
        values[i] = elementwise_unary(in(0), [](double a) { return std::log(a); });
        break;
      case OpKind::abs:
        values[i] = elementwise_unary(in(0), [](double a) { return std::abs(a); });
        break;
      case OpKind::square:
        values[i] = elementwise_unary(in(0), [](double a) { return a * a; });
        break;
      case OpKind::sqrt:
        values[i] = elementwise_unary(in(0), [](double a) { return std::sqrt(a); });
        break;
      case OpKind::rsqrt:
        values[i] = elementwise_unary(in(0), [](double a) { return 1.0 / std::sqrt(a); });
        break;
      case OpKind::sigmoid:
        values[i] = elementwise_unary(in(0), [](double a) {
          if (a >= 0.0) return 1.0 / (1.0 + std::exp(-a));
          const double e = std::exp(a);
          return e / (1.0 + e);
        });
        break;
      case OpKind::softmax:
        values[i] = softmax_values(in(0));
        break;
      case OpKind::matmul:
        values[i] = matmul_values(in(0), in(1));
        break;
      case OpKind::reduce_sum: {
        double s = 0.0;
        for (double v : in(0).data()) s += v;
        values[i] = Tensor::scalar(s);
        break;
      }
      case OpKind::broadcast_add: {
        Tensor out = in(0);
        const std::size_t k = in(1).size();
        for (std::size_t j = 0; j < out.size(); ++j) out[j] += in(1)[j % k];
        values[i] = std::move(out);
        break;
      }
      case OpKind::reshape: {
        Shape target = node.shape;
        if (!target.empty() && target[0] == kBatch) {
          std::size_t trailing = 1;
          for (std::size_t d = 1; d < target.size(); ++d) trailing *= target[d];
          target[0] = in(0).size() / trailing;
        }
        values[i] = in(0).reshaped(std::move(target));
        break;
      }
      case OpKind::normal:
        values[i] = density::normal(in(0), in(1), in(2));
        break;
      case OpKind::laplace:
        values[i] = density::laplace(in(0), in(1), in(2));
        break;
      case OpKind::gamma:
        values[i] = density::gamma(in(0), in(1), in(2));
        break;
      case OpKind::mvnormal_diag:
        values[i] = density::mvnormal_diag(in(0), in(1), in(2));
        break;
      case OpKind::categorical:
        values[i] = density::categorical(in(0), in(1));
        break;
      case OpKind::mixture2:
        values[i] = density::mixture2(in(0), node.weights, in(1), in(2), in(3), in(4));
        break;
    }
  }
  return values;
}

TensorMap Graph::eval(const Feed& feed, std::span<const std::string> outputs) const {
  std::vector<std::size_t> roots;
  roots.reserve(outputs.size());
  for (const auto& name : outputs) roots.push_back(output_index(name));
  const auto values = forward(feed, needed_mask(roots));
  TensorMap out;
  for (std::size_t k = 0; k < outputs.size(); ++k) out.insert_or_assign(outputs[k], values[roots[k]]);
  return out;
}

TensorMap Graph::eval(const TensorMap& feed, std::span<const std::string> outputs) const {
  return eval(make_feed(feed), outputs);
}

Tensor Graph::eval(const Feed& feed, std::string_view output) const {
  const std::size_t root = output_index(output);
  std::vector<std::size_t> roots{root};
  return forward(feed, needed_mask(roots))[root];
}

namespace {

// Backward rules for the three-parameter elementwise families.
template <typename Kernel>
void backward_family(const Tensor& g, const Tensor& x, const Tensor& a, const Tensor& b,
                     Kernel kernel, Tensor* dx, Tensor* da, Tensor* db) {
  const std::size_t stride = x.row_stride();
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const double gr = g[r];
    for (std::size_t j = 0; j < stride; ++j) {
      const std::size_t i = r * stride + j;
      density::Partials3 p;
      kernel(x[i], at(a, i), at(b, i), &p);
      if (dx) (*dx)[i] += gr * p.d_x;
      if (da) (*da)[a.is_scalar() ? 0 : i] += gr * p.d_a;
      if (db) (*db)[b.is_scalar() ? 0 : i] += gr * p.d_b;
    }
  }
}

}  // namespace

GradientResult Graph::grad(std::string_view objective, std::span<const std::string> wrt,
                           const Feed& feed) const {
  const std::size_t root = output_index(objective);
  if (!nodes_[root].shape.empty()) {
    throw ShapeError("objective '" + std::string(objective) + "' has shape " +
                     shape_str(nodes_[root].shape) + ", expected a scalar");
  }
  std::vector<std::size_t> wrt_nodes;
  for (const auto& name : wrt) {
    auto it = leaves_.find(name);
    if (it == leaves_.end() || nodes_[it->second].op != OpKind::variable) {
      throw UnknownVariable("'" + name + "' is not a variable of this graph");
    }
    wrt_nodes.push_back(it->second);
  }

  std::vector<std::size_t> roots{root};
  const auto needed = needed_mask(roots);
  const auto values = forward(feed, needed);

  std::vector<Tensor> adj(nodes_.size(), Tensor(Shape{0}));
  adj[root] = Tensor::scalar(1.0);

  auto grad_of = [&](std::size_t input) -> Tensor* {
    if (!nodes_[input].differentiable) return nullptr;
    Tensor& a = adj[input];
    if (a.shape() != values[input].shape()) a = Tensor(values[input].shape());
    return &a;
  };

  for (std::size_t i = root + 1; i-- > 0;) {
    const NodeData& node = nodes_[i];
    if (!needed[i] || !node.differentiable || node.inputs.empty()) continue;
    const Tensor& g = adj[i];
    if (g.size() == 0 && !g.is_scalar()) continue;
    const Tensor& out = values[i];
    auto in = [&](std::size_t k) -> const Tensor& { return values[node.inputs[k]]; };
    const std::size_t i0 = node.inputs[0];

    switch (node.op) {
      case OpKind::constant:
      case OpKind::variable:
      case OpKind::placeholder:
        break;
      case OpKind::add:
      case OpKind::subtract: {
        if (Tensor* da = grad_of(i0)) accumulate(*da, g, values[i0].shape());
        if (Tensor* db = grad_of(node.inputs[1])) {
          Tensor gb = g;
          if (node.op == OpKind::subtract) {
            for (double& v : gb.data()) v = -v;
          }
          accumulate(*db, gb, in(1).shape());
        }
        break;
      }
      case OpKind::multiply:
      case OpKind::divide: {
        const Tensor& a = in(0);
        const Tensor& b = in(1);
        const bool is_div = node.op == OpKind::divide;
        if (Tensor* da = grad_of(i0)) {
          Tensor t(g.shape());
          for (std::size_t j = 0; j < g.size(); ++j) t[j] = is_div ? g[j] / at(b, j) : g[j] * at(b, j);
          accumulate(*da, t, a.shape());
        }
        if (Tensor* db = grad_of(node.inputs[1])) {
          Tensor t(g.shape());
          for (std::size_t j = 0; j < g.size(); ++j) {
            const double bj = at(b, j);
            t[j] = is_div ? -g[j] * at(a, j) / (bj * bj) : g[j] * at(a, j);
          }
          accumulate(*db, t, b.shape());
        }
        break;
      }
      case OpKind::negate:
      case OpKind::exp:
      case OpKind::log:
      case OpKind::abs:
      case OpKind::square:
      case OpKind::sqrt:
      case OpKind::rsqrt:
      case OpKind::sigmoid: {
        Tensor* da = grad_of(i0);
        if (!da) break;
        const Tensor& x = in(0);
        for (std::size_t j = 0; j < g.size(); ++j) {
          double d = 0.0;
          switch (node.op) {
            case OpKind::negate: d = -1.0; break;
            case OpKind::exp: d = out[j]; break;
            case OpKind::log: d = 1.0 / x[j]; break;
            case OpKind::abs: d = x[j] > 0.0 ? 1.0 : (x[j] < 0.0 ? -1.0 : 0.0); break;
            case OpKind::square: d = 2.0 * x[j]; break;
            case OpKind::sqrt: d = 0.5 / out[j]; break;
            case OpKind::rsqrt: d = -0.5 * out[j] * out[j] * out[j]; break;
            case OpKind::sigmoid: d = out[j] * (1.0 - out[j]); break;
            default: break;
          }
          (*da)[j] += g[j] * d;
        }
        break;
      }
      case OpKind::softmax: {
        Tensor* da = grad_of(i0);
        if (!da) break;
        const std::size_t k = out.shape().back();
        const std::size_t rows = out.size() / k;
        for (std::size_t r = 0; r < rows; ++r) {
          double dot = 0.0;
          for (std::size_t j = 0; j < k; ++j) dot += g[r * k + j] * out[r * k + j];
          for (std::size_t j = 0; j < k; ++j) {
            (*da)[r * k + j] += out[r * k + j] * (g[r * k + j] - dot);
          }
        }
        break;
      }
      case OpKind::matmul: {
        const Tensor& a = in(0);
        const Tensor& b = in(1);
        const std::size_t m = a.shape()[0], kk = a.shape()[1], n = b.shape()[1];
        if (Tensor* da = grad_of(i0)) {
          for (std::size_t r = 0; r < m; ++r)
            for (std::size_t p = 0; p < kk; ++p) {
              double s = 0.0;
              for (std::size_t c = 0; c < n; ++c) s += g[r * n + c] * b[p * n + c];
              (*da)[r * kk + p] += s;
            }
        }
        if (Tensor* db = grad_of(node.inputs[1])) {
          for (std::size_t r = 0; r < m; ++r)
            for (std::size_t p = 0; p < kk; ++p) {
              const double av = a[r * kk + p];
              if (av == 0.0) continue;
              for (std::size_t c = 0; c < n; ++c) (*db)[p * n + c] += av * g[r * n + c];
            }
        }
        break;
      }
      case OpKind::reduce_sum: {
        if (Tensor* da = grad_of(i0)) {
          for (double& v : da->data()) v += g[0];
        }
        break;
      }
      case OpKind::broadcast_add: {
        if (Tensor* da = grad_of(i0)) accumulate(*da, g, in(0).shape());
        if (Tensor* dv = grad_of(node.inputs[1])) {
          const std::size_t k = in(1).size();
          for (std::size_t j = 0; j < g.size(); ++j) (*dv)[j % k] += g[j];
        }
        break;
      }
      case OpKind::reshape: {
        if (Tensor* da = grad_of(i0)) {
          for (std::size_t j = 0; j < g.size(); ++j) (*da)[j] += g[j];
        }
        break;
      }
      case OpKind::normal:
      case OpKind::laplace:
      case OpKind::gamma: {
        auto kernel = node.op == OpKind::normal    ? density::normal_kernel
                      : node.op == OpKind::laplace ? density::laplace_kernel
                                                   : density::gamma_kernel;
        backward_family(g, in(0), in(1), in(2), kernel, grad_of(i0), grad_of(node.inputs[1]),
                        grad_of(node.inputs[2]));
        break;
      }
      case OpKind::mvnormal_diag: {
        const Tensor& x = in(0);
        const Tensor& mean = in(1);
        const Tensor& scale = in(2);
        Tensor* dx = grad_of(i0);
        Tensor* dm = grad_of(node.inputs[1]);
        Tensor* ds = grad_of(node.inputs[2]);
        const std::size_t k = mean.size();
        const std::size_t rows = x.size() / k;
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t j = 0; j < k; ++j) {
            density::Partials3 p;
            density::normal_kernel(x[r * k + j], mean[j], scale[j], &p);
            if (dx) (*dx)[r * k + j] += g[r] * p.d_x;
            if (dm) (*dm)[j] += g[r] * p.d_a;
            if (ds) (*ds)[j] += g[r] * p.d_b;
          }
        }
        break;
      }
      case OpKind::categorical: {
        const Tensor& y = in(0);
        const Tensor& p = in(1);
        Tensor* dy = grad_of(i0);
        Tensor* dp = grad_of(node.inputs[1]);
        const std::size_t k = y.shape().back();
        const std::size_t rows = y.size() / k;
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t j = 0; j < k; ++j) {
            const std::size_t idx = r * k + j;
            if (dy) (*dy)[idx] += g[r] * std::log(p[idx]);
            if (dp && y[idx] != 0.0) (*dp)[idx] += g[r] * y[idx] / p[idx];
          }
        }
        break;
      }
      case OpKind::mixture2: {
        const Tensor& x = in(0);
        const Tensor* means[2] = {&in(1), &in(3)};
        const Tensor* scales[2] = {&in(2), &in(4)};
        Tensor* dx = grad_of(i0);
        Tensor* dm[2] = {grad_of(node.inputs[1]), grad_of(node.inputs[3])};
        Tensor* ds[2] = {grad_of(node.inputs[2]), grad_of(node.inputs[4])};
        const std::size_t k = means[0]->size();
        const std::size_t rows = x.size() / k;
        for (std::size_t r = 0; r < rows; ++r) {
          double l[2] = {0.0, 0.0};
          for (int c = 0; c < 2; ++c) {
            for (std::size_t j = 0; j < k; ++j) {
              l[c] += density::normal_kernel(x[r * k + j], (*means[c])[j], (*scales[c])[j], nullptr);
            }
          }
          for (int c = 0; c < 2; ++c) {
            if (node.weights[c] <= 0.0) continue;
            const double resp = std::exp(std::log(node.weights[c]) + l[c] - out[r]);
            const double gc = g[r] * resp;
            for (std::size_t j = 0; j < k; ++j) {
              density::Partials3 p;
              density::normal_kernel(x[r * k + j], (*means[c])[j], (*scales[c])[j], &p);
              if (dx) (*dx)[r * k + j] += gc * p.d_x;
              if (dm[c]) (*dm[c])[j] += gc * p.d_a;
              if (ds[c]) (*ds[c])[j] += gc * p.d_b;
            }
          }
        }
        break;
      }
    }
  }

  GradientResult result;
  result.value = values[root].item();
  for (std::size_t k = 0; k < wrt.size(); ++k) {
    const std::size_t node = wrt_nodes[k];
    if (needed[node] && adj[node].shape() == values[node].shape()) {
      result.gradients.insert_or_assign(wrt[k], adj[node]);
    } else {
      // The objective does not depend on this variable.
      result.gradients.insert_or_assign(wrt[k], Tensor(nodes_[node].shape));
    }
  }
  return result;
}

GradientResult Graph::grad(std::string_view objective, std::span<const std::string> wrt,
                           const TensorMap& feed) const {
  return grad(objective, wrt, make_feed(feed));
}

}  // namespace sgmcmc
