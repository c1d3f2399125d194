#pragma once

#include <cstddef>
#include <functional>
#include <deque>
#include <map>
#include <string>
#include <vector>

#include "cazsl/tensor.hpp"

namespace cazsl::ad {

/// Named trainable tensors and their gradients. Twin branches of a Siamese
/// pair read the same store, which is what makes their weights shared.
class ParameterStore {
 public:
  void add(const std::string& name, Tensor value);
  bool contains(const std::string& name) const { return entries_.count(name) > 0; }

  const Tensor& value(const std::string& name) const;
  Tensor& value(const std::string& name);
  const Tensor& grad(const std::string& name) const;
  Tensor& grad(const std::string& name);

  std::vector<std::string> names() const;
  std::size_t size() const noexcept { return entries_.size(); }
  std::size_t parameter_count() const;

  /// True once a backward pass has written gradients.
  bool has_gradients() const noexcept { return has_gradients_; }
  void mark_gradients(bool v) noexcept { has_gradients_ = v; }

  friend bool operator==(const ParameterStore& a, const ParameterStore& b);

 private:
  struct Entry {
    Tensor value;
    Tensor grad;
  };
  std::map<std::string, Entry> entries_;
  bool has_gradients_ = false;
};

class Graph;

/// Handle to a node on a Graph tape.
class Var {
 public:
  Var() = default;
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  Graph& graph() const { return *graph_; }
  std::size_t id() const noexcept { return id_; }

 private:
  friend class Graph;
  Var(Graph* g, std::size_t id) : graph_(g), id_(id) {}
  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

/// Define-by-run tape. Nodes are appended in creation order, so walking the
/// tape backwards is a reverse topological order.
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, const Tensor& upstream)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor value);
  /// Leaf that receives a gradient but is not a stored parameter.
  Var variable(Tensor value);
  /// Leaf bound to a store entry. Repeated lookups return the same node.
  Var param(const ParameterStore& store, const std::string& name);

  Var record(Tensor value, const std::vector<Var>& parents, BackwardFn fn,
             const char* op);

  const Tensor& value(Var v) const { return nodes_[v.id()].value; }
  const Tensor& grad(Var v) const;
  bool requires_grad(Var v) const { return nodes_[v.id()].requires_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }
  /// Node introspection by tape position.
  const Tensor& value_at(std::size_t id) const { return nodes_.at(id).value; }
  const char* op_at(std::size_t id) const { return nodes_.at(id).op; }

  /// Adds `delta` into the gradient accumulator of `v`.
  void accumulate(Var v, const Tensor& delta);
  Tensor& grad_buffer(Var v);

  /// Reverse sweep from a scalar node. Accumulators are reset first.
  void backward(Var loss);

 private:
  friend void backward(Var loss, ParameterStore& store);

  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    bool grad_ready = false;
    BackwardFn fn;
    const char* op = "leaf";
  };
  std::deque<Node> nodes_;
  std::map<std::string, std::size_t> param_nodes_;
};

/// Runs the reverse sweep and writes d(loss)/d(theta) into every store
/// gradient. Parameters absent from the graph receive zeros.
void backward(Var loss, ParameterStore& store);

// ---- operations -----------------------------------------------------------

/// x[B x in] * w[in x out] + b[out]
Var linear(Var x, Var w, Var b);
/// x[B x in] * w[in x out], no bias.
Var linear(Var x, Var w);
Var relu(Var x);
Var sigmoid(Var x);
Var softplus(Var x);
Var scale(Var x, double s);
Var add_scalar(Var x, double s);
Var add(Var a, Var b);
Var sub(Var a, Var b);
/// Elementwise product. `b` may match `a` or be a per-feature vector
/// ([F] or [1 x F]) broadcast over the rows of a [B x F].
Var elementwise_mul(Var a, Var b);
Var square(Var x);
Var sum(Var x);
Var mean(Var x);
Var reshape(Var x, Shape shape);
Var concat_cols(Var a, Var b);
Var concat_rows(Var a, Var b);
Var slice_rows(Var x, std::size_t begin, std::size_t end);

/// Valid cross-correlation. x[B x Cin x H x W], k[Cout x Cin x KH x KW].
Var conv2d(Var x, Var k, std::size_t stride = 2);
/// Global spatial mean: [B x C x H x W] -> [B x C].
Var avg_pool(Var x);

/// sqrt(sum (a-b)^2) over the whole tensor -> [1]. Gradient at a == b is 0.
Var frobenius_distance(Var a, Var b);
/// Per-row Euclidean distance: [B x F], [B x F] -> [B].
Var row_distance(Var a, Var b);
/// Per-row inner product: [B x F], [B x F] -> [B].
Var row_dot(Var a, Var b);

/// Per-row Gaussian negative log-likelihood of y under N(mean, std^2),
/// summed over the output dimensions: [B x D] -> [B].
Var gaussian_nll(Var mean, Var std, const Tensor& y);

}  // namespace cazsl::ad
