#ifndef FSDT_AUTOGRAD_HPP_
#define FSDT_AUTOGRAD_HPP_

#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "fsdt/tensor.hpp"

namespace fsdt {

/// A named trainable tensor. Frozen parameters still receive gradients from
/// the graph but every optimizer call leaves them untouched.
struct Parameter {
  std::string name;
  Tensor value;
  bool frozen = false;
};

/// Handle to a node of a Graph.
struct Var {
  static constexpr std::size_t kInvalid = std::numeric_limits<std::size_t>::max();
  std::size_t id = kInvalid;
  bool valid() const { return id != kInvalid; }
};

/// Reverse-mode tape. Nodes are appended in evaluation order, so the node
/// list is already a topological order and backward walks it in reverse.
///
/// A graph reads parameter values but never writes them; gradients live in
/// the graph. Several graphs may therefore read the same parameters from
/// different threads as long as nobody mutates them meanwhile.
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;
  Graph(Graph&&) = default;
  Graph& operator=(Graph&&) = default;

  /// Leaf that never receives a gradient.
  Var constant(Tensor value);
  /// Leaf that receives a gradient (e.g. activations arriving over the wire).
  Var input(Tensor value);
  /// Leaf bound to a parameter. Registering the same parameter twice returns
  /// the same node.
  Var parameter(const Parameter& p);

  Var matmul(Var a, Var b);
  Var add(Var a, Var b);
  /// x (m×n) + bias (n) broadcast over rows.
  Var add_bias(Var x, Var bias);
  Var mul(Var a, Var b);
  Var scale(Var x, double factor);
  Var sum(Var x);
  Var mean(Var x);
  Var layer_norm(Var x, Var gamma, Var beta, double eps);
  Var gelu(Var x);
  Var softmax(Var x);

  /// Multi-head causal self-attention on a packed batch.
  ///
  /// `qkv` is (batch·seq_len) × 3D with query, key and value blocks side by
  /// side. Query row i of a sequence attends to key rows j ≤ i whose
  /// `key_mask` entry is nonzero; every other logit is set to -inf before the
  /// softmax. A query with no admissible key yields a zero row.
  Var causal_attention(Var qkv, std::span<const std::uint8_t> key_mask, std::size_t n_heads,
                       std::size_t seq_len);

  /// out[r] = x[index[r]]
  Var gather_rows(Var x, std::vector<std::size_t> index);
  /// Interleaves three equally shaped R×D inputs into 3R×D, row 3r+j taken
  /// from input j.
  Var interleave3(Var a, Var b, Var c);
  /// Zeroes the rows whose `keep` entry is 0.
  Var mask_rows(Var x, std::vector<std::uint8_t> keep);

  /// Mean over rows of the diagonal-Gaussian negative log-likelihood of
  /// `target` under N(mu, exp(clamp(log_sigma, lo, hi))²).
  Var gaussian_nll(Var mu, Var log_sigma, Tensor target, double lo, double hi);

  const Tensor& value(Var v) const;
  /// Gradient of the last backward root w.r.t. `v` (zeros if none flowed).
  const Tensor& grad(Var v) const;
  /// Gradient for a registered parameter, or nullptr if it is not in the graph.
  const Tensor* parameter_grad(const Parameter& p) const;

  /// Backpropagates from a scalar root with seed 1.
  void backward(Var root);
  /// Backpropagates from `root` with an explicit upstream gradient.
  void backward(Var root, const Tensor& seed);

  bool backward_done() const { return backward_done_; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool needs_grad = false;
    bool has_grad = false;
    std::function<void(Graph&, std::size_t)> backward;
  };

  Var push(Tensor value, bool needs_grad, std::function<void(Graph&, std::size_t)> backward);
  const Node& node(Var v) const;
  bool needs(Var v) const { return nodes_[v.id].needs_grad; }
  /// Gradient slot of node `id`, zero-initialized on first touch.
  Tensor& grad_slot(std::size_t id);
  const Tensor& upstream(std::size_t id) const { return nodes_[id].grad; }

  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, std::size_t> params_;
  mutable std::unordered_map<std::size_t, Tensor> zero_cache_;
  bool backward_done_ = false;
};

}  // namespace fsdt

#endif  // FSDT_AUTOGRAD_HPP_
