#pragma once

#include <cstdint>
#include <functional>
#include <unordered_map>
#include <vector>

#include "peftkit/tensor.hpp"

namespace peftkit {

using NodeId = std::uint32_t;

// Reverse-mode tape. Nodes are appended in evaluation order, so the ids are
// already a topological order; backward() walks them in reverse. Values are
// computed eagerly at insertion.
class Graph {
public:
  enum class Op : std::uint8_t {
    leaf,
    matmul,
    add,
    add_n,
    subtract,
    hadamard,
    scale,
    add_bias,
    nonlin,
    transpose,
    slice_cols,
    concat_cols,
    take_row,
    as_row,
    as_vector,
    softmax_rows,
    layer_norm,
    embedding,
    sum_all,
    mean_all,
    cross_entropy,
    squared_error,
  };

  NodeId leaf(Tensor value, bool trainable = false);

  NodeId matmul(NodeId a, NodeId b);
  NodeId add(NodeId a, NodeId b);
  NodeId add_n(const std::vector<NodeId>& xs);
  NodeId subtract(NodeId a, NodeId b);
  NodeId hadamard(NodeId a, NodeId b);
  NodeId scale(NodeId x, double c);
  NodeId add_bias(NodeId x, NodeId bias);  // [m,n] + [n]
  NodeId nonlinearity(NodeId x, Nonlinearity f);
  NodeId transpose(NodeId x);
  NodeId slice_cols(NodeId x, std::size_t first, std::size_t count);
  NodeId concat_cols(const std::vector<NodeId>& xs);
  NodeId take_row(NodeId x, std::size_t row);      // [m,n] -> [1,n]
  NodeId as_row(NodeId x);                         // [n]   -> [1,n]
  NodeId as_vector(NodeId x);                      // [1,n] -> [n]
  NodeId softmax_rows(NodeId x);
  NodeId layer_norm(NodeId x, NodeId weight, NodeId bias, double eps = 1e-5);
  NodeId embedding(NodeId table, std::vector<std::size_t> ids);
  NodeId sum_all(NodeId x);
  NodeId mean_all(NodeId x);
  // softmax cross entropy of a [1,C] (or [C]) logit row against `label`
  NodeId cross_entropy(NodeId logits, std::size_t label);
  NodeId squared_error(NodeId pred, double target);  // (pred - target)^2, pred scalar

  const Tensor& value(NodeId id) const { return node(id).value; }
  bool trainable(NodeId id) const { return node(id).trainable; }
  std::size_t node_count() const { return nodes_.size(); }

  // Gradients of the scalar `loss` with respect to every trainable leaf.
  std::unordered_map<NodeId, Tensor> backward(NodeId loss) const;

private:
  struct Node {
    Op op;
    std::vector<NodeId> inputs;
    Tensor value;
    bool trainable = false;
    Nonlinearity f = Nonlinearity::identity;
    double attr = 0.0;            // scale factor / layer-norm eps / target
    std::size_t i0 = 0;           // slice start / row / label
    std::size_t i1 = 0;           // slice count
    std::vector<std::size_t> ids; // embedding lookups
  };

  const Node& node(NodeId id) const;
  NodeId push(Node n);

  std::vector<Node> nodes_;
};

// Central-difference gradient oracle:
//   g_i = (fn(p + step·e_i) - fn(p - step·e_i)) / (2·step)
Tensor finite_difference(const std::function<double(const Tensor&)>& fn, const Tensor& params,
                         double step);

}  // namespace peftkit
