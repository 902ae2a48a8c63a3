#pragma once

#include <cstddef>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "briges/tensor.hpp"

namespace briges {

/// Parameter name -> gradient, same shape as the parameter.
using Gradients = std::map<std::string, Tensor>;

enum class OpKind {
  Leaf,
  MatMul,
  Transpose,
  Add,
  Sub,
  Mul,
  Scale,
  AddBias,
  Gelu,
  SoftmaxRows,
  Abs,
  Sum,
  SubScalar,
  DivScalar,
  SparseRows,
};

const char* op_name(OpKind op);

class Graph;

/// Handle to a recorded node. Cheap to copy; valid while its Graph lives.
class Var {
 public:
  Var() = default;
  Var(Graph* graph, std::size_t id) : graph_(graph), id_(id) {}

  Graph* graph() const noexcept { return graph_; }
  std::size_t id() const noexcept { return id_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }

 private:
  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

/// Tape of recorded operations. Nodes are appended in execution order, so
/// every node's inputs precede it. One Graph belongs to one thread.
class Graph {
 public:
  struct Node {
    OpKind op = OpKind::Leaf;
    std::vector<std::size_t> inputs;
    Tensor value;
    double scalar = 0.0;  // Scale factor, softmax tau, or abs dead zone.
    std::shared_ptr<const SparseMatrix> sparse;
    std::optional<std::string> param;
    bool needs_grad = false;
  };

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  // Trainable when value.requires_grad(); names must be unique among
  // trainable leaves.
  Var parameter(std::string name, const Tensor& value);
  Var constant(Tensor value);

  Var record(OpKind op, std::vector<Var> inputs, double scalar = 0.0,
             std::shared_ptr<const SparseMatrix> sparse = nullptr);

  /// d output / d p for every trainable parameter reachable from output.
  Gradients backward(Var output) const;

  /// Recompute every non-leaf node from the recorded leaves.
  std::vector<Tensor> replay() const;

  std::size_t size() const noexcept { return nodes_.size(); }
  const Node& node(std::size_t id) const { return nodes_.at(id); }

 private:
  std::vector<Node> nodes_;
  std::map<std::string, std::size_t> params_;
};

// Differentiable operations. All inputs must belong to the same Graph.
Var matmul(Var a, Var b);
Var transpose(Var a);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
Var add_bias(Var x, Var bias);
Var gelu(Var x);
Var softmax_rows(Var x, double tau = 1.0);
// |x|; the derivative is zero where |x| <= dead_zone.
Var abs(Var x, double dead_zone = 0.0);
Var sum(Var x);
Var mean(Var x);
Var sub_scalar(Var x, Var s);
Var div_scalar(Var x, Var s);
Var sparse_rows(Var x, std::shared_ptr<const SparseMatrix> s);

// Plain forward kernels, shared by recording and replay.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor softmax_rows(const Tensor& x, double tau);
double gelu(double x);
double gelu_derivative(double x);

}  // namespace briges
