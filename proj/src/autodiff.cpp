#include "briges/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "briges/errors.hpp"

namespace briges {

const char* op_name(OpKind op) {
  switch (op) {
    case OpKind::Leaf: return "leaf";
    case OpKind::MatMul: return "matmul";
    case OpKind::Transpose: return "transpose";
    case OpKind::Add: return "add";
    case OpKind::Sub: return "sub";
    case OpKind::Mul: return "mul";
    case OpKind::Scale: return "scale";
    case OpKind::AddBias: return "add_bias";
    case OpKind::Gelu: return "gelu";
    case OpKind::SoftmaxRows: return "softmax_rows";
    case OpKind::Abs: return "abs";
    case OpKind::Sum: return "sum";
    case OpKind::SubScalar: return "sub_scalar";
    case OpKind::DivScalar: return "div_scalar";
    case OpKind::SparseRows: return "sparse_rows";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// Forward kernels

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows()) {
    throw DimensionError("matmul: cannot multiply " + shape_string(a.shape()) + " by " +
                         shape_string(b.shape()));
  }
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  Tensor c({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = &c[i * n];
    for (std::size_t t = 0; t < k; ++t) {
      const double av = a[i * k + t];
      const double* bt = &b[t * n];
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bt[j];
    }
  }
  return c;
}

Tensor transpose(const Tensor& a) {
  if (a.rank() > 2) throw DimensionError("transpose: rank > 2 " + shape_string(a.shape()));
  const std::size_t m = a.rows(), n = a.cols();
  Tensor t({n, m});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) t[j * m + i] = a[i * n + j];
  }
  return t;
}

Tensor softmax_rows(const Tensor& x, double tau) {
  if (!(tau > 0.0) || !std::isfinite(tau)) {
    throw ParameterError("softmax_rows: tau must be positive and finite, got " + std::to_string(tau));
  }
  if (x.rank() != 2) throw DimensionError("softmax_rows expects a matrix, got " + shape_string(x.shape()));
  const std::size_t m = x.rows(), n = x.cols();
  Tensor y(x.shape());
  std::vector<double> z(n);
  for (std::size_t i = 0; i < m; ++i) {
    double zmax = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
      z[j] = x[i * n + j] / tau;
      zmax = std::max(zmax, z[j]);
    }
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      z[j] = std::exp(z[j] - zmax);
      total += z[j];
    }
    for (std::size_t j = 0; j < n; ++j) y[i * n + j] = z[j] / total;
  }
  return y;
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

double gelu_derivative(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

namespace {

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
}

void require_scalar(const char* op, const Tensor& s) {
  if (s.size() != 1) {
    throw DimensionError(std::string(op) + ": expected a single-element tensor, got " +
                         shape_string(s.shape()));
  }
}

template <typename F>
Tensor map(const Tensor& a, F f) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i]);
  return out;
}

template <typename F>
Tensor zip(const Tensor& a, const Tensor& b, F f) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i], b[i]);
  return out;
}

Tensor evaluate(const Graph::Node& node, const std::vector<const Tensor*>& in) {
  switch (node.op) {
    case OpKind::Leaf:
      return node.value;
    case OpKind::MatMul:
      return matmul(*in[0], *in[1]);
    case OpKind::Transpose:
      return transpose(*in[0]);
    case OpKind::Add:
      require_same_shape("add", *in[0], *in[1]);
      return zip(*in[0], *in[1], [](double a, double b) { return a + b; });
    case OpKind::Sub:
      require_same_shape("sub", *in[0], *in[1]);
      return zip(*in[0], *in[1], [](double a, double b) { return a - b; });
    case OpKind::Mul:
      require_same_shape("mul", *in[0], *in[1]);
      return zip(*in[0], *in[1], [](double a, double b) { return a * b; });
    case OpKind::Scale: {
      const double s = node.scalar;
      return map(*in[0], [s](double a) { return a * s; });
    }
    case OpKind::AddBias: {
      const Tensor& x = *in[0];
      const Tensor& b = *in[1];
      if (x.rank() != 2 || b.size() != x.cols()) {
        throw DimensionError("add_bias: bias " + shape_string(b.shape()) + " does not fit " +
                             shape_string(x.shape()));
      }
      Tensor out = x;
      const std::size_t n = x.cols();
      for (std::size_t i = 0; i < x.rows(); ++i) {
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] += b[j];
      }
      return out;
    }
    case OpKind::Gelu:
      return map(*in[0], [](double a) { return gelu(a); });
    case OpKind::SoftmaxRows:
      return softmax_rows(*in[0], node.scalar);
    case OpKind::Abs:
      return map(*in[0], [](double a) { return std::fabs(a); });
    case OpKind::Sum: {
      double total = 0.0;
      for (double v : in[0]->values()) total += v;
      return Tensor({1}, total);
    }
    case OpKind::SubScalar: {
      require_scalar("sub_scalar", *in[1]);
      const double s = (*in[1])[0];
      return map(*in[0], [s](double a) { return a - s; });
    }
    case OpKind::DivScalar: {
      require_scalar("div_scalar", *in[1]);
      const double s = (*in[1])[0];
      return map(*in[0], [s](double a) { return a / s; });
    }
    case OpKind::SparseRows:
      return apply(*node.sparse, *in[0]);
  }
  throw ContractError("unknown op");
}

Tensor& grad_slot(std::vector<std::optional<Tensor>>& grads, std::size_t id, const Shape& shape) {
  if (!grads[id]) grads[id].emplace(shape);
  return *grads[id];
}

}  // namespace

// ---------------------------------------------------------------------------
// Graph

const Tensor& Var::value() const {
  if (!graph_) throw ContractError("Var is not bound to a graph");
  return graph_->node(id_).value;
}

Var Graph::parameter(std::string name, const Tensor& value) {
  Node node;
  node.value = value;
  node.needs_grad = value.requires_grad();
  if (node.needs_grad) {
    if (params_.count(name)) throw ContractError("duplicate trainable parameter '" + name + "'");
    params_.emplace(name, nodes_.size());
  }
  node.param = std::move(name);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Graph::constant(Tensor value) {
  value.set_requires_grad(false);
  Node node;
  node.value = std::move(value);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Graph::record(OpKind op, std::vector<Var> inputs, double scalar,
                  std::shared_ptr<const SparseMatrix> sparse) {
  Node node;
  node.op = op;
  node.scalar = scalar;
  node.sparse = std::move(sparse);
  std::vector<const Tensor*> in;
  for (const Var& v : inputs) {
    if (v.graph() != this) throw ContractError(std::string(op_name(op)) + ": input from another graph");
    node.inputs.push_back(v.id());
    node.needs_grad = node.needs_grad || nodes_[v.id()].needs_grad;
    in.push_back(&nodes_[v.id()].value);
  }
  node.value = evaluate(node, in);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

std::vector<Tensor> Graph::replay() const {
  std::vector<Tensor> values;
  values.reserve(nodes_.size());
  for (const Node& node : nodes_) {
    std::vector<const Tensor*> in;
    for (std::size_t i : node.inputs) in.push_back(&values[i]);
    values.push_back(evaluate(node, in));
  }
  return values;
}

Gradients Graph::backward(Var output) const {
  if (output.graph() != this) throw ContractError("backward: output belongs to another graph");
  const Tensor& out = nodes_[output.id()].value;
  if (out.size() != 1) {
    throw ContractError("backward: output must be a scalar, got " + shape_string(out.shape()));
  }
  Gradients result;
  if (!nodes_[output.id()].needs_grad) return result;

  std::vector<std::optional<Tensor>> grads(output.id() + 1);
  grads[output.id()].emplace(out.shape(), 1.0);

  for (std::size_t id = output.id() + 1; id-- > 0;) {
    const Node& node = nodes_[id];
    if (!node.needs_grad || !grads[id]) continue;
    const Tensor& g = *grads[id];
    auto input = [&](std::size_t k) -> const Node& { return nodes_[node.inputs[k]]; };
    auto slot = [&](std::size_t k) -> Tensor* {
      const Node& n = input(k);
      return n.needs_grad ? &grad_slot(grads, node.inputs[k], n.value.shape()) : nullptr;
    };

    switch (node.op) {
      case OpKind::Leaf:
        break;
      case OpKind::MatMul: {
        const Tensor& a = input(0).value;
        const Tensor& b = input(1).value;
        const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
        if (Tensor* ga = slot(0)) {
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t t = 0; t < k; ++t) {
              double acc = 0.0;
              for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * b[t * n + j];
              (*ga)[i * k + t] += acc;
            }
          }
        }
        if (Tensor* gb = slot(1)) {
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t t = 0; t < k; ++t) {
              const double av = a[i * k + t];
              for (std::size_t j = 0; j < n; ++j) (*gb)[t * n + j] += av * g[i * n + j];
            }
          }
        }
        break;
      }
      case OpKind::Transpose:
        if (Tensor* ga = slot(0)) {
          const Tensor gt = transpose(g);
          for (std::size_t i = 0; i < gt.size(); ++i) (*ga)[i] += gt[i];
        }
        break;
      case OpKind::Add:
      case OpKind::Sub: {
        const double sign = node.op == OpKind::Add ? 1.0 : -1.0;
        if (Tensor* ga = slot(0)) {
          for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
        }
        if (Tensor* gb = slot(1)) {
          for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += sign * g[i];
        }
        break;
      }
      case OpKind::Mul: {
        const Tensor& a = input(0).value;
        const Tensor& b = input(1).value;
        if (Tensor* ga = slot(0)) {
          for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * b[i];
        }
        if (Tensor* gb = slot(1)) {
          for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i] * a[i];
        }
        break;
      }
      case OpKind::Scale:
        if (Tensor* ga = slot(0)) {
          for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += node.scalar * g[i];
        }
        break;
      case OpKind::AddBias: {
        if (Tensor* gx = slot(0)) {
          for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i];
        }
        if (Tensor* gb = slot(1)) {
          const std::size_t n = g.cols();
          for (std::size_t i = 0; i < g.rows(); ++i) {
            for (std::size_t j = 0; j < n; ++j) (*gb)[j] += g[i * n + j];
          }
        }
        break;
      }
      case OpKind::Gelu:
        if (Tensor* gx = slot(0)) {
          const Tensor& x = input(0).value;
          for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * gelu_derivative(x[i]);
        }
        break;
      case OpKind::SoftmaxRows:
        if (Tensor* gx = slot(0)) {
          const Tensor& y = node.value;
          const std::size_t m = y.rows(), n = y.cols();
          for (std::size_t i = 0; i < m; ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j < n; ++j) dot += g[i * n + j] * y[i * n + j];
            for (std::size_t j = 0; j < n; ++j) {
              (*gx)[i * n + j] += y[i * n + j] * (g[i * n + j] - dot) / node.scalar;
            }
          }
        }
        break;
      case OpKind::Abs:
        if (Tensor* gx = slot(0)) {
          const Tensor& x = input(0).value;
          for (std::size_t i = 0; i < g.size(); ++i) {
            if (x[i] > node.scalar) {
              (*gx)[i] += g[i];
            } else if (x[i] < -node.scalar) {
              (*gx)[i] -= g[i];
            }
          }
        }
        break;
      case OpKind::Sum:
        if (Tensor* gx = slot(0)) {
          for (double& v : gx->values()) v += g[0];
        }
        break;
      case OpKind::SubScalar: {
        if (Tensor* gx = slot(0)) {
          for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i];
        }
        if (Tensor* gs = slot(1)) {
          double total = 0.0;
          for (double v : g.values()) total += v;
          (*gs)[0] -= total;
        }
        break;
      }
      case OpKind::DivScalar: {
        const double s = input(1).value[0];
        if (Tensor* gx = slot(0)) {
          for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] / s;
        }
        if (Tensor* gs = slot(1)) {
          const Tensor& x = input(0).value;
          double total = 0.0;
          for (std::size_t i = 0; i < g.size(); ++i) total += g[i] * x[i];
          (*gs)[0] -= total / (s * s);
        }
        break;
      }
      case OpKind::SparseRows:
        if (Tensor* gx = slot(0)) {
          const SparseMatrix& s = *node.sparse;
          const std::size_t c = g.cols();
          for (std::size_t r = 0; r < s.rows; ++r) {
            for (std::size_t k = s.row_begin[r]; k < s.row_begin[r + 1]; ++k) {
              double* dst = &(*gx)[s.index[k] * c];
              for (std::size_t j = 0; j < c; ++j) dst[j] += s.weight[k] * g[r * c + j];
            }
          }
        }
        break;
    }
  }

  for (const auto& [name, id] : params_) {
    if (id < grads.size() && grads[id]) result.emplace(name, std::move(*grads[id]));
  }
  return result;
}

// ---------------------------------------------------------------------------
// Var operations

namespace {

Graph& graph_of(Var v) {
  if (!v.graph()) throw ContractError("operation on an unbound Var");
  return *v.graph();
}

}  // namespace

Var matmul(Var a, Var b) { return graph_of(a).record(OpKind::MatMul, {a, b}); }
Var transpose(Var a) { return graph_of(a).record(OpKind::Transpose, {a}); }
Var add(Var a, Var b) { return graph_of(a).record(OpKind::Add, {a, b}); }
Var sub(Var a, Var b) { return graph_of(a).record(OpKind::Sub, {a, b}); }
Var mul(Var a, Var b) { return graph_of(a).record(OpKind::Mul, {a, b}); }
Var scale(Var a, double factor) { return graph_of(a).record(OpKind::Scale, {a}, factor); }
Var add_bias(Var x, Var bias) { return graph_of(x).record(OpKind::AddBias, {x, bias}); }
Var gelu(Var x) { return graph_of(x).record(OpKind::Gelu, {x}); }
Var softmax_rows(Var x, double tau) { return graph_of(x).record(OpKind::SoftmaxRows, {x}, tau); }
Var abs(Var x, double dead_zone) { return graph_of(x).record(OpKind::Abs, {x}, dead_zone); }
Var sum(Var x) { return graph_of(x).record(OpKind::Sum, {x}); }
Var mean(Var x) { return scale(sum(x), 1.0 / static_cast<double>(x.value().size())); }
Var sub_scalar(Var x, Var s) { return graph_of(x).record(OpKind::SubScalar, {x, s}); }
Var div_scalar(Var x, Var s) { return graph_of(x).record(OpKind::DivScalar, {x, s}); }

Var sparse_rows(Var x, std::shared_ptr<const SparseMatrix> s) {
  if (!s) throw ContractError("sparse_rows: null operator");
  return graph_of(x).record(OpKind::SparseRows, {x}, 0.0, std::move(s));
}

}  // namespace briges
