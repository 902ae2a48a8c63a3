#include "briges/mlp.hpp"

#include <cmath>

#include "briges/errors.hpp"

namespace briges {

Tensor uniform_tensor(Shape shape, double bound, std::mt19937_64& rng) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (double& v : t.values()) v = dist(rng);
  return t;
}

MlpParams MlpParams::zeros(std::size_t in, std::size_t hidden, std::size_t out) {
  return MlpParams{Tensor({in, hidden}), Tensor({hidden}), Tensor({hidden, out}), Tensor({out})};
}

MlpParams MlpParams::uniform(std::size_t in, std::size_t hidden, std::size_t out,
                             std::mt19937_64& rng, double gain) {
  MlpParams p = zeros(in, hidden, out);
  p.w1 = uniform_tensor({in, hidden}, gain / std::sqrt(static_cast<double>(in)), rng);
  p.w2 = uniform_tensor({hidden, out}, gain / std::sqrt(static_cast<double>(hidden)), rng);
  return p;
}

void MlpParams::set_requires_grad(bool flag) {
  for (Tensor* t : {&w1, &b1, &w2, &b2}) t->set_requires_grad(flag);
}

MlpVars bind_params(Graph& graph, const MlpParams& params, const std::string& prefix) {
  return MlpVars{graph.parameter(prefix + ".w1", params.w1), graph.parameter(prefix + ".b1", params.b1),
                 graph.parameter(prefix + ".w2", params.w2), graph.parameter(prefix + ".b2", params.b2)};
}

Var mlp_forward(Var x, const MlpVars& mlp) {
  const Tensor& w1 = mlp.w1.value();
  const Tensor& w2 = mlp.w2.value();
  if (x.value().rank() != 2 || x.value().cols() != w1.rows() || w1.cols() != w2.rows()) {
    throw DimensionError("mlp: input " + shape_string(x.shape()) + " does not chain through " +
                         shape_string(w1.shape()) + " -> " + shape_string(w2.shape()));
  }
  Var hidden = gelu(add_bias(matmul(x, mlp.w1), mlp.b1));
  return add_bias(matmul(hidden, mlp.w2), mlp.b2);
}

Tensor mlp_forward(const Tensor& x, const MlpParams& mlp) {
  Graph graph;
  return mlp_forward(graph.constant(x), bind_params(graph, mlp, "mlp")).value();
}

}  // namespace briges
