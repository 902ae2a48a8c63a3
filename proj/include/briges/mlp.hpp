#pragma once

#include <random>
#include <string>

#include "briges/autodiff.hpp"

namespace briges {

/// Two affine layers with GELU between them: in -> hidden -> out.
struct MlpParams {
  Tensor w1;  // in x hidden
  Tensor b1;  // hidden
  Tensor w2;  // hidden x out
  Tensor b2;  // out

  std::size_t in_width() const noexcept { return w1.rows(); }
  std::size_t hidden_width() const noexcept { return w1.cols(); }
  std::size_t out_width() const noexcept { return w2.cols(); }

  static MlpParams zeros(std::size_t in, std::size_t hidden, std::size_t out);
  // Weights ~ U(-gain/sqrt(fan_in), gain/sqrt(fan_in)), biases zero.
  static MlpParams uniform(std::size_t in, std::size_t hidden, std::size_t out, std::mt19937_64& rng,
                           double gain = 1.0);

  void set_requires_grad(bool flag);
};

struct MlpVars {
  Var w1, b1, w2, b2;
};

MlpVars bind_params(Graph& graph, const MlpParams& params, const std::string& prefix);

// GELU(x W1 + b1) W2 + b2.
Var mlp_forward(Var x, const MlpVars& mlp);
Tensor mlp_forward(const Tensor& x, const MlpParams& mlp);

Tensor uniform_tensor(Shape shape, double bound, std::mt19937_64& rng);

}  // namespace briges
