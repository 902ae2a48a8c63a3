#include "briges/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "briges/bridging_gate.hpp"
#include "briges/errors.hpp"

namespace briges {

namespace {

struct Instance {
  GateParams params;
  Tensor depth;
  Tensor semantic;
  Tensor probe;  // loss = sum(out * probe)
  double tau = 1.0;
};

Instance make_instance(std::uint64_t seed, std::size_t k) {
  std::mt19937_64 rng(seed * 0x9e3779b97f4a7c15ULL + k);
  std::uniform_int_distribution<std::size_t> side(2, 4);
  std::normal_distribution<double> normal(0.0, 1.0);
  GateConfig cfg;
  cfg.channels = 4 + 2 * (k % 3);
  cfg.proj_dim = k % 2 == 0 ? 4 : 8;
  cfg.heads = k % 4 == 1 ? 2 : 1;
  cfg.residual = k % 5 == 4;
  cfg.init_gain = 1.5;
  Instance in;
  in.params = GateParams::init(cfg, rng);
  in.params.set_requires_grad(true);
  const std::size_t tokens = side(rng) * side(rng);
  auto fill = [&](Tensor t) {
    for (double& v : t.values()) v = normal(rng);
    return t;
  };
  in.depth = fill(Tensor({tokens, cfg.channels}));
  in.semantic = fill(Tensor({tokens, cfg.channels}));
  in.probe = fill(Tensor({tokens, cfg.channels}));
  in.tau = std::uniform_real_distribution<double>(1.0, 4.0)(rng);
  return in;
}

Var instance_loss(Graph& g, const Instance& in, const GateParams& params) {
  Var out = gate_forward(g.constant(in.depth), g.constant(in.semantic), bind_params(g, params, ""), in.tau).features;
  return sum(mul(out, g.constant(in.probe)));
}

double plain_loss(const Instance& in, const GateParams& params) {
  Graph g;
  return instance_loss(g, in, params).value()[0];
}

double norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

}  // namespace

GradcheckResult run_gradcheck(const GradcheckOptions& opts) {
  if (opts.instances == 0) throw ParameterError("gradcheck needs >= 1 instance");
  if (!(opts.step > 0.0)) throw ParameterError("gradcheck step must be > 0");
  GradcheckResult result;
  result.instances = opts.instances;
  for (std::size_t k = 0; k < opts.instances; ++k) {
    const Instance in = make_instance(opts.seed, k);
    Graph g;
    Gradients grads = g.backward(instance_loss(g, in, in.params));

    GateParams probe = in.params;
    probe.for_each([&](const char* name, Tensor& t) {
      Tensor analytic = grads.count(name) ? grads.at(name) : Tensor(t.shape());
      if (opts.fault && *opts.fault == name) {
        for (double& v : analytic.values()) v *= 2.0;
      }
      Tensor numeric(t.shape());
      for (std::size_t i = 0; i < t.size(); ++i) {
        const double saved = t[i];
        t[i] = saved + opts.step;
        const double up = plain_loss(in, probe);
        t[i] = saved - opts.step;
        const double down = plain_loss(in, probe);
        t[i] = saved;
        numeric[i] = (up - down) / (2.0 * opts.step);
      }
      std::vector<double> diff(t.size());
      for (std::size_t i = 0; i < t.size(); ++i) diff[i] = analytic[i] - numeric[i];
      const double err = norm(diff) / std::max({norm(analytic.values()), norm(numeric.values()), 1e-8});
      double& slot = result.per_param[name];
      slot = std::max(slot, err);
      if (err > result.worst_error || result.worst_param.empty()) {
        result.worst_error = err;
        result.worst_param = name;
        result.worst_instance = k;
      }
    });
  }
  return result;
}

}  // namespace briges
