#include "briges/bridging_gate.hpp"

#include <cmath>
#include <memory>

#include "briges/errors.hpp"

namespace briges {

const char* block_name(BlockKind block) { return block == BlockKind::Cross ? "cross" : "self"; }

GateParams GateParams::zeros(const GateConfig& cfg) {
  if (cfg.channels == 0 || cfg.proj_dim == 0 || cfg.heads == 0 || cfg.mlp_ratio == 0) {
    throw ParameterError("gate config: channels, proj_dim, heads and mlp_ratio must be >= 1");
  }
  if (cfg.proj_dim % cfg.heads != 0) {
    throw DimensionError("gate config: proj_dim " + std::to_string(cfg.proj_dim) +
                         " is not divisible by heads " + std::to_string(cfg.heads));
  }
  const std::size_t c = cfg.channels, d = cfg.proj_dim, hidden = cfg.mlp_ratio * cfg.channels;
  GateParams p;
  p.cross_q = p.cross_k = p.cross_v = Tensor({c, d});
  p.self_q = p.self_k = p.self_v = Tensor({c, d});
  p.mlp_cross = MlpParams::zeros(d, hidden, c);
  p.mlp_self = MlpParams::zeros(d, hidden, c);
  p.heads = cfg.heads;
  p.residual = cfg.residual;
  return p;
}

GateParams GateParams::init(const GateConfig& cfg, std::mt19937_64& rng) {
  GateParams p = zeros(cfg);
  const double bound = cfg.init_gain / std::sqrt(static_cast<double>(cfg.channels));
  for (Tensor* t : {&p.cross_q, &p.cross_k, &p.cross_v, &p.self_q, &p.self_k, &p.self_v}) {
    *t = uniform_tensor(t->shape(), bound, rng);
  }
  const std::size_t hidden = cfg.mlp_ratio * cfg.channels;
  p.mlp_cross = MlpParams::uniform(cfg.proj_dim, hidden, cfg.channels, rng, cfg.init_gain);
  p.mlp_self = MlpParams::uniform(cfg.proj_dim, hidden, cfg.channels, rng, cfg.init_gain);
  return p;
}

void GateParams::set_requires_grad(bool flag) {
  for_each([flag](const char*, Tensor& t) { t.set_requires_grad(flag); });
}

GateVars bind_params(Graph& graph, const GateParams& params, const std::string& prefix) {
  GateVars v;
  v.cross_q = graph.parameter(prefix + "cross.wq", params.cross_q);
  v.cross_k = graph.parameter(prefix + "cross.wk", params.cross_k);
  v.cross_v = graph.parameter(prefix + "cross.wv", params.cross_v);
  v.mlp_cross = bind_params(graph, params.mlp_cross, prefix + "cross.mlp");
  v.self_q = graph.parameter(prefix + "self.wq", params.self_q);
  v.self_k = graph.parameter(prefix + "self.wk", params.self_k);
  v.self_v = graph.parameter(prefix + "self.wv", params.self_v);
  v.mlp_self = bind_params(graph, params.mlp_self, prefix + "self.mlp");
  v.heads = params.heads;
  v.residual = params.residual;
  return v;
}

namespace {

void check_tau(double tau) {
  if (!(tau >= 1.0) || !std::isfinite(tau)) {
    throw ParameterError("attention temperature must be >= 1, got " + std::to_string(tau));
  }
}

// d x d_head column selector for one head.
Tensor head_selector(std::size_t d, std::size_t heads, std::size_t h) {
  const std::size_t dh = d / heads;
  Tensor s({d, dh});
  for (std::size_t j = 0; j < dh; ++j) s.at(h * dh + j, j) = 1.0;
  return s;
}

// softmax(q k^T / (tau sqrt(d_head))) v, heads concatenated along columns.
Var attend(Var q, Var k, Var v, std::size_t heads, double tau, BlockKind block, std::size_t gate,
           std::vector<AttentionRecord>& records) {
  Graph& g = *q.graph();
  const std::size_t d = q.value().cols();
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(d / heads));
  if (heads == 1) {
    Var weights = softmax_rows(scale(matmul(q, transpose(k)), inv_sqrt), tau);
    records.push_back({weights.value(), block, gate, 0});
    return matmul(weights, v);
  }
  Var out;
  for (std::size_t h = 0; h < heads; ++h) {
    const Tensor sel = head_selector(d, heads, h);
    Var s = g.constant(sel);
    Var weights = softmax_rows(scale(matmul(matmul(q, s), transpose(matmul(k, s))), inv_sqrt), tau);
    records.push_back({weights.value(), block, gate, h});
    Var part = matmul(matmul(weights, matmul(v, s)), g.constant(transpose(sel)));
    out = h == 0 ? part : add(out, part);
  }
  return out;
}

void check_width(const char* what, const Tensor& x, std::size_t channels) {
  if (x.rank() != 2 || x.cols() != channels) {
    throw DimensionError(std::string(what) + ": expected tokens x " + std::to_string(channels) +
                         ", got " + shape_string(x.shape()));
  }
}

}  // namespace

BlockOutput cross_attention_block(Var depth, Var semantic, const GateVars& gate, double tau,
                                  std::size_t gate_index) {
  check_tau(tau);
  const std::size_t c = gate.cross_q.value().rows();
  check_width("cross block depth feature", depth.value(), c);
  check_width("cross block semantic feature", semantic.value(), c);
  if (depth.value().rows() != semantic.value().rows()) {
    throw DimensionError("cross block: depth feature " + shape_string(depth.shape()) +
                         " and aligned semantic feature " + shape_string(semantic.shape()) +
                         " differ in token count");
  }
  BlockOutput out;
  Var q = matmul(depth, gate.cross_q);
  Var k = matmul(semantic, gate.cross_k);
  Var v = matmul(semantic, gate.cross_v);
  Var mixed = attend(q, k, v, gate.heads, tau, BlockKind::Cross, gate_index, out.records);
  out.features = mlp_forward(mixed, gate.mlp_cross);
  if (gate.residual) out.features = add(out.features, depth);
  return out;
}

BlockOutput self_attention_block(Var fused, const GateVars& gate, double tau, std::size_t gate_index) {
  check_tau(tau);
  check_width("self block input", fused.value(), gate.self_q.value().rows());
  BlockOutput out;
  Var q = matmul(fused, gate.self_q);
  Var k = matmul(fused, gate.self_k);
  Var v = matmul(fused, gate.self_v);
  Var mixed = attend(q, k, v, gate.heads, tau, BlockKind::Self, gate_index, out.records);
  out.features = mlp_forward(mixed, gate.mlp_self);
  if (gate.residual) out.features = add(out.features, fused);
  return out;
}

BlockOutput gate_forward(Var depth, Var semantic, const GateVars& gate, double tau, std::size_t gate_index) {
  BlockOutput cross = cross_attention_block(depth, semantic, gate, tau, gate_index);
  BlockOutput self = self_attention_block(cross.features, gate, tau, gate_index);
  cross.records.insert(cross.records.end(), self.records.begin(), self.records.end());
  return {self.features, std::move(cross.records)};
}

GateResult cross_attention_block(const FeatureMap& depth, const FeatureMap& semantic,
                                 const GateParams& params, double tau) {
  Graph g;
  BlockOutput out = cross_attention_block(g.constant(depth.data), g.constant(semantic.data),
                                          bind_params(g, params, ""), tau);
  return {FeatureMap(depth.height, depth.width, out.features.value()), std::move(out.records)};
}

GateResult self_attention_block(const FeatureMap& fused, const GateParams& params, double tau) {
  Graph g;
  BlockOutput out = self_attention_block(g.constant(fused.data), bind_params(g, params, ""), tau);
  return {FeatureMap(fused.height, fused.width, out.features.value()), std::move(out.records)};
}

GateResult gate_forward(const FeatureMap& depth, const FeatureMap& semantic, const GateParams& params,
                        double tau, std::size_t gate_index) {
  Graph g;
  BlockOutput out = gate_forward(g.constant(depth.data), g.constant(semantic.data), bind_params(g, params, ""),
                                 tau, gate_index);
  return {FeatureMap(depth.height, depth.width, out.features.value()), std::move(out.records)};
}

double row_entropy(std::span<const double> weights) {
  double h = 0.0;
  for (double w : weights) {
    if (w > 0.0) h -= w * std::log(w);
  }
  return h;
}

std::vector<double> attention_entropy(const AttentionRecord& record) {
  const Tensor& w = record.weights;
  std::vector<double> out(w.rows());
  for (std::size_t i = 0; i < w.rows(); ++i) {
    out[i] = row_entropy(w.values().subspan(i * w.cols(), w.cols()));
  }
  return out;
}

}  // namespace briges
