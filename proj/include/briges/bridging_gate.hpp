#pragma once

#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "briges/autodiff.hpp"
#include "briges/feature_alignment.hpp"
#include "briges/mlp.hpp"

namespace briges {

struct GateConfig {
  std::size_t channels = 16;   // C
  std::size_t proj_dim = 16;   // d
  std::size_t heads = 1;
  std::size_t mlp_ratio = 4;   // hidden width = mlp_ratio * C
  bool residual = false;
  // Uniform init bound is init_gain / sqrt(fan_in).
  double init_gain = 2.0;
};

/// Trainable weights of one Bridging Gate: Q/K/V projections (C x d) for
/// the cross block and the self block, plus one d -> C MLP per block.
struct GateParams {
  Tensor cross_q, cross_k, cross_v;
  Tensor self_q, self_k, self_v;
  MlpParams mlp_cross;
  MlpParams mlp_self;
  std::size_t heads = 1;
  bool residual = false;

  static GateParams zeros(const GateConfig& cfg);
  // Projections ~ U(-g/sqrt(C), g/sqrt(C)); MLP weights ~ U(-g/sqrt(fan_in), ..), g = init_gain.
  static GateParams init(const GateConfig& cfg, std::mt19937_64& rng);

  std::size_t channels() const noexcept { return cross_q.rows(); }
  std::size_t proj_dim() const noexcept { return cross_q.cols(); }

  void set_requires_grad(bool flag);

  // Visits every tensor with a stable name, in a fixed order.
  template <typename F>
  void for_each(F&& f) { visit(*this, f); }
  template <typename F>
  void for_each(F&& f) const { visit(*this, f); }

 private:
  template <typename Self, typename F>
  static void visit(Self& self, F& f) {
    f("cross.wq", self.cross_q);
    f("cross.wk", self.cross_k);
    f("cross.wv", self.cross_v);
    f("cross.mlp.w1", self.mlp_cross.w1);
    f("cross.mlp.b1", self.mlp_cross.b1);
    f("cross.mlp.w2", self.mlp_cross.w2);
    f("cross.mlp.b2", self.mlp_cross.b2);
    f("self.wq", self.self_q);
    f("self.wk", self.self_k);
    f("self.wv", self.self_v);
    f("self.mlp.w1", self.mlp_self.w1);
    f("self.mlp.b1", self.mlp_self.b1);
    f("self.mlp.w2", self.mlp_self.w2);
    f("self.mlp.b2", self.mlp_self.b2);
  }
};

enum class BlockKind { Cross, Self };
const char* block_name(BlockKind block);

/// Post-softmax attention weights of one block (one head), rows x keys.
struct AttentionRecord {
  Tensor weights;
  BlockKind block = BlockKind::Cross;
  std::size_t gate = 0;
  std::size_t head = 0;
};

struct GateVars {
  Var cross_q, cross_k, cross_v;
  Var self_q, self_k, self_v;
  MlpVars mlp_cross, mlp_self;
  std::size_t heads = 1;
  bool residual = false;
};

GateVars bind_params(Graph& graph, const GateParams& params, const std::string& prefix);

struct BlockOutput {
  Var features;
  std::vector<AttentionRecord> records;
};

// tau must be >= 1: 1 during training, > 1 for inference-time scaling.
BlockOutput cross_attention_block(Var depth, Var semantic, const GateVars& gate, double tau,
                                  std::size_t gate_index = 0);
BlockOutput self_attention_block(Var fused, const GateVars& gate, double tau, std::size_t gate_index = 0);
BlockOutput gate_forward(Var depth, Var semantic, const GateVars& gate, double tau,
                         std::size_t gate_index = 0);

struct GateResult {
  FeatureMap features;
  std::vector<AttentionRecord> records;
};

GateResult cross_attention_block(const FeatureMap& depth, const FeatureMap& semantic,
                                 const GateParams& params, double tau);
GateResult self_attention_block(const FeatureMap& fused, const GateParams& params, double tau);
GateResult gate_forward(const FeatureMap& depth, const FeatureMap& semantic, const GateParams& params,
                        double tau, std::size_t gate_index = 0);

/// Shannon entropy (nats) of each attention row.
std::vector<double> attention_entropy(const AttentionRecord& record);
double row_entropy(std::span<const double> weights);

}  // namespace briges
