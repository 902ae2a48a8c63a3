#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "briges/autodiff.hpp"
#include "briges/bridging_gate.hpp"
#include "briges/feature_alignment.hpp"
#include "briges/losses.hpp"
#include "briges/metrics.hpp"

namespace briges {

inline constexpr std::size_t kLevels = 4;

struct ModelConfig {
  GateConfig gate;
  std::array<Grid, kLevels> level_grids{{{8, 8}, {8, 8}, {8, 8}, {8, 8}}};
  Grid semantic_grid{16, 16};
  Grid output{32, 32};
  std::size_t latent_dim = 3;
  // Per-entry standard deviation of the stub encoder features.
  double feature_scale = 1.0;
  double tau_inference = 2.5;
  LossMode mode = LossMode::V2;
  LossOptions loss;
  // Seeds the frozen encoders, decoder and reference gates.
  std::uint64_t model_seed = 2024;

  void validate() const;
};

struct OptimConfig {
  double lr = 3e-3;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Frozen linear encoders: each feature map is basis * diag(z) * mixing for
/// a per-sample latent z, so depth and semantic features share structure.
struct StubEncoders {
  std::array<Tensor, kLevels> depth_basis;   // HW_i x L, smooth spatial patterns
  std::array<Tensor, kLevels> depth_mixing;  // L x C
  Tensor semantic_basis;
  Tensor semantic_mixing;
};

/// Frozen linear read-out: per level, channel reduction then bilinear upsampling.
struct StubDecoder {
  std::array<Tensor, kLevels> readout;  // C x 1
  std::array<std::shared_ptr<const SparseMatrix>, kLevels> upsample;
};

using GateSet = std::array<GateParams, kLevels>;

struct StubModel {
  ModelConfig cfg;
  StubEncoders encoders;
  StubDecoder decoder;
  GateSet gates;       // trainable
  GateSet reference;   // frozen; generates the synthetic targets
};

// Frozen parts and reference gates from cfg.model_seed; trainable gates from init_seed.
StubModel build_model(const ModelConfig& cfg, std::uint64_t init_seed);
GateSet init_gates(const ModelConfig& cfg, std::uint64_t seed, bool trainable);
GateSet trainable_copy(const GateSet& gates);

/// SHA-256 (hex) over encoder, decoder and reference-gate parameters.
std::string frozen_digest(const StubModel& model);

struct Features {
  std::array<FeatureMap, kLevels> depth;
  FeatureMap semantic;
};

std::vector<double> latent_vector(std::uint64_t sample_seed, std::size_t dim);
Features stub_encoders(std::uint64_t sample_seed, const StubModel& model);

Var stub_decoder(const std::array<Var, kLevels>& fused, const StubDecoder& decoder);
Tensor stub_decoder(const std::array<FeatureMap, kLevels>& fused, const StubDecoder& decoder);

struct ForwardResult {
  Tensor raster;  // H'W' x 1, row-major
  std::vector<AttentionRecord> records;
};

// Encoders -> shared aligned semantic feature -> four gates -> decoder.
Var forward_graph(Graph& graph, const Features& features, const StubModel& model, const GateSet& gates,
                  double tau, std::vector<AttentionRecord>* records = nullptr);
ForwardResult forward(std::uint64_t sample_seed, const StubModel& model, const GateSet& gates, double tau);
ForwardResult forward(std::uint64_t sample_seed, const StubModel& model, double tau);

struct Sample {
  std::uint64_t seed = 0;  // effective seed after any degenerate-target retry
  Features features;
  DisparityMap target;
};

// Target = min-max normalized decoder output of the reference gates at tau 1.
// A degenerate (constant) target is regenerated from a perturbed seed, up to 3 times.
Sample make_sample(std::uint64_t sample_seed, const StubModel& model);
DisparityMap make_target(std::uint64_t sample_seed, const StubModel& model);

struct OptimState {
  std::map<std::string, Tensor> first_moment;
  std::map<std::string, Tensor> second_moment;
  std::size_t step = 0;
  std::size_t horizon = 1;
  OptimConfig cfg;

  double current_lr() const;
};

using ParamRefs = std::map<std::string, Tensor*>;
ParamRefs gate_params(GateSet& gates);

/// Decoupled weight decay, then a bias-corrected Adam update at the linearly
/// decayed rate. Returns the learning rate used.
double adamw_step(const ParamRefs& params, const Gradients& grads, OptimState& state);

struct LossLogEntry {
  std::size_t step = 0;
  double lr = 0.0;
  double loss = 0.0;
};

struct TrainOptions {
  std::size_t steps = 500;
  std::size_t batch_size = 4;
  std::uint64_t run_seed = 1;
  OptimConfig optim;
  std::size_t threads = 0;  // 0 = sequential
  // Test hook: called with the batch gradients before the optimizer step.
  std::function<void(Gradients&)> inspect_gradients;
};

struct TrainResult {
  GateSet gates;
  std::vector<LossLogEntry> log;
  std::string digest_before;
  std::string digest_after;
};

struct BatchLoss {
  double loss = 0.0;
  Gradients grads;
};

// Mean combined loss over the samples and its gradient w.r.t. the gates, tau = 1.
BatchLoss batch_loss(const StubModel& model, const GateSet& gates, std::span<const std::uint64_t> seeds,
                     std::size_t threads = 0);

TrainResult train(const StubModel& model, const GateSet& initial, const TrainOptions& opts);
TrainResult train(const ModelConfig& cfg, std::uint64_t run_seed, std::size_t steps, std::size_t batch_size);

struct EvalResult {
  std::vector<MetricsReport> samples;
  MetricsReport aggregate;
};

// Synthetic ground-truth depth (1 + (1 - disparity)) and prediction depth proxy (-raster).
DepthMap target_depth(const DisparityMap& target);
DepthMap prediction_depth(const Tensor& raster, const DisparityMap& target);

MetricsReport evaluate_sample(std::uint64_t seed, const StubModel& model, const GateSet& gates, double tau);
EvalResult evaluate(const StubModel& model, const GateSet& gates, std::span<const std::uint64_t> seeds,
                    double tau, std::size_t threads = 0);
EvalResult evaluate(const StubModel& model, std::span<const std::uint64_t> seeds, double tau);

// Runs fn(i) for i in [0, n) on up to `threads` workers (0 = inline).
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn);

}  // namespace briges
