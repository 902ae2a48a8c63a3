#include "briges/pipeline.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numbers>
#include <random>
#include <thread>

#include "briges/errors.hpp"

namespace briges {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Independent stream per (seed, purpose).
std::mt19937_64 stream(std::uint64_t seed, std::uint64_t tag) {
  return std::mt19937_64(splitmix64(seed ^ splitmix64(tag)));
}

enum StreamTag : std::uint64_t {
  kEncoderTag = 1,
  kDecoderTag = 2,
  kReferenceTag = 3,
  kGateInitTag = 4,
  kLatentTag = 5,
  kBatchTag = 6,
  kRetryTag = 7,
};

double axis_coord(std::size_t i, std::size_t n) {
  return n > 1 ? static_cast<double>(i) / static_cast<double>(n - 1) : 0.0;
}

// Low-frequency cosine patterns, one column per latent dimension.
Tensor spatial_basis(Grid grid, std::size_t latent, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> freq(0.0, 2.0);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  std::vector<double> fy(latent), fx(latent), ph(latent);
  for (std::size_t l = 0; l < latent; ++l) {
    fy[l] = freq(rng);
    fx[l] = freq(rng);
    ph[l] = phase(rng);
  }
  Tensor basis({grid.tokens(), latent});
  for (std::size_t y = 0; y < grid.height; ++y) {
    for (std::size_t x = 0; x < grid.width; ++x) {
      const double u = axis_coord(y, grid.height), v = axis_coord(x, grid.width);
      for (std::size_t l = 0; l < latent; ++l) {
        basis.at(y * grid.width + x, l) = std::cos(std::numbers::pi * (fy[l] * u + fx[l] * v) + ph[l]);
      }
    }
  }
  return basis;
}

FeatureMap expand_latent(const Tensor& basis, const Tensor& mixing, std::span<const double> z, Grid grid) {
  Tensor scaled = basis;
  const std::size_t latent = z.size();
  for (std::size_t p = 0; p < scaled.rows(); ++p) {
    for (std::size_t l = 0; l < latent; ++l) scaled.at(p, l) *= z[l];
  }
  return FeatureMap(grid.height, grid.width, matmul(scaled, mixing));
}

void hash_tensor(EVP_MD_CTX* ctx, const Tensor& t) {
  for (std::size_t d : t.shape()) {
    const std::uint64_t dim = d;
    EVP_DigestUpdate(ctx, &dim, sizeof dim);
  }
  EVP_DigestUpdate(ctx, t.values().data(), t.size() * sizeof(double));
}

std::string gate_prefix(std::size_t level) { return "g" + std::to_string(level) + "."; }

}  // namespace

void ModelConfig::validate() const {
  if (gate.channels == 0) throw ParameterError("channels must be >= 1");
  if (gate.proj_dim == 0) throw ParameterError("proj_dim must be >= 1");
  if (gate.heads == 0 || gate.proj_dim % gate.heads != 0) {
    throw ParameterError("heads must divide proj_dim");
  }
  if (gate.mlp_ratio == 0) throw ParameterError("mlp_ratio must be >= 1");
  for (const Grid& g : level_grids) {
    if (g.height == 0 || g.width == 0) throw ParameterError("level grids must be at least 1x1");
  }
  if (semantic_grid.height == 0 || semantic_grid.width == 0) {
    throw ParameterError("semantic grid must be at least 1x1");
  }
  if (output.tokens() < 2) throw ParameterError("output raster needs >= 2 pixels");
  if (latent_dim == 0) throw ParameterError("latent_dim must be >= 1");
  if (!(tau_inference >= 1.0)) throw ParameterError("tau_inference must be >= 1");
  if (loss.gm_scales == 0) throw ParameterError("gm_scales must be >= 1");
}

GateSet init_gates(const ModelConfig& cfg, std::uint64_t seed, bool trainable) {
  auto rng = stream(seed, kGateInitTag);
  GateSet gates;
  for (GateParams& g : gates) {
    g = GateParams::init(cfg.gate, rng);
    g.set_requires_grad(trainable);
  }
  return gates;
}

GateSet trainable_copy(const GateSet& gates) {
  GateSet out = gates;
  for (GateParams& g : out) g.set_requires_grad(true);
  return out;
}

StubModel build_model(const ModelConfig& cfg, std::uint64_t init_seed) {
  cfg.validate();
  StubModel m;
  m.cfg = cfg;
  const std::size_t latent = cfg.latent_dim, c = cfg.gate.channels;
  // cos^2 averages 1/2 and z ~ N(0, 1), so U(-b, b) mixing with b = s sqrt(6 / L) gives unit-s features.
  const double mix_bound = cfg.feature_scale * std::sqrt(6.0 / static_cast<double>(latent));

  auto enc = stream(cfg.model_seed, kEncoderTag);
  for (std::size_t i = 0; i < kLevels; ++i) {
    m.encoders.depth_basis[i] = spatial_basis(cfg.level_grids[i], latent, enc);
    m.encoders.depth_mixing[i] = uniform_tensor({latent, c}, mix_bound, enc);
  }
  m.encoders.semantic_basis = spatial_basis(cfg.semantic_grid, latent, enc);
  m.encoders.semantic_mixing = uniform_tensor({latent, c}, mix_bound, enc);

  auto dec = stream(cfg.model_seed, kDecoderTag);
  for (std::size_t i = 0; i < kLevels; ++i) {
    m.decoder.readout[i] = uniform_tensor({c, 1}, 1.0 / std::sqrt(static_cast<double>(c)), dec);
    m.decoder.upsample[i] = std::make_shared<SparseMatrix>(bilinear_matrix(cfg.level_grids[i], cfg.output));
  }

  auto ref = stream(cfg.model_seed, kReferenceTag);
  for (GateParams& g : m.reference) {
    g = GateParams::init(cfg.gate, ref);
    g.set_requires_grad(false);
  }
  m.gates = init_gates(cfg, init_seed, true);
  return m;
}

std::string frozen_digest(const StubModel& model) {
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  for (std::size_t i = 0; i < kLevels; ++i) {
    hash_tensor(ctx, model.encoders.depth_basis[i]);
    hash_tensor(ctx, model.encoders.depth_mixing[i]);
  }
  hash_tensor(ctx, model.encoders.semantic_basis);
  hash_tensor(ctx, model.encoders.semantic_mixing);
  for (std::size_t i = 0; i < kLevels; ++i) {
    hash_tensor(ctx, model.decoder.readout[i]);
    const SparseMatrix& s = *model.decoder.upsample[i];
    EVP_DigestUpdate(ctx, s.weight.data(), s.weight.size() * sizeof(double));
  }
  for (const GateParams& g : model.reference) {
    g.for_each([ctx](const char*, const Tensor& t) { hash_tensor(ctx, t); });
  }
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, digest, &len);
  EVP_MD_CTX_free(ctx);
  static constexpr char kHex[] = "0123456789abcdef";
  std::string hex;
  for (unsigned int i = 0; i < len; ++i) {
    hex += kHex[digest[i] >> 4];
    hex += kHex[digest[i] & 0xf];
  }
  return hex;
}

std::vector<double> latent_vector(std::uint64_t sample_seed, std::size_t dim) {
  auto rng = stream(sample_seed, kLatentTag);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> z(dim);
  for (double& v : z) v = normal(rng);
  return z;
}

Features stub_encoders(std::uint64_t sample_seed, const StubModel& model) {
  const auto z = latent_vector(sample_seed, model.cfg.latent_dim);
  Features f;
  for (std::size_t i = 0; i < kLevels; ++i) {
    f.depth[i] = expand_latent(model.encoders.depth_basis[i], model.encoders.depth_mixing[i], z,
                               model.cfg.level_grids[i]);
  }
  f.semantic = expand_latent(model.encoders.semantic_basis, model.encoders.semantic_mixing, z,
                             model.cfg.semantic_grid);
  return f;
}

Var stub_decoder(const std::array<Var, kLevels>& fused, const StubDecoder& decoder) {
  Graph& g = *fused[0].graph();
  Var raster;
  for (std::size_t i = 0; i < kLevels; ++i) {
    Var level = sparse_rows(matmul(fused[i], g.constant(decoder.readout[i])), decoder.upsample[i]);
    raster = i == 0 ? level : add(raster, level);
  }
  return raster;
}

Tensor stub_decoder(const std::array<FeatureMap, kLevels>& fused, const StubDecoder& decoder) {
  Graph g;
  std::array<Var, kLevels> vars;
  for (std::size_t i = 0; i < kLevels; ++i) vars[i] = g.constant(fused[i].data);
  return stub_decoder(vars, decoder).value();
}

Var forward_graph(Graph& graph, const Features& features, const StubModel& model, const GateSet& gates,
                  double tau, std::vector<AttentionRecord>* records) {
  // One aligned semantic feature per distinct grid, shared by every gate on it.
  std::vector<std::pair<Grid, Var>> aligned;
  auto aligned_for = [&](Grid grid) {
    for (const auto& [g, v] : aligned) {
      if (g == grid) return v;
    }
    aligned.emplace_back(grid, graph.constant(align_semantic(features.semantic, grid).data));
    return aligned.back().second;
  };
  std::array<Var, kLevels> fused;
  for (std::size_t i = 0; i < kLevels; ++i) {
    Var depth = graph.constant(features.depth[i].data);
    BlockOutput out = gate_forward(depth, aligned_for(model.cfg.level_grids[i]),
                                   bind_params(graph, gates[i], gate_prefix(i)), tau, i);
    fused[i] = out.features;
    if (records) records->insert(records->end(), out.records.begin(), out.records.end());
  }
  return stub_decoder(fused, model.decoder);
}

ForwardResult forward(std::uint64_t sample_seed, const StubModel& model, const GateSet& gates, double tau) {
  const Features features = stub_encoders(sample_seed, model);
  Graph g;
  ForwardResult out;
  out.raster = forward_graph(g, features, model, gates, tau, &out.records).value();
  return out;
}

ForwardResult forward(std::uint64_t sample_seed, const StubModel& model, double tau) {
  return forward(sample_seed, model, model.gates, tau);
}

namespace {

DisparityMap normalize_raster(const Tensor& raster, Grid grid) {
  const auto [lo, hi] = std::minmax_element(raster.values().begin(), raster.values().end());
  if (!(*hi > *lo)) throw DegenerateInputError("synthetic target is constant");
  std::vector<double> values(raster.size());
  for (std::size_t i = 0; i < values.size(); ++i) values[i] = (raster[i] - *lo) / (*hi - *lo);
  return DisparityMap(grid.height, grid.width, std::move(values));
}

}  // namespace

Sample make_sample(std::uint64_t sample_seed, const StubModel& model) {
  std::uint64_t seed = sample_seed;
  for (int attempt = 0;; ++attempt) {
    Sample s;
    s.seed = seed;
    s.features = stub_encoders(seed, model);
    Graph g;
    const Tensor raw = forward_graph(g, s.features, model, model.reference, 1.0).value();
    try {
      s.target = normalize_raster(raw, model.cfg.output);
      return s;
    } catch (const DegenerateInputError&) {
      if (attempt == 3) throw;
      seed = splitmix64(seed ^ kRetryTag);
    }
  }
}

DisparityMap make_target(std::uint64_t sample_seed, const StubModel& model) {
  return make_sample(sample_seed, model).target;
}

// ---------------------------------------------------------------------------
// Optimization

double OptimState::current_lr() const {
  const double frac = static_cast<double>(step) / static_cast<double>(std::max<std::size_t>(horizon, 1));
  return cfg.lr * std::max(0.0, 1.0 - frac);
}

ParamRefs gate_params(GateSet& gates) {
  ParamRefs refs;
  for (std::size_t i = 0; i < kLevels; ++i) {
    gates[i].for_each([&](const char* name, Tensor& t) { refs.emplace(gate_prefix(i) + name, &t); });
  }
  return refs;
}

double adamw_step(const ParamRefs& params, const Gradients& grads, OptimState& state) {
  if (grads.size() != params.size()) {
    throw ContractError("adamw: " + std::to_string(grads.size()) + " gradients for " +
                        std::to_string(params.size()) + " parameters");
  }
  for (const auto& [name, p] : params) {
    auto it = grads.find(name);
    if (it == grads.end()) throw ContractError("adamw: missing gradient for '" + name + "'");
    if (!it->second.same_shape(*p)) {
      throw ContractError("adamw: gradient shape " + shape_string(it->second.shape()) + " for '" + name +
                          "' of shape " + shape_string(p->shape()));
    }
  }
  const double lr = state.current_lr();
  const OptimConfig& c = state.cfg;
  const double t = static_cast<double>(state.step + 1);
  const double correct1 = 1.0 - std::pow(c.beta1, t);
  const double correct2 = 1.0 - std::pow(c.beta2, t);
  for (const auto& [name, p] : params) {
    const Tensor& g = grads.at(name);
    auto [m_it, m_new] = state.first_moment.try_emplace(name, p->shape());
    auto [v_it, v_new] = state.second_moment.try_emplace(name, p->shape());
    Tensor& m = m_it->second;
    Tensor& v = v_it->second;
    for (std::size_t i = 0; i < p->size(); ++i) {
      double& w = (*p)[i];
      w *= 1.0 - lr * c.weight_decay;
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
      const double m_hat = m[i] / correct1;
      const double v_hat = v[i] / correct2;
      w -= lr * m_hat / (std::sqrt(v_hat) + c.eps);
    }
  }
  ++state.step;
  return lr;
}

void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  const std::size_t workers = std::min(threads, n);
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += workers) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

BatchLoss batch_loss(const StubModel& model, const GateSet& gates, std::span<const std::uint64_t> seeds,
                     std::size_t threads) {
  std::vector<BatchLoss> per_sample(seeds.size());
  parallel_for(seeds.size(), threads, [&](std::size_t k) {
    const Sample sample = make_sample(seeds[k], model);
    Graph g;
    Var pred = forward_graph(g, sample.features, model, gates, 1.0);
    Var loss = combined_loss(pred, sample.target, model.cfg.mode, model.cfg.loss);
    per_sample[k] = {loss.value()[0], g.backward(loss)};
  });
  // Reduced in sample order so the result does not depend on scheduling.
  BatchLoss total;
  const double inv = 1.0 / static_cast<double>(seeds.size());
  for (const BatchLoss& s : per_sample) {
    total.loss += s.loss * inv;
    for (const auto& [name, grad] : s.grads) {
      auto [it, inserted] = total.grads.try_emplace(name, grad.shape());
      Tensor& acc = it->second;
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += grad[i] * inv;
    }
  }
  return total;
}

TrainResult train(const StubModel& model, const GateSet& initial, const TrainOptions& opts) {
  if (opts.steps == 0) throw ParameterError("train: steps must be >= 1");
  if (opts.batch_size == 0) throw ParameterError("train: batch_size must be >= 1");
  TrainResult result;
  result.digest_before = frozen_digest(model);
  result.gates = trainable_copy(initial);
  ParamRefs params = gate_params(result.gates);

  OptimState state;
  state.cfg = opts.optim;
  state.horizon = opts.steps;
  auto batches = stream(opts.run_seed, kBatchTag);
  std::vector<std::uint64_t> seeds(opts.batch_size);

  for (std::size_t step = 0; step < opts.steps; ++step) {
    for (auto& s : seeds) s = batches();
    BatchLoss batch = batch_loss(model, result.gates, seeds, opts.threads);
    if (!std::isfinite(batch.loss)) {
      throw NumericError("non-finite training loss at step " + std::to_string(step + 1));
    }
    // Parameters that do not reach the loss get an explicit zero gradient.
    for (const auto& [name, p] : params) batch.grads.try_emplace(name, p->shape());
    if (opts.inspect_gradients) opts.inspect_gradients(batch.grads);
    const double lr = adamw_step(params, batch.grads, state);
    for (const auto& [name, p] : params) {
      if (!p->all_finite()) {
        throw NumericError("non-finite value in '" + name + "' after step " + std::to_string(step + 1));
      }
    }
    result.log.push_back({step + 1, lr, batch.loss});
  }

  result.digest_after = frozen_digest(model);
  if (result.digest_after != result.digest_before) {
    throw ContractError("frozen parameters changed during training");
  }
  return result;
}

TrainResult train(const ModelConfig& cfg, std::uint64_t run_seed, std::size_t steps, std::size_t batch_size) {
  const StubModel model = build_model(cfg, run_seed);
  TrainOptions opts;
  opts.steps = steps;
  opts.batch_size = batch_size;
  opts.run_seed = run_seed;
  return train(model, model.gates, opts);
}

// ---------------------------------------------------------------------------
// Evaluation

DepthMap target_depth(const DisparityMap& target) {
  std::vector<double> depth(target.size());
  for (std::size_t i = 0; i < depth.size(); ++i) depth[i] = 2.0 - target.values[i];
  return DepthMap(target.height, target.width, std::move(depth), target.mask);
}

DepthMap prediction_depth(const Tensor& raster, const DisparityMap& target) {
  std::vector<double> depth(raster.size());
  for (std::size_t i = 0; i < depth.size(); ++i) depth[i] = -raster[i];
  return DepthMap(target.height, target.width, std::move(depth), target.mask);
}

MetricsReport evaluate_sample(std::uint64_t seed, const StubModel& model, const GateSet& gates, double tau) {
  const Sample sample = make_sample(seed, model);
  Graph g;
  const Tensor raster = forward_graph(g, sample.features, model, gates, tau).value();
  const DepthMap gt = target_depth(sample.target);
  const DepthMap pred = prediction_depth(raster, sample.target);
  const Alignment a = align_least_squares(pred, gt);
  const DepthMap aligned = apply_alignment(pred, a);
  MetricsReport r;
  r.dataset = "synthetic-" + std::to_string(seed);
  r.absrel = absrel(aligned, gt);
  r.delta1 = delta1(aligned, gt);
  r.scale = a.scale;
  r.shift = a.shift;
  r.n_valid = gt.valid_count();
  return r;
}

EvalResult evaluate(const StubModel& model, const GateSet& gates, std::span<const std::uint64_t> seeds,
                    double tau, std::size_t threads) {
  if (seeds.empty()) throw ParameterError("evaluate: needs >= 1 seed");
  EvalResult out;
  out.samples.resize(seeds.size());
  parallel_for(seeds.size(), threads, [&](std::size_t k) {
    out.samples[k] = evaluate_sample(seeds[k], model, gates, tau);
  });
  MetricsReport& agg = out.aggregate;
  agg.dataset = "aggregate";
  agg.scale = 0.0;
  const double inv = 1.0 / static_cast<double>(seeds.size());
  for (const MetricsReport& r : out.samples) {
    agg.absrel += r.absrel * inv;
    agg.delta1 += r.delta1 * inv;
    agg.scale += r.scale * inv;
    agg.shift += r.shift * inv;
    agg.n_valid += r.n_valid;
  }
  return out;
}

EvalResult evaluate(const StubModel& model, std::span<const std::uint64_t> seeds, double tau) {
  return evaluate(model, model.gates, seeds, tau);
}

}  // namespace briges
