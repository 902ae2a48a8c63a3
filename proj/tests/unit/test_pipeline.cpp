#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <random>
#include <sstream>
#include <vector>

#include "briges/errors.hpp"
#include "briges/pipeline.hpp"
#include "testing.hpp"

using namespace briges;

namespace {

// Small config for fast tests.
ModelConfig small_config() {
  ModelConfig cfg;
  cfg.gate.channels = 4;
  cfg.gate.proj_dim = 4;
  cfg.level_grids = {{{3, 3}, {3, 3}, {2, 2}, {4, 4}}};
  cfg.semantic_grid = {4, 4};
  cfg.output = {6, 6};
  return cfg;
}

double bilinear_sample(const std::vector<double>& src, Grid g, std::size_t ty, std::size_t tx, Grid out) {
  auto coord = [](std::size_t t, std::size_t nd, std::size_t ns) {
    return nd > 1 ? static_cast<double>(t) * static_cast<double>(ns - 1) / static_cast<double>(nd - 1) : 0.0;
  };
  const double y = coord(ty, out.height, g.height), x = coord(tx, out.width, g.width);
  const auto y0 = static_cast<std::size_t>(y), x0 = static_cast<std::size_t>(x);
  const std::size_t y1 = std::min(y0 + 1, g.height - 1), x1 = std::min(x0 + 1, g.width - 1);
  const double fy = y - static_cast<double>(y0), fx = x - static_cast<double>(x0);
  auto at = [&](std::size_t yy, std::size_t xx) { return src[yy * g.width + xx]; };
  return (1 - fy) * ((1 - fx) * at(y0, x0) + fx * at(y0, x1)) + fy * ((1 - fx) * at(y1, x0) + fx * at(y1, x1));
}

std::vector<double> decoder_ref(const std::array<FeatureMap, kLevels>& fused, const StubModel& m) {
  const Grid out = m.cfg.output;
  std::vector<double> raster(out.tokens(), 0.0);
  for (std::size_t i = 0; i < kLevels; ++i) {
    const FeatureMap& f = fused[i];
    std::vector<double> reduced(f.grid().tokens(), 0.0);
    for (std::size_t t = 0; t < reduced.size(); ++t) {
      for (std::size_t c = 0; c < f.channels(); ++c) reduced[t] += f.data.at(t, c) * m.decoder.readout[i][c];
    }
    for (std::size_t y = 0; y < out.height; ++y) {
      for (std::size_t x = 0; x < out.width; ++x) {
        raster[y * out.width + x] += bilinear_sample(reduced, f.grid(), y, x, out);
      }
    }
  }
  return raster;
}

std::array<FeatureMap, kLevels> random_fused(const ModelConfig& cfg, std::mt19937_64& rng) {
  std::array<FeatureMap, kLevels> f;
  for (std::size_t i = 0; i < kLevels; ++i) {
    const Grid g = cfg.level_grids[i];
    f[i] = FeatureMap(g.height, g.width, briges::testing::random_tensor({g.tokens(), cfg.gate.channels}, rng));
  }
  return f;
}

std::vector<std::uint64_t> seed_range(std::uint64_t first, std::size_t n) {
  std::vector<std::uint64_t> s(n);
  for (std::size_t i = 0; i < n; ++i) s[i] = first + i;
  return s;
}

}  // namespace

TEST(Encoders, DeterministicAndSeedSensitive) {
  const StubModel m = build_model(small_config(), 1);
  const Features a = stub_encoders(5, m), b = stub_encoders(5, m), c = stub_encoders(6, m);
  for (std::size_t i = 0; i < kLevels; ++i) {
    EXPECT_EQ(a.depth[i].data.storage(), b.depth[i].data.storage());
    EXPECT_NE(a.depth[i].data.storage(), c.depth[i].data.storage());
    EXPECT_EQ(a.depth[i].grid(), m.cfg.level_grids[i]);
  }
  EXPECT_EQ(a.semantic.data.storage(), b.semantic.data.storage());
  EXPECT_EQ(a.semantic.grid(), m.cfg.semantic_grid);
}

TEST(Encoders, LatentExpansionMatchesLoopOracle) {
  const StubModel m = build_model(small_config(), 1);
  for (std::uint64_t seed : {0ull, 3ull, 99ull}) {
    const Features f = stub_encoders(seed, m);
    const auto z = latent_vector(seed, m.cfg.latent_dim);
    auto check = [&](const FeatureMap& out, const Tensor& basis, const Tensor& mixing) {
      for (std::size_t p = 0; p < out.grid().tokens(); ++p) {
        for (std::size_t c = 0; c < out.channels(); ++c) {
          double s = 0.0;
          for (std::size_t l = 0; l < z.size(); ++l) s += basis.at(p, l) * z[l] * mixing.at(l, c);
          EXPECT_NEAR(out.data.at(p, c), s, 1e-13);
        }
      }
    };
    for (std::size_t i = 0; i < kLevels; ++i) check(f.depth[i], m.encoders.depth_basis[i], m.encoders.depth_mixing[i]);
    check(f.semantic, m.encoders.semantic_basis, m.encoders.semantic_mixing);
  }
}

TEST(Encoders, FrozenPartsDoNotRequireGrad) {
  const StubModel m = build_model(small_config(), 1);
  for (std::size_t i = 0; i < kLevels; ++i) {
    EXPECT_FALSE(m.encoders.depth_mixing[i].requires_grad());
    EXPECT_FALSE(m.decoder.readout[i].requires_grad());
    m.reference[i].for_each([](const char*, const Tensor& t) { EXPECT_FALSE(t.requires_grad()); });
    m.gates[i].for_each([](const char*, const Tensor& t) { EXPECT_TRUE(t.requires_grad()); });
  }
}

TEST(Decoder, ZeroLinearAndLoopOracle) {
  const StubModel m = build_model(small_config(), 1);
  std::mt19937_64 rng(2);
  std::array<FeatureMap, kLevels> zero;
  for (std::size_t i = 0; i < kLevels; ++i) {
    zero[i] = FeatureMap(m.cfg.level_grids[i].height, m.cfg.level_grids[i].width, m.cfg.gate.channels);
  }
  const Tensor z = stub_decoder(zero, m.decoder);
  EXPECT_EQ(z.size(), 36u);
  for (double v : z.values()) EXPECT_EQ(v, 0.0);

  for (int trial = 0; trial < 10; ++trial) {
    const auto f = random_fused(m.cfg, rng), g = random_fused(m.cfg, rng);
    const Tensor df = stub_decoder(f, m.decoder), dg = stub_decoder(g, m.decoder);
    const auto ref = decoder_ref(f, m);
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(df[i], ref[i], 1e-12);
    std::array<FeatureMap, kLevels> mix = f;
    for (std::size_t i = 0; i < kLevels; ++i) {
      for (std::size_t k = 0; k < mix[i].data.size(); ++k) mix[i].data[k] = 1.5 * f[i].data[k] - 0.25 * g[i].data[k];
    }
    const Tensor dm = stub_decoder(mix, m.decoder);
    for (std::size_t i = 0; i < dm.size(); ++i) EXPECT_NEAR(dm[i], 1.5 * df[i] - 0.25 * dg[i], 1e-12);
  }
}

TEST(Forward, DeterministicAndShaped) {
  for (Grid out : {Grid{6, 6}, Grid{5, 9}, Grid{1, 3}}) {
    ModelConfig cfg = small_config();
    cfg.output = out;
    const StubModel m = build_model(cfg, 1);
    const ForwardResult a = forward(4, m, 1.0), b = forward(4, m, 1.0);
    EXPECT_EQ(a.raster.storage(), b.raster.storage());
    EXPECT_EQ(a.raster.size(), out.tokens());
    EXPECT_EQ(a.records.size(), 2 * kLevels);
  }
}

TEST(Forward, HigherTemperatureNeverSharpensAttention) {
  // Cross records compare directly. The self block's input depends on tau,
  // so its rows are compared with that input held at its tau = 1 value.
  const StubModel m = build_model(ModelConfig{}, 1);
  for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
    const ForwardResult cold = forward(seed, m, 1.0), warm = forward(seed, m, 2.5);
    ASSERT_EQ(cold.records.size(), warm.records.size());
    for (std::size_t r = 0; r < cold.records.size(); ++r) {
      if (cold.records[r].block != BlockKind::Cross) continue;
      const auto hc = attention_entropy(cold.records[r]), hw = attention_entropy(warm.records[r]);
      for (std::size_t i = 0; i < hc.size(); ++i) EXPECT_GE(hw[i], hc[i]) << "record " << r << " row " << i;
    }
    const Features f = stub_encoders(seed, m);
    for (std::size_t i = 0; i < kLevels; ++i) {
      const FeatureMap aligned = align_semantic(f.semantic, m.cfg.level_grids[i]);
      const FeatureMap fc = cross_attention_block(f.depth[i], aligned, m.gates[i], 1.0).features;
      const auto hc = attention_entropy(self_attention_block(fc, m.gates[i], 1.0).records[0]);
      const auto hw = attention_entropy(self_attention_block(fc, m.gates[i], 2.5).records[0]);
      for (std::size_t k = 0; k < hc.size(); ++k) EXPECT_GE(hw[k], hc[k]) << "level " << i << " row " << k;
    }
  }
}

TEST(Forward, RejectsLowTemperature) {
  const StubModel m = build_model(small_config(), 1);
  EXPECT_THROW(forward(1, m, 0.5), ParameterError);
}

TEST(Config, ValidationRejectsBadValues) {
  auto bad = [](auto mutate) {
    ModelConfig cfg = small_config();
    mutate(cfg);
    EXPECT_THROW(build_model(cfg, 1), ParameterError);
  };
  bad([](ModelConfig& c) { c.tau_inference = 0.9; });
  bad([](ModelConfig& c) { c.gate.channels = 0; });
  bad([](ModelConfig& c) { c.gate.heads = 3; });
  bad([](ModelConfig& c) { c.level_grids[2] = {0, 3}; });
  bad([](ModelConfig& c) { c.output = {1, 1}; });
  bad([](ModelConfig& c) { c.latent_dim = 0; });
  bad([](ModelConfig& c) { c.loss.gm_scales = 0; });
}

TEST(Targets, UnitRangeAndReferenceRealizable) {
  const StubModel m = build_model(small_config(), 1);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Sample s = make_sample(seed, m);
    const auto [lo, hi] = std::minmax_element(s.target.values.begin(), s.target.values.end());
    EXPECT_EQ(*lo, 0.0);
    EXPECT_EQ(*hi, 1.0);
    const ForwardResult r = forward(s.seed, m, m.reference, 1.0);
    for (LossMode mode : {LossMode::V1, LossMode::V2}) {
      EXPECT_LE(combined_loss(r.raster.values(), s.target, mode), 1e-9);
    }
  }
}

TEST(Targets, MatchGoldenFile) {
  const StubModel m = build_model(ModelConfig{}, 1);
  const DisparityMap t = make_target(7, m);
  const std::string path = std::string(BRIGES_TEST_DATA) + "/target_seed7.txt";
  if (std::getenv("BRIGES_WRITE_GOLDEN")) {
    std::ofstream out(path);
    out << t.height << " " << t.width << "\n";
    char buf[64];
    for (double v : t.values) {
      std::snprintf(buf, sizeof buf, "%a\n", v);
      out << buf;
    }
  }
  std::ifstream in(path);
  ASSERT_TRUE(in) << "missing golden file " << path;
  std::size_t h = 0, w = 0;
  in >> h >> w;
  ASSERT_EQ(h, t.height);
  ASSERT_EQ(w, t.width);
  std::string token;
  for (std::size_t i = 0; i < t.size(); ++i) {
    ASSERT_TRUE(in >> token);
    EXPECT_EQ(std::strtod(token.c_str(), nullptr), t.values[i]) << "pixel " << i;
  }
}

TEST(FrozenDigest, StableAndSensitive) {
  const StubModel a = build_model(small_config(), 1), b = build_model(small_config(), 77);
  EXPECT_EQ(frozen_digest(a), frozen_digest(b));  // trainable init does not enter
  EXPECT_EQ(frozen_digest(a).size(), 64u);
  StubModel c = a;
  c.reference[2].self_v[3] += 1e-15;
  EXPECT_NE(frozen_digest(a), frozen_digest(c));
  StubModel d = a;
  d.decoder.readout[0][0] *= -1.0;
  EXPECT_NE(frozen_digest(a), frozen_digest(d));
  ModelConfig other = small_config();
  other.model_seed = 5;
  EXPECT_NE(frozen_digest(a), frozen_digest(build_model(other, 1)));
}

TEST(AdamW, ZeroGradientNoDecayLeavesParameters) {
  Tensor p({2, 2}, std::vector<double>{1, -2, 3, 0.5});
  const Tensor before = p;
  ParamRefs refs{{"p", &p}};
  OptimState state;
  state.cfg.weight_decay = 0.0;
  state.horizon = 10;
  for (int k = 0; k < 3; ++k) adamw_step(refs, {{"p", Tensor({2, 2})}}, state);
  EXPECT_EQ(p.storage(), before.storage());
  EXPECT_EQ(state.step, 3u);
}

TEST(AdamW, DecayIsDecoupled) {
  Tensor p({3}, std::vector<double>{1, -2, 4});
  ParamRefs refs{{"p", &p}};
  OptimState state;
  state.cfg.lr = 0.1;
  state.cfg.weight_decay = 0.05;
  state.horizon = 4;
  const double lr = adamw_step(refs, {{"p", Tensor({3})}}, state);
  EXPECT_EQ(lr, 0.1);
  const double f = 1.0 - 0.1 * 0.05;
  EXPECT_DOUBLE_EQ(p[0], 1 * f);
  EXPECT_DOUBLE_EQ(p[1], -2 * f);
  EXPECT_DOUBLE_EQ(p[2], 4 * f);
}

TEST(AdamW, FirstStepClosedForm) {
  const std::vector<double> g{0.3, -2.0, 1e-3, 0.0};
  Tensor p({4}, std::vector<double>{0.1, 0.2, 0.3, 0.4});
  const Tensor before = p;
  ParamRefs refs{{"p", &p}};
  OptimState state;
  state.cfg.lr = 0.01;
  state.cfg.weight_decay = 0.0;
  state.horizon = 100;
  adamw_step(refs, {{"p", Tensor({4}, g)}}, state);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_NEAR(p[i], before[i] - 0.01 * g[i] / (std::abs(g[i]) + 1e-8), 1e-15);
  }
}

TEST(AdamW, LinearScheduleAndContract) {
  Tensor p({1}, 1.0);
  ParamRefs refs{{"p", &p}};
  OptimState state;
  state.cfg.lr = 0.2;
  state.horizon = 4;
  const std::vector<double> expected{0.2, 0.15, 0.1, 0.05, 0.0, 0.0};
  for (double e : expected) EXPECT_NEAR(adamw_step(refs, {{"p", Tensor({1}, 1.0)}}, state), e, 1e-15);
  EXPECT_THROW(adamw_step(refs, {}, state), ContractError);
  EXPECT_THROW(adamw_step(refs, {{"q", Tensor({1})}}, state), ContractError);
  EXPECT_THROW(adamw_step(refs, {{"p", Tensor({2})}}, state), ContractError);
}

TEST(Train, DeterministicAcrossRunsAndThreads) {
  const StubModel m = build_model(small_config(), 3);
  TrainOptions opts;
  opts.steps = 6;
  opts.batch_size = 3;
  opts.run_seed = 9;
  const TrainResult a = train(m, m.gates, opts), b = train(m, m.gates, opts);
  opts.threads = 3;
  const TrainResult c = train(m, m.gates, opts);
  ASSERT_EQ(a.log.size(), 6u);
  for (std::size_t k = 0; k < 6; ++k) {
    EXPECT_EQ(a.log[k].loss, b.log[k].loss);
    EXPECT_EQ(a.log[k].loss, c.log[k].loss);
    EXPECT_EQ(a.log[k].step, k + 1);
  }
  for (std::size_t i = 0; i < kLevels; ++i) {
    EXPECT_EQ(a.gates[i].self_v.storage(), c.gates[i].self_v.storage());
  }
  EXPECT_EQ(a.digest_before, a.digest_after);
}

TEST(Train, EveryParameterMovesAfterOneStep) {
  const StubModel m = build_model(small_config(), 3);
  TrainOptions opts;
  opts.steps = 1;
  opts.batch_size = 2;
  Gradients seen;
  opts.inspect_gradients = [&](Gradients& g) { seen = g; };
  const TrainResult r = train(m, m.gates, opts);
  GateSet init = m.gates;
  GateSet trained = r.gates;
  const ParamRefs before = gate_params(init), after = gate_params(trained);
  ASSERT_EQ(seen.size(), before.size());
  for (const auto& [name, p] : before) {
    bool nonzero_grad = false;
    for (double v : seen.at(name).values()) nonzero_grad = nonzero_grad || v != 0.0;
    if (nonzero_grad) EXPECT_NE(p->storage(), after.at(name)->storage()) << name;
  }
}

TEST(Train, ReferenceGatesHoldZeroLoss) {
  ModelConfig cfg = small_config();
  const StubModel m = build_model(cfg, 3);
  TrainOptions opts;
  opts.steps = 10;
  opts.batch_size = 2;
  opts.optim.weight_decay = 0.0;
  const TrainResult r = train(m, m.reference, opts);
  for (const LossLogEntry& e : r.log) EXPECT_LE(e.loss, 1e-6) << "step " << e.step;
  const auto seeds = seed_range(1001, 8);
  const EvalResult ev = evaluate(m, r.gates, seeds, 1.0);
  EXPECT_LE(ev.aggregate.absrel, 1e-6);
  EXPECT_EQ(ev.aggregate.delta1, 1.0);
}

TEST(Train, NonFiniteParametersAbortNamingStep) {
  const StubModel m = build_model(small_config(), 3);
  TrainOptions opts;
  opts.steps = 3;
  opts.batch_size = 1;
  opts.inspect_gradients = [](Gradients& g) { g.begin()->second[0] = std::nan(""); };
  try {
    train(m, m.gates, opts);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("step 1"), std::string::npos) << e.what();
  }
}

TEST(Train, RejectsEmptySchedules) {
  const StubModel m = build_model(small_config(), 3);
  TrainOptions opts;
  opts.steps = 0;
  EXPECT_THROW(train(m, m.gates, opts), ParameterError);
  opts.steps = 1;
  opts.batch_size = 0;
  EXPECT_THROW(train(m, m.gates, opts), ParameterError);
}

TEST(Evaluate, AggregateMatchesIndependentRecomputation) {
  const StubModel m = build_model(small_config(), 5);
  const auto seeds = seed_range(40, 5);
  const EvalResult ev = evaluate(m, seeds, 2.5);
  double absrel_sum = 0.0, delta_sum = 0.0;
  for (std::size_t k = 0; k < seeds.size(); ++k) {
    const Sample s = make_sample(seeds[k], m);
    const ForwardResult f = forward(s.seed, m, 2.5);
    const std::size_t n = s.target.size();
    std::vector<double> pred(n), gt(n);
    double mp = 0, mg = 0;
    for (std::size_t i = 0; i < n; ++i) {
      pred[i] = -f.raster[i];
      gt[i] = 2.0 - s.target.values[i];
      mp += pred[i] / n;
      mg += gt[i] / n;
    }
    double spp = 0, spg = 0;
    for (std::size_t i = 0; i < n; ++i) {
      spp += (pred[i] - mp) * (pred[i] - mp);
      spg += (pred[i] - mp) * (gt[i] - mg);
    }
    const double scale = spg / spp, shift = mg - scale * mp;
    double ar = 0;
    int pass = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double a = scale * pred[i] + shift;
      ar += std::abs(a - gt[i]) / gt[i] / n;
      if (a > 0 && std::max(a / gt[i], gt[i] / a) < 1.25) ++pass;
    }
    EXPECT_NEAR(ev.samples[k].absrel, ar, 1e-9);
    EXPECT_NEAR(ev.samples[k].delta1, static_cast<double>(pass) / n, 1e-15);
    absrel_sum += ar;
    delta_sum += static_cast<double>(pass) / n;
  }
  EXPECT_NEAR(ev.aggregate.absrel, absrel_sum / 5, 1e-9);
  EXPECT_NEAR(ev.aggregate.delta1, delta_sum / 5, 1e-12);

  const EvalResult again = evaluate(m, m.gates, seeds, 2.5, 4);
  EXPECT_EQ(again.aggregate.absrel, ev.aggregate.absrel);
  EXPECT_THROW(evaluate(m, std::span<const std::uint64_t>{}, 1.0), ParameterError);
}

TEST(ParallelFor, VisitsEachIndexOnceAndPropagatesErrors) {
  for (std::size_t threads : {0u, 1u, 3u, 16u}) {
    std::vector<int> hits(11, 0);
    parallel_for(11, threads, [&](std::size_t i) { ++hits[i]; });
    for (int h : hits) EXPECT_EQ(h, 1);
  }
  EXPECT_THROW(parallel_for(5, 2, [](std::size_t i) {
                 if (i == 3) throw DataError("boom");
               }),
               DataError);
}
