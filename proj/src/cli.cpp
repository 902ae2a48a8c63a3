#include "briges/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>

#include "briges/errors.hpp"
#include "briges/gradcheck.hpp"
#include "briges/io.hpp"
#include "briges/pipeline.hpp"

namespace briges::cli {

namespace fs = std::filesystem;

namespace {

std::string g17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string shortest(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

std::uint64_t parse_u64(const std::string& s) {
  std::uint64_t v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) throw ParameterError("not a seed: '" + s + "'");
  return v;
}

std::size_t thread_count() {
  const char* env = std::getenv("BRIGES_THREADS");
  if (!env || !*env) return 0;
  try {
    return static_cast<std::size_t>(parse_u64(env));
  } catch (const ParameterError&) {
    throw ConfigError("BRIGES_THREADS", std::string("BRIGES_THREADS must be a non-negative integer, got '") + env +
                                            "'");
  }
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

// Shared by every command.
struct Common {
  std::string config;
  std::uint64_t seed = 1;
  std::string out;
  std::optional<double> tau;
  std::string mode;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "settings file (key = value)");
  cmd->add_option("--seed", c.seed, "run / sample seed");
  cmd->add_option("--out", c.out, "output directory");
  cmd->add_option("--tau", c.tau, "attention temperature (default: tau_inference, 2.5)");
  cmd->add_option("--mode", c.mode, "loss mode")->check(CLI::IsMember({"v1", "v2"}));
}

Settings settings_for(const Common& c) {
  Settings s = c.config.empty() ? Settings{} : load_settings(c.config);
  if (c.mode == "v1") s.model.mode = LossMode::V1;
  if (c.mode == "v2") s.model.mode = LossMode::V2;
  return s;
}

double tau_for(const Common& c, const ModelConfig& cfg) {
  const double tau = c.tau.value_or(cfg.tau_inference);
  if (!(tau >= 1.0)) throw ConfigError("tau", "--tau must be >= 1, got " + g17(tau));
  return tau;
}

fs::path require_out(const Common& c, const char* cmd) {
  if (c.out.empty()) throw ConfigError("out", std::string(cmd) + ": --out is required");
  ensure_dir(c.out);
  return c.out;
}

// ---------------------------------------------------------------------------

int cmd_train(const Common& c, std::optional<std::size_t> steps, std::optional<std::size_t> batch,
              const std::string& init, std::ostream& out) {
  Settings s = settings_for(c);
  if (steps) s.steps = *steps;
  if (batch) s.batch_size = *batch;
  if (s.steps == 0) throw ConfigError("steps", "--steps must be >= 1");
  if (s.batch_size == 0) throw ConfigError("batch_size", "--batch must be >= 1");
  const fs::path dir = require_out(c, "train");

  const StubModel model = build_model(s.model, c.seed);
  const GateSet initial = init == "reference" ? trainable_copy(model.reference) : model.gates;
  TrainOptions opts;
  opts.steps = s.steps;
  opts.batch_size = s.batch_size;
  opts.run_seed = c.seed;
  opts.optim = s.optim;
  opts.threads = thread_count();
  const TrainResult r = train(model, initial, opts);

  std::ostringstream log;
  log << "step,lr,loss\n";
  for (const LossLogEntry& e : r.log) log << e.step << "," << g17(e.lr) << "," << g17(e.loss) << "\n";
  write_file(dir / "loss_log.csv", log.str());

  const bool same = r.digest_before == r.digest_after;
  write_file(dir / "freeze_digest.txt", "before " + r.digest_before + "\nafter " + r.digest_after +
                                            "\nunchanged " + (same ? "true" : "false") + "\n");
  write_checkpoint(dir / "checkpoint.ckpt", {s, r.digest_after, r.gates});

  const double first = r.log.front().loss, last = r.log.back().loss;
  const double ratio = first > 0.0 ? last / first : 0.0;
  write_file(dir / "summary.txt", "step1_loss " + g17(first) + "\nfinal_loss " + g17(last) + "\nratio " +
                                      g17(ratio) + "\n");
  out << "trained " << s.steps << " steps: step-1 loss " << shortest(first) << ", final loss " << shortest(last)
      << ", ratio " << shortest(ratio) << "\n";
  out << "frozen digest " << (same ? "unchanged " : "CHANGED ") << r.digest_after << "\n";
  return kOk;
}

int cmd_eval(const Common& c, const std::string& ckpt_path, const std::string& seeds_text,
             const std::string& report, std::ostream& out) {
  if (ckpt_path.empty()) throw ConfigError("ckpt", "eval: --ckpt is required");
  const Checkpoint ckpt = read_checkpoint(ckpt_path);
  const StubModel model = model_from_checkpoint(ckpt);
  const double tau = tau_for(c, model.cfg);
  const auto seeds = parse_seeds(seeds_text);
  const EvalResult r = evaluate(model, model.gates, seeds, tau, thread_count());
  std::string csv = csv_header();
  for (const MetricsReport& m : r.samples) csv += csv_row(m);
  csv += csv_row(r.aggregate);
  if (report.empty()) {
    out << csv;
  } else {
    const fs::path p(report);
    if (p.has_parent_path()) ensure_dir(p.parent_path());
    write_file(p, csv);
    out << "aggregate absrel " << shortest(r.aggregate.absrel) << " delta1 " << shortest(r.aggregate.delta1)
        << " over " << seeds.size() << " samples\n";
  }
  return kOk;
}

int cmd_infer(const Common& c, const std::string& ckpt_path, std::ostream& out) {
  if (ckpt_path.empty()) throw ConfigError("ckpt", "infer: --ckpt is required");
  const StubModel model = model_from_checkpoint(read_checkpoint(ckpt_path));
  const double tau = tau_for(c, model.cfg);
  const fs::path dir = require_out(c, "infer");
  const Grid g = model.cfg.output;
  const ForwardResult f = forward(c.seed, model, model.gates, tau);
  const Sample sample = make_sample(c.seed, model);
  const std::string stem = std::to_string(c.seed);
  write_dmap(dir / ("prediction_" + stem + ".dmap"), to_dmap(f.raster, g.height, g.width));
  write_dmap(dir / ("target_" + stem + ".dmap"),
             to_dmap(Tensor({sample.target.size()}, sample.target.values), g.height, g.width));
  out << "wrote " << g.height << "x" << g.width << " prediction for seed " << c.seed << " at tau " << shortest(tau)
      << "\n";
  return kOk;
}

int cmd_ablate_tau(const Common& c, const std::string& ckpt_path, const std::string& init,
                   const std::string& taus_text, std::size_t datasets, std::size_t per_dataset, std::ostream& out,
                   std::ostream& err) {
  const std::vector<double> taus = parse_taus(taus_text, err);
  if (taus.size() < 2) throw ConfigError("taus", "ablate-tau needs >= 2 distinct temperatures");
  for (double t : taus) {
    if (!(t >= 1.0)) throw ConfigError("taus", "temperature " + g17(t) + " is below 1");
  }
  if (datasets == 0 || per_dataset == 0) throw ConfigError("instances", "ablate-tau needs >= 1 dataset and sample");

  StubModel model;
  if (!ckpt_path.empty()) {
    model = model_from_checkpoint(read_checkpoint(ckpt_path));
  } else {
    model = build_model(settings_for(c).model, c.seed);
    if (init == "reference") model.gates = trainable_copy(model.reference);
  }

  // Dataset k: per_dataset consecutive seeds starting at seed + 1000 k.
  std::vector<AblationRow> rows;
  std::vector<Better> directions;
  std::vector<std::vector<double>> table(taus.size());
  std::ostringstream csv;
  csv << "tau,dataset,absrel,delta1\n";
  for (std::size_t k = 0; k < datasets; ++k) {
    const std::uint64_t base = c.seed + 1000 * k;
    std::vector<std::uint64_t> seeds(per_dataset);
    for (std::size_t j = 0; j < per_dataset; ++j) seeds[j] = base + j;
    const std::string name = "synthetic-" + std::to_string(base);
    AblationRow abs_row{name + " AbsRel (↓)", {}}, d1_row{name + " δ1 (↑)", {}};
    for (std::size_t t = 0; t < taus.size(); ++t) {
      const EvalResult r = evaluate(model, model.gates, seeds, taus[t], thread_count());
      abs_row.values.push_back(r.aggregate.absrel);
      d1_row.values.push_back(r.aggregate.delta1);
      table[t].push_back(r.aggregate.absrel);
      table[t].push_back(r.aggregate.delta1);
      csv << g17(taus[t]) << "," << name << "," << g17(r.aggregate.absrel) << "," << g17(r.aggregate.delta1) << "\n";
    }
    rows.push_back(abs_row);
    rows.push_back(d1_row);
    directions.push_back(Better::Lower);
    directions.push_back(Better::Higher);
  }
  const std::vector<double> ranks = average_rank(table, directions);
  for (std::size_t t = 0; t < taus.size(); ++t) csv << g17(taus[t]) << ",avg_rank,," << g17(ranks[t]) << "\n";

  const std::string md = format_ablation_table(taus, rows, ranks);
  if (!c.out.empty()) {
    const fs::path dir = require_out(c, "ablate-tau");
    write_file(dir / "ablate_tau.csv", csv.str());
    write_file(dir / "ablate_tau.md", md);
  }
  out << md;
  return kOk;
}

int cmd_gradcheck(const Common& c, std::size_t instances, const std::optional<std::string>& fault,
                  std::ostream& out, std::ostream& err) {
  GradcheckOptions opts;
  opts.seed = c.seed;
  opts.instances = instances;
  opts.fault = fault;
  if (instances == 0) throw ConfigError("instances", "gradcheck needs >= 1 instance");
  const GradcheckResult r = run_gradcheck(opts);
  for (const auto& [name, e] : r.per_param) out << name << " " << g17(e) << "\n";
  out << "worst relative error " << g17(r.worst_error) << " (" << r.worst_param << ", instance " << r.worst_instance
      << ", " << r.instances << " instances)\n";
  if (!(r.worst_error <= 1e-4)) {
    err << "gradcheck FAILED: " << r.worst_param << " relative error " << g17(r.worst_error) << " exceeds 1e-4\n";
    return kVerification;
  }
  return kOk;
}

int cmd_dump_attn(const Common& c, const std::string& ckpt_path, std::ostream& out) {
  if (ckpt_path.empty()) throw ConfigError("ckpt", "dump-attn: --ckpt is required");
  const StubModel model = model_from_checkpoint(read_checkpoint(ckpt_path));
  const double tau = tau_for(c, model.cfg);
  const fs::path dir = require_out(c, "dump-attn");
  const ForwardResult f = forward(c.seed, model, model.gates, tau);
  std::ostringstream csv;
  csv << "gate,block,row,entropy\n";
  for (const AttentionRecord& rec : f.records) {
    std::string block = block_name(rec.block);
    if (model.cfg.gate.heads > 1) block += ".h" + std::to_string(rec.head);
    const std::string file = "attn_g" + std::to_string(rec.gate) + "_" + block + ".dmap";
    write_dmap(dir / file, to_dmap(rec.weights, rec.weights.rows(), rec.weights.cols()));
    const auto ent = attention_entropy(rec);
    for (std::size_t i = 0; i < ent.size(); ++i) {
      csv << rec.gate << "," << block << "," << i << "," << g17(ent[i]) << "\n";
    }
  }
  write_file(dir / "entropy.csv", csv.str());
  out << "wrote " << f.records.size() << " attention maps at tau " << shortest(tau) << "\n";
  return kOk;
}

}  // namespace

// ---------------------------------------------------------------------------

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ',')) {
    if (part.empty()) continue;
    const auto dash = part.find('-');
    if (dash == std::string::npos) {
      seeds.push_back(parse_u64(part));
      continue;
    }
    const std::uint64_t lo = parse_u64(part.substr(0, dash)), hi = parse_u64(part.substr(dash + 1));
    if (hi < lo) throw ParameterError("seed range '" + part + "' is decreasing");
    if (hi - lo >= 1000000) throw ParameterError("seed range '" + part + "' is too long");
    for (std::uint64_t s = lo; s <= hi; ++s) seeds.push_back(s);
  }
  if (seeds.empty()) throw ParameterError("no seeds in '" + text + "'");
  return seeds;
}

std::vector<double> parse_taus(const std::string& text, std::ostream& warn) {
  std::vector<double> taus;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ',')) {
    if (part.empty()) continue;
    double v = 0.0;
    const auto [p, ec] = std::from_chars(part.data(), part.data() + part.size(), v);
    if (ec != std::errc() || p != part.data() + part.size() || !std::isfinite(v)) {
      throw ConfigError("taus", "not a temperature: '" + part + "'");
    }
    if (std::find(taus.begin(), taus.end(), v) != taus.end()) {
      warn << "warning: duplicate temperature " << shortest(v) << " ignored\n";
      continue;
    }
    taus.push_back(v);
  }
  return taus;
}

std::string csv_header() { return "dataset,absrel,delta1,scale,shift,n_valid\n"; }

std::string csv_row(const MetricsReport& r) {
  return r.dataset + "," + g17(r.absrel) + "," + g17(r.delta1) + "," + g17(r.scale) + "," + g17(r.shift) + "," +
         std::to_string(r.n_valid) + "\n";
}

std::string format_rank(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.1f", v);
  std::string s = buf;
  if (s.size() > 2 && s.compare(s.size() - 2, 2, ".0") == 0) s.resize(s.size() - 2);
  return s;
}

std::string format_metric(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

std::string format_ablation_table(const std::vector<double>& taus, const std::vector<AblationRow>& rows,
                                  const std::vector<double>& avg_rank) {
  if (avg_rank.size() != taus.size()) throw DimensionError("ablation table: one average rank per temperature");
  std::ostringstream md;
  md << "| Temperature Scaling Factor |";
  for (double t : taus) md << " " << shortest(t) << " |";
  md << "\n|---|";
  for (std::size_t i = 0; i < taus.size(); ++i) md << "---|";
  md << "\n";
  for (const AblationRow& r : rows) {
    if (r.values.size() != taus.size()) throw DimensionError("ablation row '" + r.label + "': wrong width");
    md << "| " << r.label << " |";
    for (double v : r.values) md << " " << format_metric(v) << " |";
    md << "\n";
  }
  // Bold whichever entries display as the best value.
  std::vector<std::string> shown;
  for (double v : avg_rank) shown.push_back(format_rank(v));
  const double best = *std::min_element(avg_rank.begin(), avg_rank.end());
  const std::string best_text = format_rank(best);
  md << "| Avg. Rank (↓) |";
  for (const std::string& s : shown) md << " " << (s == best_text ? "**" + s + "**" : s) << " |";
  md << "\n";
  return md.str();
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Bridging-gate fusion toolkit"};
  app.require_subcommand(1);

  Common c;
  std::optional<std::size_t> steps, batch;
  std::string init = "random", ckpt, seeds = "1001-1016", report, taus = "2,2.5,3,3.5,4";
  std::size_t instances = 0, per_dataset = 4;
  std::string fault_name;

  auto* train_cmd = app.add_subcommand("train", "train the four gates, encoders and decoder frozen");
  add_common(train_cmd, c);
  train_cmd->add_option("--steps", steps, "step budget (default: settings)");
  train_cmd->add_option("--batch", batch, "batch size (default: settings)");
  train_cmd->add_option("--init", init, "initial gates")->check(CLI::IsMember({"reference", "random"}));

  auto* eval_cmd = app.add_subcommand("eval", "AbsRel / delta1 over synthetic samples");
  add_common(eval_cmd, c);
  eval_cmd->add_option("--ckpt", ckpt, "checkpoint");
  eval_cmd->add_option("--seeds", seeds, "sample seeds, e.g. 1-16 or 1,5,9");
  eval_cmd->add_option("--report", report, "CSV report path (default stdout)");

  auto* infer_cmd = app.add_subcommand("infer", "write prediction and target rasters for one seed");
  add_common(infer_cmd, c);
  infer_cmd->add_option("--ckpt", ckpt, "checkpoint");

  auto* ablate_cmd = app.add_subcommand("ablate-tau", "metric table and average rank across temperatures");
  add_common(ablate_cmd, c);
  ablate_cmd->add_option("--ckpt", ckpt, "checkpoint (default: gates from --init)");
  ablate_cmd->add_option("--init", init, "gates when no checkpoint")->check(CLI::IsMember({"reference", "random"}));
  ablate_cmd->add_option("--taus", taus, "comma-separated temperatures");
  ablate_cmd->add_option("--instances", instances, "number of synthetic datasets (default 5)");
  ablate_cmd->add_option("--per-dataset", per_dataset, "samples per dataset");

  auto* grad_cmd = app.add_subcommand("gradcheck", "backward vs central finite differences");
  add_common(grad_cmd, c);
  grad_cmd->add_option("--instances", instances, "random gate instances (default 20)");
  auto* fault_opt = grad_cmd->add_option("--inject-fault", fault_name,
                                         "double the analytic gradient of one parameter (default self.mlp.w2)");
  fault_opt->expected(0, 1);

  auto* dump_cmd = app.add_subcommand("dump-attn", "attention maps and per-row entropies");
  add_common(dump_cmd, c);
  dump_cmd->add_option("--ckpt", ckpt, "checkpoint");

  std::vector<std::string> argv_store{"briges"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (std::string& s : argv_store) argv.push_back(s.data());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n";
    return kUsage;
  }

  try {
    if (*train_cmd) return cmd_train(c, steps, batch, init, out);
    if (*eval_cmd) return cmd_eval(c, ckpt, seeds, report, out);
    if (*infer_cmd) return cmd_infer(c, ckpt, out);
    if (*ablate_cmd) {
      return cmd_ablate_tau(c, ckpt, init, taus, instances ? instances : 5, per_dataset, out, err);
    }
    if (*grad_cmd) {
      std::optional<std::string> fault;
      if (fault_opt->count() > 0) fault = fault_name.empty() ? "self.mlp.w2" : fault_name;
      return cmd_gradcheck(c, instances ? instances : 20, fault, out, err);
    }
    if (*dump_cmd) return cmd_dump_attn(c, ckpt, out);
  } catch (const ConfigError& e) {
    err << "config error [" << e.key() << "]: " << e.what() << "\n";
    return kUsage;
  } catch (const IoError& e) {
    err << "I/O error: " << e.what() << "\n";
    return kIo;
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << "\n";
    return kNumeric;
  } catch (const DegenerateInputError& e) {
    err << "numeric failure: " << e.what() << "\n";
    return kNumeric;
  } catch (const ContractError& e) {
    err << "verification failure: " << e.what() << "\n";
    return kVerification;
  } catch (const std::invalid_argument& e) {
    err << "usage error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return kUsage;
}

}  // namespace briges::cli
