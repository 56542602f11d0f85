#include "hawk/cli.hpp"

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "hawk/ablation.hpp"
#include "hawk/errors.hpp"
#include "hawk/eval.hpp"
#include "hawk/io_util.hpp"
#include "hawk/model.hpp"
#include "hawk/model_io.hpp"
#include "hawk/pruner.hpp"

namespace hawk {

namespace {

namespace fs = std::filesystem;

constexpr int kOk = 0;
constexpr int kRuntimeFailure = 1;
constexpr int kUsageFailure = 2;

// HAWK_OUT_DIR, when set, wins over the flag.
std::string resolve_out_dir(const std::string& flag_value) {
  const char* env = std::getenv("HAWK_OUT_DIR");
  std::string dir = (env != nullptr && *env != '\0') ? env : flag_value;
  fs::create_directories(dir);
  return dir;
}

bool check_input(const std::string& path, const char* what) {
  if (fs::exists(path)) return true;
  std::cerr << "error: " << what << " not found: " << path << "\n";
  return false;
}

struct CommonOpts {
  std::uint64_t seed = 0;
  std::string out_dir = ".";
};

struct RatioOpts {
  std::vector<double> keep_ratios;
  std::vector<double> prune_ratios;

  // Exactly one family may be given; prune ratios convert to keep ratios.
  bool resolve(std::vector<double>& out, bool required) const {
    if (!keep_ratios.empty() && !prune_ratios.empty()) {
      std::cerr << "error: --keep-ratio and --prune-ratio are mutually exclusive\n";
      return false;
    }
    if (keep_ratios.empty() && prune_ratios.empty()) {
      if (required) std::cerr << "error: one of --keep-ratio/--prune-ratio is required\n";
      return !required;
    }
    out = keep_ratios;
    for (double p : prune_ratios) out.push_back(1.0 - p);
    for (double r : out) {
      if (!(r >= 0.0 && r <= 1.0)) {
        std::cerr << "error: ratios must lie in [0, 1]\n";
        return false;
      }
    }
    return true;
  }
};

struct ScoreOpts {
  std::size_t layer = 0;
  bool softmax = false;
  bool rope = false;
  std::size_t query_window = 0;

  ScoreOptions to_options() const {
    ScoreOptions o;
    o.layer = layer;
    o.softmax = softmax;
    o.reinstate_rotary = rope;
    o.query_tail = query_window;
    return o;
  }
};

// The suite spec's own seed is mixed with the CLI seed so one flag controls
// every sample while distinct suites stay decorrelated.
EvalSuite load_and_materialize(const ModelConfig& config, const std::string& path,
                               std::uint64_t cli_seed) {
  SuiteSpec spec = load_suite_spec(path);
  spec.seed = derive_seed(cli_seed, spec.seed);
  return materialize_suite(config, spec);
}

HeadWeightVector head_weights_or_uniform(const std::string& path,
                                         const ModelConfig& config) {
  if (path.empty()) return HeadWeightVector::uniform(config.n_heads);
  HeadWeightVector w = load_head_weights(path);
  if (w.n_heads() != config.n_heads) {
    throw ShapeError("head-weight file has " + std::to_string(w.n_heads()) +
                     " heads, model has " + std::to_string(config.n_heads));
  }
  return w;
}

// ---------------------------------------------------------------------------
// gen-model
// ---------------------------------------------------------------------------

struct GenModelOpts {
  CommonOpts common;
  std::string kind = "copy-task";  // copy-task | toy
  std::string preset;              // bench-large
  std::size_t d_model = 64, n_layers = 2, n_heads = 4, d_k = 16, d_ff = 64, vocab = 32;
  double rope_base = 10000.0;
  std::size_t n_text = 8, n_visual = 64, n_needles = 1;
  std::size_t n_tasks = 16, decode_steps = 1;
};

int cmd_gen_model(GenModelOpts opts) {
  if (opts.preset == "bench-large") {
    opts.kind = "toy";
    opts.d_model = 256;
    opts.n_layers = 4;
    opts.n_heads = 8;
    opts.d_k = 32;
    opts.d_ff = 512;
    opts.vocab = 256;
    opts.n_text = 32;
    opts.n_visual = 1024;
    opts.n_tasks = 1;
    opts.decode_steps = 4;
  } else if (!opts.preset.empty()) {
    std::cerr << "error: unknown preset '" << opts.preset << "'\n";
    return kUsageFailure;
  }
  if (opts.kind != "copy-task" && opts.kind != "toy") {
    std::cerr << "error: --kind must be copy-task or toy\n";
    return kUsageFailure;
  }

  ModelConfig config;
  config.d_model = opts.d_model;
  config.n_layers = opts.n_layers;
  config.n_heads = opts.n_heads;
  config.d_k = opts.d_k;
  config.d_ff = opts.d_ff;
  config.vocab_size = opts.vocab;
  config.rope_base = opts.rope_base;
  config.validate();

  const std::string dir = resolve_out_dir(opts.common.out_dir);

  SuiteSpec suite;
  suite.name = opts.kind == "toy" ? "random-workload" : "copy-needle";
  suite.kind = opts.kind == "toy" ? SuiteKind::kRandom : SuiteKind::kCopyNeedle;
  suite.scoring = ScoringRule::kAccuracy;
  suite.seed = derive_seed(opts.common.seed, 2);
  suite.n_tasks = opts.n_tasks;
  suite.decode_steps = opts.decode_steps;
  suite.generator.n_text = opts.n_text;
  suite.generator.n_visual = opts.n_visual;
  suite.generator.n_needles = opts.n_needles;

  ModelWeights weights;
  if (opts.kind == "copy-task") {
    weights = build_copy_model(config, suite.generator, derive_seed(opts.common.seed, 1));
  } else {
    Rng rng(derive_seed(opts.common.seed, 1));
    weights = make_random_model(config, rng);
  }

  save_weights(weights, config, dir + "/model.hawkwts");
  save_model_config(config, dir + "/model.config.json");
  save_suite_spec(suite, dir + "/suite.json");
  const EvalSuite materialized = materialize_suite(config, suite);
  save_sequence(materialized.tasks[0].seq, dir + "/sequence.json");

  std::cout << "wrote model.hawkwts, model.config.json, suite.json, sequence.json to "
            << dir << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------
// ablate
// ---------------------------------------------------------------------------

struct AblateOpts {
  CommonOpts common;
  std::string model;
  std::vector<std::string> suites;
  std::string layer_policy = "first-layer";
  std::size_t head_begin = 0;
  std::size_t head_end = 0;
  std::size_t threads = 1;
};

int cmd_ablate(const AblateOpts& opts) {
  if (!check_input(opts.model, "model")) return kUsageFailure;
  for (const std::string& s : opts.suites) {
    if (!check_input(s, "suite")) return kUsageFailure;
  }

  auto [weights, config] = load_weights(opts.model);
  std::vector<EvalSuite> suites;
  for (const std::string& path : opts.suites) {
    suites.push_back(load_and_materialize(config, path, opts.common.seed));
  }

  AblationRunSpec spec;
  for (const EvalSuite& s : suites) spec.suite_names.push_back(s.name);
  spec.head_begin = opts.head_begin;
  spec.head_end = opts.head_end;
  spec.layer_policy = layer_mask_policy_from_string(opts.layer_policy);
  spec.seed = opts.common.seed;
  spec.threads = opts.threads;

  const AblationReport report = run_ablation(weights, config, spec, suites);

  const std::string dir = resolve_out_dir(opts.common.out_dir);
  save_ablation_report(report, dir + "/ablation_report.json");
  export_weights(report, dir + "/head_weights.json");

  std::cout << "ablated heads [" << report.spec.head_begin << ", " << report.spec.head_end
            << ") over " << suites.size() << " suite(s)\nhead weights:";
  for (double w : report.weights.weights) std::cout << " " << format_double(w);
  std::cout << "\nwrote ablation_report.json, head_weights.json to " << dir << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------
// prune
// ---------------------------------------------------------------------------

struct PruneOpts {
  CommonOpts common;
  std::string model;
  std::string weights;  // head weights
  std::string input;
  std::string mode = "hawk";
  RatioOpts ratios;
  ScoreOpts score;
  bool emit_pruned = false;
};

int cmd_prune(const PruneOpts& opts) {
  if (!check_input(opts.model, "model")) return kUsageFailure;
  if (!check_input(opts.input, "input sequence")) return kUsageFailure;
  if (!opts.weights.empty() && !check_input(opts.weights, "head-weight file")) {
    return kUsageFailure;
  }
  std::vector<double> ratios;
  if (!opts.ratios.resolve(ratios, true)) return kUsageFailure;
  if (ratios.size() != 1) {
    std::cerr << "error: prune takes exactly one ratio\n";
    return kUsageFailure;
  }
  const PruneMode mode = prune_mode_from_string(opts.mode);
  if (mode == PruneMode::kHawk && opts.weights.empty()) {
    std::cerr << "error: mode=hawk requires --weights (a head-weight file)\n";
    return kUsageFailure;
  }

  auto [weights, config] = load_weights(opts.model);
  const MultimodalSequence seq = load_sequence(opts.input);
  const HeadWeightVector head_weights = head_weights_or_uniform(opts.weights, config);
  const std::size_t keep = keep_count_from_ratio(seq.n_visual(), ratios[0]);

  PruneDecision decision;
  if (mode == PruneMode::kHawk) {
    const ScoreMatrix scores =
        text_guided_scores(seq, weights, config, opts.score.to_options());
    decision = select_tokens(aggregate_importance(scores, head_weights), keep);
  } else {
    Rng rng(derive_seed(opts.common.seed, 0));
    decision = baseline_select(seq, weights, config, mode, keep, rng,
                               opts.score.to_options());
  }

  const std::string dir = resolve_out_dir(opts.common.out_dir);
  nlohmann::json out{{"decision", prune_decision_to_json(decision)},
                     {"n_visual", seq.n_visual()},
                     {"keep_ratio", ratios[0]},
                     {"prune_ratio_percent", prune_ratio_percent(seq.n_visual(), keep)},
                     {"seed", opts.common.seed}};
  write_file_atomic(dir + "/decision.json", out.dump(2) + "\n");
  if (opts.emit_pruned) {
    save_sequence(apply_decision(seq, decision), dir + "/pruned_sequence.json");
  }

  std::cout << "kept " << decision.keep_count << " of " << seq.n_visual()
            << " visual tokens (" << format_double(prune_ratio_percent(seq.n_visual(), keep))
            << "% pruned) -> " << dir << "/decision.json\n";
  return kOk;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalOpts {
  CommonOpts common;
  std::string model;
  std::string weights;
  std::vector<std::string> suites;
  std::vector<std::string> modes{"hawk", "random"};
  RatioOpts ratios;
  ScoreOpts score;
};

int cmd_eval(const EvalOpts& opts) {
  if (!check_input(opts.model, "model")) return kUsageFailure;
  for (const std::string& s : opts.suites) {
    if (!check_input(s, "suite")) return kUsageFailure;
  }
  if (!opts.weights.empty() && !check_input(opts.weights, "head-weight file")) {
    return kUsageFailure;
  }
  std::vector<double> ratios;
  if (!opts.ratios.resolve(ratios, true)) return kUsageFailure;
  std::vector<PruneMode> modes;
  for (const std::string& m : opts.modes) modes.push_back(prune_mode_from_string(m));

  auto [weights, config] = load_weights(opts.model);
  std::vector<EvalSuite> suites;
  for (const std::string& path : opts.suites) {
    suites.push_back(load_and_materialize(config, path, opts.common.seed));
  }
  const HeadWeightVector head_weights = head_weights_or_uniform(opts.weights, config);

  const PruningEvalResult result =
      run_pruning_eval(weights, config, suites, head_weights, modes, ratios,
                       opts.common.seed, opts.score.to_options());

  const std::string dir = resolve_out_dir(opts.common.out_dir);
  write_file_atomic(dir + "/metrics.csv", metrics_csv(result.rows));
  write_file_atomic(dir + "/eval_report.json", result.detail.dump(2) + "\n");

  for (const EvalRow& row : result.rows) {
    std::printf("%-16s %-10s keep=%-6s rel=%7s%%  recall=%s\n", row.suite.c_str(),
                row.mode.c_str(), format_double(row.keep_ratio).c_str(),
                format_double(row.score).c_str(), format_double(row.recall).c_str());
  }
  std::cout << "wrote metrics.csv, eval_report.json to " << dir << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------
// bench
// ---------------------------------------------------------------------------

struct BenchOpts {
  CommonOpts common;
  std::string model;
  std::string suite;
  std::string weights;
  std::string mode = "hawk";
  RatioOpts ratios;
  std::size_t repetitions = 5;
};

int cmd_bench(const BenchOpts& opts) {
  if (!check_input(opts.model, "model")) return kUsageFailure;
  if (!check_input(opts.suite, "suite")) return kUsageFailure;
  if (!opts.weights.empty() && !check_input(opts.weights, "head-weight file")) {
    return kUsageFailure;
  }
  std::vector<double> ratios;
  if (!opts.ratios.resolve(ratios, true)) return kUsageFailure;
  if (opts.repetitions < 3) {
    std::cerr << "error: --reps must be >= 3\n";
    return kUsageFailure;
  }
  const PruneMode mode = prune_mode_from_string(opts.mode);

  auto [weights, config] = load_weights(opts.model);
  const EvalSuite suite = load_and_materialize(config, opts.suite, opts.common.seed);
  const HeadWeightVector head_weights = head_weights_or_uniform(opts.weights, config);

  nlohmann::json reports = nlohmann::json::array();
  std::printf("%-8s %-8s %12s %12s %8s %12s\n", "ratio", "keep", "full-ms", "pruned-ms",
              "speedup", "cache-ratio");
  for (double ratio : ratios) {
    const EfficiencyReport r = bench_end_to_end(weights, config, suite, mode, head_weights,
                                                ratio, opts.repetitions, opts.common.seed);
    reports.push_back(efficiency_report_to_json(r));
    const double cache_ratio =
        static_cast<double>(r.cache_bytes_pruned) / static_cast<double>(r.cache_bytes_full);
    std::printf("%-8s %-8zu %12.2f %12.2f %7.2fx %12.6f\n", format_double(ratio).c_str(),
                r.keep_count, r.wall_ms_full, r.wall_ms_pruned, r.speedup, cache_ratio);
  }

  const std::string dir = resolve_out_dir(opts.common.out_dir);
  write_file_atomic(dir + "/efficiency.json", reports.dump(2) + "\n");
  std::cout << "wrote efficiency.json to " << dir << "\n";
  return kOk;
}

void add_common(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("--seed", opts.seed, "base seed; all randomness derives from it");
  cmd->add_option("--out-dir", opts.out_dir,
                  "output directory (HAWK_OUT_DIR overrides)");
}

void add_ratios(CLI::App* cmd, RatioOpts& opts) {
  cmd->add_option("--keep-ratio", opts.keep_ratios, "fraction of visual tokens to keep");
  cmd->add_option("--prune-ratio", opts.prune_ratios, "fraction of visual tokens to drop");
}

void add_score(CLI::App* cmd, ScoreOpts& opts) {
  cmd->add_option("--score-layer", opts.layer, "layer providing the scoring projections");
  cmd->add_flag("--score-softmax", opts.softmax, "softmax scores over keys (ablation mode)");
  cmd->add_flag("--score-rope", opts.rope, "reinstate rotary rotation (ablation mode)");
  cmd->add_option("--query-window", opts.query_window,
                  "use only the last K text rows as queries (0 = all)");
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"toy multimodal decoder with head-importance-aware visual token pruning"};
  app.require_subcommand(1);

  GenModelOpts gen;
  CLI::App* cmd_gen = app.add_subcommand("gen-model", "emit a seeded toy or copy-task model");
  add_common(cmd_gen, gen.common);
  cmd_gen->add_option("--kind", gen.kind, "copy-task | toy");
  cmd_gen->add_option("--preset", gen.preset, "bench-large");
  cmd_gen->add_option("--d-model", gen.d_model);
  cmd_gen->add_option("--n-layers", gen.n_layers);
  cmd_gen->add_option("--n-heads", gen.n_heads);
  cmd_gen->add_option("--d-k", gen.d_k);
  cmd_gen->add_option("--d-ff", gen.d_ff);
  cmd_gen->add_option("--vocab", gen.vocab);
  cmd_gen->add_option("--rope-base", gen.rope_base);
  cmd_gen->add_option("--n-text", gen.n_text);
  cmd_gen->add_option("--n-visual", gen.n_visual);
  cmd_gen->add_option("--n-needles", gen.n_needles);
  cmd_gen->add_option("--n-tasks", gen.n_tasks);
  cmd_gen->add_option("--decode-steps", gen.decode_steps);

  AblateOpts ablate;
  CLI::App* cmd_abl = app.add_subcommand("ablate", "run per-head masking and derive weights");
  add_common(cmd_abl, ablate.common);
  cmd_abl->add_option("--model", ablate.model, "weight file")->required();
  cmd_abl->add_option("--suite", ablate.suites, "suite spec file(s)")->required();
  cmd_abl->add_option("--layer-policy", ablate.layer_policy, "first-layer | all-layers");
  cmd_abl->add_option("--head-begin", ablate.head_begin);
  cmd_abl->add_option("--head-end", ablate.head_end, "0 = n_heads");
  cmd_abl->add_option("--threads", ablate.threads);

  PruneOpts prune;
  CLI::App* cmd_pr = app.add_subcommand("prune", "score and select visual tokens");
  add_common(cmd_pr, prune.common);
  cmd_pr->add_option("--model", prune.model, "weight file")->required();
  cmd_pr->add_option("--weights", prune.weights, "head-weight file (required for hawk)");
  cmd_pr->add_option("--input", prune.input, "sequence JSON")->required();
  cmd_pr->add_option("--mode", prune.mode, "hawk | mean-head | random | diversity");
  add_ratios(cmd_pr, prune.ratios);
  add_score(cmd_pr, prune.score);
  cmd_pr->add_flag("--emit-pruned", prune.emit_pruned, "also write the pruned sequence");

  EvalOpts eval;
  CLI::App* cmd_ev = app.add_subcommand("eval", "compare pruning modes across ratios");
  add_common(cmd_ev, eval.common);
  cmd_ev->add_option("--model", eval.model, "weight file")->required();
  cmd_ev->add_option("--weights", eval.weights, "head-weight file (uniform if absent)");
  cmd_ev->add_option("--suite", eval.suites, "suite spec file(s)")->required();
  cmd_ev->add_option("--mode", eval.modes, "modes to compare");
  add_ratios(cmd_ev, eval.ratios);
  add_score(cmd_ev, eval.score);

  BenchOpts bench;
  CLI::App* cmd_be = app.add_subcommand("bench", "time full vs pruned decoding");
  add_common(cmd_be, bench.common);
  cmd_be->add_option("--model", bench.model, "weight file")->required();
  cmd_be->add_option("--suite", bench.suite, "suite spec file")->required();
  cmd_be->add_option("--weights", bench.weights, "head-weight file (uniform if absent)");
  cmd_be->add_option("--mode", bench.mode, "hawk | mean-head | random | diversity");
  add_ratios(cmd_be, bench.ratios);
  cmd_be->add_option("--reps", bench.repetitions, "timing repetitions (>= 3)");

  std::vector<std::string> argv_storage;
  argv_storage.reserve(args.size() + 1);
  argv_storage.push_back("hawk");
  for (const std::string& a : args) argv_storage.push_back(a);
  std::vector<const char*> argv;
  for (const std::string& a : argv_storage) argv.push_back(a.c_str());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsageFailure;
  }

  try {
    if (cmd_gen->parsed()) return cmd_gen_model(gen);
    if (cmd_abl->parsed()) return cmd_ablate(ablate);
    if (cmd_pr->parsed()) return cmd_prune(prune);
    if (cmd_ev->parsed()) return cmd_eval(eval);
    if (cmd_be->parsed()) return cmd_bench(bench);
  } catch (const nlohmann::json::parse_error& e) {
    std::cerr << "error: malformed JSON input: " << e.what() << "\n";
    return kUsageFailure;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntimeFailure;
  }
  return kUsageFailure;
}

}  // namespace hawk
