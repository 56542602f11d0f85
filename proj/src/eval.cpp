#include "hawk/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include <nlohmann/json.hpp>

#include "hawk/io_util.hpp"
#include "hawk/model_io.hpp"

namespace hawk {

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Needle direction with reserved coordinates removed, unit norm.
std::vector<double> resolved_needle_direction(const ModelConfig& config,
                                              const CopyTaskSpec& spec) {
  std::vector<double> dir(config.d_model, 0.0);
  if (spec.needle_direction.empty()) {
    dir[1] = 1.0;
    return dir;
  }
  dir = spec.needle_direction;
  dir[0] = 0.0;
  for (std::size_t p = 0; p < spec.payload_tokens.size(); ++p) dir[2 + p] = 0.0;
  double norm = 0.0;
  for (double v : dir) norm += v * v;
  norm = std::sqrt(norm);
  if (norm < 1e-9) {
    throw ConfigError("needle direction collapses onto reserved coordinates");
  }
  for (double& v : dir) v /= norm;
  return dir;
}

void fill_gaussian(Matrix& m, Rng& rng, double scale) {
  for (std::size_t i = 0; i < m.rows(); ++i) {
    for (double& v : m.row(i)) v = rng.normal() * scale;
  }
}

}  // namespace

std::string to_string(ScoringRule rule) {
  switch (rule) {
    case ScoringRule::kAccuracy: return "accuracy";
    case ScoringRule::kRecall: return "recall";
    case ScoringRule::kNegDivergence: return "neg-divergence";
  }
  return "accuracy";
}

ScoringRule scoring_rule_from_string(const std::string& s) {
  if (s == "accuracy") return ScoringRule::kAccuracy;
  if (s == "recall") return ScoringRule::kRecall;
  if (s == "neg-divergence") return ScoringRule::kNegDivergence;
  throw ConfigError("unknown scoring rule: " + s);
}

void CopyTaskSpec::validate(const ModelConfig& config) const {
  const std::size_t n_payload = payload_tokens.size();
  if (n_payload < 2) throw ConfigError("copy task: need at least 2 payload tokens");
  if (n_payload > config.d_k) {
    throw ConfigError("copy task: payload alphabet exceeds d_k value slots");
  }
  if (2 + n_payload >= config.d_model) {
    throw ConfigError("copy task: d_model too small for reserved coordinates");
  }
  for (std::size_t i = 0; i < n_payload; ++i) {
    if (payload_tokens[i] >= config.vocab_size) {
      throw ConfigError("copy task: payload token outside vocabulary");
    }
    for (std::size_t j = i + 1; j < n_payload; ++j) {
      if (payload_tokens[i] == payload_tokens[j]) {
        throw ConfigError("copy task: duplicate payload token");
      }
    }
  }
  if (config.n_heads < 1 + noise_heads) {
    throw ConfigError("copy task: config needs at least " +
                      std::to_string(1 + noise_heads) + " heads");
  }
  if (config.d_k < 4) {
    throw ConfigError("copy task: d_k must be >= 4 so a slow rotary pair exists");
  }
  if (saboteur_head >= 0) {
    if (saboteur_head == 0 || static_cast<std::size_t>(saboteur_head) >= config.n_heads) {
      throw ConfigError("copy task: saboteur head out of range");
    }
    if (saboteur_token_index >= n_payload) {
      throw ConfigError("copy task: saboteur token index out of range");
    }
  }
  if (n_text == 0 || n_visual == 0 || n_needles == 0 || n_needles > n_visual) {
    throw ConfigError("copy task: invalid task dimensions");
  }
  if (!(payload_amp_min > 0.0) || payload_amp_max < payload_amp_min) {
    throw ConfigError("copy task: invalid payload amplitude range");
  }
  if (!spec_gains_ok()) throw ConfigError("copy task: gains must be positive");
  if (!needle_direction.empty() && needle_direction.size() != config.d_model) {
    throw ConfigError("copy task: needle direction width mismatch");
  }
}

bool CopyTaskSpec::spec_gains_ok() const {
  return query_gain > 0.0 && key_gain > 0.0 && value_gain > 0.0 && output_gain > 0.0 &&
         readout_gain > 0.0 && needle_amp > 0.0;
}

ModelWeights build_copy_model(const ModelConfig& config, const CopyTaskSpec& spec,
                              std::uint64_t seed) {
  config.validate();
  spec.validate(config);
  Rng rng(seed);
  const std::size_t n_payload = spec.payload_tokens.size();
  const std::vector<double> dir = resolved_needle_direction(config, spec);
  const std::size_t slow_pair_col = config.d_k - 2;  // lowest-frequency rotary pair
  const std::size_t junk_begin = 2 + n_payload;

  ModelWeights w;
  w.token_embedding = Matrix(config.vocab_size, config.d_model);
  fill_gaussian(w.token_embedding, rng, spec.noise_scale);

  w.layers.resize(config.n_layers);
  for (std::size_t l = 0; l < config.n_layers; ++l) {
    LayerWeights& lw = w.layers[l];
    lw.w_q.assign(config.n_heads, Matrix(config.d_model, config.d_k));
    lw.w_k.assign(config.n_heads, Matrix(config.d_model, config.d_k));
    lw.w_v.assign(config.n_heads, Matrix(config.d_model, config.d_k));
    lw.w_o = Matrix(config.d_model, config.d_model);
    lw.mlp_in = Matrix(config.d_model, config.d_ff);
    lw.mlp_out = Matrix(config.d_ff, config.d_model);
    fill_gaussian(lw.mlp_in, rng, spec.noise_scale);
    fill_gaussian(lw.mlp_out, rng, spec.noise_scale);

    if (l > 0) {
      // Later blocks are pure low-amplitude noise; the copy circuit lives in
      // the first layer, where the scoring projections are read from.
      for (std::size_t h = 0; h < config.n_heads; ++h) {
        fill_gaussian(lw.w_q[h], rng, spec.noise_scale);
        fill_gaussian(lw.w_k[h], rng, spec.noise_scale);
        fill_gaussian(lw.w_v[h], rng, spec.noise_scale);
      }
      fill_gaussian(lw.w_o, rng, spec.noise_scale);
      continue;
    }

    // Head 0: the querying row projects onto the slow rotary pair, needles
    // project there through the needle direction, and payload slots route
    // into per-slot value coordinates.
    lw.w_q[0].at(0, slow_pair_col) = spec.query_gain;
    for (std::size_t c = 0; c < config.d_model; ++c) {
      lw.w_k[0].at(c, slow_pair_col) = spec.key_gain * dir[c];
    }
    for (std::size_t p = 0; p < n_payload; ++p) {
      lw.w_v[0].at(2 + p, p) = spec.value_gain;
      lw.w_o.at(0 * config.d_k + p, 2 + p) = spec.output_gain;
    }

    for (std::size_t h = 1; h < 1 + spec.noise_heads; ++h) {
      if (static_cast<int>(h) == spec.saboteur_head) {
        // Zero projections give uniform attention; the needle marker is
        // copied into value slot 0 and emitted as a fixed wrong answer.
        for (std::size_t c = 0; c < config.d_model; ++c) {
          lw.w_v[h].at(c, 0) = spec.saboteur_gain * dir[c];
        }
        lw.w_o.at(h * config.d_k + 0, 2 + spec.saboteur_token_index) = spec.saboteur_gain;
        continue;
      }
      fill_gaussian(lw.w_q[h], rng, spec.noise_scale);
      fill_gaussian(lw.w_k[h], rng, spec.noise_scale);
      fill_gaussian(lw.w_v[h], rng, spec.noise_scale);
      // Output-orthogonal by construction: noise heads only write junk
      // coordinates, which the readout ignores.
      for (std::size_t c = 0; c < config.d_k; ++c) {
        for (std::size_t j = junk_begin; j < config.d_model; ++j) {
          lw.w_o.at(h * config.d_k + c, j) = rng.normal() * spec.noise_scale;
        }
      }
    }
    // Heads beyond 1 + noise_heads stay all-zero (dead heads).
  }

  w.readout = Matrix(config.d_model, config.vocab_size);
  for (std::size_t p = 0; p < n_payload; ++p) {
    w.readout.at(2 + p, spec.payload_tokens[p]) = spec.readout_gain;
  }
  return w;
}

namespace {

NeedleTask make_needle_task_impl(const ModelConfig& config, const CopyTaskSpec& spec,
                                 Rng& rng, int forced_slot) {
  const std::size_t n_payload = spec.payload_tokens.size();
  const std::vector<double> dir = resolved_needle_direction(config, spec);

  const std::size_t slot =
      forced_slot >= 0 ? static_cast<std::size_t>(forced_slot) : rng.below(n_payload);
  const double beta = rng.uniform(spec.payload_amp_min, spec.payload_amp_max);
  std::vector<std::size_t> needles =
      rng.sample_without_replacement(spec.n_visual, spec.n_needles);

  // Rows orthogonal to every reserved direction: the query marker and payload
  // slots are zeroed, the needle direction projected out.
  auto junk_row = [&](std::span<double> row, double scale) {
    for (double& v : row) v = rng.normal() * scale;
    row[0] = 0.0;
    for (std::size_t p = 0; p < n_payload; ++p) row[2 + p] = 0.0;
    double proj = 0.0;
    for (std::size_t c = 0; c < row.size(); ++c) proj += row[c] * dir[c];
    for (std::size_t c = 0; c < row.size(); ++c) row[c] -= proj * dir[c];
  };

  NeedleTask task;
  task.seq.order = spec.order;
  task.seq.text = Matrix(spec.n_text, config.d_model);
  for (std::size_t r = 0; r + 1 < spec.n_text; ++r) junk_row(task.seq.text.row(r), 0.5);
  task.seq.text.at(spec.n_text - 1, 0) = 1.0;  // the querying row

  task.seq.visual = Matrix(spec.n_visual, config.d_model);
  for (std::size_t r = 0; r < spec.n_visual; ++r) {
    const auto it = std::find(needles.begin(), needles.end(), r);
    if (it == needles.end()) {
      junk_row(task.seq.visual.row(r), 0.5);
      continue;
    }
    // Needles carry the marker plus a payload amplitude; with several
    // needles the amplitudes differ so dropping any one shifts the output.
    const std::size_t order_idx = static_cast<std::size_t>(it - needles.begin());
    const double amp = beta * static_cast<double>(spec.n_needles - order_idx);
    auto row = task.seq.visual.row(r);
    for (std::size_t c = 0; c < config.d_model; ++c) row[c] = spec.needle_amp * dir[c];
    row[2 + slot] += amp;
  }

  task.needles = std::move(needles);
  task.payload_token = spec.payload_tokens[slot];
  task.expected_token = spec.payload_tokens[slot];
  return task;
}

}  // namespace

NeedleTask make_needle_task(const ModelConfig& config, const CopyTaskSpec& spec, Rng& rng) {
  config.validate();
  spec.validate(config);
  return make_needle_task_impl(config, spec, rng, -1);
}

std::pair<ModelWeights, NeedleTask> make_copy_task_model(
    const ModelConfig& config, std::span<const double> needle_direction,
    std::size_t payload_token, std::size_t noise_heads, Rng& rng) {
  CopyTaskSpec spec;
  spec.noise_heads = noise_heads;
  spec.needle_direction.assign(needle_direction.begin(), needle_direction.end());
  config.validate();
  spec.validate(config);

  int slot = -1;
  for (std::size_t p = 0; p < spec.payload_tokens.size(); ++p) {
    if (spec.payload_tokens[p] == payload_token) slot = static_cast<int>(p);
  }
  if (slot < 0) {
    throw ConfigError("payload token " + std::to_string(payload_token) +
                      " is not in the answer alphabet");
  }
  ModelWeights weights = build_copy_model(config, spec, rng.next_u64());
  NeedleTask task = make_needle_task_impl(config, spec, rng, slot);
  return {std::move(weights), std::move(task)};
}

nlohmann::json copy_task_spec_to_json(const CopyTaskSpec& spec) {
  return nlohmann::json{{"n_text", spec.n_text},
                        {"n_visual", spec.n_visual},
                        {"n_needles", spec.n_needles},
                        {"payload_tokens", spec.payload_tokens},
                        {"query_gain", spec.query_gain},
                        {"key_gain", spec.key_gain},
                        {"value_gain", spec.value_gain},
                        {"output_gain", spec.output_gain},
                        {"readout_gain", spec.readout_gain},
                        {"needle_amp", spec.needle_amp},
                        {"payload_amp_min", spec.payload_amp_min},
                        {"payload_amp_max", spec.payload_amp_max},
                        {"noise_heads", spec.noise_heads},
                        {"noise_scale", spec.noise_scale},
                        {"saboteur_head", spec.saboteur_head},
                        {"saboteur_gain", spec.saboteur_gain},
                        {"saboteur_token_index", spec.saboteur_token_index},
                        {"order", to_string(spec.order)},
                        {"needle_direction", spec.needle_direction}};
}

CopyTaskSpec copy_task_spec_from_json(const nlohmann::json& j) {
  CopyTaskSpec spec;
  spec.n_text = j.value("n_text", spec.n_text);
  spec.n_visual = j.value("n_visual", spec.n_visual);
  spec.n_needles = j.value("n_needles", spec.n_needles);
  spec.payload_tokens = j.value("payload_tokens", spec.payload_tokens);
  spec.query_gain = j.value("query_gain", spec.query_gain);
  spec.key_gain = j.value("key_gain", spec.key_gain);
  spec.value_gain = j.value("value_gain", spec.value_gain);
  spec.output_gain = j.value("output_gain", spec.output_gain);
  spec.readout_gain = j.value("readout_gain", spec.readout_gain);
  spec.needle_amp = j.value("needle_amp", spec.needle_amp);
  spec.payload_amp_min = j.value("payload_amp_min", spec.payload_amp_min);
  spec.payload_amp_max = j.value("payload_amp_max", spec.payload_amp_max);
  spec.noise_heads = j.value("noise_heads", spec.noise_heads);
  spec.noise_scale = j.value("noise_scale", spec.noise_scale);
  spec.saboteur_head = j.value("saboteur_head", spec.saboteur_head);
  spec.saboteur_gain = j.value("saboteur_gain", spec.saboteur_gain);
  spec.saboteur_token_index = j.value("saboteur_token_index", spec.saboteur_token_index);
  spec.order = sequence_order_from_string(j.value("order", to_string(spec.order)));
  spec.needle_direction = j.value("needle_direction", spec.needle_direction);
  return spec;
}

std::string to_string(SuiteKind kind) {
  return kind == SuiteKind::kCopyNeedle ? "copy-needle" : "random";
}

SuiteKind suite_kind_from_string(const std::string& s) {
  if (s == "copy-needle") return SuiteKind::kCopyNeedle;
  if (s == "random") return SuiteKind::kRandom;
  throw ConfigError("unknown suite kind: " + s);
}

nlohmann::json suite_spec_to_json(const SuiteSpec& spec) {
  return nlohmann::json{{"name", spec.name},
                        {"kind", to_string(spec.kind)},
                        {"scoring", to_string(spec.scoring)},
                        {"seed", spec.seed},
                        {"n_tasks", spec.n_tasks},
                        {"decode_steps", spec.decode_steps},
                        {"generator", copy_task_spec_to_json(spec.generator)}};
}

SuiteSpec suite_spec_from_json(const nlohmann::json& j) {
  SuiteSpec spec;
  spec.name = j.at("name").get<std::string>();
  spec.kind = suite_kind_from_string(j.value("kind", std::string("copy-needle")));
  spec.scoring = scoring_rule_from_string(j.at("scoring").get<std::string>());
  spec.seed = j.at("seed").get<std::uint64_t>();
  spec.n_tasks = j.at("n_tasks").get<std::size_t>();
  spec.decode_steps = j.value("decode_steps", std::size_t{1});
  spec.generator = copy_task_spec_from_json(j.at("generator"));
  if (spec.n_tasks == 0) throw ConfigError("suite '" + spec.name + "': n_tasks must be >= 1");
  if (spec.decode_steps == 0) {
    throw ConfigError("suite '" + spec.name + "': decode_steps must be >= 1");
  }
  return spec;
}

void save_suite_spec(const SuiteSpec& spec, const std::string& path) {
  write_file_atomic(path, suite_spec_to_json(spec).dump(2) + "\n");
}

SuiteSpec load_suite_spec(const std::string& path) {
  return suite_spec_from_json(nlohmann::json::parse(read_file(path)));
}

EvalSuite materialize_suite(const ModelConfig& config, const SuiteSpec& spec) {
  config.validate();
  EvalSuite suite;
  suite.name = spec.name;
  suite.scoring = spec.scoring;
  suite.seed = spec.seed;
  suite.decode_steps = spec.decode_steps;
  suite.tasks.reserve(spec.n_tasks);
  if (spec.kind == SuiteKind::kCopyNeedle) {
    spec.generator.validate(config);
    for (std::size_t t = 0; t < spec.n_tasks; ++t) {
      Rng rng(derive_seed(spec.seed, t));
      suite.tasks.push_back(make_needle_task_impl(config, spec.generator, rng, -1));
    }
    return suite;
  }
  // Unstructured gaussian workload; no needles, nothing to answer.
  if (spec.generator.n_text == 0 || spec.generator.n_visual == 0) {
    throw ConfigError("suite '" + spec.name + "': invalid task dimensions");
  }
  for (std::size_t t = 0; t < spec.n_tasks; ++t) {
    Rng rng(derive_seed(spec.seed, t));
    NeedleTask task;
    task.seq.order = spec.generator.order;
    task.seq.text = Matrix(spec.generator.n_text, config.d_model);
    task.seq.visual = Matrix(spec.generator.n_visual, config.d_model);
    fill_gaussian(task.seq.text, rng, 0.5);
    fill_gaussian(task.seq.visual, rng, 0.5);
    suite.tasks.push_back(std::move(task));
  }
  return suite;
}

double evaluate_suite(const ModelWeights& weights, const ModelConfig& config,
                      const EvalSuite& suite, const VisualMaskSet& masks) {
  if (suite.tasks.empty()) throw ConfigError("suite '" + suite.name + "' has no tasks");
  switch (suite.scoring) {
    case ScoringRule::kAccuracy: {
      std::size_t correct = 0;
      for (const NeedleTask& task : suite.tasks) {
        const GenerationOutput out =
            decode_greedy(weights, config, task.seq, suite.decode_steps, masks);
        if (out.tokens[0] == task.expected_token) ++correct;
      }
      return static_cast<double>(correct) / static_cast<double>(suite.tasks.size());
    }
    case ScoringRule::kNegDivergence: {
      double total = 0.0;
      for (const NeedleTask& task : suite.tasks) {
        const GenerationOutput base =
            decode_greedy(weights, config, task.seq, suite.decode_steps, {});
        const GenerationOutput masked =
            decode_greedy(weights, config, task.seq, suite.decode_steps, masks);
        total += output_divergence(base, masked);
      }
      const double mean = total / static_cast<double>(suite.tasks.size());
      return mean == 0.0 ? 0.0 : -mean;
    }
    case ScoringRule::kRecall:
      throw ConfigError("suite '" + suite.name +
                        "': recall scoring needs a prune decision, not a head mask");
  }
  throw ConfigError("unknown scoring rule");
}

double needle_recall(const PruneDecision& d, const NeedleTask& task) {
  if (task.needles.empty()) return 1.0;
  std::size_t hit = 0;
  for (std::size_t n : task.needles) {
    if (std::binary_search(d.kept.begin(), d.kept.end(), n)) ++hit;
  }
  return static_cast<double>(hit) / static_cast<double>(task.needles.size());
}

double output_divergence(const GenerationOutput& full, const GenerationOutput& pruned) {
  if (full.step_distributions.empty() || pruned.step_distributions.empty()) {
    throw BoundsError("output_divergence: empty generation output");
  }
  constexpr double kEps = 1e-12;
  const std::size_t steps =
      std::min(full.step_distributions.size(), pruned.step_distributions.size());
  double total = 0.0;
  for (std::size_t s = 0; s < steps; ++s) {
    const auto& p = full.step_distributions[s];
    const auto& q = pruned.step_distributions[s];
    if (p.size() != q.size()) {
      throw ShapeError("output_divergence: distribution widths differ at step " +
                       std::to_string(s));
    }
    double kl = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      kl += p[i] * std::log(std::max(p[i], kEps) / std::max(q[i], kEps));
    }
    total += kl;
  }
  double mean = total / static_cast<double>(steps);
  if (mean < 0.0 && mean > -1e-9) mean = 0.0;  // flooring noise on near-identical inputs
  return mean;
}

std::uint64_t prefill_flops(const ModelConfig& config, std::size_t n_text,
                            std::size_t n_visual) {
  const std::uint64_t len = n_text + n_visual;
  const std::uint64_t d = config.d_model;
  const std::uint64_t ff = config.d_ff;
  const std::uint64_t per_layer = 8 * len * d * d + 4 * len * d * ff + 4 * len * len * d;
  return config.n_layers * per_layer + 2 * d * config.vocab_size;
}

void EfficiencyReport::validate() const {
  if (flops_pruned > flops_full) {
    throw ConsistencyError("efficiency report: pruned FLOPs exceed full");
  }
  if (cache_bytes_pruned > cache_bytes_full) {
    throw ConsistencyError("efficiency report: pruned cache exceeds full");
  }
}

nlohmann::json efficiency_report_to_json(const EfficiencyReport& r) {
  return nlohmann::json{{"flops_full", r.flops_full},
                        {"flops_pruned", r.flops_pruned},
                        {"cache_bytes_full", r.cache_bytes_full},
                        {"cache_bytes_pruned", r.cache_bytes_pruned},
                        {"wall_ms_full", r.wall_ms_full},
                        {"wall_ms_pruned", r.wall_ms_pruned},
                        {"speedup", r.speedup},
                        {"keep_ratio", r.keep_ratio},
                        {"keep_count", r.keep_count},
                        {"n_text", r.n_text},
                        {"n_visual", r.n_visual},
                        {"repetitions", r.repetitions}};
}

namespace {

PruneDecision make_decision(const MultimodalSequence& seq, const ModelWeights& weights,
                            const ModelConfig& config, PruneMode mode,
                            const HeadWeightVector& head_weights, std::size_t keep,
                            Rng& rng, const ScoreOptions& options) {
  if (mode == PruneMode::kHawk) {
    const ScoreMatrix scores = text_guided_scores(seq, weights, config, options);
    return select_tokens(aggregate_importance(scores, head_weights), keep);
  }
  return baseline_select(seq, weights, config, mode, keep, rng, options);
}

}  // namespace

EfficiencyReport bench_end_to_end(const ModelWeights& weights, const ModelConfig& config,
                                  const EvalSuite& suite, PruneMode mode,
                                  const HeadWeightVector& head_weights, double keep_ratio,
                                  std::size_t repetitions, std::uint64_t seed) {
  if (repetitions < 3) throw BoundsError("bench_end_to_end: need >= 3 repetitions");
  if (suite.tasks.empty()) throw ConfigError("bench_end_to_end: empty suite");

  EfficiencyReport report;
  report.keep_ratio = keep_ratio;
  report.repetitions = repetitions;
  report.n_text = suite.tasks[0].seq.n_text();
  report.n_visual = suite.tasks[0].seq.n_visual();
  report.keep_count = keep_count_from_ratio(report.n_visual, keep_ratio);
  for (const NeedleTask& task : suite.tasks) {
    const std::size_t n = task.seq.n_text();
    const std::size_t m = task.seq.n_visual();
    const std::size_t keep = keep_count_from_ratio(m, keep_ratio);
    report.flops_full += prefill_flops(config, n, m);
    report.flops_pruned += prefill_flops(config, n, keep);
    report.cache_bytes_full += kv_cache_bytes(config, n + m);
    report.cache_bytes_pruned += kv_cache_bytes(config, n + keep);
  }

  std::vector<double> full_ms;
  std::vector<double> pruned_ms;
  for (std::size_t rep = 0; rep < repetitions; ++rep) {
    auto t0 = Clock::now();
    for (const NeedleTask& task : suite.tasks) {
      decode_greedy(weights, config, task.seq, suite.decode_steps, {});
    }
    const double full = elapsed_ms(t0);

    auto t1 = Clock::now();
    std::size_t task_idx = 0;
    for (const NeedleTask& task : suite.tasks) {
      const std::size_t keep = keep_count_from_ratio(task.seq.n_visual(), keep_ratio);
      Rng rng(derive_seed(seed, task_idx++));
      const PruneDecision d =
          make_decision(task.seq, weights, config, mode, head_weights, keep, rng, {});
      const MultimodalSequence pruned = apply_decision(task.seq, d);
      decode_greedy(weights, config, pruned, suite.decode_steps, {});
    }
    const double pruned = elapsed_ms(t1);

    if (full < 1.0 || pruned < 1.0) {
      throw BenchmarkError("benchmark run under 1 ms; use a larger config");
    }
    full_ms.push_back(full);
    pruned_ms.push_back(pruned);
  }

  report.wall_ms_full = median(full_ms);
  report.wall_ms_pruned = median(pruned_ms);
  report.speedup = report.wall_ms_full / report.wall_ms_pruned;
  report.validate();
  return report;
}

namespace {

double rule_score_pruned(ScoringRule rule, const NeedleTask& task,
                         const PruneDecision& decision, const GenerationOutput& full,
                         const GenerationOutput& pruned) {
  switch (rule) {
    case ScoringRule::kAccuracy:
      return pruned.tokens[0] == task.expected_token ? 1.0 : 0.0;
    case ScoringRule::kRecall:
      return needle_recall(decision, task);
    case ScoringRule::kNegDivergence: {
      const double kl = output_divergence(full, pruned);
      return kl == 0.0 ? 0.0 : -kl;
    }
  }
  return 0.0;
}

double rule_baseline(ScoringRule rule, const std::vector<NeedleTask>& tasks,
                     const std::vector<GenerationOutput>& full) {
  switch (rule) {
    case ScoringRule::kAccuracy: {
      std::size_t correct = 0;
      for (std::size_t t = 0; t < tasks.size(); ++t) {
        if (full[t].tokens[0] == tasks[t].expected_token) ++correct;
      }
      return static_cast<double>(correct) / static_cast<double>(tasks.size());
    }
    case ScoringRule::kRecall:
      return 1.0;  // keeping everything keeps every needle
    case ScoringRule::kNegDivergence:
      return 0.0;
  }
  return 0.0;
}

}  // namespace

PruningEvalResult run_pruning_eval(const ModelWeights& weights, const ModelConfig& config,
                                   const std::vector<EvalSuite>& suites,
                                   const HeadWeightVector& head_weights,
                                   const std::vector<PruneMode>& modes,
                                   const std::vector<double>& keep_ratios,
                                   std::uint64_t seed, const ScoreOptions& options) {
  if (suites.empty()) throw ConfigError("run_pruning_eval: no suites");
  if (modes.empty()) throw ConfigError("run_pruning_eval: no modes");
  if (keep_ratios.empty()) throw ConfigError("run_pruning_eval: no keep ratios");

  // Unpruned decodes once per suite; they anchor the relative scores.
  std::vector<std::vector<GenerationOutput>> full_outputs(suites.size());
  std::vector<double> baselines(suites.size());
  for (std::size_t s = 0; s < suites.size(); ++s) {
    const EvalSuite& suite = suites[s];
    if (suite.tasks.empty()) throw ConfigError("suite '" + suite.name + "' has no tasks");
    full_outputs[s].reserve(suite.tasks.size());
    for (const NeedleTask& task : suite.tasks) {
      full_outputs[s].push_back(
          decode_greedy(weights, config, task.seq, suite.decode_steps, {}));
    }
    baselines[s] = rule_baseline(suite.scoring, suite.tasks, full_outputs[s]);
  }

  PruningEvalResult result;
  nlohmann::json detail_suites = nlohmann::json::array();
  for (std::size_t s = 0; s < suites.size(); ++s) {
    detail_suites.push_back(nlohmann::json{{"name", suites[s].name},
                                           {"scoring", to_string(suites[s].scoring)},
                                           {"baseline_score", baselines[s]},
                                           {"runs", nlohmann::json::array()}});
  }

  for (PruneMode mode : modes) {
    for (double ratio : keep_ratios) {
      std::vector<double> rel_scores;
      for (std::size_t s = 0; s < suites.size(); ++s) {
        const EvalSuite& suite = suites[s];
        const auto t0 = Clock::now();
        double raw_sum = 0.0;
        double recall_sum = 0.0;
        double div_sum = 0.0;
        std::uint64_t flops_full = 0;
        std::uint64_t flops_pruned = 0;
        std::uint64_t cache_full = 0;
        std::uint64_t cache_pruned = 0;
        std::size_t keep_echo = 0;
        for (std::size_t t = 0; t < suite.tasks.size(); ++t) {
          const NeedleTask& task = suite.tasks[t];
          const std::size_t m = task.seq.n_visual();
          const std::size_t keep = keep_count_from_ratio(m, ratio);
          keep_echo = keep;
          Rng rng(derive_seed(derive_seed(seed, s), t));
          const PruneDecision decision =
              make_decision(task.seq, weights, config, mode, head_weights, keep, rng, options);
          const MultimodalSequence pruned_seq = apply_decision(task.seq, decision);
          const GenerationOutput pruned =
              decode_greedy(weights, config, pruned_seq, suite.decode_steps, {});

          raw_sum += rule_score_pruned(suite.scoring, task, decision, full_outputs[s][t], pruned);
          recall_sum += needle_recall(decision, task);
          div_sum += output_divergence(full_outputs[s][t], pruned);
          flops_full += prefill_flops(config, task.seq.n_text(), m);
          flops_pruned += prefill_flops(config, task.seq.n_text(), keep);
          cache_full += kv_cache_bytes(config, task.seq.n_text() + m);
          cache_pruned += kv_cache_bytes(config, task.seq.n_text() + keep);
        }
        const double n = static_cast<double>(suite.tasks.size());
        const double raw = raw_sum / n;
        double rel;
        if (baselines[s] != 0.0) {
          rel = 100.0 * raw / baselines[s];
        } else {
          rel = raw == baselines[s] ? 100.0 : std::numeric_limits<double>::quiet_NaN();
        }
        if (!std::isnan(rel)) rel_scores.push_back(rel);

        EvalRow row;
        row.suite = suite.name;
        row.mode = to_string(mode);
        row.keep_ratio = ratio;
        row.score = rel;
        row.recall = recall_sum / n;
        row.divergence = div_sum / n;
        row.flops_ratio = static_cast<double>(flops_pruned) / static_cast<double>(flops_full);
        row.cache_ratio = static_cast<double>(cache_pruned) / static_cast<double>(cache_full);
        row.wallclock_ms = elapsed_ms(t0);
        result.rows.push_back(row);

        detail_suites[s]["runs"].push_back(nlohmann::json{{"mode", to_string(mode)},
                                                          {"keep_ratio", ratio},
                                                          {"keep_count", keep_echo},
                                                          {"raw_score", raw},
                                                          {"relative_score", rel},
                                                          {"recall", row.recall},
                                                          {"divergence", row.divergence}});
      }
      // Unweighted mean of the per-suite relative scores.
      if (suites.size() > 1) {
        EvalRow mean_row;
        mean_row.suite = "MEAN";
        mean_row.mode = to_string(mode);
        mean_row.keep_ratio = ratio;
        mean_row.score =
            rel_scores.empty()
                ? std::numeric_limits<double>::quiet_NaN()
                : std::accumulate(rel_scores.begin(), rel_scores.end(), 0.0) /
                      static_cast<double>(rel_scores.size());
        const std::size_t span = suites.size();
        const auto first = result.rows.end() - static_cast<std::ptrdiff_t>(span);
        for (auto it = first; it != result.rows.end(); ++it) {
          mean_row.recall += it->recall / static_cast<double>(span);
          mean_row.divergence += it->divergence / static_cast<double>(span);
          mean_row.flops_ratio += it->flops_ratio / static_cast<double>(span);
          mean_row.cache_ratio += it->cache_ratio / static_cast<double>(span);
          mean_row.wallclock_ms += it->wallclock_ms;
        }
        result.rows.push_back(mean_row);
      }
    }
  }

  result.detail = nlohmann::json{{"seed", seed}, {"suites", detail_suites}};
  return result;
}

std::string metrics_csv(const std::vector<EvalRow>& rows) {
  std::string out =
      "suite,mode,keep_ratio,score,recall,divergence,flops_ratio,cache_ratio,wallclock_ms\n";
  for (const EvalRow& r : rows) {
    out += r.suite + "," + r.mode + "," + format_double(r.keep_ratio) + "," +
           format_double(r.score) + "," + format_double(r.recall) + "," +
           format_double(r.divergence) + "," + format_double(r.flops_ratio) + "," +
           format_double(r.cache_ratio) + "," + format_double(r.wallclock_ms) + "\n";
  }
  return out;
}

}  // namespace hawk
