#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "hawk/model.hpp"
#include "hawk/pruner.hpp"

namespace hawk {

// A synthetic task whose answer is recoverable only from designated needle
// visual tokens.
struct NeedleTask {
  MultimodalSequence seq;
  std::vector<std::size_t> needles;  // visual row indices carrying the payload
  std::size_t payload_token = 0;
  std::size_t expected_token = 0;
};

enum class ScoringRule { kAccuracy, kRecall, kNegDivergence };

std::string to_string(ScoringRule rule);
ScoringRule scoring_rule_from_string(const std::string& s);

struct EvalSuite {
  std::string name;
  ScoringRule scoring = ScoringRule::kAccuracy;
  std::uint64_t seed = 0;
  std::size_t decode_steps = 1;
  std::vector<NeedleTask> tasks;
};

// Parameters of the constructed copy-head model and its tasks. Reserved
// embedding coordinates: 0 marks the querying text row, the needle direction
// defaults to coordinate 1, and coordinates 2..2+P-1 are the payload slots
// for the P answer-alphabet tokens. Head 0 routes payload slots to the
// answer logits; `noise_heads` further heads get small random projections
// whose output-projection rows only touch coordinates the readout ignores.
// Heads beyond 1+noise_heads stay all-zero.
struct CopyTaskSpec {
  std::size_t n_text = 8;
  std::size_t n_visual = 64;
  std::size_t n_needles = 1;
  std::vector<std::size_t> payload_tokens = {2, 3, 4, 5};
  double query_gain = 1.25;
  double key_gain = 1.25;
  double value_gain = 1.0;
  double output_gain = 1.0;
  double readout_gain = 2.0;
  double needle_amp = 1.0;
  double payload_amp_min = 1.0;
  double payload_amp_max = 1.0;
  std::size_t noise_heads = 3;
  double noise_scale = 0.01;
  // Optional harmful head: attends uniformly and pushes a fixed wrong answer
  // scaled off the needle marker, so masking it *improves* the score.
  int saboteur_head = -1;
  double saboteur_gain = 4.5;
  std::size_t saboteur_token_index = 0;  // index into payload_tokens
  // Visual-first places the querying text row last in the prompt, which is
  // where greedy decoding starts.
  SequenceOrder order = SequenceOrder::kVisualFirst;
  std::vector<double> needle_direction;  // empty = basis coordinate 1

  void validate(const ModelConfig& config) const;
  bool spec_gains_ok() const;
};

nlohmann::json copy_task_spec_to_json(const CopyTaskSpec& spec);
CopyTaskSpec copy_task_spec_from_json(const nlohmann::json& j);

// Deterministic weights for the copy construction; the seed feeds only the
// noise heads and MLPs.
ModelWeights build_copy_model(const ModelConfig& config, const CopyTaskSpec& spec,
                              std::uint64_t seed);

// One sampled task: random needle positions, payload from the alphabet,
// distractor rows orthogonal to every reserved direction.
NeedleTask make_needle_task(const ModelConfig& config, const CopyTaskSpec& spec, Rng& rng);

// Convenience wrapper returning weights plus one task with a forced payload.
// The payload must be a member of the default answer alphabet.
std::pair<ModelWeights, NeedleTask> make_copy_task_model(
    const ModelConfig& config, std::span<const double> needle_direction,
    std::size_t payload_token, std::size_t noise_heads, Rng& rng);

// copy-needle suites exercise the constructed copy-head model; random suites
// are unstructured gaussian workloads (no needles), mainly for benchmarking.
enum class SuiteKind { kCopyNeedle, kRandom };

std::string to_string(SuiteKind kind);
SuiteKind suite_kind_from_string(const std::string& s);

// Suite definition file: a generator spec rather than materialized tasks.
struct SuiteSpec {
  std::string name;
  SuiteKind kind = SuiteKind::kCopyNeedle;
  ScoringRule scoring = ScoringRule::kAccuracy;
  std::uint64_t seed = 0;
  std::size_t n_tasks = 16;
  std::size_t decode_steps = 1;
  CopyTaskSpec generator;  // random suites use only the dimensions and order
};

nlohmann::json suite_spec_to_json(const SuiteSpec& spec);
SuiteSpec suite_spec_from_json(const nlohmann::json& j);
void save_suite_spec(const SuiteSpec& spec, const std::string& path);
SuiteSpec load_suite_spec(const std::string& path);

EvalSuite materialize_suite(const ModelConfig& config, const SuiteSpec& spec);

// Suite score under a head mask. accuracy = fraction of tasks whose first
// decoded token matches the expected answer; neg-divergence = minus the mean
// output divergence against the unmasked decode. The recall rule only makes
// sense against a prune decision and is rejected here.
double evaluate_suite(const ModelWeights& weights, const ModelConfig& config,
                      const EvalSuite& suite, const VisualMaskSet& masks);

// |kept needles| / |needles|; vacuously 1 for tasks without needles.
double needle_recall(const PruneDecision& d, const NeedleTask& task);

// Mean over compared steps of KL(full_step || pruned_step), both
// distributions floored at 1e-12 inside the log. Zero when identical.
double output_divergence(const GenerationOutput& full, const GenerationOutput& pruned);

// Closed-form prefill FLOP count for L = n_text + n_visual rows:
//   per layer: 8*L*d^2 (Q,K,V,O projections) + 4*L*d*d_ff (MLP)
//              + 4*L^2*d (attention logits and value mixing)
//   plus 2*d*vocab for the final-row readout,
// counting one multiply-add as two FLOPs.
std::uint64_t prefill_flops(const ModelConfig& config, std::size_t n_text,
                            std::size_t n_visual);

struct EfficiencyReport {
  std::uint64_t flops_full = 0;
  std::uint64_t flops_pruned = 0;
  std::uint64_t cache_bytes_full = 0;
  std::uint64_t cache_bytes_pruned = 0;
  double wall_ms_full = 0.0;    // median over repetitions
  double wall_ms_pruned = 0.0;  // median over repetitions
  double speedup = 0.0;         // wall_ms_full / wall_ms_pruned
  double keep_ratio = 0.0;
  std::size_t keep_count = 0;
  std::size_t n_text = 0;
  std::size_t n_visual = 0;
  std::size_t repetitions = 0;

  void validate() const;  // pruned must not exceed full on FLOPs or cache
};

nlohmann::json efficiency_report_to_json(const EfficiencyReport& r);

// Times full vs pruned decoding over the suite, serialized on one thread.
// Repetitions must be >= 3; a measured run under 1 ms throws BenchmarkError
// (the config is too small for the timer). Cache bytes are accounted at
// prompt length.
EfficiencyReport bench_end_to_end(const ModelWeights& weights, const ModelConfig& config,
                                  const EvalSuite& suite, PruneMode mode,
                                  const HeadWeightVector& head_weights, double keep_ratio,
                                  std::size_t repetitions, std::uint64_t seed);

// One metrics row per (suite, mode, keep_ratio); `score` is the percentage of
// the unpruned baseline score retained. A MEAN row per (mode, ratio) carries
// the unweighted mean across suites.
struct EvalRow {
  std::string suite;
  std::string mode;
  double keep_ratio = 0.0;
  double score = 0.0;  // relative %, 100 = baseline parity
  double recall = 0.0;
  double divergence = 0.0;
  double flops_ratio = 0.0;
  double cache_ratio = 0.0;
  double wallclock_ms = 0.0;
};

struct PruningEvalResult {
  std::vector<EvalRow> rows;
  nlohmann::json detail;  // raw per-suite scores and baselines
};

PruningEvalResult run_pruning_eval(const ModelWeights& weights, const ModelConfig& config,
                                   const std::vector<EvalSuite>& suites,
                                   const HeadWeightVector& head_weights,
                                   const std::vector<PruneMode>& modes,
                                   const std::vector<double>& keep_ratios,
                                   std::uint64_t seed, const ScoreOptions& options = {});

// CSV with the fixed column set:
// suite,mode,keep_ratio,score,recall,divergence,flops_ratio,cache_ratio,wallclock_ms
std::string metrics_csv(const std::vector<EvalRow>& rows);

}  // namespace hawk
