#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "hawk/model.hpp"
#include "hawk/tensor.hpp"

namespace hawk {

// Per-dataset baseline scores and per-head ablated scores, in task-native
// units. Scores may exceed the baseline: a head can be harmful and its drop
// negative; the shift below absorbs that.
struct AblationTable {
  std::vector<std::string> datasets;  // N_d names
  std::vector<double> s_base;         // baseline score per dataset
  Matrix s;                           // N_h x N_d ablated scores

  std::size_t n_heads() const { return s.rows(); }
  std::size_t n_datasets() const { return datasets.size(); }

  // Drop matrix: delta(i,j) = s_base[j] - s(i,j).
  Matrix delta() const;

  void validate() const;

  // Convenience for synthetic tables stated directly as drops.
  static AblationTable from_delta(std::vector<std::string> datasets, const Matrix& delta);
};

// Static head importance weights: per dataset the drops are shifted by the
// column minimum, L1-normalized, then averaged across datasets. Nonnegative
// and summing to 1.
struct HeadWeightVector {
  std::vector<double> weights;
  std::vector<std::string> datasets;  // provenance
  std::int64_t created_unix_ms = 0;
  bool fallback_uniform = false;  // some dataset had an all-equal drop column

  std::size_t n_heads() const { return weights.size(); }

  static HeadWeightVector uniform(std::size_t n_heads);
};

// A dataset whose shifted drops are all zero ranks every head equally and
// contributes the uniform vector instead of dividing by zero.
HeadWeightVector compute_head_weights(const AblationTable& table);

// Per-head text-to-visual relevance, n_heads x M. Raw scaled dot products;
// entries may be negative.
struct ScoreMatrix {
  Matrix c;

  std::size_t n_heads() const { return c.rows(); }
  std::size_t n_visual() const { return c.cols(); }
};

// Scoring variants. Defaults implement the production path: projections from
// the first attention layer, no rotary rotation, no softmax, every text row
// as a query. The alternates exist for ablation experiments only.
struct ScoreOptions {
  std::size_t layer = 0;
  bool reinstate_rotary = false;  // rotate Q/K by their sequence positions
  bool softmax = false;           // row-softmax over visual keys before averaging
  std::size_t query_tail = 0;     // 0 = all text rows; k = only the last k
};

// For each head i: Q = H_t Wq_i, K = H_v Wk_i, A = Q K^T / sqrt(d_k) with no
// rotary rotation and no softmax, then scores are the column means of A over
// the selected query rows. Operates on raw embeddings.
ScoreMatrix text_guided_scores(const MultimodalSequence& seq, const ModelWeights& weights,
                               const ModelConfig& config, const ScoreOptions& options = {});

// importance[k] = sum_i w_i * c(i,k).
std::vector<double> aggregate_importance(const ScoreMatrix& scores,
                                         const HeadWeightVector& w);

enum class PruneMode { kHawk, kMeanHead, kRandom, kDiversity };

std::string to_string(PruneMode mode);
PruneMode prune_mode_from_string(const std::string& s);

// Ordered retained indices plus provenance.
struct PruneDecision {
  std::vector<std::size_t> kept;  // strictly ascending, each < M
  std::size_t keep_count = 0;
  PruneMode mode = PruneMode::kHawk;
  std::vector<double> scores;  // importance snapshot; empty when score-free

  void validate(std::size_t n_visual) const;
};

// Top keep_count tokens by importance; retained tokens keep their original
// relative order. keep_count must be in (0, M].
PruneDecision select_tokens(const std::vector<double>& importance, std::size_t keep_count);

// Reduces the visual block to the kept rows; text and order are untouched.
MultimodalSequence apply_decision(const MultimodalSequence& seq, const PruneDecision& d);

// mean-head: head-uniform aggregation then top-k. random: seeded uniform
// sample without replacement. diversity: greedy max-min under cosine
// distance seeded with the max-norm token.
PruneDecision baseline_select(const MultimodalSequence& seq, const ModelWeights& weights,
                              const ModelConfig& config, PruneMode mode,
                              std::size_t keep_count, Rng& rng,
                              const ScoreOptions& options = {});

// keep = max(1, floor(M * keep_ratio)); ratio must lie in [0, 1].
std::size_t keep_count_from_ratio(std::size_t n_visual, double keep_ratio);

// 100 * (1 - keep/M), the headline pruning percentage.
double prune_ratio_percent(std::size_t n_visual, std::size_t keep_count);

// Versioned head-weight file: {version, n_heads, weights[], datasets[],
// fallback_uniform}.
nlohmann::json head_weights_to_json(const HeadWeightVector& w);
HeadWeightVector head_weights_from_json(const nlohmann::json& j);
void save_head_weights(const HeadWeightVector& w, const std::string& path);
HeadWeightVector load_head_weights(const std::string& path);

nlohmann::json prune_decision_to_json(const PruneDecision& d);
PruneDecision prune_decision_from_json(const nlohmann::json& j);

}  // namespace hawk
