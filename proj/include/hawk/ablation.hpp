#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "hawk/eval.hpp"
#include "hawk/pruner.hpp"

namespace hawk {

// Whether a head is masked in the first block only (matching the scoring
// layer) or at its index across every block.
enum class LayerMaskPolicy { kFirstLayer, kAllLayers };

std::string to_string(LayerMaskPolicy policy);
LayerMaskPolicy layer_mask_policy_from_string(const std::string& s);

struct AblationRunSpec {
  std::vector<std::string> suite_names;  // empty = every provided suite, in order
  std::size_t head_begin = 0;
  std::size_t head_end = 0;  // 0 = up to n_heads
  LayerMaskPolicy layer_policy = LayerMaskPolicy::kFirstLayer;
  std::uint64_t seed = 0;    // provenance echo; task sampling happens upstream
  std::size_t threads = 1;   // per-head runs are independent
};

struct AblationReport {
  AblationRunSpec spec;
  AblationTable table;  // rows are the heads in [head_begin, head_end)
  Matrix delta;         // score drops, s_base - s
  HeadWeightVector weights;
  double wall_ms_total = 0.0;
  double wall_ms_base = 0.0;
  std::vector<double> wall_ms_per_head;
};

// Scores every suite once unablated, then once per masked head. Results are
// indexed by head, so they do not depend on execution order when threads > 1.
// Any evaluation failure aborts the whole run; there are no partial tables.
AblationReport run_ablation(const ModelWeights& weights, const ModelConfig& config,
                            const AblationRunSpec& spec,
                            const std::vector<EvalSuite>& suites);

// Writes the versioned head-weight JSON; round-trips exactly through
// load_head_weights.
void export_weights(const AblationReport& report, const std::string& path);

nlohmann::json ablation_report_to_json(const AblationReport& report);
AblationReport ablation_report_from_json(const nlohmann::json& j);
void save_ablation_report(const AblationReport& report, const std::string& path);
AblationReport load_ablation_report(const std::string& path);

}  // namespace hawk
