#include "hawk/ablation.hpp"

#include <chrono>
#include <future>

#include <nlohmann/json.hpp>

#include "hawk/io_util.hpp"
#include "hawk/model_io.hpp"

namespace hawk {

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

std::vector<const EvalSuite*> resolve_suites(const AblationRunSpec& spec,
                                             const std::vector<EvalSuite>& suites) {
  if (suites.empty()) throw ConfigError("run_ablation: no suites provided");
  std::vector<const EvalSuite*> picked;
  if (spec.suite_names.empty()) {
    for (const EvalSuite& s : suites) picked.push_back(&s);
    return picked;
  }
  for (const std::string& name : spec.suite_names) {
    const EvalSuite* found = nullptr;
    for (const EvalSuite& s : suites) {
      if (s.name == name) found = &s;
    }
    if (!found) throw ConfigError("run_ablation: unknown suite '" + name + "'");
    picked.push_back(found);
  }
  return picked;
}

VisualMaskSet mask_for_head(std::size_t head, LayerMaskPolicy policy,
                            const ModelConfig& config) {
  VisualMaskSet masks;
  if (policy == LayerMaskPolicy::kFirstLayer) {
    masks.add(0, head);
  } else {
    masks.add_head_all_layers(head, config.n_layers);
  }
  return masks;
}

}  // namespace

std::string to_string(LayerMaskPolicy policy) {
  return policy == LayerMaskPolicy::kFirstLayer ? "first-layer" : "all-layers";
}

LayerMaskPolicy layer_mask_policy_from_string(const std::string& s) {
  if (s == "first-layer") return LayerMaskPolicy::kFirstLayer;
  if (s == "all-layers") return LayerMaskPolicy::kAllLayers;
  throw ConfigError("unknown layer mask policy: " + s);
}

AblationReport run_ablation(const ModelWeights& weights, const ModelConfig& config,
                            const AblationRunSpec& spec,
                            const std::vector<EvalSuite>& suites) {
  config.validate();
  weights.validate_shapes(config);
  const std::vector<const EvalSuite*> picked = resolve_suites(spec, suites);

  const std::size_t head_end = spec.head_end == 0 ? config.n_heads : spec.head_end;
  if (spec.head_begin >= head_end || head_end > config.n_heads) {
    throw ConfigError("run_ablation: head range [" + std::to_string(spec.head_begin) +
                      ", " + std::to_string(head_end) + ") invalid for " +
                      std::to_string(config.n_heads) + " heads");
  }
  const std::size_t n_heads = head_end - spec.head_begin;
  const std::size_t n_suites = picked.size();

  AblationReport report;
  report.spec = spec;
  report.spec.head_end = head_end;

  const auto t_total = Clock::now();

  report.table.datasets.reserve(n_suites);
  for (const EvalSuite* s : picked) report.table.datasets.push_back(s->name);

  const auto t_base = Clock::now();
  report.table.s_base.resize(n_suites);
  for (std::size_t j = 0; j < n_suites; ++j) {
    report.table.s_base[j] = evaluate_suite(weights, config, *picked[j], {});
  }
  report.wall_ms_base = elapsed_ms(t_base);

  report.table.s = Matrix(n_heads, n_suites);
  report.wall_ms_per_head.assign(n_heads, 0.0);

  auto run_head = [&](std::size_t idx) {
    const auto t_head = Clock::now();
    const std::size_t head = spec.head_begin + idx;
    const VisualMaskSet masks = mask_for_head(head, spec.layer_policy, config);
    for (std::size_t j = 0; j < n_suites; ++j) {
      report.table.s.at(idx, j) = evaluate_suite(weights, config, *picked[j], masks);
    }
    report.wall_ms_per_head[idx] = elapsed_ms(t_head);
  };

  if (spec.threads > 1) {
    std::vector<std::future<void>> jobs;
    jobs.reserve(n_heads);
    for (std::size_t idx = 0; idx < n_heads; ++idx) {
      jobs.push_back(std::async(std::launch::async, run_head, idx));
    }
    for (auto& job : jobs) job.get();  // rethrows, aborting the whole run
  } else {
    for (std::size_t idx = 0; idx < n_heads; ++idx) run_head(idx);
  }

  report.delta = report.table.delta();
  report.weights = compute_head_weights(report.table);
  report.wall_ms_total = elapsed_ms(t_total);
  return report;
}

void export_weights(const AblationReport& report, const std::string& path) {
  save_head_weights(report.weights, path);
}

nlohmann::json ablation_report_to_json(const AblationReport& report) {
  return nlohmann::json{
      {"spec",
       {{"suite_names", report.spec.suite_names},
        {"head_begin", report.spec.head_begin},
        {"head_end", report.spec.head_end},
        {"layer_policy", to_string(report.spec.layer_policy)},
        {"seed", report.spec.seed},
        {"threads", report.spec.threads}}},
      {"table",
       {{"datasets", report.table.datasets},
        {"s_base", report.table.s_base},
        {"s", matrix_to_json(report.table.s)}}},
      {"delta", matrix_to_json(report.delta)},
      {"weights", head_weights_to_json(report.weights)},
      {"timing",
       {{"wall_ms_total", report.wall_ms_total},
        {"wall_ms_base", report.wall_ms_base},
        {"wall_ms_per_head", report.wall_ms_per_head}}}};
}

AblationReport ablation_report_from_json(const nlohmann::json& j) {
  AblationReport report;
  const auto& spec = j.at("spec");
  report.spec.suite_names = spec.at("suite_names").get<std::vector<std::string>>();
  report.spec.head_begin = spec.at("head_begin").get<std::size_t>();
  report.spec.head_end = spec.at("head_end").get<std::size_t>();
  report.spec.layer_policy =
      layer_mask_policy_from_string(spec.at("layer_policy").get<std::string>());
  report.spec.seed = spec.at("seed").get<std::uint64_t>();
  report.spec.threads = spec.at("threads").get<std::size_t>();
  const auto& table = j.at("table");
  report.table.datasets = table.at("datasets").get<std::vector<std::string>>();
  report.table.s_base = table.at("s_base").get<std::vector<double>>();
  report.table.s = matrix_from_json(table.at("s"));
  report.delta = matrix_from_json(j.at("delta"));
  report.weights = head_weights_from_json(j.at("weights"));
  const auto& timing = j.at("timing");
  report.wall_ms_total = timing.at("wall_ms_total").get<double>();
  report.wall_ms_base = timing.at("wall_ms_base").get<double>();
  report.wall_ms_per_head = timing.at("wall_ms_per_head").get<std::vector<double>>();
  report.table.validate();
  return report;
}

void save_ablation_report(const AblationReport& report, const std::string& path) {
  write_file_atomic(path, ablation_report_to_json(report).dump(2) + "\n");
}

AblationReport load_ablation_report(const std::string& path) {
  return ablation_report_from_json(nlohmann::json::parse(read_file(path)));
}

}  // namespace hawk
