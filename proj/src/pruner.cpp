#include "hawk/pruner.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include <nlohmann/json.hpp>

#include "hawk/io_util.hpp"

namespace hawk {

namespace {

std::int64_t now_unix_ms() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(
             std::chrono::system_clock::now().time_since_epoch())
      .count();
}

// Positions of text and visual rows in the concatenated sequence.
void sequence_positions(const MultimodalSequence& seq, std::vector<std::size_t>& text_pos,
                        std::vector<std::size_t>& visual_pos) {
  const std::size_t n = seq.n_text();
  const std::size_t m = seq.n_visual();
  text_pos.resize(n);
  visual_pos.resize(m);
  const std::size_t text_start = seq.order == SequenceOrder::kTextFirst ? 0 : m;
  const std::size_t visual_start = seq.order == SequenceOrder::kTextFirst ? n : 0;
  std::iota(text_pos.begin(), text_pos.end(), text_start);
  std::iota(visual_pos.begin(), visual_pos.end(), visual_start);
}

}  // namespace

Matrix AblationTable::delta() const {
  Matrix d(s.rows(), s.cols());
  for (std::size_t i = 0; i < s.rows(); ++i) {
    for (std::size_t j = 0; j < s.cols(); ++j) d.at(i, j) = s_base[j] - s.at(i, j);
  }
  return d;
}

void AblationTable::validate() const {
  if (s.rows() == 0 || s.cols() == 0 || datasets.empty()) {
    throw ConfigError("ablation table is empty");
  }
  if (datasets.size() != s.cols() || s_base.size() != s.cols()) {
    throw ShapeError("ablation table: " + std::to_string(datasets.size()) +
                     " dataset names, " + std::to_string(s_base.size()) +
                     " baselines, score matrix has " + std::to_string(s.cols()) +
                     " columns");
  }
  for (double v : s_base) {
    if (!std::isfinite(v)) throw ConsistencyError("ablation table: non-finite baseline");
  }
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!std::isfinite(s.data()[i])) {
      throw ConsistencyError("ablation table: non-finite score");
    }
  }
}

AblationTable AblationTable::from_delta(std::vector<std::string> datasets,
                                        const Matrix& delta) {
  AblationTable t;
  t.datasets = std::move(datasets);
  t.s_base.assign(delta.cols(), 0.0);
  t.s = Matrix(delta.rows(), delta.cols());
  for (std::size_t i = 0; i < delta.rows(); ++i) {
    for (std::size_t j = 0; j < delta.cols(); ++j) t.s.at(i, j) = -delta.at(i, j);
  }
  return t;
}

HeadWeightVector HeadWeightVector::uniform(std::size_t n_heads) {
  HeadWeightVector w;
  w.weights.assign(n_heads, 1.0 / static_cast<double>(n_heads));
  w.created_unix_ms = now_unix_ms();
  return w;
}

HeadWeightVector compute_head_weights(const AblationTable& table) {
  table.validate();
  const std::size_t n_heads = table.n_heads();
  const std::size_t n_datasets = table.n_datasets();
  const Matrix drop = table.delta();

  HeadWeightVector out;
  out.weights.assign(n_heads, 0.0);
  out.datasets = table.datasets;
  out.created_unix_ms = now_unix_ms();

  std::vector<double> shifted(n_heads);
  for (std::size_t j = 0; j < n_datasets; ++j) {
    double minv = drop.at(0, j);
    for (std::size_t i = 1; i < n_heads; ++i) minv = std::min(minv, drop.at(i, j));
    double sum = 0.0;
    for (std::size_t i = 0; i < n_heads; ++i) {
      shifted[i] = drop.at(i, j) - minv;
      sum += shifted[i];
    }
    if (sum == 0.0) {
      // Every head tied: this dataset ranks none above the rest.
      out.fallback_uniform = true;
      for (std::size_t i = 0; i < n_heads; ++i) {
        out.weights[i] += 1.0 / static_cast<double>(n_heads);
      }
    } else {
      for (std::size_t i = 0; i < n_heads; ++i) out.weights[i] += shifted[i] / sum;
    }
  }
  for (double& w : out.weights) w /= static_cast<double>(n_datasets);
  return out;
}

ScoreMatrix text_guided_scores(const MultimodalSequence& seq, const ModelWeights& weights,
                               const ModelConfig& config, const ScoreOptions& options) {
  config.validate();
  weights.validate_shapes(config);
  if (options.layer >= config.n_layers) {
    throw ConfigError("score layer " + std::to_string(options.layer) + " of " +
                      std::to_string(config.n_layers));
  }
  if (seq.text.cols() != config.d_model || seq.visual.cols() != config.d_model) {
    throw ShapeError("text_guided_scores: embedding width " +
                     std::to_string(seq.text.cols()) + "/" +
                     std::to_string(seq.visual.cols()) + ", expected " +
                     std::to_string(config.d_model));
  }
  if (seq.n_text() == 0 || seq.n_visual() == 0) {
    throw ShapeError("text_guided_scores: empty text or visual block");
  }

  const LayerWeights& lw = weights.layers[options.layer];
  const std::size_t m = seq.n_visual();
  const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(config.d_k));

  // Query subset: all text rows, or the trailing window.
  std::size_t q_begin = 0;
  if (options.query_tail > 0 && options.query_tail < seq.n_text()) {
    q_begin = seq.n_text() - options.query_tail;
  }
  const std::size_t n_queries = seq.n_text() - q_begin;
  Matrix queries(n_queries, config.d_model);
  for (std::size_t j = 0; j < n_queries; ++j) {
    auto src = seq.text.row(q_begin + j);
    std::copy(src.begin(), src.end(), queries.row(j).begin());
  }

  std::vector<std::size_t> text_pos;
  std::vector<std::size_t> visual_pos;
  if (options.reinstate_rotary) {
    sequence_positions(seq, text_pos, visual_pos);
    text_pos.erase(text_pos.begin(), text_pos.begin() + static_cast<std::ptrdiff_t>(q_begin));
  }

  ScoreMatrix out;
  out.c = Matrix(config.n_heads, m, 0.0);
  for (std::size_t h = 0; h < config.n_heads; ++h) {
    Matrix q = matmul(queries, lw.w_q[h]);
    Matrix k = matmul(seq.visual, lw.w_k[h]);
    if (options.reinstate_rotary) {
      q = apply_rope(q, text_pos, config.rope_base);
      k = apply_rope(k, visual_pos, config.rope_base);
    }
    Matrix a(n_queries, m);
    for (std::size_t j = 0; j < n_queries; ++j) {
      const double* qrow = q.row(j).data();
      for (std::size_t t = 0; t < m; ++t) {
        const double* krow = k.row(t).data();
        double dot = 0.0;
        for (std::size_t c = 0; c < config.d_k; ++c) dot += qrow[c] * krow[c];
        a.at(j, t) = dot * inv_sqrt_dk;
      }
    }
    if (options.softmax) a = softmax_rows(a);
    for (std::size_t t = 0; t < m; ++t) {
      double sum = 0.0;
      for (std::size_t j = 0; j < n_queries; ++j) sum += a.at(j, t);
      out.c.at(h, t) = sum / static_cast<double>(n_queries);
    }
  }
  return out;
}

std::vector<double> aggregate_importance(const ScoreMatrix& scores,
                                         const HeadWeightVector& w) {
  if (scores.n_heads() != w.n_heads()) {
    throw ShapeError("aggregate_importance: " + std::to_string(scores.n_heads()) +
                     " score rows vs " + std::to_string(w.n_heads()) + " head weights");
  }
  std::vector<double> importance(scores.n_visual(), 0.0);
  for (std::size_t i = 0; i < scores.n_heads(); ++i) {
    const double wi = w.weights[i];
    const double* row = scores.c.row(i).data();
    for (std::size_t k = 0; k < importance.size(); ++k) importance[k] += wi * row[k];
  }
  return importance;
}

std::string to_string(PruneMode mode) {
  switch (mode) {
    case PruneMode::kHawk: return "hawk";
    case PruneMode::kMeanHead: return "mean-head";
    case PruneMode::kRandom: return "random";
    case PruneMode::kDiversity: return "diversity";
  }
  return "hawk";
}

PruneMode prune_mode_from_string(const std::string& s) {
  if (s == "hawk") return PruneMode::kHawk;
  if (s == "mean-head") return PruneMode::kMeanHead;
  if (s == "random") return PruneMode::kRandom;
  if (s == "diversity") return PruneMode::kDiversity;
  throw ConfigError("unknown prune mode: " + s);
}

void PruneDecision::validate(std::size_t n_visual) const {
  if (kept.size() != keep_count) {
    throw ConsistencyError("decision: " + std::to_string(kept.size()) +
                           " kept indices, keep_count " + std::to_string(keep_count));
  }
  if (keep_count == 0 || keep_count > n_visual) {
    throw BoundsError("decision: keep_count " + std::to_string(keep_count) +
                      " outside (0, " + std::to_string(n_visual) + "]");
  }
  for (std::size_t i = 0; i < kept.size(); ++i) {
    if (kept[i] >= n_visual) {
      throw ConsistencyError("decision: index " + std::to_string(kept[i]) +
                             " out of range for M=" + std::to_string(n_visual));
    }
    if (i > 0 && kept[i] <= kept[i - 1]) {
      throw ConsistencyError("decision: kept indices not strictly ascending");
    }
  }
}

PruneDecision select_tokens(const std::vector<double>& importance, std::size_t keep_count) {
  if (keep_count == 0 || keep_count > importance.size()) {
    throw BoundsError("select_tokens: keep_count " + std::to_string(keep_count) +
                      " outside (0, " + std::to_string(importance.size()) + "]");
  }
  PruneDecision d;
  d.kept = top_k_indices(importance, keep_count);
  d.keep_count = keep_count;
  d.mode = PruneMode::kHawk;
  d.scores = importance;
  return d;
}

MultimodalSequence apply_decision(const MultimodalSequence& seq, const PruneDecision& d) {
  d.validate(seq.n_visual());
  MultimodalSequence out;
  out.text = seq.text;
  out.order = seq.order;
  out.visual = Matrix(d.kept.size(), seq.visual.cols());
  for (std::size_t i = 0; i < d.kept.size(); ++i) {
    auto src = seq.visual.row(d.kept[i]);
    std::copy(src.begin(), src.end(), out.visual.row(i).begin());
  }
  return out;
}

namespace {

PruneDecision diversity_select(const Matrix& visual, std::size_t keep_count) {
  const std::size_t m = visual.rows();
  std::vector<double> norms(m);
  for (std::size_t i = 0; i < m; ++i) {
    double ss = 0.0;
    for (double v : visual.row(i)) ss += v * v;
    norms[i] = std::sqrt(ss);
  }
  auto cosine_distance = [&](std::size_t a, std::size_t b) {
    if (norms[a] == 0.0 || norms[b] == 0.0) return 1.0;
    double dot = 0.0;
    const double* ra = visual.row(a).data();
    const double* rb = visual.row(b).data();
    for (std::size_t c = 0; c < visual.cols(); ++c) dot += ra[c] * rb[c];
    return 1.0 - dot / (norms[a] * norms[b]);
  };

  std::size_t start = 0;
  for (std::size_t i = 1; i < m; ++i) {
    if (norms[i] > norms[start]) start = i;
  }

  std::vector<std::size_t> picked{start};
  std::vector<double> min_dist(m);
  for (std::size_t i = 0; i < m; ++i) min_dist[i] = cosine_distance(i, start);
  while (picked.size() < keep_count) {
    std::size_t best = m;
    for (std::size_t i = 0; i < m; ++i) {
      if (std::find(picked.begin(), picked.end(), i) != picked.end()) continue;
      if (best == m || min_dist[i] > min_dist[best]) best = i;
    }
    picked.push_back(best);
    for (std::size_t i = 0; i < m; ++i) {
      min_dist[i] = std::min(min_dist[i], cosine_distance(i, best));
    }
  }
  std::sort(picked.begin(), picked.end());

  PruneDecision d;
  d.kept = std::move(picked);
  d.keep_count = keep_count;
  d.mode = PruneMode::kDiversity;
  return d;
}

}  // namespace

PruneDecision baseline_select(const MultimodalSequence& seq, const ModelWeights& weights,
                              const ModelConfig& config, PruneMode mode,
                              std::size_t keep_count, Rng& rng,
                              const ScoreOptions& options) {
  const std::size_t m = seq.n_visual();
  if (keep_count == 0 || keep_count > m) {
    throw BoundsError("baseline_select: keep_count " + std::to_string(keep_count) +
                      " outside (0, " + std::to_string(m) + "]");
  }
  switch (mode) {
    case PruneMode::kHawk:
      throw ConfigError("baseline_select: hawk is not a baseline mode");
    case PruneMode::kMeanHead: {
      const ScoreMatrix scores = text_guided_scores(seq, weights, config, options);
      PruneDecision d =
          select_tokens(aggregate_importance(scores, HeadWeightVector::uniform(config.n_heads)),
                        keep_count);
      d.mode = PruneMode::kMeanHead;
      return d;
    }
    case PruneMode::kRandom: {
      PruneDecision d;
      d.kept = rng.sample_without_replacement(m, keep_count);
      d.keep_count = keep_count;
      d.mode = PruneMode::kRandom;
      return d;
    }
    case PruneMode::kDiversity:
      return diversity_select(seq.visual, keep_count);
  }
  throw ConfigError("baseline_select: unknown mode");
}

std::size_t keep_count_from_ratio(std::size_t n_visual, double keep_ratio) {
  if (!(keep_ratio >= 0.0 && keep_ratio <= 1.0)) {
    throw BoundsError("keep ratio must lie in [0, 1]");
  }
  const double raw = std::floor(static_cast<double>(n_visual) * keep_ratio);
  return std::max<std::size_t>(1, static_cast<std::size_t>(raw));
}

double prune_ratio_percent(std::size_t n_visual, std::size_t keep_count) {
  return 100.0 * (1.0 - static_cast<double>(keep_count) / static_cast<double>(n_visual));
}

nlohmann::json head_weights_to_json(const HeadWeightVector& w) {
  return nlohmann::json{{"version", 1},
                        {"n_heads", w.weights.size()},
                        {"weights", w.weights},
                        {"datasets", w.datasets},
                        {"fallback_uniform", w.fallback_uniform}};
}

HeadWeightVector head_weights_from_json(const nlohmann::json& j) {
  if (j.at("version").get<int>() != 1) {
    throw ConfigError("head-weight file: unsupported version");
  }
  HeadWeightVector w;
  w.weights = j.at("weights").get<std::vector<double>>();
  w.datasets = j.at("datasets").get<std::vector<std::string>>();
  w.fallback_uniform = j.at("fallback_uniform").get<bool>();
  if (w.weights.size() != j.at("n_heads").get<std::size_t>()) {
    throw ConsistencyError("head-weight file: n_heads does not match weights length");
  }
  double sum = 0.0;
  for (double v : w.weights) {
    if (!(v >= 0.0)) throw ConsistencyError("head-weight file: negative weight");
    sum += v;
  }
  if (std::abs(sum - 1.0) > 1e-9) {
    throw ConsistencyError("head-weight file: weights sum to " + std::to_string(sum));
  }
  return w;
}

void save_head_weights(const HeadWeightVector& w, const std::string& path) {
  write_file_atomic(path, head_weights_to_json(w).dump(2) + "\n");
}

HeadWeightVector load_head_weights(const std::string& path) {
  return head_weights_from_json(nlohmann::json::parse(read_file(path)));
}

nlohmann::json prune_decision_to_json(const PruneDecision& d) {
  return nlohmann::json{{"mode", to_string(d.mode)},
                        {"keep_count", d.keep_count},
                        {"kept", d.kept},
                        {"scores", d.scores}};
}

PruneDecision prune_decision_from_json(const nlohmann::json& j) {
  PruneDecision d;
  d.mode = prune_mode_from_string(j.at("mode").get<std::string>());
  d.keep_count = j.at("keep_count").get<std::size_t>();
  d.kept = j.at("kept").get<std::vector<std::size_t>>();
  d.scores = j.at("scores").get<std::vector<double>>();
  return d;
}

}  // namespace hawk
