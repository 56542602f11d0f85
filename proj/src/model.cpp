#include "hawk/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace hawk {

namespace {

constexpr double kNormEps = 1e-12;

Matrix rmsnorm_rows(const Matrix& x) {
  Matrix out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double ss = 0.0;
    for (double v : x.row(i)) ss += v * v;
    const double inv = 1.0 / std::sqrt(ss / static_cast<double>(x.cols()) + kNormEps);
    auto src = x.row(i);
    auto dst = out.row(i);
    for (std::size_t j = 0; j < x.cols(); ++j) dst[j] = src[j] * inv;
  }
  return out;
}

void silu_inplace(Matrix& x) {
  for (std::size_t i = 0; i < x.rows(); ++i) {
    for (double& v : x.row(i)) v = v / (1.0 + std::exp(-v));
  }
}

void add_inplace(Matrix& x, const Matrix& y) {
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto dst = x.row(i);
    auto src = y.row(i);
    for (std::size_t j = 0; j < x.cols(); ++j) dst[j] += src[j];
  }
}

std::vector<double> softmax_vec(std::span<const double> logits) {
  double maxv = -std::numeric_limits<double>::infinity();
  for (double v : logits) maxv = std::max(maxv, v);
  std::vector<double> out(logits.size());
  double denom = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - maxv);
    denom += out[i];
  }
  for (double& v : out) v /= denom;
  return out;
}

std::size_t argmax(std::span<const double> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;  // ties keep the lower index
  }
  return best;
}

// Causal multi-head attention for a block of rows entering one layer.
// Appends the block's K/V to the caches, then attends each block row over
// all cached positions up to and including itself. For a (layer, head) in the
// mask set, visual key positions are excluded from the softmax; a row left
// with no visible keys contributes a zero vector for that head (can only
// happen for visual-leading orders).
Matrix attention_block(const LayerWeights& lw, const ModelConfig& config,
                       std::size_t layer, const Matrix& xn, std::size_t pos0,
                       std::vector<Matrix>& k_cache, std::vector<Matrix>& v_cache,
                       const std::vector<std::uint8_t>& visual_flags,
                       const VisualMaskSet& masks) {
  const std::size_t n_rows = xn.rows();
  const std::size_t d_k = config.d_k;
  const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(d_k));

  std::vector<std::size_t> positions(n_rows);
  std::iota(positions.begin(), positions.end(), pos0);

  Matrix concat(n_rows, config.d_model, 0.0);
  std::vector<double> logits;
  std::vector<double> probs;

  for (std::size_t h = 0; h < config.n_heads; ++h) {
    Matrix q = apply_rope(matmul(xn, lw.w_q[h]), positions, config.rope_base);
    Matrix k = apply_rope(matmul(xn, lw.w_k[h]), positions, config.rope_base);
    Matrix v = matmul(xn, lw.w_v[h]);
    for (std::size_t r = 0; r < n_rows; ++r) {
      k_cache[h].append_row(k.row(r));
      v_cache[h].append_row(v.row(r));
    }

    const bool visual_hidden = masks.contains(layer, h);
    for (std::size_t r = 0; r < n_rows; ++r) {
      const std::size_t n_keys = pos0 + r + 1;  // causal range
      logits.assign(n_keys, 0.0);
      double maxv = -std::numeric_limits<double>::infinity();
      const double* qrow = q.row(r).data();
      for (std::size_t j = 0; j < n_keys; ++j) {
        if (visual_hidden && visual_flags[j]) continue;
        const double* krow = k_cache[h].row(j).data();
        double dot = 0.0;
        for (std::size_t c = 0; c < d_k; ++c) dot += qrow[c] * krow[c];
        logits[j] = dot * inv_sqrt_dk;
        maxv = std::max(maxv, logits[j]);
      }
      double* out = concat.row(r).data() + h * d_k;
      if (maxv == -std::numeric_limits<double>::infinity()) {
        continue;  // no visible keys for this row: zero contribution
      }
      probs.assign(n_keys, 0.0);
      double denom = 0.0;
      for (std::size_t j = 0; j < n_keys; ++j) {
        if (visual_hidden && visual_flags[j]) continue;
        probs[j] = std::exp(logits[j] - maxv);
        denom += probs[j];
      }
      for (std::size_t j = 0; j < n_keys; ++j) {
        if (visual_hidden && visual_flags[j]) continue;
        const double p = probs[j] / denom;
        const double* vrow = v_cache[h].row(j).data();
        for (std::size_t c = 0; c < d_k; ++c) out[c] += p * vrow[c];
      }
    }
  }
  return matmul(concat, lw.w_o);
}

Matrix block_forward(const LayerWeights& lw, const ModelConfig& config,
                     std::size_t layer, Matrix x, std::size_t pos0,
                     std::vector<Matrix>& k_cache, std::vector<Matrix>& v_cache,
                     const std::vector<std::uint8_t>& visual_flags,
                     const VisualMaskSet& masks) {
  const Matrix xn = rmsnorm_rows(x);
  add_inplace(x, attention_block(lw, config, layer, xn, pos0, k_cache, v_cache,
                                 visual_flags, masks));
  Matrix hidden = matmul(rmsnorm_rows(x), lw.mlp_in);
  silu_inplace(hidden);
  add_inplace(x, matmul(hidden, lw.mlp_out));
  return x;
}

}  // namespace

std::string to_string(SequenceOrder order) {
  return order == SequenceOrder::kTextFirst ? "text-first" : "visual-first";
}

SequenceOrder sequence_order_from_string(const std::string& s) {
  if (s == "text-first") return SequenceOrder::kTextFirst;
  if (s == "visual-first") return SequenceOrder::kVisualFirst;
  throw ConfigError("unknown sequence order: " + s);
}

void ModelConfig::validate() const {
  if (d_model == 0 || n_layers == 0 || n_heads == 0 || d_k == 0 || d_ff == 0 ||
      vocab_size == 0 || bytes_per_element == 0) {
    throw ConfigError("model config: all counts must be >= 1");
  }
  if (d_model != n_heads * d_k) {
    throw ConfigError("model config: d_model (" + std::to_string(d_model) +
                      ") must equal n_heads*d_k (" + std::to_string(n_heads * d_k) + ")");
  }
  if (d_k % 2 != 0) {
    throw ConfigError("model config: d_k must be even for rotary pairs");
  }
  if (!(rope_base > 0.0)) {
    throw ConfigError("model config: rope_base must be positive");
  }
}

void ModelWeights::validate_shapes(const ModelConfig& config) const {
  auto expect = [](const Matrix& m, std::size_t r, std::size_t c, const char* name) {
    if (m.rows() != r || m.cols() != c) {
      throw ShapeError(std::string("weights: ") + name + " is " +
                       std::to_string(m.rows()) + "x" + std::to_string(m.cols()) +
                       ", expected " + std::to_string(r) + "x" + std::to_string(c));
    }
  };
  expect(token_embedding, config.vocab_size, config.d_model, "token_embedding");
  if (layers.size() != config.n_layers) {
    throw ShapeError("weights: layer count " + std::to_string(layers.size()) +
                     ", expected " + std::to_string(config.n_layers));
  }
  for (const LayerWeights& lw : layers) {
    if (lw.w_q.size() != config.n_heads || lw.w_k.size() != config.n_heads ||
        lw.w_v.size() != config.n_heads) {
      throw ShapeError("weights: per-head projection count mismatch");
    }
    for (std::size_t h = 0; h < config.n_heads; ++h) {
      expect(lw.w_q[h], config.d_model, config.d_k, "w_q");
      expect(lw.w_k[h], config.d_model, config.d_k, "w_k");
      expect(lw.w_v[h], config.d_model, config.d_k, "w_v");
    }
    expect(lw.w_o, config.d_model, config.d_model, "w_o");
    expect(lw.mlp_in, config.d_model, config.d_ff, "mlp_in");
    expect(lw.mlp_out, config.d_ff, config.d_model, "mlp_out");
  }
  expect(readout, config.d_model, config.vocab_size, "readout");
}

std::pair<Matrix, std::vector<std::uint8_t>> embed_sequence(const MultimodalSequence& seq) {
  if (seq.text.rows() == 0 || seq.visual.rows() == 0) {
    throw ShapeError("sequence must contain at least one text and one visual row");
  }
  if (seq.text.cols() != seq.visual.cols()) {
    throw ShapeError("sequence: text width " + std::to_string(seq.text.cols()) +
                     " vs visual width " + std::to_string(seq.visual.cols()));
  }
  Matrix rows;
  std::vector<std::uint8_t> flags;
  auto push = [&](const Matrix& block, bool visual) {
    for (std::size_t i = 0; i < block.rows(); ++i) {
      rows.append_row(block.row(i));
      flags.push_back(visual ? 1 : 0);
    }
  };
  if (seq.order == SequenceOrder::kTextFirst) {
    push(seq.text, false);
    push(seq.visual, true);
  } else {
    push(seq.visual, true);
    push(seq.text, false);
  }
  return {std::move(rows), std::move(flags)};
}

void VisualMaskSet::validate(const ModelConfig& config) const {
  for (const auto& [layer, head] : entries_) {
    if (layer >= config.n_layers) {
      throw ConfigError("visual mask references layer " + std::to_string(layer) +
                        " of " + std::to_string(config.n_layers));
    }
    if (head >= config.n_heads) {
      throw ConfigError("visual mask references head " + std::to_string(head) +
                        " of " + std::to_string(config.n_heads));
    }
  }
}

Matrix apply_rope(const Matrix& x, std::span<const std::size_t> positions, double base) {
  if (x.cols() % 2 != 0) {
    throw ShapeError("apply_rope: width " + std::to_string(x.cols()) + " is odd");
  }
  if (positions.size() != x.rows()) {
    throw ShapeError("apply_rope: " + std::to_string(positions.size()) +
                     " positions for " + std::to_string(x.rows()) + " rows");
  }
  const std::size_t n_pairs = x.cols() / 2;
  Matrix out(x.rows(), x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const double pos = static_cast<double>(positions[r]);
    auto src = x.row(r);
    auto dst = out.row(r);
    for (std::size_t p = 0; p < n_pairs; ++p) {
      const double theta =
          pos * std::pow(base, -2.0 * static_cast<double>(p) /
                                   static_cast<double>(x.cols()));
      const double c = std::cos(theta);
      const double s = std::sin(theta);
      const double a = src[2 * p];
      const double b = src[2 * p + 1];
      dst[2 * p] = a * c - b * s;
      dst[2 * p + 1] = a * s + b * c;
    }
  }
  return out;
}

std::uint64_t kv_cache_bytes(const ModelConfig& config, std::size_t seq_len) {
  return 2ull * config.n_layers * config.n_heads * config.d_k * seq_len *
         config.bytes_per_element;
}

DecodeSession::DecodeSession(const ModelWeights& weights, const ModelConfig& config,
                             VisualMaskSet masks)
    : weights_(weights), config_(config), masks_(std::move(masks)) {
  config_.validate();
  weights_.validate_shapes(config_);
  masks_.validate(config_);
  k_cache_.assign(config_.n_layers, std::vector<Matrix>(config_.n_heads));
  v_cache_.assign(config_.n_layers, std::vector<Matrix>(config_.n_heads));
}

Matrix DecodeSession::process(const Matrix& embedded,
                              const std::vector<std::uint8_t>& is_visual) {
  if (embedded.cols() != config_.d_model) {
    throw ShapeError("process: row width " + std::to_string(embedded.cols()) +
                     ", expected d_model " + std::to_string(config_.d_model));
  }
  if (is_visual.size() != embedded.rows()) {
    throw ShapeError("process: visual flag count mismatch");
  }
  const std::size_t pos0 = visual_flags_.size();
  visual_flags_.insert(visual_flags_.end(), is_visual.begin(), is_visual.end());

  Matrix x = embedded;
  for (std::size_t l = 0; l < config_.n_layers; ++l) {
    x = block_forward(weights_.layers[l], config_, l, std::move(x), pos0,
                      k_cache_[l], v_cache_[l], visual_flags_, masks_);
  }
  return x;
}

std::vector<double> DecodeSession::logits(std::span<const double> hidden_row) const {
  Matrix row(1, config_.d_model);
  std::copy(hidden_row.begin(), hidden_row.end(), row.row(0).begin());
  const Matrix logits = matmul(rmsnorm_rows(row), weights_.readout);
  return {logits.row(0).begin(), logits.row(0).end()};
}

GenerationOutput decode_greedy(const ModelWeights& weights, const ModelConfig& config,
                               const MultimodalSequence& seq, std::size_t max_steps,
                               const VisualMaskSet& masks, bool use_cache) {
  if (max_steps == 0) throw BoundsError("decode_greedy: max_steps must be >= 1");
  auto [prompt, prompt_flags] = embed_sequence(seq);

  GenerationOutput out;
  if (use_cache) {
    DecodeSession session(weights, config, masks);
    Matrix hidden = session.process(prompt, prompt_flags);
    std::vector<double> row(hidden.row(hidden.rows() - 1).begin(),
                            hidden.row(hidden.rows() - 1).end());
    for (std::size_t step = 0; step < max_steps; ++step) {
      const std::vector<double> logits = session.logits(row);
      const std::size_t tok = argmax(logits);
      out.tokens.push_back(tok);
      out.step_distributions.push_back(softmax_vec(logits));
      if (step + 1 == max_steps) break;
      Matrix next(1, config.d_model);
      std::copy(weights.token_embedding.row(tok).begin(),
                weights.token_embedding.row(tok).end(), next.row(0).begin());
      const Matrix h = session.process(next, {0});
      row.assign(h.row(0).begin(), h.row(0).end());
    }
    return out;
  }

  // Uncached: replay the whole prefix through a fresh session every step.
  for (std::size_t step = 0; step < max_steps; ++step) {
    Matrix rows = prompt;
    std::vector<std::uint8_t> flags = prompt_flags;
    for (std::size_t tok : out.tokens) {
      rows.append_row(weights.token_embedding.row(tok));
      flags.push_back(0);
    }
    DecodeSession session(weights, config, masks);
    const Matrix hidden = session.process(rows, flags);
    const std::vector<double> logits = session.logits(hidden.row(hidden.rows() - 1));
    out.tokens.push_back(argmax(logits));
    out.step_distributions.push_back(softmax_vec(logits));
  }
  return out;
}

std::vector<Matrix> forward_activations(const ModelWeights& weights,
                                        const ModelConfig& config,
                                        const Matrix& embedded,
                                        const std::vector<std::uint8_t>& is_visual,
                                        const VisualMaskSet& masks) {
  config.validate();
  weights.validate_shapes(config);
  masks.validate(config);
  if (is_visual.size() != embedded.rows()) {
    throw ShapeError("forward_activations: visual flag count mismatch");
  }
  std::vector<Matrix> per_layer;
  per_layer.reserve(config.n_layers);
  Matrix x = embedded;
  for (std::size_t l = 0; l < config.n_layers; ++l) {
    std::vector<Matrix> k_cache(config.n_heads);
    std::vector<Matrix> v_cache(config.n_heads);
    x = block_forward(weights.layers[l], config, l, std::move(x), 0, k_cache, v_cache,
                      is_visual, masks);
    per_layer.push_back(x);
  }
  return per_layer;
}

ModelWeights make_random_model(const ModelConfig& config, Rng& rng) {
  config.validate();
  const double proj_scale = 1.0 / std::sqrt(static_cast<double>(config.d_model));
  const double mlp_scale = 1.0 / std::sqrt(static_cast<double>(config.d_ff));
  auto fill = [&rng](Matrix& m, double scale) {
    for (std::size_t i = 0; i < m.rows(); ++i) {
      for (double& v : m.row(i)) v = rng.normal() * scale;
    }
  };

  ModelWeights w;
  w.token_embedding = Matrix(config.vocab_size, config.d_model);
  fill(w.token_embedding, 0.3);
  w.layers.resize(config.n_layers);
  for (LayerWeights& lw : w.layers) {
    lw.w_q.resize(config.n_heads);
    lw.w_k.resize(config.n_heads);
    lw.w_v.resize(config.n_heads);
    for (std::size_t h = 0; h < config.n_heads; ++h) {
      lw.w_q[h] = Matrix(config.d_model, config.d_k);
      lw.w_k[h] = Matrix(config.d_model, config.d_k);
      lw.w_v[h] = Matrix(config.d_model, config.d_k);
      fill(lw.w_q[h], proj_scale);
      fill(lw.w_k[h], proj_scale);
      fill(lw.w_v[h], proj_scale);
    }
    lw.w_o = Matrix(config.d_model, config.d_model);
    lw.mlp_in = Matrix(config.d_model, config.d_ff);
    lw.mlp_out = Matrix(config.d_ff, config.d_model);
    fill(lw.w_o, proj_scale);
    fill(lw.mlp_in, proj_scale);
    fill(lw.mlp_out, mlp_scale);
  }
  w.readout = Matrix(config.d_model, config.vocab_size);
  fill(w.readout, proj_scale);
  return w;
}

}  // namespace hawk
