#pragma once

#include <cstdint>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "hawk/tensor.hpp"

namespace hawk {

enum class SequenceOrder { kTextFirst, kVisualFirst };

std::string to_string(SequenceOrder order);
SequenceOrder sequence_order_from_string(const std::string& s);

struct ModelConfig {
  std::size_t d_model = 0;
  std::size_t n_layers = 0;
  std::size_t n_heads = 0;  // N_h; per-head weight vectors index these
  std::size_t d_k = 0;      // d_model = n_heads * d_k
  std::size_t d_ff = 0;     // MLP hidden width
  std::size_t vocab_size = 0;
  double rope_base = 10000.0;
  std::size_t bytes_per_element = 8;  // cache accounting only
  SequenceOrder default_order = SequenceOrder::kTextFirst;

  void validate() const;  // throws ConfigError on bad dimensions
};

struct LayerWeights {
  std::vector<Matrix> w_q;  // per head, d_model x d_k
  std::vector<Matrix> w_k;
  std::vector<Matrix> w_v;
  Matrix w_o;       // d_model x d_model, rows ordered head-major
  Matrix mlp_in;    // d_model x d_ff
  Matrix mlp_out;   // d_ff x d_model
};

struct ModelWeights {
  Matrix token_embedding;  // vocab_size x d_model
  std::vector<LayerWeights> layers;
  Matrix readout;  // d_model x vocab_size

  void validate_shapes(const ModelConfig& config) const;
};

// Text and visual embeddings with a recorded concatenation order. The
// boundary between the two blocks is derivable from the order and lengths.
struct MultimodalSequence {
  Matrix text;    // N x d_model
  Matrix visual;  // M x d_model
  SequenceOrder order = SequenceOrder::kTextFirst;

  std::size_t n_text() const { return text.rows(); }
  std::size_t n_visual() const { return visual.rows(); }
  std::size_t length() const { return text.rows() + visual.rows(); }
};

// Concatenated embedding rows plus a per-row visual flag, honoring order.
std::pair<Matrix, std::vector<std::uint8_t>> embed_sequence(const MultimodalSequence& seq);

// Set of (layer, head) pairs whose attention to visual key positions is
// disabled. Duplicate insertion is a no-op, so masking twice equals once.
class VisualMaskSet {
 public:
  VisualMaskSet() = default;

  void add(std::size_t layer, std::size_t head) { entries_.emplace(layer, head); }
  void add_head(std::size_t head, std::span<const std::size_t> layers) {
    for (std::size_t l : layers) entries_.emplace(l, head);
  }
  void add_head_all_layers(std::size_t head, std::size_t n_layers) {
    for (std::size_t l = 0; l < n_layers; ++l) entries_.emplace(l, head);
  }

  bool contains(std::size_t layer, std::size_t head) const {
    return entries_.count({layer, head}) > 0;
  }
  bool empty() const { return entries_.empty(); }
  std::size_t size() const { return entries_.size(); }

  void validate(const ModelConfig& config) const;  // ConfigError if out of range

 private:
  std::set<std::pair<std::size_t, std::size_t>> entries_;
};

struct GenerationOutput {
  std::vector<std::size_t> tokens;  // y_1..y_O
  std::vector<std::vector<double>> step_distributions;  // each sums to 1
};

// Rotary rotation of each row's adjacent coordinate pairs; pair p of a
// width-w row at position t rotates by t * base^(-2p/w). Norm-preserving,
// identity at position 0. Odd width throws ShapeError.
Matrix apply_rope(const Matrix& x, std::span<const std::size_t> positions, double base);

// 2 * n_layers * n_heads * d_k * seq_len * bytes_per_element.
std::uint64_t kv_cache_bytes(const ModelConfig& config, std::size_t seq_len);

// Incremental decoding state: per-layer per-head K/V plus per-position visual
// flags. Weights and config stay shared and immutable; a session is
// single-owner. process() accepts any number of rows, so a full prefill and a
// one-row decode step run the same arithmetic and agree bit-for-bit.
class DecodeSession {
 public:
  DecodeSession(const ModelWeights& weights, const ModelConfig& config,
                VisualMaskSet masks);

  // Feeds embedded rows at the next positions; returns hidden states after
  // the final block for exactly those rows.
  Matrix process(const Matrix& embedded, const std::vector<std::uint8_t>& is_visual);

  // Readout logits for a final-block hidden row (applies the final norm).
  std::vector<double> logits(std::span<const double> hidden_row) const;

  std::size_t length() const { return visual_flags_.size(); }

 private:
  const ModelWeights& weights_;
  const ModelConfig& config_;
  VisualMaskSet masks_;
  // [layer][head] -> cached K and V, one row per position.
  std::vector<std::vector<Matrix>> k_cache_;
  std::vector<std::vector<Matrix>> v_cache_;
  std::vector<std::uint8_t> visual_flags_;
};

// Argmax decoding: prefill the multimodal prompt, then feed back the argmax
// token for max_steps steps. With use_cache=false every step replays the
// whole prefix through a fresh session; the cache is a pure optimization and
// both paths return identical output.
GenerationOutput decode_greedy(const ModelWeights& weights, const ModelConfig& config,
                               const MultimodalSequence& seq, std::size_t max_steps,
                               const VisualMaskSet& masks = {}, bool use_cache = true);

// Full-stack forward over already-embedded rows at positions 0..rows-1 with
// no generation; result[l] holds the hidden states after block l. This is the
// analysis surface used for per-layer ablation checks.
std::vector<Matrix> forward_activations(const ModelWeights& weights,
                                        const ModelConfig& config,
                                        const Matrix& embedded,
                                        const std::vector<std::uint8_t>& is_visual,
                                        const VisualMaskSet& masks);

// Seeded toy model with all weights drawn from the given generator.
ModelWeights make_random_model(const ModelConfig& config, Rng& rng);

}  // namespace hawk
