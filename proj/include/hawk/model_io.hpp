#pragma once

#include <string>
#include <utility>

#include <nlohmann/json_fwd.hpp>

#include "hawk/model.hpp"

namespace hawk {

// Binary weight container. Layout, all little-endian:
//   magic "HAWKWTS1"
//   u32 d_model, n_layers, n_heads, d_k, d_ff, vocab_size,
//       bytes_per_element, default_order (0 text-first / 1 visual-first)
//   f64 rope_base
//   named tensors in declared order, each as
//       u32 name length, name bytes, u32 rows, u32 cols, f64 data (row-major)
// Tensor order: token_embedding; per layer l: layers.<l>.w_q.<h> for each
// head, then w_k.<h>, w_v.<h>, layers.<l>.w_o, layers.<l>.mlp_in,
// layers.<l>.mlp_out; finally readout.
inline constexpr char kWeightsMagic[] = "HAWKWTS1";

void save_weights(const ModelWeights& weights, const ModelConfig& config,
                  const std::string& path);
std::pair<ModelWeights, ModelConfig> load_weights(const std::string& path);

nlohmann::json model_config_to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const nlohmann::json& j);

void save_model_config(const ModelConfig& config, const std::string& path);
ModelConfig load_model_config(const std::string& path);

nlohmann::json matrix_to_json(const Matrix& m);
Matrix matrix_from_json(const nlohmann::json& j);

// Sequence file: {"order": "text-first", "text": [[...]], "visual": [[...]]}.
nlohmann::json sequence_to_json(const MultimodalSequence& seq);
MultimodalSequence sequence_from_json(const nlohmann::json& j);
void save_sequence(const MultimodalSequence& seq, const std::string& path);
MultimodalSequence load_sequence(const std::string& path);

}  // namespace hawk
