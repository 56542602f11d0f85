#include "hawk/model_io.hpp"

#include <bit>
#include <cstring>

#include <nlohmann/json.hpp>

#include "hawk/io_util.hpp"

namespace hawk {

namespace {

void append_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void append_f64(std::string& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

class Reader {
 public:
  Reader(const std::string& buf, const std::string& path) : buf_(buf), path_(path) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
    }
    pos_ += 4;
    return v;
  }

  double f64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
    }
    pos_ += 8;
    return std::bit_cast<double>(v);
  }

  std::string bytes(std::size_t n) {
    need(n);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool at_end() const { return pos_ == buf_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > buf_.size()) throw IoError("truncated weight file: " + path_);
  }
  const std::string& buf_;
  std::string path_;
  std::size_t pos_ = 0;
};

void append_tensor(std::string& out, const std::string& name, const Matrix& m) {
  append_u32(out, static_cast<std::uint32_t>(name.size()));
  out.append(name);
  append_u32(out, static_cast<std::uint32_t>(m.rows()));
  append_u32(out, static_cast<std::uint32_t>(m.cols()));
  for (std::size_t i = 0; i < m.size(); ++i) append_f64(out, m.data()[i]);
}

Matrix read_tensor(Reader& r, const std::string& expected_name, const std::string& path) {
  const std::uint32_t name_len = r.u32();
  const std::string name = r.bytes(name_len);
  if (name != expected_name) {
    throw IoError("weight file " + path + ": expected tensor '" + expected_name +
                  "', found '" + name + "'");
  }
  const std::uint32_t rows = r.u32();
  const std::uint32_t cols = r.u32();
  Matrix m(rows, cols);
  for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = r.f64();
  return m;
}

std::string tensor_name(std::size_t layer, const char* kind) {
  return "layers." + std::to_string(layer) + "." + kind;
}

std::string tensor_name(std::size_t layer, const char* kind, std::size_t head) {
  return tensor_name(layer, kind) + "." + std::to_string(head);
}

}  // namespace

void save_weights(const ModelWeights& weights, const ModelConfig& config,
                  const std::string& path) {
  config.validate();
  weights.validate_shapes(config);

  std::string out;
  out.append(kWeightsMagic, 8);
  append_u32(out, static_cast<std::uint32_t>(config.d_model));
  append_u32(out, static_cast<std::uint32_t>(config.n_layers));
  append_u32(out, static_cast<std::uint32_t>(config.n_heads));
  append_u32(out, static_cast<std::uint32_t>(config.d_k));
  append_u32(out, static_cast<std::uint32_t>(config.d_ff));
  append_u32(out, static_cast<std::uint32_t>(config.vocab_size));
  append_u32(out, static_cast<std::uint32_t>(config.bytes_per_element));
  append_u32(out, config.default_order == SequenceOrder::kTextFirst ? 0u : 1u);
  append_f64(out, config.rope_base);

  append_tensor(out, "token_embedding", weights.token_embedding);
  for (std::size_t l = 0; l < config.n_layers; ++l) {
    const LayerWeights& lw = weights.layers[l];
    for (std::size_t h = 0; h < config.n_heads; ++h) {
      append_tensor(out, tensor_name(l, "w_q", h), lw.w_q[h]);
    }
    for (std::size_t h = 0; h < config.n_heads; ++h) {
      append_tensor(out, tensor_name(l, "w_k", h), lw.w_k[h]);
    }
    for (std::size_t h = 0; h < config.n_heads; ++h) {
      append_tensor(out, tensor_name(l, "w_v", h), lw.w_v[h]);
    }
    append_tensor(out, tensor_name(l, "w_o"), lw.w_o);
    append_tensor(out, tensor_name(l, "mlp_in"), lw.mlp_in);
    append_tensor(out, tensor_name(l, "mlp_out"), lw.mlp_out);
  }
  append_tensor(out, "readout", weights.readout);

  write_file_atomic(path, out);
}

std::pair<ModelWeights, ModelConfig> load_weights(const std::string& path) {
  const std::string buf = read_file(path);
  Reader r(buf, path);
  if (r.bytes(8) != std::string(kWeightsMagic, 8)) {
    throw IoError("bad magic in weight file: " + path);
  }
  ModelConfig config;
  config.d_model = r.u32();
  config.n_layers = r.u32();
  config.n_heads = r.u32();
  config.d_k = r.u32();
  config.d_ff = r.u32();
  config.vocab_size = r.u32();
  config.bytes_per_element = r.u32();
  config.default_order = r.u32() == 0 ? SequenceOrder::kTextFirst : SequenceOrder::kVisualFirst;
  config.rope_base = r.f64();
  config.validate();

  ModelWeights w;
  w.token_embedding = read_tensor(r, "token_embedding", path);
  w.layers.resize(config.n_layers);
  for (std::size_t l = 0; l < config.n_layers; ++l) {
    LayerWeights& lw = w.layers[l];
    lw.w_q.resize(config.n_heads);
    lw.w_k.resize(config.n_heads);
    lw.w_v.resize(config.n_heads);
    for (std::size_t h = 0; h < config.n_heads; ++h) {
      lw.w_q[h] = read_tensor(r, tensor_name(l, "w_q", h), path);
    }
    for (std::size_t h = 0; h < config.n_heads; ++h) {
      lw.w_k[h] = read_tensor(r, tensor_name(l, "w_k", h), path);
    }
    for (std::size_t h = 0; h < config.n_heads; ++h) {
      lw.w_v[h] = read_tensor(r, tensor_name(l, "w_v", h), path);
    }
    lw.w_o = read_tensor(r, tensor_name(l, "w_o"), path);
    lw.mlp_in = read_tensor(r, tensor_name(l, "mlp_in"), path);
    lw.mlp_out = read_tensor(r, tensor_name(l, "mlp_out"), path);
  }
  w.readout = read_tensor(r, "readout", path);
  if (!r.at_end()) throw IoError("trailing bytes in weight file: " + path);
  w.validate_shapes(config);
  return {std::move(w), config};
}

nlohmann::json model_config_to_json(const ModelConfig& config) {
  return nlohmann::json{{"d_model", config.d_model},
                        {"n_layers", config.n_layers},
                        {"n_heads", config.n_heads},
                        {"d_k", config.d_k},
                        {"d_ff", config.d_ff},
                        {"vocab_size", config.vocab_size},
                        {"rope_base", config.rope_base},
                        {"bytes_per_element", config.bytes_per_element},
                        {"default_order", to_string(config.default_order)}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig config;
  config.d_model = j.at("d_model").get<std::size_t>();
  config.n_layers = j.at("n_layers").get<std::size_t>();
  config.n_heads = j.at("n_heads").get<std::size_t>();
  config.d_k = j.at("d_k").get<std::size_t>();
  config.d_ff = j.at("d_ff").get<std::size_t>();
  config.vocab_size = j.at("vocab_size").get<std::size_t>();
  config.rope_base = j.value("rope_base", 10000.0);
  config.bytes_per_element = j.value("bytes_per_element", std::size_t{8});
  config.default_order =
      sequence_order_from_string(j.value("default_order", std::string("text-first")));
  config.validate();
  return config;
}

void save_model_config(const ModelConfig& config, const std::string& path) {
  write_file_atomic(path, model_config_to_json(config).dump(2) + "\n");
}

ModelConfig load_model_config(const std::string& path) {
  return model_config_from_json(nlohmann::json::parse(read_file(path)));
}

nlohmann::json matrix_to_json(const Matrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t i = 0; i < m.rows(); ++i) {
    rows.push_back(std::vector<double>(m.row(i).begin(), m.row(i).end()));
  }
  return rows;
}

Matrix matrix_from_json(const nlohmann::json& j) {
  return Matrix::from_rows(j.get<std::vector<std::vector<double>>>());
}

nlohmann::json sequence_to_json(const MultimodalSequence& seq) {
  return nlohmann::json{{"order", to_string(seq.order)},
                        {"text", matrix_to_json(seq.text)},
                        {"visual", matrix_to_json(seq.visual)}};
}

MultimodalSequence sequence_from_json(const nlohmann::json& j) {
  MultimodalSequence seq;
  seq.order = sequence_order_from_string(j.at("order").get<std::string>());
  seq.text = matrix_from_json(j.at("text"));
  seq.visual = matrix_from_json(j.at("visual"));
  if (seq.text.rows() == 0 || seq.visual.rows() == 0 ||
      seq.text.cols() != seq.visual.cols()) {
    throw ConsistencyError("sequence file: need nonempty text/visual blocks of equal width");
  }
  return seq;
}

void save_sequence(const MultimodalSequence& seq, const std::string& path) {
  write_file_atomic(path, sequence_to_json(seq).dump() + "\n");
}

MultimodalSequence load_sequence(const std::string& path) {
  return sequence_from_json(nlohmann::json::parse(read_file(path)));
}

}  // namespace hawk
