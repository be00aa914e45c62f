#pragma once

// JSON checkpoint container shared by models and adapters. Doubles are written
// in shortest round-trip form, so save -> load is bit-exact.

#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "json.hpp"
#include "prefixlab/adapters.hpp"
#include "prefixlab/attention.hpp"

namespace prefixlab {

using json = nlohmann::json;

/// Missing or malformed input data (files, checkpoints, reports).
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline constexpr const char* kCheckpointFormat = "prefixlab.checkpoint";
inline constexpr int kCheckpointVersion = 1;

inline json to_json(const ModelConfig& c) {
  return json{{"vocab", c.vocab},         {"d", c.d},
              {"layers", c.layers},       {"heads", c.heads},
              {"d_ff", c.d_ff},           {"residual", c.residual},
              {"output_proj", c.output_proj}, {"positional", c.positional},
              {"weight_std", c.weight_std}};
}

inline ModelConfig model_config_from_json(const json& j) {
  ModelConfig c;
  for (const auto& [key, v] : j.items()) {
    if (key == "vocab") c.vocab = v.get<std::size_t>();
    else if (key == "d") c.d = v.get<std::size_t>();
    else if (key == "layers") c.layers = v.get<std::size_t>();
    else if (key == "heads") c.heads = v.get<std::size_t>();
    else if (key == "d_ff") c.d_ff = v.get<std::size_t>();
    else if (key == "residual") c.residual = v.get<bool>();
    else if (key == "output_proj") c.output_proj = v.get<bool>();
    else if (key == "positional") c.positional = v.get<bool>();
    else if (key == "weight_std") c.weight_std = v.get<double>();
    else throw DataError("model config: unknown key '" + key + "'");
  }
  c.validate();
  return c;
}

namespace detail {

inline json tensor(const std::string& name, const Matrix& m) {
  return json{{"name", name}, {"rows", m.rows()}, {"cols", m.cols()},
              {"data", std::vector<double>(m.data().begin(), m.data().end())}};
}

/// Name -> Matrix lookup over a checkpoint's tensor list.
class TensorTable {
 public:
  explicit TensorTable(const json& tensors) {
    if (!tensors.is_array()) throw DataError("checkpoint: 'tensors' must be an array");
    for (const auto& t : tensors) {
      const auto name = t.at("name").get<std::string>();
      Matrix m(t.at("rows").get<std::size_t>(), t.at("cols").get<std::size_t>(), t.at("data").get<std::vector<double>>());
      if (!table_.emplace(name, std::move(m)).second) throw DataError("checkpoint: duplicate tensor '" + name + "'");
    }
  }
  const Matrix& at(const std::string& name) const {
    auto it = table_.find(name);
    if (it == table_.end()) throw DataError("checkpoint: missing tensor '" + name + "'");
    return it->second;
  }
  Matrix get_or_empty(const std::string& name) const {
    auto it = table_.find(name);
    return it == table_.end() ? Matrix() : it->second;
  }

 private:
  std::map<std::string, Matrix> table_;
};

inline json header(const std::string& kind) {
  return json{{"format", kCheckpointFormat}, {"version", kCheckpointVersion}, {"kind", kind}};
}

inline void check_header(const json& j, const std::string& kind) {
  if (!j.is_object() || j.value("format", "") != kCheckpointFormat) throw DataError("not a prefixlab checkpoint");
  if (j.value("version", 0) != kCheckpointVersion) throw DataError("unsupported checkpoint version");
  if (j.value("kind", "") != kind) throw DataError("checkpoint kind is '" + j.value("kind", "") + "', expected '" + kind + "'");
}

inline std::string layer_name(std::size_t l, const char* field) {
  return "layers." + std::to_string(l) + "." + field;
}

inline void add_model_tensors(json& tensors, const Model& m, const std::string& prefix = "") {
  if (!m.embedding.empty()) tensors.push_back(tensor(prefix + "embedding", m.embedding));
  if (!m.unembedding.empty()) tensors.push_back(tensor(prefix + "unembedding", m.unembedding));
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    const auto& w = m.layers[l];
    const std::pair<const char*, const Matrix*> fields[] = {{"wq", &w.wq}, {"wk", &w.wk}, {"wv", &w.wv},
                                                            {"wo", &w.wo}, {"w1", &w.w1}, {"w2", &w.w2}};
    for (const auto& [name, mat] : fields) {
      if (!mat->empty()) tensors.push_back(tensor(prefix + layer_name(l, name), *mat));
    }
  }
}

inline Model model_from_tensors(const ModelConfig& cfg, const TensorTable& t, const std::string& prefix = "") {
  Model m;
  m.config = cfg;
  m.embedding = t.get_or_empty(prefix + "embedding");
  m.unembedding = t.get_or_empty(prefix + "unembedding");
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    LayerParams w;
    w.wq = t.at(prefix + layer_name(l, "wq"));
    w.wk = t.at(prefix + layer_name(l, "wk"));
    w.wv = t.at(prefix + layer_name(l, "wv"));
    w.wo = t.get_or_empty(prefix + layer_name(l, "wo"));
    w.w1 = t.get_or_empty(prefix + layer_name(l, "w1"));
    w.w2 = t.get_or_empty(prefix + layer_name(l, "w2"));
    m.layers.push_back(std::move(w));
  }
  return m;
}

}  // namespace detail

inline json model_to_json(const Model& m) {
  json j = detail::header("model");
  j["config"] = to_json(m.config);
  j["tensors"] = json::array();
  detail::add_model_tensors(j["tensors"], m);
  return j;
}

inline Model model_from_json(const json& j) {
  detail::check_header(j, "model");
  return detail::model_from_tensors(model_config_from_json(j.at("config")), detail::TensorTable(j.at("tensors")));
}

inline json adapter_to_json(const Adapter& adapter) {
  json j = detail::header("adapter");
  json meta{{"type", kind_name(adapter)}};
  json tensors = json::array();
  std::visit(
      [&](const auto& a) {
        using T = std::decay_t<decltype(a)>;
        if constexpr (std::is_same_v<T, std::monostate>) {
          meta["type"] = "none";
        } else if constexpr (std::is_same_v<T, PrefixAdapter>) {
          meta["type"] = "prefix";
          meta["m"] = a.length();
          meta["layers"] = a.layers();
          meta["d"] = a.width();
          meta["init"] = to_string(a.init_mode());
          meta["seed"] = a.seed();
          meta["position_offset"] = a.position_offset();
          meta["reparam"] = a.reparameterized();
          for (std::size_t l = 0; l < a.layers(); ++l) {
            tensors.push_back(detail::tensor("prefix." + std::to_string(l) + ".keys", a.keys(l).value));
            tensors.push_back(detail::tensor("prefix." + std::to_string(l) + ".values", a.values(l).value));
          }
          if (const ReparamMlp* f = a.reparam()) {
            tensors.push_back(detail::tensor("reparam.input", f->input.value));
            tensors.push_back(detail::tensor("reparam.w1", f->w1.value));
            tensors.push_back(detail::tensor("reparam.b1", f->b1.value));
            tensors.push_back(detail::tensor("reparam.w2", f->w2.value));
          }
        } else if constexpr (std::is_same_v<T, PromptAdapter>) {
          meta["m"] = a.length();
          tensors.push_back(detail::tensor("prompt.embeddings", a.embeddings.value));
        } else if constexpr (std::is_same_v<T, LoRAAdapter>) {
          meta["type"] = "lora";
          meta["targets"] = to_string(a.targets);
          meta["r"] = a.rank;
          meta["scale"] = a.scale;
          meta["layers"] = a.layers.size();
          for (std::size_t l = 0; l < a.layers.size(); ++l) {
            auto put = [&](const char* tgt, const LoRAAdapter::Factors& f) {
              const std::string base = "lora." + std::to_string(l) + "." + tgt;
              tensors.push_back(detail::tensor(base + ".a", f.a.value));
              tensors.push_back(detail::tensor(base + ".b", f.b.value));
            };
            put("q", a.layers[l].q);
            put("k", a.layers[l].k);
            if (a.layers[l].v) put("v", *a.layers[l].v);
          }
        } else if constexpr (std::is_same_v<T, FullFTAdapter>) {
          meta["config"] = to_json(a.config);
          detail::add_model_tensors(tensors, a.to_model(), "full.");
        }
      },
      adapter);
  j["adapter"] = meta;
  j["tensors"] = tensors;
  return j;
}

inline Adapter adapter_from_json(const json& j) {
  detail::check_header(j, "adapter");
  const json& meta = j.at("adapter");
  const std::string type = meta.at("type").get<std::string>();
  const detail::TensorTable t(j.at("tensors"));
  if (type == "none") return std::monostate{};
  if (type == "prefix") {
    PrefixAdapter p(meta.at("layers").get<std::size_t>(), meta.at("m").get<std::size_t>(), meta.at("d").get<std::size_t>());
    PrefixBlock b;
    for (std::size_t l = 0; l < p.layers(); ++l) {
      b.keys.push_back(t.at("prefix." + std::to_string(l) + ".keys"));
      b.values.push_back(t.at("prefix." + std::to_string(l) + ".values"));
    }
    b.position_offset = meta.at("position_offset").get<std::size_t>();
    p.set_block(b);
    p.set_metadata(parse_init_mode(meta.at("init").get<std::string>()), meta.at("seed").get<std::uint64_t>(),
                   b.position_offset);
    if (meta.at("reparam").get<bool>()) {
      p.set_reparam(ReparamMlp{Param(t.at("reparam.input")), Param(t.at("reparam.w1")), Param(t.at("reparam.b1")),
                               Param(t.at("reparam.w2"))});
    }
    return p;
  }
  if (type == "prompt") return PromptAdapter{Param(t.at("prompt.embeddings"))};
  if (type == "lora") {
    LoRAAdapter a;
    a.targets = parse_lora_targets(meta.at("targets").get<std::string>());
    a.rank = meta.at("r").get<std::size_t>();
    a.scale = meta.at("scale").get<double>();
    const auto layers = meta.at("layers").get<std::size_t>();
    for (std::size_t l = 0; l < layers; ++l) {
      auto get = [&](const char* tgt) {
        const std::string base = "lora." + std::to_string(l) + "." + tgt;
        return LoRAAdapter::Factors{Param(t.at(base + ".a")), Param(t.at(base + ".b"))};
      };
      LoRAAdapter::Layer layer{get("q"), get("k"), std::nullopt};
      if (a.targets == LoraTargets::qkv) layer.v = get("v");
      a.layers.push_back(std::move(layer));
    }
    return a;
  }
  if (type == "full") {
    return FullFTAdapter::from(detail::model_from_tensors(model_config_from_json(meta.at("config")), t, "full."));
  }
  throw DataError("adapter checkpoint: unknown type '" + type + "'");
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path + "'");
  out << text;
  if (!out) throw DataError("write failed for '" + path + "'");
}

inline std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline json read_json(const std::string& path) {
  try {
    return json::parse(read_text(path));
  } catch (const json::parse_error& e) {
    throw DataError("malformed JSON in '" + path + "': " + e.what());
  }
}

inline void save_model(const std::string& path, const Model& m) { write_text(path, model_to_json(m).dump()); }
inline Model load_model(const std::string& path) {
  const json j = read_json(path);
  try {
    return model_from_json(j);
  } catch (const DataError&) {
    throw;
  } catch (const std::exception& e) {
    throw DataError("model checkpoint '" + path + "': " + e.what());
  }
}
inline void save_adapter(const std::string& path, const Adapter& a) { write_text(path, adapter_to_json(a).dump()); }
inline Adapter load_adapter(const std::string& path) {
  const json j = read_json(path);
  try {
    return adapter_from_json(j);
  } catch (const DataError&) {
    throw;
  } catch (const std::exception& e) {
    throw DataError("adapter checkpoint '" + path + "': " + e.what());
  }
}

}  // namespace prefixlab
