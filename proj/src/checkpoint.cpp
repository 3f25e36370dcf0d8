#include "tabtoken/checkpoint.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace tabtoken {

using nlohmann::json;

std::string double_to_hex(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%a", v);
  return buf;
}

double double_from_hex(const std::string& text) {
  const char* begin = text.c_str();
  char* end = nullptr;
  const double v = std::strtod(begin, &end);
  if (end == begin) throw std::invalid_argument("not a hex float: " + text);
  return v;
}

namespace {

json doubles_to_json(std::span<const double> values) {
  json arr = json::array();
  for (double v : values) arr.push_back(double_to_hex(v));
  return arr;
}

std::vector<double> doubles_from_json(const json& arr) {
  std::vector<double> out;
  out.reserve(arr.size());
  for (const auto& v : arr) out.push_back(double_from_hex(v.get<std::string>()));
  return out;
}

json schema_to_json(const std::vector<FeatureSpec>& schema) {
  json arr = json::array();
  for (const auto& f : schema) {
    json e;
    e["name"] = f.name;
    e["kind"] = f.kind == FeatureKind::numerical ? "num" : "cat";
    if (f.kind == FeatureKind::categorical) e["categories"] = f.categories;
    arr.push_back(std::move(e));
  }
  return arr;
}

std::vector<FeatureSpec> schema_from_json(const json& arr) {
  std::vector<FeatureSpec> schema;
  for (const auto& e : arr) {
    FeatureSpec f;
    f.name = e.at("name").get<std::string>();
    const std::string kind = e.at("kind").get<std::string>();
    if (kind == "num") {
      f.kind = FeatureKind::numerical;
    } else if (kind == "cat") {
      f.kind = FeatureKind::categorical;
      f.categories = e.at("categories").get<std::vector<std::string>>();
    } else {
      throw std::invalid_argument("checkpoint schema: unknown kind '" + kind + "'");
    }
    schema.push_back(std::move(f));
  }
  return schema;
}

}  // namespace

Checkpoint Checkpoint::deep_copy() const {
  Checkpoint out;
  out.version = version;
  out.task = task;
  out.n_classes = n_classes;
  out.class_names = class_names;
  out.tokenizer = tokenizer.clone();
  out.model_config = model_config;
  out.model_input_dim = model_input_dim;
  out.model_output_dim = model_output_dim;
  if (model) out.model = model->clone();
  out.train_config = train_config;
  out.master_seed = master_seed;
  return out;
}

std::string checkpoint_to_json_text(const Checkpoint& chk) {
  json j;
  j["version"] = chk.version;
  j["task"] = task_to_string(chk.task);
  j["n_classes"] = chk.n_classes;
  j["class_names"] = chk.class_names;
  j["schema"] = schema_to_json(chk.tokenizer.schema);

  json tok;
  tok["dim"] = chk.tokenizer.dim;
  json entries = json::array();
  for (const auto& t : chk.tokenizer.tokens) {
    json e;
    e["values"] = doubles_to_json(t.data());
    json frozen = json::array();
    for (std::size_t r = 0; r < t.row_count(); ++r) frozen.push_back(t.row_frozen(r));
    e["frozen"] = std::move(frozen);
    entries.push_back(std::move(e));
  }
  tok["tokens"] = std::move(entries);
  j["tokenizer"] = std::move(tok);

  json model;
  model["kind"] = model_kind_to_string(chk.model_config.kind);
  model["input_dim"] = chk.model_input_dim;
  model["output_dim"] = chk.model_output_dim;
  const json full = json::parse(train_config_to_json_text(chk.train_config));
  model["config"] = full.at("model");
  json params;
  for (const auto& [name, tensor] : chk.model->named_parameters())
    params[name] = doubles_to_json(tensor.data());
  model["params"] = std::move(params);
  json buffers;
  for (auto& [name, buf] : const_cast<Model&>(*chk.model).named_buffers())
    buffers[name] = doubles_to_json(*buf);
  model["buffers"] = std::move(buffers);
  j["model"] = std::move(model);

  j["train_config"] = json::parse(train_config_to_json_text(chk.train_config));
  j["seeds"] = {{"master", chk.master_seed}};
  return j.dump(2);
}

Checkpoint checkpoint_from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw DataError(std::string("checkpoint is not valid JSON: ") + e.what());
  }
  Checkpoint chk;
  chk.version = j.at("version").get<int>();
  if (chk.version != 1) throw DataError("unsupported checkpoint version");
  chk.task = task_from_string(j.at("task").get<std::string>());
  chk.n_classes = j.at("n_classes").get<int>();
  chk.class_names = j.at("class_names").get<std::vector<std::string>>();

  chk.train_config = train_config_from_json_text(j.at("train_config").dump());
  chk.master_seed = chk.train_config.seed;
  if (j.contains("seeds")) chk.master_seed = j.at("seeds").at("master").get<std::uint64_t>();

  chk.tokenizer.schema = schema_from_json(j.at("schema"));
  chk.tokenizer.dim = j.at("tokenizer").at("dim").get<std::size_t>();
  const auto& entries = j.at("tokenizer").at("tokens");
  if (entries.size() != chk.tokenizer.schema.size())
    throw DataError("checkpoint tokenizer entries do not match schema");
  for (std::size_t fi = 0; fi < entries.size(); ++fi) {
    const auto& e = entries[fi];
    auto values = doubles_from_json(e.at("values"));
    const auto& spec = chk.tokenizer.schema[fi];
    const std::size_t rows = spec.kind == FeatureKind::numerical ? 1 : spec.cardinality();
    if (values.size() != rows * chk.tokenizer.dim)
      throw DataError("checkpoint token payload size mismatch for '" + spec.name + "'");
    Shape shape = spec.kind == FeatureKind::numerical ? Shape{chk.tokenizer.dim}
                                                      : Shape{rows, chk.tokenizer.dim};
    Tensor t = Tensor::param(std::move(shape), std::move(values));
    const auto frozen = e.at("frozen").get<std::vector<bool>>();
    if (frozen.size() != rows) throw DataError("checkpoint freeze flags size mismatch");
    for (std::size_t r = 0; r < rows; ++r)
      if (frozen[r]) t.set_row_frozen(r, true);
    chk.tokenizer.tokens.push_back(std::move(t));
  }

  const auto& jm = j.at("model");
  chk.model_config = chk.train_config.model;
  chk.model_config.kind = model_kind_from_string(jm.at("kind").get<std::string>());
  chk.model_input_dim = jm.at("input_dim").get<std::size_t>();
  chk.model_output_dim = jm.at("output_dim").get<std::size_t>();
  chk.model = make_model(chk.model_config, chk.model_input_dim, chk.model_output_dim, 0);

  const auto& params = jm.at("params");
  for (auto& [name, tensor] : chk.model->named_parameters()) {
    if (!params.contains(name)) throw DataError("checkpoint model missing parameter '" + name + "'");
    auto values = doubles_from_json(params.at(name));
    if (values.size() != tensor.numel())
      throw DataError("checkpoint parameter '" + name + "' size mismatch");
    Tensor handle = tensor;
    std::copy(values.begin(), values.end(), handle.data().begin());
  }
  const auto& buffers = jm.at("buffers");
  for (auto& [name, buf] : chk.model->named_buffers()) {
    if (!buffers.contains(name)) throw DataError("checkpoint model missing buffer '" + name + "'");
    *buf = doubles_from_json(buffers.at(name));
  }
  return chk;
}

void save_checkpoint(const Checkpoint& chk, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write checkpoint: " + path);
  out << checkpoint_to_json_text(chk);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open checkpoint: " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return checkpoint_from_json_text(text);
}

}  // namespace tabtoken
