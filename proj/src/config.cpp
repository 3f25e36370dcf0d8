#include "tabtoken/config.hpp"

#include <fstream>
#include <set>
#include <vector>

#include <json.hpp>

#include "tabtoken/data.hpp"

namespace tabtoken {

using nlohmann::json;

std::string pipeline_to_string(PipelineKind kind) {
  switch (kind) {
    case PipelineKind::tabtoken: return "tabtoken";
    case PipelineKind::scratch: return "scratch";
    case PipelineKind::vanilla_pretrain: return "vanilla-pretrain";
  }
  return "tabtoken";
}

PipelineKind pipeline_from_string(const std::string& name) {
  if (name == "tabtoken") return PipelineKind::tabtoken;
  if (name == "scratch") return PipelineKind::scratch;
  if (name == "vanilla-pretrain") return PipelineKind::vanilla_pretrain;
  throw ConfigError("unknown pipeline kind: " + name);
}

namespace {

// Pulls a value if the key exists, recording the key as consumed.
class SectionReader {
 public:
  SectionReader(const json& j, std::string path, std::vector<std::string>& unknown)
      : j_(j), path_(std::move(path)), unknown_(unknown) {
    if (!j_.is_object()) throw ConfigError("config section '" + path_ + "' must be a JSON object");
  }

  ~SectionReader() {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!consumed_.count(it.key())) unknown_.push_back(path_ + it.key());
  }

  template <typename T>
  void get(const char* key, T& out) {
    if (!j_.contains(key)) return;
    consumed_.insert(key);
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError("config key '" + path_ + key + "' has the wrong type");
    }
  }

  void get_string_enum(const char* key, std::string& out) { get(key, out); }

  bool has_section(const char* key) {
    if (!j_.contains(key)) return false;
    consumed_.insert(key);
    return true;
  }

  const json& section(const char* key) const { return j_.at(key); }
  const std::string& path() const { return path_; }

 private:
  const json& j_;
  std::string path_;
  std::vector<std::string>& unknown_;
  std::set<std::string> consumed_;
};

void parse_train(const json& j, const std::string& prefix, TrainConfig& out,
                 std::vector<std::string>& unknown) {
  SectionReader root(j, prefix, unknown);

  if (root.has_section("tokenizer")) {
    SectionReader s(root.section("tokenizer"), prefix + "tokenizer.", unknown);
    s.get("dim", out.token_dim);
  }
  if (root.has_section("objective")) {
    SectionReader s(root.section("objective"), prefix + "objective.", unknown);
    s.get("beta", out.beta);
    std::string variant, combine;
    s.get("variant", variant);
    s.get("combine", combine);
    try {
      if (!variant.empty()) out.variant = variant_from_string(variant);
      if (!combine.empty()) out.combine = combine_from_string(combine);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
  }
  if (root.has_section("model")) {
    SectionReader s(root.section("model"), prefix + "model.", unknown);
    std::string kind;
    s.get("kind", kind);
    try {
      if (!kind.empty()) out.model.kind = model_kind_from_string(kind);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
    if (s.has_section("mlp")) {
      SectionReader m(s.section("mlp"), prefix + "model.mlp.", unknown);
      m.get("hidden_sizes", out.model.mlp.hidden_sizes);
      m.get("dropout", out.model.mlp.dropout);
    }
    if (s.has_section("resnet")) {
      SectionReader m(s.section("resnet"), prefix + "model.resnet.", unknown);
      m.get("layer_count", out.model.resnet.layer_count);
      m.get("layer_size", out.model.resnet.layer_size);
      m.get("hidden_factor", out.model.resnet.hidden_factor);
      m.get("hidden_dropout", out.model.resnet.hidden_dropout);
      m.get("residual_dropout", out.model.resnet.residual_dropout);
    }
    if (s.has_section("transformer")) {
      SectionReader m(s.section("transformer"), prefix + "model.transformer.", unknown);
      m.get("layer_count", out.model.transformer.layer_count);
      m.get("head_count", out.model.transformer.head_count);
      m.get("ffn_factor", out.model.transformer.ffn_factor);
      m.get("attention_dropout", out.model.transformer.attention_dropout);
      m.get("ffn_dropout", out.model.transformer.ffn_dropout);
      m.get("residual_dropout", out.model.transformer.residual_dropout);
    }
  }
  if (root.has_section("pretrain")) {
    SectionReader s(root.section("pretrain"), prefix + "pretrain.", unknown);
    s.get("learning_rate", out.pretrain_lr);
    s.get("weight_decay", out.weight_decay);
    s.get("batch_size", out.batch_size);
    s.get("epochs", out.pretrain_epochs);
  }
  if (root.has_section("finetune")) {
    SectionReader s(root.section("finetune"), prefix + "finetune.", unknown);
    s.get("learning_rate", out.finetune_lr);
    s.get("epochs", out.finetune_epochs);
    std::string mode;
    s.get("tuning_mode", mode);
    try {
      if (!mode.empty()) out.tuning_mode = tuning_mode_from_string(mode);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
    s.get("warm_start_top", out.warm_start_top);
  }
  root.get("seed", out.seed);
}

json train_to_json(const TrainConfig& c) {
  json j;
  j["tokenizer"] = {{"dim", c.token_dim}};
  j["objective"] = {{"beta", c.beta},
                    {"variant", variant_to_string(c.variant)},
                    {"combine", combine_to_string(c.combine)}};
  j["model"] = {
      {"kind", model_kind_to_string(c.model.kind)},
      {"mlp", {{"hidden_sizes", c.model.mlp.hidden_sizes}, {"dropout", c.model.mlp.dropout}}},
      {"resnet",
       {{"layer_count", c.model.resnet.layer_count},
        {"layer_size", c.model.resnet.layer_size},
        {"hidden_factor", c.model.resnet.hidden_factor},
        {"hidden_dropout", c.model.resnet.hidden_dropout},
        {"residual_dropout", c.model.resnet.residual_dropout}}},
      {"transformer",
       {{"layer_count", c.model.transformer.layer_count},
        {"head_count", c.model.transformer.head_count},
        {"ffn_factor", c.model.transformer.ffn_factor},
        {"attention_dropout", c.model.transformer.attention_dropout},
        {"ffn_dropout", c.model.transformer.ffn_dropout},
        {"residual_dropout", c.model.transformer.residual_dropout}}}};
  j["pretrain"] = {{"learning_rate", c.pretrain_lr},
                   {"weight_decay", c.weight_decay},
                   {"batch_size", c.batch_size},
                   {"epochs", c.pretrain_epochs}};
  j["finetune"] = {{"learning_rate", c.finetune_lr},
                   {"epochs", c.finetune_epochs},
                   {"tuning_mode", tuning_mode_to_string(c.tuning_mode)},
                   {"warm_start_top", c.warm_start_top}};
  j["seed"] = c.seed;
  return j;
}

}  // namespace

RunConfig run_config_from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  RunConfig config;
  std::vector<std::string> unknown;
  {
    json train_part = j;
    train_part.erase("protocol");
    train_part.erase("paths");
    parse_train(train_part, "", config.train, unknown);

    if (j.contains("protocol")) {
      SectionReader s(j.at("protocol"), "protocol.", unknown);
      s.get("shots", config.protocol.shots);
      s.get("subsets", config.protocol.n_subsets);
      s.get("seeds", config.protocol.n_seeds);
      s.get("reweight_new_tokens", config.protocol.reweight_new_tokens);
      std::string pipeline, level;
      s.get("pipeline", pipeline);
      s.get("overlap_level", level);
      if (!pipeline.empty()) config.protocol.pipeline = pipeline_from_string(pipeline);
      if (!level.empty()) {
        if (level != "low" && level != "medium" && level != "high")
          throw ConfigError("protocol.overlap_level must be low|medium|high");
        config.protocol.overlap_level = level;
      }
    }
    if (j.contains("paths")) {
      SectionReader s(j.at("paths"), "paths.", unknown);
      s.get("data", config.paths.data);
      s.get("split", config.paths.split);
      s.get("checkpoint", config.paths.checkpoint);
      s.get("schema", config.paths.schema);
      s.get("out", config.paths.out);
    }
  }
  if (!unknown.empty()) {
    std::string msg = "unknown config keys:";
    for (const auto& k : unknown) msg += " " + k;
    throw ConfigError(msg);
  }
  return config;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return run_config_from_json_text(text);
}

std::string run_config_to_json_text(const RunConfig& config) {
  json j = train_to_json(config.train);
  j["protocol"] = {{"shots", config.protocol.shots},
                   {"subsets", config.protocol.n_subsets},
                   {"seeds", config.protocol.n_seeds},
                   {"pipeline", pipeline_to_string(config.protocol.pipeline)},
                   {"overlap_level", config.protocol.overlap_level},
                   {"reweight_new_tokens", config.protocol.reweight_new_tokens}};
  j["paths"] = {{"data", config.paths.data},
                {"split", config.paths.split},
                {"checkpoint", config.paths.checkpoint},
                {"schema", config.paths.schema},
                {"out", config.paths.out}};
  return j.dump(2);
}

std::string train_config_to_json_text(const TrainConfig& config) {
  return train_to_json(config).dump(2);
}

TrainConfig train_config_from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("train config is not valid JSON: ") + e.what());
  }
  TrainConfig out;
  std::vector<std::string> unknown;
  parse_train(j, "", out, unknown);
  if (!unknown.empty()) {
    std::string msg = "unknown config keys:";
    for (const auto& k : unknown) msg += " " + k;
    throw ConfigError(msg);
  }
  return out;
}

}  // namespace tabtoken
