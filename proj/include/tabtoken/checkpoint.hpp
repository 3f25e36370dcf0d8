#pragma once

#include <memory>
#include <string>
#include <vector>

#include "tabtoken/config.hpp"
#include "tabtoken/data.hpp"
#include "tabtoken/models.hpp"
#include "tabtoken/tokenizer.hpp"

namespace tabtoken {

// Serialized training product: tokenizer + top-layer model + enough metadata
// to rebuild both. All fp64 payloads are written as hex-float strings, so a
// save/load round trip is bit-exact.
struct Checkpoint {
  int version = 1;
  TaskKind task = TaskKind::multiclass;
  int n_classes = 0;
  std::vector<std::string> class_names;
  TokenizerParams tokenizer;
  ModelConfig model_config;
  std::size_t model_input_dim = 0;
  std::size_t model_output_dim = 0;
  std::shared_ptr<Model> model;
  TrainConfig train_config;
  std::uint64_t master_seed = 0;

  Checkpoint deep_copy() const;
};

std::string checkpoint_to_json_text(const Checkpoint& chk);
Checkpoint checkpoint_from_json_text(const std::string& text);
void save_checkpoint(const Checkpoint& chk, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

// Lossless fp64 <-> text helpers (hex-float form).
std::string double_to_hex(double v);
double double_from_hex(const std::string& text);

}  // namespace tabtoken
