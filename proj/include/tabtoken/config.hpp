#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

#include "tabtoken/models.hpp"
#include "tabtoken/objective.hpp"

namespace tabtoken {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Everything a single training stage needs: AdamW with decoupled weight
// decay 2e-4, batch 1024, pre-training at lr 1e-3 over 200 epochs with
// best-validation checkpointing, fine-tuning at lr 5e-4 over 10 epochs with
// no validation access.
struct TrainConfig {
  std::size_t token_dim = 64;
  double beta = 1.0;
  CtrVariant variant = CtrVariant::vanilla;
  CombineMode combine = CombineMode::average;
  ModelConfig model;

  double pretrain_lr = 1e-3;
  double finetune_lr = 5e-4;
  double weight_decay = 2e-4;
  std::size_t batch_size = 1024;
  std::size_t pretrain_epochs = 200;
  std::size_t finetune_epochs = 10;

  TuningMode tuning_mode = TuningMode::full;
  // Warm-start the downstream top-layer model from the pre-trained one when
  // the architectures line up; otherwise it is re-initialized.
  bool warm_start_top = true;

  std::uint64_t seed = 0;
};

enum class PipelineKind { tabtoken, scratch, vanilla_pretrain };

std::string pipeline_to_string(PipelineKind kind);
PipelineKind pipeline_from_string(const std::string& name);

struct ProtocolConfig {
  std::size_t shots = 5;
  std::size_t n_subsets = 30;
  std::size_t n_seeds = 10;
  PipelineKind pipeline = PipelineKind::tabtoken;
  std::string overlap_level = "medium";
  std::size_t reweight_new_tokens = 0;  // nonzero switches fine-tuning to the token library
};

struct PathsConfig {
  std::string data;
  std::string split;
  std::string checkpoint;
  std::string schema;
  std::string out;
};

struct RunConfig {
  TrainConfig train;
  ProtocolConfig protocol;
  PathsConfig paths;
};

// Strict JSON round trip: unknown keys are rejected with a ConfigError that
// lists every offending key path.
RunConfig run_config_from_json_text(const std::string& text);
RunConfig load_run_config(const std::string& path);
std::string run_config_to_json_text(const RunConfig& config);

std::string train_config_to_json_text(const TrainConfig& config);
TrainConfig train_config_from_json_text(const std::string& text);

}  // namespace tabtoken
