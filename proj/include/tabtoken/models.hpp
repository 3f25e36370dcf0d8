#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "tabtoken/tensor.hpp"

namespace tabtoken {

struct MlpConfig {
  std::vector<int> hidden_sizes{168, 168, 168};
  double dropout = 0.2;
};

struct ResNetConfig {
  int layer_count = 3;
  int layer_size = 168;
  double hidden_factor = 2.9;
  double hidden_dropout = 0.5;
  double residual_dropout = 0.0;
};

struct TransformerConfig {
  int layer_count = 3;
  int head_count = 8;
  double ffn_factor = 4.0 / 3.0;
  double attention_dropout = 0.08;
  double ffn_dropout = 0.3;
  double residual_dropout = 0.1;
};

enum class ModelKind { linear, mlp, resnet, transformer };

std::string model_kind_to_string(ModelKind kind);
ModelKind model_kind_from_string(const std::string& name);

struct ModelConfig {
  ModelKind kind = ModelKind::transformer;
  MlpConfig mlp;
  ResNetConfig resnet;
  TransformerConfig transformer;
};

// Which modules stay trainable during fine-tuning.
enum class TuningMode { full, fix_top_layer, tune_last_layer, tune_attention, tune_linear };

std::string tuning_mode_to_string(TuningMode mode);
TuningMode tuning_mode_from_string(const std::string& name);

// Top-layer model over tokens. MLP/ResNet/Linear consume a combined token
// vector (B, in); the Transformer consumes the token set (B, d, k) and
// predicts from the averaged output tokens.
class Model {
 public:
  virtual ~Model() = default;

  virtual Tensor forward(const Tensor& input, bool train_mode, RngStream* dropout_rng) = 0;
  virtual ModelKind kind() const = 0;
  virtual std::size_t input_dim() const = 0;
  virtual std::size_t output_dim() const = 0;

  virtual std::vector<Tensor> parameters() const = 0;
  virtual std::vector<Tensor> parameters_for_mode(TuningMode mode) const;
  virtual std::vector<std::pair<std::string, Tensor>> named_parameters() const = 0;
  virtual std::vector<std::pair<std::string, std::vector<double>*>> named_buffers() { return {}; }

  virtual std::unique_ptr<Model> clone() const = 0;

  Tensor predict(const Tensor& input) { return forward(input, false, nullptr); }
};

// input_dim is the combined vector width for linear/mlp/resnet and the token
// dimension k for the transformer.
std::unique_ptr<Model> make_model(const ModelConfig& config, std::size_t input_dim,
                                  std::size_t output_dim, std::uint64_t seed);

// Standalone multi-head self-attention over a (B, d, k) token set, exposed for
// direct testing: softmax(Q K^T / sqrt(k/h)) V per head, concatenated and
// output-projected.
struct AttentionParams {
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
  std::size_t heads = 1;
};
AttentionParams make_attention(std::size_t k, std::size_t heads, RngStream& rng);
Tensor multihead_attention(const AttentionParams& params, const Tensor& tokens, bool train_mode,
                           double attention_dropout, RngStream* dropout_rng);

}  // namespace tabtoken
