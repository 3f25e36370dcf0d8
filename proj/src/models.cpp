#include "tabtoken/models.hpp"

#include <cmath>
#include <stdexcept>

namespace tabtoken {

std::string model_kind_to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::linear: return "linear";
    case ModelKind::mlp: return "mlp";
    case ModelKind::resnet: return "resnet";
    case ModelKind::transformer: return "transformer";
  }
  return "transformer";
}

ModelKind model_kind_from_string(const std::string& name) {
  if (name == "linear") return ModelKind::linear;
  if (name == "mlp") return ModelKind::mlp;
  if (name == "resnet") return ModelKind::resnet;
  if (name == "transformer") return ModelKind::transformer;
  throw std::invalid_argument("unknown model kind: " + name);
}

std::string tuning_mode_to_string(TuningMode mode) {
  switch (mode) {
    case TuningMode::full: return "full";
    case TuningMode::fix_top_layer: return "fix_top_layer";
    case TuningMode::tune_last_layer: return "tune_last_layer";
    case TuningMode::tune_attention: return "tune_attention";
    case TuningMode::tune_linear: return "tune_linear";
  }
  return "full";
}

TuningMode tuning_mode_from_string(const std::string& name) {
  if (name == "full") return TuningMode::full;
  if (name == "fix_top_layer") return TuningMode::fix_top_layer;
  if (name == "tune_last_layer") return TuningMode::tune_last_layer;
  if (name == "tune_attention") return TuningMode::tune_attention;
  if (name == "tune_linear") return TuningMode::tune_linear;
  throw std::invalid_argument("unknown tuning mode: " + name);
}

std::vector<Tensor> Model::parameters_for_mode(TuningMode mode) const {
  switch (mode) {
    case TuningMode::full: return parameters();
    case TuningMode::fix_top_layer: return {};
    default:
      throw std::invalid_argument("tuning mode '" + tuning_mode_to_string(mode) +
                                  "' is only supported for the transformer");
  }
}

namespace {

constexpr double kNormEps = 1e-5;

struct Linear {
  Tensor w;  // (in, out)
  Tensor b;  // (out)

  Tensor apply(const Tensor& x) const { return add_rowvec(matmul(x, w), b); }

  std::vector<Tensor> params() const { return {w, b}; }

  Linear deep_copy() const {
    Linear out;
    out.w = Tensor::param(w.shape(), {w.data().begin(), w.data().end()});
    out.b = Tensor::param(b.shape(), {b.data().begin(), b.data().end()});
    return out;
  }
};

Linear make_linear(std::size_t in, std::size_t out, RngStream& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(in));
  std::vector<double> w(in * out);
  for (double& v : w) v = rng.uniform(-bound, bound);
  Linear layer;
  layer.w = Tensor::param({in, out}, std::move(w));
  layer.b = Tensor::param({out}, std::vector<double>(out, 0.0));
  return layer;
}

Tensor maybe_dropout(const Tensor& x, double rate, bool train_mode, RngStream* rng) {
  if (!train_mode || rate <= 0.0) return x;
  if (!rng) throw std::logic_error("train-mode forward needs a dropout RNG");
  return mul(x, dropout_mask(x.shape(), rate, *rng));
}

struct LayerNorm {
  Tensor gamma, beta;

  static LayerNorm make(std::size_t n) {
    LayerNorm ln;
    ln.gamma = Tensor::param({n}, std::vector<double>(n, 1.0));
    ln.beta = Tensor::param({n}, std::vector<double>(n, 0.0));
    return ln;
  }

  Tensor apply(const Tensor& x2d) const {
    Tensor mu = mean_lastdim(x2d);
    Tensor xm = sub_colvec(x2d, mu);
    Tensor var = mean_lastdim(mul(xm, xm));
    Tensor xhat = mul_colvec(xm, rsqrt_shift(var, kNormEps));
    return add_rowvec(mul_rowvec(xhat, gamma), beta);
  }

  std::vector<Tensor> params() const { return {gamma, beta}; }

  LayerNorm deep_copy() const {
    LayerNorm out;
    out.gamma = Tensor::param(gamma.shape(), {gamma.data().begin(), gamma.data().end()});
    out.beta = Tensor::param(beta.shape(), {beta.data().begin(), beta.data().end()});
    return out;
  }
};

struct BatchNorm {
  Tensor gamma, beta;
  std::vector<double> running_mean, running_var;
  double momentum = 0.1;

  static BatchNorm make(std::size_t n) {
    BatchNorm bn;
    bn.gamma = Tensor::param({n}, std::vector<double>(n, 1.0));
    bn.beta = Tensor::param({n}, std::vector<double>(n, 0.0));
    bn.running_mean.assign(n, 0.0);
    bn.running_var.assign(n, 1.0);
    return bn;
  }

  Tensor apply(const Tensor& x, bool train_mode) {
    const std::size_t B = x.dim(0), n = x.dim(1);
    if (train_mode) {
      if (B < 2) throw std::invalid_argument("BatchNorm needs a batch of >= 2 rows in train mode");
      Tensor mu = mean_axis0(x);
      Tensor xm = sub_rowvec(x, mu);
      Tensor var = mean_axis0(mul(xm, xm));
      auto mu_v = mu.data();
      auto var_v = var.data();
      const double unbias = static_cast<double>(B) / static_cast<double>(B - 1);
      for (std::size_t j = 0; j < n; ++j) {
        running_mean[j] = (1.0 - momentum) * running_mean[j] + momentum * mu_v[j];
        running_var[j] = (1.0 - momentum) * running_var[j] + momentum * var_v[j] * unbias;
      }
      Tensor xhat = mul_rowvec(xm, rsqrt_shift(var, kNormEps));
      return add_rowvec(mul_rowvec(xhat, gamma), beta);
    }
    std::vector<double> inv(n);
    for (std::size_t j = 0; j < n; ++j) inv[j] = 1.0 / std::sqrt(running_var[j] + kNormEps);
    Tensor xm = sub_rowvec(x, Tensor::constant({n}, running_mean));
    Tensor xhat = mul_rowvec(xm, Tensor::constant({n}, std::move(inv)));
    return add_rowvec(mul_rowvec(xhat, gamma), beta);
  }

  std::vector<Tensor> params() const { return {gamma, beta}; }

  BatchNorm deep_copy() const {
    BatchNorm out;
    out.gamma = Tensor::param(gamma.shape(), {gamma.data().begin(), gamma.data().end()});
    out.beta = Tensor::param(beta.shape(), {beta.data().begin(), beta.data().end()});
    out.running_mean = running_mean;
    out.running_var = running_var;
    out.momentum = momentum;
    return out;
  }
};

void append_params(std::vector<std::pair<std::string, Tensor>>& out, const std::string& prefix,
                   const Linear& l) {
  out.emplace_back(prefix + ".weight", l.w);
  out.emplace_back(prefix + ".bias", l.b);
}

// ---- Linear model -----------------------------------------------------------

class LinearModel final : public Model {
 public:
  LinearModel(std::size_t in, std::size_t out, std::uint64_t seed) : in_(in), out_(out) {
    RngStream rng(derive_seed(seed, "model-init"));
    head_ = make_linear(in, out, rng);
  }
  LinearModel(const LinearModel& other)
      : in_(other.in_), out_(other.out_), head_(other.head_.deep_copy()) {}

  Tensor forward(const Tensor& input, bool, RngStream*) override { return head_.apply(input); }
  ModelKind kind() const override { return ModelKind::linear; }
  std::size_t input_dim() const override { return in_; }
  std::size_t output_dim() const override { return out_; }
  std::vector<Tensor> parameters() const override { return head_.params(); }
  std::vector<std::pair<std::string, Tensor>> named_parameters() const override {
    std::vector<std::pair<std::string, Tensor>> out;
    append_params(out, "head", head_);
    return out;
  }
  std::unique_ptr<Model> clone() const override { return std::make_unique<LinearModel>(*this); }

 private:
  std::size_t in_, out_;
  Linear head_;
};

// ---- MLP ---------------------------------------------------------------------

class MlpModel final : public Model {
 public:
  MlpModel(const MlpConfig& config, std::size_t in, std::size_t out, std::uint64_t seed)
      : config_(config), in_(in), out_(out) {
    RngStream rng(derive_seed(seed, "model-init"));
    std::size_t width = in;
    for (int h : config.hidden_sizes) {
      blocks_.push_back(make_linear(width, static_cast<std::size_t>(h), rng));
      width = static_cast<std::size_t>(h);
    }
    head_ = make_linear(width, out, rng);
  }
  MlpModel(const MlpModel& other) : config_(other.config_), in_(other.in_), out_(other.out_) {
    for (const auto& b : other.blocks_) blocks_.push_back(b.deep_copy());
    head_ = other.head_.deep_copy();
  }

  Tensor forward(const Tensor& input, bool train_mode, RngStream* rng) override {
    Tensor x = input;
    for (const auto& block : blocks_) {
      x = relu(block.apply(x));
      x = maybe_dropout(x, config_.dropout, train_mode, rng);
    }
    return head_.apply(x);
  }
  ModelKind kind() const override { return ModelKind::mlp; }
  std::size_t input_dim() const override { return in_; }
  std::size_t output_dim() const override { return out_; }
  std::vector<Tensor> parameters() const override {
    std::vector<Tensor> out;
    for (const auto& b : blocks_)
      for (auto& t : b.params()) out.push_back(t);
    for (auto& t : head_.params()) out.push_back(t);
    return out;
  }
  std::vector<std::pair<std::string, Tensor>> named_parameters() const override {
    std::vector<std::pair<std::string, Tensor>> out;
    for (std::size_t i = 0; i < blocks_.size(); ++i)
      append_params(out, "block" + std::to_string(i), blocks_[i]);
    append_params(out, "head", head_);
    return out;
  }
  std::unique_ptr<Model> clone() const override { return std::make_unique<MlpModel>(*this); }

 private:
  MlpConfig config_;
  std::size_t in_, out_;
  std::vector<Linear> blocks_;
  Linear head_;
};

// ---- ResNet --------------------------------------------------------------------

class ResNetModel final : public Model {
 public:
  ResNetModel(const ResNetConfig& config, std::size_t in, std::size_t out, std::uint64_t seed)
      : config_(config), in_(in), out_(out) {
    RngStream rng(derive_seed(seed, "model-init"));
    const auto main_width = static_cast<std::size_t>(config.layer_size);
    const auto hidden =
        static_cast<std::size_t>(static_cast<double>(config.layer_size) * config.hidden_factor);
    input_ = make_linear(in, main_width, rng);
    for (int i = 0; i < config.layer_count; ++i) {
      Block b;
      b.bn = BatchNorm::make(main_width);
      b.fc1 = make_linear(main_width, hidden, rng);
      b.fc2 = make_linear(hidden, main_width, rng);
      blocks_.push_back(std::move(b));
    }
    head_bn_ = BatchNorm::make(main_width);
    head_ = make_linear(main_width, out, rng);
  }
  ResNetModel(const ResNetModel& other)
      : config_(other.config_), in_(other.in_), out_(other.out_), input_(other.input_.deep_copy()) {
    for (const auto& b : other.blocks_) {
      Block copy;
      copy.bn = b.bn.deep_copy();
      copy.fc1 = b.fc1.deep_copy();
      copy.fc2 = b.fc2.deep_copy();
      blocks_.push_back(std::move(copy));
    }
    head_bn_ = other.head_bn_.deep_copy();
    head_ = other.head_.deep_copy();
  }

  Tensor forward(const Tensor& input, bool train_mode, RngStream* rng) override {
    Tensor x = input_.apply(input);
    for (auto& block : blocks_) {
      Tensor h = block.bn.apply(x, train_mode);
      h = relu(block.fc1.apply(h));
      h = maybe_dropout(h, config_.hidden_dropout, train_mode, rng);
      h = block.fc2.apply(h);
      h = maybe_dropout(h, config_.residual_dropout, train_mode, rng);
      x = add(x, h);
    }
    Tensor p = relu(head_bn_.apply(x, train_mode));
    return head_.apply(p);
  }
  ModelKind kind() const override { return ModelKind::resnet; }
  std::size_t input_dim() const override { return in_; }
  std::size_t output_dim() const override { return out_; }
  std::vector<Tensor> parameters() const override {
    std::vector<Tensor> out = input_.params();
    for (const auto& b : blocks_) {
      for (auto& t : b.bn.params()) out.push_back(t);
      for (auto& t : b.fc1.params()) out.push_back(t);
      for (auto& t : b.fc2.params()) out.push_back(t);
    }
    for (auto& t : head_bn_.params()) out.push_back(t);
    for (auto& t : head_.params()) out.push_back(t);
    return out;
  }
  std::vector<std::pair<std::string, Tensor>> named_parameters() const override {
    std::vector<std::pair<std::string, Tensor>> out;
    append_params(out, "input", input_);
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
      const std::string p = "block" + std::to_string(i);
      out.emplace_back(p + ".bn.gamma", blocks_[i].bn.gamma);
      out.emplace_back(p + ".bn.beta", blocks_[i].bn.beta);
      append_params(out, p + ".fc1", blocks_[i].fc1);
      append_params(out, p + ".fc2", blocks_[i].fc2);
    }
    out.emplace_back("head.bn.gamma", head_bn_.gamma);
    out.emplace_back("head.bn.beta", head_bn_.beta);
    append_params(out, "head.fc", head_);
    return out;
  }
  std::vector<std::pair<std::string, std::vector<double>*>> named_buffers() override {
    std::vector<std::pair<std::string, std::vector<double>*>> out;
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
      const std::string p = "block" + std::to_string(i);
      out.emplace_back(p + ".bn.running_mean", &blocks_[i].bn.running_mean);
      out.emplace_back(p + ".bn.running_var", &blocks_[i].bn.running_var);
    }
    out.emplace_back("head.bn.running_mean", &head_bn_.running_mean);
    out.emplace_back("head.bn.running_var", &head_bn_.running_var);
    return out;
  }
  std::unique_ptr<Model> clone() const override { return std::make_unique<ResNetModel>(*this); }

 private:
  struct Block {
    BatchNorm bn;
    Linear fc1, fc2;
  };
  ResNetConfig config_;
  std::size_t in_, out_;
  Linear input_;
  std::vector<Block> blocks_;
  BatchNorm head_bn_;
  Linear head_;
};

}  // namespace

// ---- attention (shared by the transformer and the standalone surface) -------

AttentionParams make_attention(std::size_t k, std::size_t heads, RngStream& rng) {
  if (heads == 0 || k % heads != 0)
    throw std::invalid_argument("token dimension must be divisible by head count");
  const double bound = std::sqrt(6.0 / static_cast<double>(k));
  auto init = [&](std::size_t rows, std::size_t cols) {
    std::vector<double> w(rows * cols);
    for (double& v : w) v = rng.uniform(-bound, bound);
    return Tensor::param({rows, cols}, std::move(w));
  };
  AttentionParams p;
  p.heads = heads;
  p.wq = init(k, k);
  p.wk = init(k, k);
  p.wv = init(k, k);
  p.wo = init(k, k);
  p.bq = Tensor::param({k}, std::vector<double>(k, 0.0));
  p.bk = Tensor::param({k}, std::vector<double>(k, 0.0));
  p.bv = Tensor::param({k}, std::vector<double>(k, 0.0));
  p.bo = Tensor::param({k}, std::vector<double>(k, 0.0));
  return p;
}

Tensor multihead_attention(const AttentionParams& params, const Tensor& tokens, bool train_mode,
                           double attention_dropout, RngStream* dropout_rng) {
  if (tokens.shape().size() != 3) throw std::invalid_argument("attention expects (B,d,k) tokens");
  const std::size_t B = tokens.dim(0), d = tokens.dim(1), k = tokens.dim(2);
  const std::size_t h = params.heads;
  if (k % h != 0) throw std::invalid_argument("token dimension not divisible by head count");
  const std::size_t dh = k / h;

  Tensor flat = reshape(tokens, {B * d, k});
  auto proj = [&](const Tensor& w, const Tensor& b) {
    return split_heads(reshape(add_rowvec(matmul(flat, w), b), {B, d, k}), h);
  };
  Tensor q = proj(params.wq, params.bq);
  Tensor key = proj(params.wk, params.bk);
  Tensor v = proj(params.wv, params.bv);

  Tensor scores = scale(bmm(q, key, /*trans_b=*/true), 1.0 / std::sqrt(static_cast<double>(dh)));
  Tensor attn = softmax_lastdim(scores);
  attn = maybe_dropout(attn, attention_dropout, train_mode, dropout_rng);
  Tensor ctx = merge_heads(bmm(attn, v), h);
  Tensor out = add_rowvec(matmul(reshape(ctx, {B * d, k}), params.wo), params.bo);
  return reshape(out, {B, d, k});
}

namespace {

// ---- Transformer ------------------------------------------------------------

class TransformerModel final : public Model {
 public:
  TransformerModel(const TransformerConfig& config, std::size_t token_dim, std::size_t out,
                   std::uint64_t seed)
      : config_(config), k_(token_dim), out_(out) {
    RngStream rng(derive_seed(seed, "model-init"));
    const auto ffn_hidden = static_cast<std::size_t>(static_cast<double>(token_dim) * config.ffn_factor);
    if (ffn_hidden == 0) throw std::invalid_argument("ffn hidden size is zero");
    for (int i = 0; i < config.layer_count; ++i) {
      Layer layer;
      layer.attn = make_attention(token_dim, static_cast<std::size_t>(config.head_count), rng);
      layer.ffn1 = make_linear(token_dim, 2 * ffn_hidden, rng);
      layer.ffn2 = make_linear(ffn_hidden, token_dim, rng);
      layer.norm = LayerNorm::make(token_dim);
      layers_.push_back(std::move(layer));
    }
    head_ = make_linear(token_dim, out, rng);
  }
  TransformerModel(const TransformerModel& other)
      : config_(other.config_), k_(other.k_), out_(other.out_) {
    auto copy_tensor = [](const Tensor& t) {
      return Tensor::param(t.shape(), {t.data().begin(), t.data().end()});
    };
    for (const auto& l : other.layers_) {
      Layer layer;
      layer.attn.heads = l.attn.heads;
      layer.attn.wq = copy_tensor(l.attn.wq);
      layer.attn.bq = copy_tensor(l.attn.bq);
      layer.attn.wk = copy_tensor(l.attn.wk);
      layer.attn.bk = copy_tensor(l.attn.bk);
      layer.attn.wv = copy_tensor(l.attn.wv);
      layer.attn.bv = copy_tensor(l.attn.bv);
      layer.attn.wo = copy_tensor(l.attn.wo);
      layer.attn.bo = copy_tensor(l.attn.bo);
      layer.ffn1 = l.ffn1.deep_copy();
      layer.ffn2 = l.ffn2.deep_copy();
      layer.norm = l.norm.deep_copy();
      layers_.push_back(std::move(layer));
    }
    head_ = other.head_.deep_copy();
  }

  Tensor forward(const Tensor& input, bool train_mode, RngStream* rng) override {
    if (input.shape().size() != 3 || input.dim(2) != k_)
      throw std::invalid_argument("transformer expects (B,d," + std::to_string(k_) + ") tokens");
    const std::size_t B = input.dim(0), d = input.dim(1);
    Tensor x = input;
    for (auto& layer : layers_) {
      Tensor a = multihead_attention(layer.attn, x, train_mode, config_.attention_dropout, rng);
      a = maybe_dropout(a, config_.residual_dropout, train_mode, rng);
      x = add(x, a);

      Tensor flat = reshape(x, {B * d, k_});
      Tensor f = layer.ffn1.apply(flat);
      f = reglu(f);
      f = maybe_dropout(f, config_.ffn_dropout, train_mode, rng);
      f = layer.ffn2.apply(f);
      f = reshape(f, {B, d, k_});
      f = maybe_dropout(f, config_.residual_dropout, train_mode, rng);
      x = add(x, f);

      // Post-norm: one LayerNorm per layer, applied after the FFN residual.
      x = reshape(layer.norm.apply(reshape(x, {B * d, k_})), {B, d, k_});
    }
    Tensor pooled = mean_axis1(x);
    return head_.apply(relu(pooled));
  }
  ModelKind kind() const override { return ModelKind::transformer; }
  std::size_t input_dim() const override { return k_; }
  std::size_t output_dim() const override { return out_; }

  std::vector<Tensor> parameters() const override {
    std::vector<Tensor> out;
    for (const auto& l : layers_) append_layer_params(out, l);
    for (auto& t : head_.params()) out.push_back(t);
    return out;
  }
  std::vector<Tensor> parameters_for_mode(TuningMode mode) const override {
    std::vector<Tensor> out;
    switch (mode) {
      case TuningMode::full:
        return parameters();
      case TuningMode::fix_top_layer:
        return {};
      case TuningMode::tune_last_layer:
        if (!layers_.empty()) append_layer_params(out, layers_.back());
        break;
      case TuningMode::tune_attention:
        for (const auto& l : layers_) {
          for (auto& t : {l.attn.wq, l.attn.bq, l.attn.wk, l.attn.bk, l.attn.wv, l.attn.bv,
                          l.attn.wo, l.attn.bo})
            out.push_back(t);
        }
        break;
      case TuningMode::tune_linear:
        for (const auto& l : layers_) {
          for (auto& t : l.ffn1.params()) out.push_back(t);
          for (auto& t : l.ffn2.params()) out.push_back(t);
        }
        break;
    }
    for (auto& t : head_.params()) out.push_back(t);
    return out;
  }
  std::vector<std::pair<std::string, Tensor>> named_parameters() const override {
    std::vector<std::pair<std::string, Tensor>> out;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      const std::string p = "layer" + std::to_string(i);
      out.emplace_back(p + ".attn.wq", layers_[i].attn.wq);
      out.emplace_back(p + ".attn.bq", layers_[i].attn.bq);
      out.emplace_back(p + ".attn.wk", layers_[i].attn.wk);
      out.emplace_back(p + ".attn.bk", layers_[i].attn.bk);
      out.emplace_back(p + ".attn.wv", layers_[i].attn.wv);
      out.emplace_back(p + ".attn.bv", layers_[i].attn.bv);
      out.emplace_back(p + ".attn.wo", layers_[i].attn.wo);
      out.emplace_back(p + ".attn.bo", layers_[i].attn.bo);
      append_params(out, p + ".ffn1", layers_[i].ffn1);
      append_params(out, p + ".ffn2", layers_[i].ffn2);
      out.emplace_back(p + ".norm.gamma", layers_[i].norm.gamma);
      out.emplace_back(p + ".norm.beta", layers_[i].norm.beta);
    }
    append_params(out, "head", head_);
    return out;
  }
  std::unique_ptr<Model> clone() const override { return std::make_unique<TransformerModel>(*this); }

 private:
  struct Layer {
    AttentionParams attn;
    Linear ffn1, ffn2;
    LayerNorm norm;
  };

  static void append_layer_params(std::vector<Tensor>& out, const Layer& l) {
    for (auto& t : {l.attn.wq, l.attn.bq, l.attn.wk, l.attn.bk, l.attn.wv, l.attn.bv, l.attn.wo,
                    l.attn.bo})
      out.push_back(t);
    for (auto& t : l.ffn1.params()) out.push_back(t);
    for (auto& t : l.ffn2.params()) out.push_back(t);
    for (auto& t : l.norm.params()) out.push_back(t);
  }

  TransformerConfig config_;
  std::size_t k_, out_;
  std::vector<Layer> layers_;
  Linear head_;
};

}  // namespace

std::unique_ptr<Model> make_model(const ModelConfig& config, std::size_t input_dim,
                                  std::size_t output_dim, std::uint64_t seed) {
  switch (config.kind) {
    case ModelKind::linear: return std::make_unique<LinearModel>(input_dim, output_dim, seed);
    case ModelKind::mlp: return std::make_unique<MlpModel>(config.mlp, input_dim, output_dim, seed);
    case ModelKind::resnet:
      return std::make_unique<ResNetModel>(config.resnet, input_dim, output_dim, seed);
    case ModelKind::transformer:
      return std::make_unique<TransformerModel>(config.transformer, input_dim, output_dim, seed);
  }
  throw std::logic_error("unreachable");
}

}  // namespace tabtoken
