#include "tabtoken/transfer.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>

#include "tabtoken/objective.hpp"
#include "tabtoken/optim.hpp"

namespace tabtoken {

namespace {

using TokenizeFn = std::function<Tensor(const std::vector<std::size_t>&)>;

std::size_t model_input_width(const TrainConfig& config, std::size_t n_features) {
  if (config.model.kind == ModelKind::transformer) return config.token_dim;
  return config.combine == CombineMode::average ? config.token_dim
                                                : config.token_dim * n_features;
}

std::size_t output_width(const DatasetTable& table) {
  return table.task == TaskKind::regression ? 1 : static_cast<std::size_t>(table.n_classes);
}

std::vector<int> ctr_labels_for(const DatasetTable& table) {
  if (table.task == TaskKind::regression) return pseudo_labels_regression(table.targets);
  return table.class_labels;
}

struct TrainStage {
  const DatasetTable& table;
  TokenizeFn tokenize;
  Model& model;
  std::vector<Tensor> params;
  double learning_rate;
  std::size_t epochs;
  std::size_t batch_size;
  const TrainConfig& config;
  std::uint64_t shuffle_seed;
  std::uint64_t dropout_seed;
  // Called after each epoch; used for best-validation tracking.
  std::function<void(std::size_t)> on_epoch = nullptr;
};

Tensor stage_loss(const TrainStage& stage, const std::vector<std::size_t>& rows,
                  const std::vector<int>& ctr_labels_full, RngStream* dropout_rng, bool train_mode) {
  Tensor tokens = stage.tokenize(rows);
  Tensor input = stage.model.kind() == ModelKind::transformer
                     ? tokens
                     : combine(tokens, stage.config.combine);
  Tensor out = stage.model.forward(input, train_mode, dropout_rng);

  std::vector<int> batch_classes;
  std::vector<double> batch_targets;
  if (stage.table.task == TaskKind::regression) {
    batch_targets.reserve(rows.size());
    for (std::size_t r : rows) batch_targets.push_back(stage.table.targets[r]);
  } else {
    batch_classes.reserve(rows.size());
    for (std::size_t r : rows) batch_classes.push_back(stage.table.class_labels[r]);
  }
  std::vector<int> batch_ctr;
  batch_ctr.reserve(rows.size());
  for (std::size_t r : rows) batch_ctr.push_back(ctr_labels_full[r]);

  return training_objective(out, stage.table.task, batch_classes, batch_targets,
                            combine_average(tokens), batch_ctr, stage.config.beta,
                            stage.config.variant);
}

void run_training(TrainStage& stage) {
  const std::size_t n = stage.table.n_rows();
  if (n == 0) throw std::invalid_argument("training table is empty");
  AdamWConfig opt_config;
  opt_config.learning_rate = stage.learning_rate;
  opt_config.weight_decay = stage.config.weight_decay;
  AdamW opt(stage.params, opt_config);

  const std::vector<int> ctr_full = ctr_labels_for(stage.table);
  RngStream shuffle_rng(stage.shuffle_seed);
  RngStream dropout_rng(stage.dropout_seed);

  std::vector<std::size_t> indices(n);
  for (std::size_t i = 0; i < n; ++i) indices[i] = i;

  const std::size_t batch = std::max<std::size_t>(1, std::min(stage.batch_size, n));
  for (std::size_t epoch = 0; epoch < stage.epochs; ++epoch) {
    shuffle_rng.shuffle(indices);
    for (std::size_t begin = 0; begin < n; begin += batch) {
      const std::size_t end = std::min(begin + batch, n);
      std::vector<std::size_t> rows(indices.begin() + static_cast<std::ptrdiff_t>(begin),
                                    indices.begin() + static_cast<std::ptrdiff_t>(end));
      // BatchNorm cannot normalize a single row; drop a trailing singleton
      // batch (a one-row table still errors inside the model).
      if (rows.size() == 1 && stage.model.kind() == ModelKind::resnet && n > 1) continue;
      Tensor loss = stage_loss(stage, rows, ctr_full, &dropout_rng, true);
      opt.zero_grad();
      loss.backward();
      opt.step();
    }
    if (stage.on_epoch) stage.on_epoch(epoch);
  }
}

std::vector<double> predict_with(const TokenizeFn& tokenize, Model& model, const TrainConfig& config,
                                 const DatasetTable& table, std::size_t batch_size) {
  const std::size_t n = table.n_rows();
  const std::size_t width = model.output_dim();
  std::vector<double> out(n * width);
  for (std::size_t begin = 0; begin < n; begin += batch_size) {
    const std::size_t end = std::min(begin + batch_size, n);
    std::vector<std::size_t> rows(end - begin);
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = begin + i;
    Tensor tokens = tokenize(rows);
    Tensor input =
        model.kind() == ModelKind::transformer ? tokens : combine(tokens, config.combine);
    Tensor pred = model.forward(input, false, nullptr);
    std::copy(pred.data().begin(), pred.data().end(),
              out.begin() + static_cast<std::ptrdiff_t>(begin * width));
  }
  return out;
}

// Higher is better for classification, lower (negated) for regression.
double validation_score(const TokenizerParams& tokenizer, Model& model, const DatasetTable& val,
                        const TrainConfig& config) {
  TokenizeFn tokenize = [&](const std::vector<std::size_t>& rows) {
    return tokenize_batch(tokenizer, val, rows);
  };
  const std::vector<double> outputs = predict_with(tokenize, model, config, val, 2048);
  const std::size_t width = model.output_dim();
  if (val.task == TaskKind::regression) {
    double total = 0.0;
    for (std::size_t i = 0; i < val.targets.size(); ++i) {
      const double diff = outputs[i] - val.targets[i];
      total += diff * diff;
    }
    return -std::sqrt(total / static_cast<double>(val.targets.size()));
  }
  std::size_t correct = 0;
  for (std::size_t i = 0; i < val.class_labels.size(); ++i) {
    std::size_t arg = 0;
    for (std::size_t c = 1; c < width; ++c)
      if (outputs[i * width + c] > outputs[i * width + arg]) arg = c;
    if (static_cast<int>(arg) == val.class_labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(val.class_labels.size());
}

Checkpoint make_checkpoint(TokenizerParams tokenizer, std::shared_ptr<Model> model,
                           const DatasetTable& table, const TrainConfig& config) {
  Checkpoint chk;
  chk.task = table.task;
  chk.n_classes = table.n_classes;
  chk.class_names = table.class_names;
  chk.tokenizer = std::move(tokenizer);
  chk.model_config = config.model;
  chk.model_input_dim = model->input_dim();
  chk.model_output_dim = model->output_dim();
  chk.model = std::move(model);
  chk.train_config = config;
  chk.master_seed = config.seed;
  return chk;
}

}  // namespace

Checkpoint pretrain(const DatasetTable& train, const DatasetTable& val, const TrainConfig& config) {
  train.validate();
  val.validate();
  if (val.schema != train.schema) throw std::invalid_argument("pretrain: validation schema mismatch");

  TokenizerParams tokenizer =
      init_tokenizer(train.schema, config.token_dim, derive_seed(config.seed, "pretrain-tokenizer"));
  std::shared_ptr<Model> model =
      make_model(config.model, model_input_width(config, train.n_features()), output_width(train),
                 derive_seed(config.seed, "pretrain-model"));

  Checkpoint best = make_checkpoint(tokenizer.clone(), model->clone(), train, config);
  double best_score = -std::numeric_limits<double>::infinity();

  TrainStage stage{
      .table = train,
      .tokenize = [&](const std::vector<std::size_t>& rows) { return tokenize_batch(tokenizer, train, rows); },
      .model = *model,
      .params = {},
      .learning_rate = config.pretrain_lr,
      .epochs = config.pretrain_epochs,
      .batch_size = config.batch_size,
      .config = config,
      .shuffle_seed = derive_seed(config.seed, "pretrain-shuffle"),
      .dropout_seed = derive_seed(config.seed, "pretrain-dropout"),
  };
  stage.params = tokenizer.parameters();
  for (auto& t : model->parameters()) stage.params.push_back(t);
  stage.on_epoch = [&](std::size_t) {
    const double score = validation_score(tokenizer, *model, val, config);
    if (score > best_score) {
      best_score = score;
      best = make_checkpoint(tokenizer.clone(), model->clone(), train, config);
    }
  };
  run_training(stage);
  return best;
}

TokenizerParams build_finetune_tokenizer(const Checkpoint& chk,
                                         const std::vector<FeatureSpec>& downstream_schema,
                                         const OverlapMap& overlap) {
  overlap.validate();
  if (overlap.pretrain_features != chk.tokenizer.schema.size())
    throw std::invalid_argument("overlap map does not match checkpoint feature count");
  if (overlap.downstream_features != downstream_schema.size())
    throw std::invalid_argument("overlap map does not match downstream feature count");

  const std::size_t k = chk.tokenizer.dim;
  const std::vector<double> pooled = chk.tokenizer.pooled_rows();
  const std::size_t pooled_rows = pooled.size() / k;
  std::vector<double> mean_row(k, 0.0);
  for (std::size_t r = 0; r < pooled_rows; ++r)
    for (std::size_t c = 0; c < k; ++c) mean_row[c] += pooled[r * k + c];
  for (double& v : mean_row) v /= static_cast<double>(pooled_rows);

  std::vector<std::ptrdiff_t> source(downstream_schema.size(), -1);
  for (const auto& [dj, pj] : overlap.pairs) source[dj] = static_cast<std::ptrdiff_t>(pj);

  TokenizerParams out;
  out.schema = downstream_schema;
  out.dim = k;
  for (std::size_t j = 0; j < downstream_schema.size(); ++j) {
    const FeatureSpec& spec = downstream_schema[j];
    const std::size_t rows = spec.kind == FeatureKind::numerical ? 1 : spec.cardinality();
    if (source[j] < 0) {
      // Unseen feature: every row starts at the pooled mean, trainable.
      std::vector<double> data;
      data.reserve(rows * k);
      for (std::size_t r = 0; r < rows; ++r) data.insert(data.end(), mean_row.begin(), mean_row.end());
      Shape shape = spec.kind == FeatureKind::numerical ? Shape{k} : Shape{rows, k};
      out.tokens.push_back(Tensor::param(std::move(shape), std::move(data)));
      continue;
    }
    const auto pj = static_cast<std::size_t>(source[j]);
    const FeatureSpec& up = chk.tokenizer.schema[pj];
    if (up.kind != spec.kind)
      throw std::invalid_argument("overlap pair kind mismatch on feature '" + spec.name + "'");
    const Tensor& up_tokens = chk.tokenizer.tokens[pj];
    if (spec.kind == FeatureKind::numerical) {
      Tensor t = Tensor::param({k}, {up_tokens.data().begin(), up_tokens.data().end()});
      t.set_row_frozen(0, true);
      out.tokens.push_back(std::move(t));
      continue;
    }
    std::vector<double> data(rows * k);
    std::vector<bool> frozen(rows, false);
    for (std::size_t r = 0; r < rows; ++r) {
      const std::string& label = spec.categories[r];
      auto it = std::find(up.categories.begin(), up.categories.end(), label);
      if (it == up.categories.end()) {
        // Category unseen upstream: pooled-mean row, trainable.
        std::copy(mean_row.begin(), mean_row.end(), data.begin() + static_cast<std::ptrdiff_t>(r * k));
      } else {
        const auto src = static_cast<std::size_t>(it - up.categories.begin());
        std::copy_n(up_tokens.data().data() + src * k, k,
                    data.begin() + static_cast<std::ptrdiff_t>(r * k));
        frozen[r] = true;
      }
    }
    Tensor t = Tensor::param({rows, k}, std::move(data));
    for (std::size_t r = 0; r < rows; ++r)
      if (frozen[r]) t.set_row_frozen(r, true);
    out.tokens.push_back(std::move(t));
  }
  return out;
}

DatasetTable align_class_labels(const Checkpoint& chk, const DatasetTable& table) {
  if (table.task == TaskKind::regression) return table;
  DatasetTable out = table;
  if (table.class_names == chk.class_names) return out;
  std::vector<int> remap(table.class_names.size(), -1);
  for (std::size_t c = 0; c < table.class_names.size(); ++c) {
    auto it = std::find(chk.class_names.begin(), chk.class_names.end(), table.class_names[c]);
    if (it == chk.class_names.end())
      throw std::invalid_argument("class '" + table.class_names[c] +
                                  "' not present in the checkpoint label space");
    remap[c] = static_cast<int>(it - chk.class_names.begin());
  }
  for (int& y : out.class_labels) y = remap[static_cast<std::size_t>(y)];
  out.class_names = chk.class_names;
  out.n_classes = chk.n_classes;
  return out;
}

namespace {

std::shared_ptr<Model> downstream_model(const Checkpoint& chk, const DatasetTable& fewshot,
                                        const TrainConfig& config) {
  const std::size_t in = model_input_width(config, fewshot.n_features());
  const std::size_t out = output_width(fewshot);
  const bool compatible = chk.model && chk.model_config.kind == config.model.kind &&
                          chk.model->input_dim() == in && chk.model->output_dim() == out;
  if (config.warm_start_top && compatible) return chk.model->clone();
  return make_model(config.model, in, out, derive_seed(config.seed, "finetune-model"));
}

Checkpoint finetune_with_tokenizer(const Checkpoint& chk, TokenizerParams tokenizer,
                                   const DatasetTable& fewshot, const TrainConfig& config) {
  std::shared_ptr<Model> model = downstream_model(chk, fewshot, config);

  TrainStage stage{
      .table = fewshot,
      .tokenize = [&](const std::vector<std::size_t>& rows) { return tokenize_batch(tokenizer, fewshot, rows); },
      .model = *model,
      .params = {},
      .learning_rate = config.finetune_lr,
      .epochs = config.finetune_epochs,
      .batch_size = config.batch_size,
      .config = config,
      .shuffle_seed = derive_seed(config.seed, "finetune-shuffle"),
      .dropout_seed = derive_seed(config.seed, "finetune-dropout"),
  };
  stage.params = tokenizer.parameters();
  for (auto& t : model->parameters_for_mode(config.tuning_mode)) stage.params.push_back(t);
  run_training(stage);
  return make_checkpoint(std::move(tokenizer), std::move(model), fewshot, config);
}

}  // namespace

Checkpoint finetune(const Checkpoint& chk, const DatasetTable& fewshot, const OverlapMap& overlap,
                    const TrainConfig& config) {
  fewshot.validate();
  if (fewshot.task != chk.task) throw std::invalid_argument("finetune: task kind mismatch");
  const DatasetTable aligned = align_class_labels(chk, fewshot);
  TokenizerParams tokenizer = build_finetune_tokenizer(chk, aligned.schema, overlap);
  return finetune_with_tokenizer(chk, std::move(tokenizer), aligned, config);
}

Checkpoint train_few_shot_scratch(const DatasetTable& fewshot, const TrainConfig& config) {
  fewshot.validate();
  TokenizerParams tokenizer =
      init_tokenizer(fewshot.schema, config.token_dim, derive_seed(config.seed, "scratch-tokenizer"));
  std::shared_ptr<Model> model =
      make_model(config.model, model_input_width(config, fewshot.n_features()),
                 output_width(fewshot), derive_seed(config.seed, "finetune-model"));

  TrainStage stage{
      .table = fewshot,
      .tokenize = [&](const std::vector<std::size_t>& rows) { return tokenize_batch(tokenizer, fewshot, rows); },
      .model = *model,
      .params = {},
      .learning_rate = config.finetune_lr,
      .epochs = config.finetune_epochs,
      .batch_size = config.batch_size,
      .config = config,
      .shuffle_seed = derive_seed(config.seed, "finetune-shuffle"),
      .dropout_seed = derive_seed(config.seed, "finetune-dropout"),
  };
  stage.params = tokenizer.parameters();
  for (auto& t : model->parameters()) stage.params.push_back(t);
  run_training(stage);
  return make_checkpoint(std::move(tokenizer), std::move(model), fewshot, config);
}

// ---- re-weighting -----------------------------------------------------------

std::size_t ReweightParams::library_rows() const {
  return pretrained_rows.dim(0) + new_tokens.dim(0);
}

std::vector<Tensor> ReweightParams::assemble_feature_tokens() const {
  Tensor library = new_tokens.dim(0) > 0 ? concat_rows(pretrained_rows, new_tokens)
                                         : pretrained_rows;
  Tensor fine = matmul(weights, library);
  std::vector<Tensor> out;
  std::size_t row = 0;
  for (const auto& spec : schema) {
    const std::size_t rows = spec.kind == FeatureKind::numerical ? 1 : spec.cardinality();
    out.push_back(slice_rows(fine, row, row + rows));
    row += rows;
  }
  return out;
}

ReweightParams init_reweight(const Checkpoint& chk,
                             const std::vector<FeatureSpec>& downstream_schema, std::size_t n_new,
                             std::uint64_t seed) {
  ReweightParams rw;
  rw.schema = downstream_schema;
  rw.dim = chk.tokenizer.dim;
  rw.pretrained_rows =
      Tensor::constant({chk.tokenizer.total_token_rows(), rw.dim}, chk.tokenizer.pooled_rows());

  RngStream rng(derive_seed(seed, "reweight-init"));
  const double bound = std::sqrt(6.0 / static_cast<double>(rw.dim));
  std::vector<double> fresh(n_new * rw.dim);
  for (double& v : fresh) v = rng.uniform(-bound, bound);
  rw.new_tokens = Tensor::param({n_new, rw.dim}, std::move(fresh));

  std::size_t rows_out = 0;
  for (const auto& spec : downstream_schema)
    rows_out += spec.kind == FeatureKind::numerical ? 1 : spec.cardinality();
  const std::size_t lib = chk.tokenizer.total_token_rows() + n_new;
  rw.weights = Tensor::param({rows_out, lib},
                             std::vector<double>(rows_out * lib, 1.0 / static_cast<double>(lib)));
  return rw;
}

Checkpoint reweight_finetune(const Checkpoint& chk, const DatasetTable& fewshot, std::size_t n_new,
                             const TrainConfig& config) {
  fewshot.validate();
  if (fewshot.task != chk.task) throw std::invalid_argument("reweight_finetune: task kind mismatch");
  const DatasetTable aligned = align_class_labels(chk, fewshot);
  ReweightParams rw = init_reweight(chk, aligned.schema, n_new, config.seed);
  std::shared_ptr<Model> model = downstream_model(chk, aligned, config);

  TrainStage stage{
      .table = aligned,
      .tokenize =
          [&](const std::vector<std::size_t>& rows) {
            return tokenize_batch_with(rw.schema, rw.assemble_feature_tokens(), aligned, rows);
          },
      .model = *model,
      .params = rw.parameters(),
      .learning_rate = config.finetune_lr,
      .epochs = config.finetune_epochs,
      .batch_size = config.batch_size,
      .config = config,
      .shuffle_seed = derive_seed(config.seed, "finetune-shuffle"),
      .dropout_seed = derive_seed(config.seed, "finetune-dropout"),
  };
  if (n_new == 0) stage.params = {rw.weights};
  for (auto& t : model->parameters_for_mode(config.tuning_mode)) stage.params.push_back(t);
  run_training(stage);

  // Materialize the re-weighted rows into a plain tokenizer for the artifact.
  TokenizerParams tokenizer;
  tokenizer.schema = aligned.schema;
  tokenizer.dim = rw.dim;
  for (const auto& t : rw.assemble_feature_tokens()) {
    if (t.dim(0) == 1)
      tokenizer.tokens.push_back(Tensor::param({rw.dim}, {t.data().begin(), t.data().end()}));
    else
      tokenizer.tokens.push_back(Tensor::param(t.shape(), {t.data().begin(), t.data().end()}));
  }
  return make_checkpoint(std::move(tokenizer), std::move(model), aligned, config);
}

std::vector<double> predict_outputs(const Checkpoint& chk, const DatasetTable& table,
                                    std::size_t batch_size) {
  const DatasetTable aligned = align_class_labels(chk, table);
  TokenizeFn tokenize = [&](const std::vector<std::size_t>& rows) {
    return tokenize_batch(chk.tokenizer, aligned, rows);
  };
  return predict_with(tokenize, *chk.model, chk.train_config, aligned, batch_size);
}

}  // namespace tabtoken
