#include "tabtoken/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <map>
#include <mutex>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <thread>

#include <json.hpp>

#include "tabtoken/transfer.hpp"

namespace tabtoken {

using nlohmann::json;

double metric_accuracy(const std::vector<int>& preds, const std::vector<int>& labels) {
  if (preds.empty() || preds.size() != labels.size())
    throw std::invalid_argument("metric_accuracy: size mismatch or empty input");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < preds.size(); ++i)
    if (preds[i] == labels[i]) ++correct;
  return static_cast<double>(correct) / static_cast<double>(preds.size());
}

double metric_rmse(const std::vector<double>& preds, const std::vector<double>& targets) {
  if (preds.empty() || preds.size() != targets.size())
    throw std::invalid_argument("metric_rmse: size mismatch or empty input");
  double total = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const double diff = preds[i] - targets[i];
    total += diff * diff;
  }
  return std::sqrt(total / static_cast<double>(preds.size()));
}

std::vector<int> argmax_rows(const std::vector<double>& outputs, std::size_t width) {
  if (width == 0 || outputs.size() % width != 0)
    throw std::invalid_argument("argmax_rows: bad width");
  std::vector<int> preds(outputs.size() / width);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    std::size_t arg = 0;
    for (std::size_t c = 1; c < width; ++c)
      if (outputs[i * width + c] > outputs[i * width + arg]) arg = c;
    preds[i] = static_cast<int>(arg);
  }
  return preds;
}

namespace {

double evaluate_on_test(const Checkpoint& chk, const DatasetTable& test_raw,
                        const PreprocessStats& stats) {
  const DatasetTable test = apply_preprocess(stats, test_raw);
  const std::vector<double> outputs = predict_outputs(chk, test);
  if (test.task == TaskKind::regression) {
    // Undo the few-shot standardization so the error is on the original scale.
    std::vector<double> preds(outputs.size());
    for (std::size_t i = 0; i < outputs.size(); ++i)
      preds[i] = outputs[i] * stats.target_std + stats.target_mean;
    return metric_rmse(preds, test_raw.targets);
  }
  const DatasetTable aligned = align_class_labels(chk, test);
  return metric_accuracy(argmax_rows(outputs, static_cast<std::size_t>(aligned.n_classes)),
                         aligned.class_labels);
}

}  // namespace

MetricsReport run_protocol(const TransferSplit& split, const ExperimentPlan& plan,
                           const TrainConfig& config, int jobs, const Checkpoint* pretrained) {
  if (plan.n_subsets == 0 || plan.n_seeds == 0)
    throw std::invalid_argument("run_protocol: plan needs at least one subset and one seed");
  const auto protocol_start = std::chrono::steady_clock::now();

  // Pre-train once; every run shares the same frozen starting point.
  Checkpoint owned;
  const Checkpoint* base = pretrained;
  if (plan.pipeline != PipelineKind::scratch && base == nullptr) {
    DatasetTable train = split.pretrain;
    DatasetTable val = split.validation;
    preprocess(train, {&val});
    TrainConfig pre_config = config;
    if (plan.pipeline == PipelineKind::vanilla_pretrain) pre_config.beta = 0.0;
    owned = pretrain(train, val, pre_config);
    base = &owned;
  }

  MetricsReport report;
  report.plan = plan;
  report.master_seed = config.seed;
  report.metric_kind = split.test.task == TaskKind::regression ? "rmse" : "accuracy";
  report.records.resize(plan.n_subsets * plan.n_seeds);

  // Subset stream is independent of the training-seed stream, so paired
  // pipelines consume identical few-shot subsets.
  std::vector<DatasetTable> subsets(plan.n_subsets);
  std::vector<std::uint64_t> data_seeds(plan.n_subsets), subset_hashes(plan.n_subsets);
  for (std::size_t s = 0; s < plan.n_subsets; ++s) {
    data_seeds[s] = derive_seed(config.seed, "protocol-subset", s);
    subsets[s] = sample_few_shot(split.downstream_pool, plan.shots, data_seeds[s]);
    subset_hashes[s] = few_shot_subset_hash(split.downstream_pool, plan.shots, data_seeds[s]);
  }

  auto run_one = [&](std::size_t run_index) {
    const std::size_t subset_id = run_index / plan.n_seeds;
    const std::size_t seed_id = run_index % plan.n_seeds;
    const auto start = std::chrono::steady_clock::now();

    DatasetTable fewshot = subsets[subset_id];
    const PreprocessStats stats = compute_preprocess_stats(fewshot);
    fewshot = apply_preprocess(stats, fewshot);

    TrainConfig run_config = config;
    run_config.seed = derive_seed(config.seed, "protocol-train", seed_id);

    Checkpoint result;
    switch (plan.pipeline) {
      case PipelineKind::scratch:
        result = train_few_shot_scratch(fewshot, run_config);
        break;
      case PipelineKind::tabtoken:
      case PipelineKind::vanilla_pretrain:
        result = plan.reweight_new_tokens > 0 || split.overlap.overlap_count() == 0
                     ? reweight_finetune(*base, fewshot, plan.reweight_new_tokens, run_config)
                     : finetune(*base, fewshot, split.overlap, run_config);
        break;
    }

    RunRecord rec;
    rec.subset_id = subset_id;
    rec.seed_id = seed_id;
    rec.data_seed = data_seeds[subset_id];
    rec.train_seed = run_config.seed;
    rec.subset_hash = subset_hashes[subset_id];
    rec.metric = evaluate_on_test(result, split.test, stats);
    rec.wall_time_sec =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    report.records[run_index] = rec;
  };

  const std::size_t total = report.records.size();
  if (jobs <= 1) {
    for (std::size_t i = 0; i < total; ++i) run_one(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> workers;
    const std::size_t n_workers = std::min<std::size_t>(static_cast<std::size_t>(jobs), total);
    std::exception_ptr error;
    std::mutex error_mutex;
    for (std::size_t w = 0; w < n_workers; ++w) {
      workers.emplace_back([&]() {
        while (true) {
          const std::size_t i = next.fetch_add(1);
          if (i >= total) return;
          try {
            run_one(i);
          } catch (...) {
            std::lock_guard<std::mutex> lock(error_mutex);
            if (!error) error = std::current_exception();
            return;
          }
        }
      });
    }
    for (auto& t : workers) t.join();
    if (error) std::rethrow_exception(error);
  }

  // Aggregate in record order (sorted by run index), independent of the
  // completion order under parallel execution.
  double mean = 0.0;
  for (const auto& rec : report.records) mean += rec.metric;
  mean /= static_cast<double>(total);
  double var = 0.0;
  for (const auto& rec : report.records) {
    const double d = rec.metric - mean;
    var += d * d;
  }
  report.mean = mean;
  report.stddev = std::sqrt(var / static_cast<double>(total));
  report.total_wall_time_sec =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - protocol_start).count();
  return report;
}

namespace {

json report_body(const MetricsReport& report, json config_echo) {
  json j;
  j["metric"] = report.metric_kind;
  j["plan"] = {{"shots", report.plan.shots},
               {"subsets", report.plan.n_subsets},
               {"seeds", report.plan.n_seeds},
               {"pipeline", pipeline_to_string(report.plan.pipeline)},
               {"reweight_new_tokens", report.plan.reweight_new_tokens}};
  j["master_seed"] = report.master_seed;
  j["config"] = std::move(config_echo);
  json records = json::array();
  for (const auto& rec : report.records) {
    records.push_back({{"subset_id", rec.subset_id},
                       {"seed_id", rec.seed_id},
                       {"data_seed", rec.data_seed},
                       {"train_seed", rec.train_seed},
                       {"subset_hash", rec.subset_hash},
                       {"metric", rec.metric},
                       {"metric_hex", double_to_hex(rec.metric)},
                       {"wall_time_sec", rec.wall_time_sec}});
  }
  j["records"] = std::move(records);
  j["aggregate"] = {{"mean", report.mean},
                    {"stddev", report.stddev},
                    {"n", report.records.size()},
                    {"total_wall_time_sec", report.total_wall_time_sec}};
  return j;
}

}  // namespace

std::string report_to_json_text(const MetricsReport& report, const TrainConfig& config) {
  return report_body(report, json::parse(train_config_to_json_text(config))).dump(2);
}

std::string report_to_json_text(const MetricsReport& report, const RunConfig& config) {
  return report_body(report, json::parse(run_config_to_json_text(config))).dump(2);
}

void save_report(const MetricsReport& report, const TrainConfig& config, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write report: " + path);
  out << report_to_json_text(report, config);
}

void save_report(const MetricsReport& report, const RunConfig& config, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write report: " + path);
  out << report_to_json_text(report, config);
}

// ---- token geometry -----------------------------------------------------------

namespace {

struct TokenRowRef {
  std::size_t feature = 0;
  std::size_t row = 0;
};

const double* token_row(const Checkpoint& chk, std::size_t feature, std::size_t row) {
  return chk.tokenizer.tokens[feature].data().data() + row * chk.tokenizer.dim;
}

double row_distance(const Checkpoint& chk, const TokenRowRef& a, const TokenRowRef& b) {
  const double* xa = token_row(chk, a.feature, a.row);
  const double* xb = token_row(chk, b.feature, b.row);
  double acc = 0.0;
  for (std::size_t c = 0; c < chk.tokenizer.dim; ++c) {
    const double d = xa[c] - xb[c];
    acc += d * d;
  }
  return std::sqrt(acc);
}

TokenRowRef locate(const Checkpoint& chk, const std::string& feature, const std::string& category) {
  for (std::size_t j = 0; j < chk.tokenizer.schema.size(); ++j) {
    const auto& spec = chk.tokenizer.schema[j];
    if (spec.name != feature) continue;
    if (spec.kind == FeatureKind::numerical) {
      if (!category.empty())
        throw std::invalid_argument("feature '" + feature + "' is numerical; no category expected");
      return {j, 0};
    }
    for (std::size_t r = 0; r < spec.categories.size(); ++r)
      if (spec.categories[r] == category) return {j, r};
    throw std::invalid_argument("category '" + category + "' not found in feature '" + feature + "'");
  }
  throw std::invalid_argument("feature '" + feature + "' not found in checkpoint");
}

double mean_pairwise_distance(const Checkpoint& chk, const std::vector<TokenRowRef>& rows) {
  if (rows.size() < 2) return 0.0;
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = i + 1; j < rows.size(); ++j) {
      total += row_distance(chk, rows[i], rows[j]);
      ++count;
    }
  return total / static_cast<double>(count);
}

}  // namespace

TokenGeometryReport token_geometry_report(const Checkpoint& chk, const TokenReportRequest& request,
                                          const DatasetTable* table) {
  TokenGeometryReport report;

  std::vector<TokenRowRef> informative, noise;
  for (std::size_t j = 0; j < chk.tokenizer.schema.size(); ++j) {
    const auto& spec = chk.tokenizer.schema[j];
    const bool is_noise = std::find(request.noise_features.begin(), request.noise_features.end(),
                                    spec.name) != request.noise_features.end();
    const std::size_t rows = spec.kind == FeatureKind::numerical ? 1 : spec.cardinality();
    for (std::size_t r = 0; r < rows; ++r)
      (is_noise ? noise : informative).push_back({j, r});
  }

  if (!request.pairs.empty()) {
    double total = 0.0;
    for (const auto& p : request.pairs) {
      const TokenRowRef a = locate(chk, p.feature_a, p.category_a);
      const TokenRowRef b = locate(chk, p.feature_b, p.category_b);
      total += row_distance(chk, a, b);
    }
    report.paired_mean_distance = total / static_cast<double>(request.pairs.size());
  }
  report.random_pair_mean_distance = mean_pairwise_distance(chk, informative);

  const double noise_spread = mean_pairwise_distance(chk, noise);
  if (report.random_pair_mean_distance <= 0.0) {
    report.noise_cluster_ratio = 1.0;
    report.degenerate = true;
  } else {
    report.noise_cluster_ratio = noise_spread / report.random_pair_mean_distance;
  }

  if (table != nullptr) {
    const DatasetTable aligned = align_class_labels(chk, *table);
    Tensor tokens = tokenize_batch(chk.tokenizer, aligned);
    Tensor inst = combine_average(tokens);
    const std::size_t k = inst.dim(1);
    std::vector<int> labels = aligned.task == TaskKind::regression
                                  ? pseudo_labels_regression(aligned.targets)
                                  : aligned.class_labels;
    std::map<int, std::vector<std::size_t>> members;
    for (std::size_t i = 0; i < labels.size(); ++i) members[labels[i]].push_back(i);
    auto iv = inst.data();
    for (const auto& [cls, ids] : members) {
      std::vector<double> center(k, 0.0);
      for (std::size_t i : ids)
        for (std::size_t c = 0; c < k; ++c) center[c] += iv[i * k + c];
      for (double& v : center) v /= static_cast<double>(ids.size());
      double scatter = 0.0;
      for (std::size_t i : ids)
        for (std::size_t c = 0; c < k; ++c) {
          const double d = iv[i * k + c] - center[c];
          scatter += d * d;
        }
      report.per_class_scatter.push_back({cls, scatter / static_cast<double>(ids.size())});
    }
  }
  return report;
}

std::string token_geometry_report_to_json_text(const TokenGeometryReport& report) {
  json j;
  j["paired_mean_distance"] = report.paired_mean_distance;
  j["random_pair_mean_distance"] = report.random_pair_mean_distance;
  j["noise_cluster_ratio"] = report.noise_cluster_ratio;
  j["degenerate"] = report.degenerate;
  json scatter = json::array();
  for (const auto& s : report.per_class_scatter)
    scatter.push_back({{"class", s.class_id}, {"mean_squared_distance", s.mean_squared_distance}});
  j["per_class_scatter"] = std::move(scatter);
  return j.dump(2);
}

void export_tokens_csv(const Checkpoint& chk, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write token export: " + path);
  out << "feature_name,category_label";
  for (std::size_t c = 0; c < chk.tokenizer.dim; ++c) out << ",t" << c;
  out << '\n';
  char buf[40];
  for (std::size_t j = 0; j < chk.tokenizer.schema.size(); ++j) {
    const auto& spec = chk.tokenizer.schema[j];
    const std::size_t rows = spec.kind == FeatureKind::numerical ? 1 : spec.cardinality();
    for (std::size_t r = 0; r < rows; ++r) {
      out << spec.name << ',';
      if (spec.kind == FeatureKind::categorical) out << spec.categories[r];
      const double* row = token_row(chk, j, r);
      for (std::size_t c = 0; c < chk.tokenizer.dim; ++c) {
        std::snprintf(buf, sizeof(buf), "%.17g", row[c]);
        out << ',' << buf;
      }
      out << '\n';
    }
  }
}

}  // namespace tabtoken
