#pragma once

#include <optional>
#include <string>
#include <vector>

#include "tabtoken/checkpoint.hpp"
#include "tabtoken/config.hpp"
#include "tabtoken/data.hpp"

namespace tabtoken {

double metric_accuracy(const std::vector<int>& preds, const std::vector<int>& labels);
double metric_rmse(const std::vector<double>& preds, const std::vector<double>& targets);
// Row-wise argmax over a flat (n x width) logit buffer; ties pick the lowest index.
std::vector<int> argmax_rows(const std::vector<double>& outputs, std::size_t width);

struct ExperimentPlan {
  std::size_t shots = 5;
  std::size_t n_subsets = 30;
  std::size_t n_seeds = 10;
  PipelineKind pipeline = PipelineKind::tabtoken;
  std::size_t reweight_new_tokens = 0;  // used when pipeline fine-tunes via the token library
};

struct RunRecord {
  std::size_t subset_id = 0;
  std::size_t seed_id = 0;
  std::uint64_t data_seed = 0;
  std::uint64_t train_seed = 0;
  std::uint64_t subset_hash = 0;
  double metric = 0.0;
  double wall_time_sec = 0.0;
};

struct MetricsReport {
  std::string metric_kind;  // "accuracy" or "rmse"
  ExperimentPlan plan;
  std::uint64_t master_seed = 0;
  std::vector<RunRecord> records;
  double mean = 0.0;
  double stddev = 0.0;
  double total_wall_time_sec = 0.0;
};

// Fans out n_subsets few-shot samples x n_seeds training seeds, runs the
// selected pipeline on each pair and evaluates on the split's test set.
// Pre-training (when the pipeline needs it) happens once up front, or a ready
// checkpoint can be supplied. Runs are independent; `jobs` > 1 executes them
// on a thread pool with bit-identical results.
MetricsReport run_protocol(const TransferSplit& split, const ExperimentPlan& plan,
                           const TrainConfig& config, int jobs = 1,
                           const Checkpoint* pretrained = nullptr);

std::string report_to_json_text(const MetricsReport& report, const TrainConfig& config);
// Full-provenance variant: echoes the whole run configuration (protocol and
// paths included) so the report can be regenerated from the echo + seed.
std::string report_to_json_text(const MetricsReport& report, const RunConfig& config);
void save_report(const MetricsReport& report, const TrainConfig& config, const std::string& path);
void save_report(const MetricsReport& report, const RunConfig& config, const std::string& path);

// ---- token geometry ---------------------------------------------------------

struct TokenPairing {
  std::string feature_a, category_a;
  std::string feature_b, category_b;
};

struct TokenReportRequest {
  std::vector<TokenPairing> pairs;
  std::vector<std::string> noise_features;
};

struct ClassScatter {
  int class_id = 0;
  double mean_squared_distance = 0.0;
};

struct TokenGeometryReport {
  double paired_mean_distance = 0.0;
  // Mean distance over all distinct pairs of informative tokens (the
  // deterministic stand-in for a random-pair baseline).
  double random_pair_mean_distance = 0.0;
  // Mean pairwise distance among noise-feature tokens divided by the same
  // statistic among informative tokens; 1 with `degenerate` set when the
  // denominator vanishes.
  double noise_cluster_ratio = 1.0;
  bool degenerate = false;
  std::vector<ClassScatter> per_class_scatter;
};

TokenGeometryReport token_geometry_report(const Checkpoint& chk, const TokenReportRequest& request,
                                          const DatasetTable* table = nullptr);
std::string token_geometry_report_to_json_text(const TokenGeometryReport& report);

// CSV export of the raw token matrix: feature_name, category_label (empty for
// numerical features), then the k coordinates at full fp64 precision.
void export_tokens_csv(const Checkpoint& chk, const std::string& path);

}  // namespace tabtoken
