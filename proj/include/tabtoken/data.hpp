#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "tabtoken/rng.hpp"

namespace tabtoken {

// File-level problems (missing files, malformed CSV/JSON, insufficient data).
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class FeatureKind { numerical, categorical };
enum class TaskKind { binary, multiclass, regression };

std::string task_to_string(TaskKind task);
TaskKind task_from_string(const std::string& name);

struct FeatureSpec {
  std::string name;
  FeatureKind kind = FeatureKind::numerical;
  // Category labels in first-appearance order; empty string marks the
  // missing-value category. Only populated for categorical features.
  std::vector<std::string> categories;

  std::size_t cardinality() const { return categories.size(); }
  bool operator==(const FeatureSpec&) const = default;
};

std::uint64_t schema_fingerprint(const std::vector<FeatureSpec>& schema);

// Column-major table: numerical columns hold doubles (NaN = missing until
// preprocessing), categorical columns hold category indices.
struct DatasetTable {
  std::vector<FeatureSpec> schema;
  std::vector<std::vector<double>> num_cols;  // aligned with schema; empty for categorical
  std::vector<std::vector<int>> cat_cols;     // aligned with schema; empty for numerical
  TaskKind task = TaskKind::regression;
  int n_classes = 0;
  std::vector<std::string> class_names;  // classification label strings, index order
  std::vector<int> class_labels;         // classification targets
  std::vector<double> targets;           // regression targets
  std::string label_column = "label";

  std::size_t n_rows() const;
  std::size_t n_features() const { return schema.size(); }
  void validate() const;

  // Row subset / feature subset projections (copying).
  DatasetTable select_rows(const std::vector<std::size_t>& rows) const;
  DatasetTable select_features(const std::vector<std::size_t>& features) const;
};

struct SchemaHint {
  // Per-column overrides by column name.
  std::vector<std::pair<std::string, FeatureKind>> kinds;
  std::optional<TaskKind> task;
};

DatasetTable load_csv(const std::string& path, const SchemaHint& hint = {},
                      const std::string& label_column = "label");
void save_csv(const DatasetTable& table, const std::string& path);

// JSON sidecar with per-column {kind, categories} entries plus the task.
SchemaHint load_schema_sidecar(const std::string& path);

struct PreprocessStats {
  // Aligned with the schema; NaN entries for categorical features.
  std::vector<double> means;
  std::vector<double> stds;  // population std, floored at 1e-12
  // Regression target standardization (identity for classification).
  double target_mean = 0.0;
  double target_std = 1.0;
};

PreprocessStats compute_preprocess_stats(const DatasetTable& train);
DatasetTable apply_preprocess(const PreprocessStats& stats, const DatasetTable& table);
// Stats from `train`, applied to train and every table in `others`.
PreprocessStats preprocess(DatasetTable& train, const std::vector<DatasetTable*>& others);

struct OverlapMap {
  // (downstream feature index, pretrain feature index) pairs.
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  std::size_t pretrain_features = 0;    // d
  std::size_t downstream_features = 0;  // d_t

  std::size_t overlap_count() const { return pairs.size(); }
  double overlap_ratio() const;
  void validate() const;
};

struct TransferSplit {
  DatasetTable pretrain;
  DatasetTable validation;
  DatasetTable downstream_pool;
  DatasetTable test;
  OverlapMap overlap;
  // Reconstruction record (indices into the source table).
  std::vector<std::size_t> pretrain_feature_ids;
  std::vector<std::size_t> downstream_feature_ids;
  std::vector<std::size_t> pretrain_rows, validation_rows, pool_rows, test_rows;
  std::uint64_t seed = 0;
};

enum class OverlapLevel { low, medium, high };

struct FeatureCounts {
  std::size_t pretrain = 0;    // d
  std::size_t downstream = 0;  // d_t
  std::size_t shared = 0;      // s
};

// Resolves an overlap level to (d, d_t, s) for a table with `total` features.
FeatureCounts resolve_overlap_level(std::size_t total, OverlapLevel level);

TransferSplit make_transfer_split(const DatasetTable& full, const FeatureCounts& counts,
                                  std::uint64_t seed);
TransferSplit make_transfer_split(const DatasetTable& full, OverlapLevel level, std::uint64_t seed);
// Explicit feature index lists for exact reproduction; the shared features
// must appear as the trailing block of `pretrain_ids` and the leading block
// of `downstream_ids`.
TransferSplit make_transfer_split(const DatasetTable& full,
                                  const std::vector<std::size_t>& pretrain_ids,
                                  const std::vector<std::size_t>& downstream_ids,
                                  std::size_t shared, std::uint64_t seed);

std::string split_manifest_to_json(const TransferSplit& split);
TransferSplit split_from_manifest_json(const DatasetTable& full, const std::string& json_text);

DatasetTable sample_few_shot(const DatasetTable& pool, std::size_t shots, std::uint64_t seed);
// FNV hash of the sampled row identity, used to confirm paired pipelines see
// identical subsets.
std::uint64_t few_shot_subset_hash(const DatasetTable& pool, std::size_t shots, std::uint64_t seed);

DatasetTable gen_synthetic_fourclass(std::size_t n, std::uint64_t seed);

DatasetTable add_gaussian_noise(const DatasetTable& table, double ratio, std::uint64_t seed,
                                bool skip_categorical = false);

}  // namespace tabtoken
