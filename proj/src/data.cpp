#include "tabtoken/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include <json.hpp>

namespace tabtoken {

namespace {

constexpr double kStdFloor = 1e-12;
const double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

bool parse_double(const std::string& text, double& out) {
  const std::string t = trim(text);
  if (t.empty()) return false;
  const char* begin = t.c_str();
  char* end = nullptr;
  out = std::strtod(begin, &end);
  return end == begin + t.size();
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (c == '\r') {
      // tolerate CRLF
    } else {
      cur += c;
    }
  }
  fields.push_back(cur);
  return fields;
}

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += "\"\"";
    else out += c;
  }
  out += '"';
  return out;
}

double population_std(const std::vector<double>& xs, double mean) {
  double acc = 0.0;
  for (double x : xs) {
    const double d = x - mean;
    acc += d * d;
  }
  return std::sqrt(acc / static_cast<double>(xs.size()));
}

}  // namespace

std::string task_to_string(TaskKind task) {
  switch (task) {
    case TaskKind::binary: return "binary";
    case TaskKind::multiclass: return "multiclass";
    case TaskKind::regression: return "regression";
  }
  return "regression";
}

TaskKind task_from_string(const std::string& name) {
  if (name == "binary") return TaskKind::binary;
  if (name == "multiclass") return TaskKind::multiclass;
  if (name == "regression") return TaskKind::regression;
  throw std::invalid_argument("unknown task kind: " + name);
}

std::uint64_t schema_fingerprint(const std::vector<FeatureSpec>& schema) {
  std::uint64_t h = fnv1a64("schema");
  for (const auto& f : schema) {
    h = fnv1a64(f.name.data(), f.name.size(), h);
    const char kind = f.kind == FeatureKind::numerical ? 'n' : 'c';
    h = fnv1a64(&kind, 1, h);
    for (const auto& c : f.categories) h = fnv1a64(c.data(), c.size(), h);
  }
  return h;
}

std::size_t DatasetTable::n_rows() const {
  if (task == TaskKind::regression) return targets.size();
  return class_labels.size();
}

void DatasetTable::validate() const {
  const std::size_t n = n_rows();
  if (n == 0) throw std::invalid_argument("table has no rows");
  if (num_cols.size() != schema.size() || cat_cols.size() != schema.size())
    throw std::logic_error("table columns misaligned with schema");
  for (std::size_t j = 0; j < schema.size(); ++j) {
    if (schema[j].kind == FeatureKind::numerical) {
      if (num_cols[j].size() != n) throw std::logic_error("numerical column size mismatch");
    } else {
      if (cat_cols[j].size() != n) throw std::logic_error("categorical column size mismatch");
      for (int c : cat_cols[j])
        if (c < 0 || static_cast<std::size_t>(c) >= schema[j].cardinality())
          throw std::out_of_range("categorical cell index out of range in " + schema[j].name);
    }
  }
  if (task != TaskKind::regression) {
    for (int y : class_labels)
      if (y < 0 || y >= n_classes) throw std::out_of_range("class label out of range");
  }
}

DatasetTable DatasetTable::select_rows(const std::vector<std::size_t>& rows) const {
  DatasetTable out;
  out.schema = schema;
  out.task = task;
  out.n_classes = n_classes;
  out.class_names = class_names;
  out.label_column = label_column;
  out.num_cols.resize(schema.size());
  out.cat_cols.resize(schema.size());
  for (std::size_t j = 0; j < schema.size(); ++j) {
    if (schema[j].kind == FeatureKind::numerical) {
      out.num_cols[j].reserve(rows.size());
      for (std::size_t r : rows) out.num_cols[j].push_back(num_cols[j].at(r));
    } else {
      out.cat_cols[j].reserve(rows.size());
      for (std::size_t r : rows) out.cat_cols[j].push_back(cat_cols[j].at(r));
    }
  }
  if (task == TaskKind::regression) {
    out.targets.reserve(rows.size());
    for (std::size_t r : rows) out.targets.push_back(targets.at(r));
  } else {
    out.class_labels.reserve(rows.size());
    for (std::size_t r : rows) out.class_labels.push_back(class_labels.at(r));
  }
  return out;
}

DatasetTable DatasetTable::select_features(const std::vector<std::size_t>& features) const {
  DatasetTable out;
  out.task = task;
  out.n_classes = n_classes;
  out.class_names = class_names;
  out.class_labels = class_labels;
  out.targets = targets;
  out.label_column = label_column;
  for (std::size_t j : features) {
    out.schema.push_back(schema.at(j));
    out.num_cols.push_back(num_cols.at(j));
    out.cat_cols.push_back(cat_cols.at(j));
  }
  return out;
}

// ---- CSV -------------------------------------------------------------------

DatasetTable load_csv(const std::string& path, const SchemaHint& hint,
                      const std::string& label_column) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open file: " + path);
  std::string line;
  if (!std::getline(in, line)) throw DataError("empty file: " + path);
  const std::vector<std::string> header = split_csv_line(line);

  std::ptrdiff_t label_idx = -1;
  for (std::size_t i = 0; i < header.size(); ++i)
    if (trim(header[i]) == label_column) label_idx = static_cast<std::ptrdiff_t>(i);
  if (label_idx < 0)
    throw DataError("label column '" + label_column + "' not found in " + path);

  std::vector<std::vector<std::string>> cells(header.size());
  std::size_t n_rows = 0;
  while (std::getline(in, line)) {
    if (line.empty() && in.eof()) break;
    auto fields = split_csv_line(line);
    if (fields.size() != header.size())
      throw DataError("ragged row " + std::to_string(n_rows + 2) + " in " + path);
    for (std::size_t i = 0; i < fields.size(); ++i) cells[i].push_back(fields[i]);
    ++n_rows;
  }
  if (n_rows == 0) throw DataError("no data rows in " + path);

  DatasetTable table;
  table.label_column = trim(header[static_cast<std::size_t>(label_idx)]);

  auto hinted_kind = [&](const std::string& name) -> std::optional<FeatureKind> {
    for (const auto& [n, k] : hint.kinds)
      if (n == name) return k;
    return std::nullopt;
  };

  for (std::size_t i = 0; i < header.size(); ++i) {
    if (static_cast<std::ptrdiff_t>(i) == label_idx) continue;
    FeatureSpec spec;
    spec.name = trim(header[i]);
    bool numeric = true;
    for (const auto& cell : cells[i]) {
      double v;
      if (!trim(cell).empty() && !parse_double(cell, v)) {
        numeric = false;
        break;
      }
    }
    if (auto k = hinted_kind(spec.name)) numeric = (*k == FeatureKind::numerical);

    if (numeric) {
      spec.kind = FeatureKind::numerical;
      std::vector<double> col;
      col.reserve(n_rows);
      for (const auto& cell : cells[i]) {
        double v;
        col.push_back(parse_double(cell, v) ? v : kNaN);
      }
      table.schema.push_back(std::move(spec));
      table.num_cols.push_back(std::move(col));
      table.cat_cols.emplace_back();
    } else {
      spec.kind = FeatureKind::categorical;
      std::unordered_map<std::string, int> index;
      std::vector<int> col;
      col.reserve(n_rows);
      for (const auto& cell : cells[i]) {
        const std::string key = trim(cell);
        auto it = index.find(key);
        if (it == index.end()) {
          it = index.emplace(key, static_cast<int>(spec.categories.size())).first;
          spec.categories.push_back(key);
        }
        col.push_back(it->second);
      }
      table.schema.push_back(std::move(spec));
      table.cat_cols.push_back(std::move(col));
      table.num_cols.emplace_back();
    }
  }

  // Labels: explicit task hint wins; otherwise numeric labels with a small
  // set of integer values are treated as classes, anything else numeric as a
  // regression target, and non-numeric strings as classes.
  const auto& raw_labels = cells[static_cast<std::size_t>(label_idx)];
  bool numeric_labels = true;
  bool integral_labels = true;
  std::vector<double> parsed(n_rows);
  for (std::size_t r = 0; r < n_rows; ++r) {
    if (!parse_double(raw_labels[r], parsed[r])) {
      numeric_labels = false;
      break;
    }
    if (parsed[r] != std::floor(parsed[r])) integral_labels = false;
  }

  bool classification;
  if (hint.task.has_value()) {
    classification = *hint.task != TaskKind::regression;
  } else if (!numeric_labels) {
    classification = true;
  } else {
    std::vector<double> distinct = parsed;
    std::sort(distinct.begin(), distinct.end());
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
    classification = integral_labels && distinct.size() >= 2 && distinct.size() <= 20;
  }

  if (classification) {
    std::unordered_map<std::string, int> index;
    for (const auto& s : raw_labels) {
      const std::string key = trim(s);
      auto it = index.find(key);
      if (it == index.end()) {
        it = index.emplace(key, static_cast<int>(table.class_names.size())).first;
        table.class_names.push_back(key);
      }
      table.class_labels.push_back(it->second);
    }
    table.n_classes = static_cast<int>(table.class_names.size());
    table.task = table.n_classes == 2 ? TaskKind::binary : TaskKind::multiclass;
    if (hint.task.has_value() && *hint.task == TaskKind::multiclass) table.task = TaskKind::multiclass;
    if (table.n_classes < 2) throw DataError("classification labels need >= 2 classes");
  } else {
    if (!numeric_labels) throw DataError("regression labels must be numeric");
    table.task = TaskKind::regression;
    table.targets = std::move(parsed);
  }
  table.validate();
  return table;
}

void save_csv(const DatasetTable& table, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write file: " + path);
  for (const auto& f : table.schema) out << csv_escape(f.name) << ',';
  out << csv_escape(table.label_column) << '\n';
  const std::size_t n = table.n_rows();
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t j = 0; j < table.schema.size(); ++j) {
      if (table.schema[j].kind == FeatureKind::numerical) {
        const double v = table.num_cols[j][r];
        if (!std::isnan(v)) out << format_double(v);
      } else {
        out << csv_escape(table.schema[j].categories[static_cast<std::size_t>(table.cat_cols[j][r])]);
      }
      out << ',';
    }
    if (table.task == TaskKind::regression)
      out << format_double(table.targets[r]);
    else
      out << csv_escape(table.class_names[static_cast<std::size_t>(table.class_labels[r])]);
    out << '\n';
  }
}

SchemaHint load_schema_sidecar(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open schema sidecar: " + path);
  nlohmann::json j;
  in >> j;
  SchemaHint hint;
  if (j.contains("task")) hint.task = task_from_string(j["task"].get<std::string>());
  if (j.contains("columns")) {
    for (auto& [name, spec] : j["columns"].items()) {
      const std::string kind = spec.at("kind").get<std::string>();
      if (kind == "num")
        hint.kinds.emplace_back(name, FeatureKind::numerical);
      else if (kind == "cat")
        hint.kinds.emplace_back(name, FeatureKind::categorical);
      else
        throw DataError("schema sidecar: unknown kind '" + kind + "'");
    }
  }
  return hint;
}

// ---- preprocessing ----------------------------------------------------------

PreprocessStats compute_preprocess_stats(const DatasetTable& train) {
  PreprocessStats stats;
  stats.means.assign(train.schema.size(), kNaN);
  stats.stds.assign(train.schema.size(), kNaN);
  for (std::size_t j = 0; j < train.schema.size(); ++j) {
    if (train.schema[j].kind != FeatureKind::numerical) continue;
    const auto& col = train.num_cols[j];
    double sum = 0.0;
    std::size_t count = 0;
    for (double v : col) {
      if (std::isnan(v)) continue;
      sum += v;
      ++count;
    }
    if (count == 0)
      throw std::invalid_argument("column '" + train.schema[j].name + "' has no non-missing values");
    const double mean = sum / static_cast<double>(count);
    std::vector<double> filled = col;
    for (double& v : filled)
      if (std::isnan(v)) v = mean;
    double filled_mean = 0.0;
    for (double v : filled) filled_mean += v;
    filled_mean /= static_cast<double>(filled.size());
    stats.means[j] = filled_mean;
    stats.stds[j] = std::max(population_std(filled, filled_mean), kStdFloor);
  }
  if (train.task == TaskKind::regression) {
    double mean = 0.0;
    for (double t : train.targets) mean += t;
    mean /= static_cast<double>(train.targets.size());
    stats.target_mean = mean;
    stats.target_std = std::max(population_std(train.targets, mean), kStdFloor);
  }
  return stats;
}

DatasetTable apply_preprocess(const PreprocessStats& stats, const DatasetTable& table) {
  if (stats.means.size() != table.schema.size())
    throw std::invalid_argument("preprocess stats do not match schema");
  DatasetTable out = table;
  for (std::size_t j = 0; j < table.schema.size(); ++j) {
    if (table.schema[j].kind != FeatureKind::numerical) continue;
    for (double& v : out.num_cols[j]) {
      if (std::isnan(v)) v = stats.means[j];
      v = (v - stats.means[j]) / stats.stds[j];
    }
  }
  if (table.task == TaskKind::regression)
    for (double& t : out.targets) t = (t - stats.target_mean) / stats.target_std;
  return out;
}

PreprocessStats preprocess(DatasetTable& train, const std::vector<DatasetTable*>& others) {
  for (const DatasetTable* o : others)
    if (o->schema != train.schema) throw std::invalid_argument("preprocess: schema mismatch");
  PreprocessStats stats = compute_preprocess_stats(train);
  train = apply_preprocess(stats, train);
  for (DatasetTable* o : others) *o = apply_preprocess(stats, *o);
  return stats;
}

// ---- transfer splits ---------------------------------------------------------

double OverlapMap::overlap_ratio() const {
  return downstream_features == 0
             ? 0.0
             : static_cast<double>(pairs.size()) / static_cast<double>(downstream_features);
}

void OverlapMap::validate() const {
  std::vector<std::size_t> down, pre;
  for (const auto& [dj, pj] : pairs) {
    if (dj >= downstream_features || pj >= pretrain_features)
      throw std::out_of_range("overlap pair index out of range");
    down.push_back(dj);
    pre.push_back(pj);
  }
  std::sort(down.begin(), down.end());
  std::sort(pre.begin(), pre.end());
  if (std::adjacent_find(down.begin(), down.end()) != down.end() ||
      std::adjacent_find(pre.begin(), pre.end()) != pre.end())
    throw std::invalid_argument("overlap pair indices must be unique");
}

FeatureCounts resolve_overlap_level(std::size_t total, OverlapLevel level) {
  struct Preset {
    std::size_t total;
    FeatureCounts low, medium, high;
  };
  // Built-in split tables for the two source sizes with known
  // low/medium/high configurations (26 and 54 features).
  static const Preset presets[] = {
      {26, {16, 15, 5}, {17, 17, 8}, {19, 18, 11}},
      {54, {34, 34, 14}, {36, 36, 18}, {38, 38, 22}},
  };
  for (const auto& p : presets) {
    if (p.total == total)
      return level == OverlapLevel::low ? p.low : (level == OverlapLevel::medium ? p.medium : p.high);
  }
  const double ratio = level == OverlapLevel::low ? 0.33 : (level == OverlapLevel::medium ? 0.5 : 0.6);
  FeatureCounts c;
  c.downstream = static_cast<std::size_t>(
      std::ceil(static_cast<double>(total) / (2.0 - ratio)));
  c.downstream = std::max<std::size_t>(1, std::min(c.downstream, total));
  c.shared = static_cast<std::size_t>(std::ceil(ratio * static_cast<double>(c.downstream)));
  c.shared = std::min(c.shared, c.downstream);
  c.pretrain = total + c.shared - c.downstream;
  c.pretrain = std::min(c.pretrain, total);
  return c;
}

namespace {

TransferSplit build_split(const DatasetTable& full, std::vector<std::size_t> pretrain_ids,
                          std::vector<std::size_t> downstream_ids, std::size_t shared,
                          std::uint64_t seed) {
  const std::size_t d = pretrain_ids.size(), dt = downstream_ids.size();
  if (shared > std::min(d, dt)) throw std::invalid_argument("shared feature count exceeds min(d, d_t)");
  for (std::size_t j = 0; j < shared; ++j)
    if (pretrain_ids[d - shared + j] != downstream_ids[j])
      throw std::invalid_argument("shared features must be the trailing pretrain block and leading downstream block");
  {
    std::vector<std::size_t> a = pretrain_ids, b = downstream_ids;
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    if (std::adjacent_find(a.begin(), a.end()) != a.end() ||
        std::adjacent_find(b.begin(), b.end()) != b.end())
      throw std::invalid_argument("feature id lists must not repeat");
    std::vector<std::size_t> inter;
    std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(inter));
    if (inter.size() != shared)
      throw std::invalid_argument("feature sets intersect outside the shared block");
  }

  TransferSplit split;
  split.seed = seed;
  split.pretrain_feature_ids = std::move(pretrain_ids);
  split.downstream_feature_ids = std::move(downstream_ids);

  const std::size_t n = full.n_rows();
  std::vector<std::size_t> rows(n);
  for (std::size_t i = 0; i < n; ++i) rows[i] = i;
  RngStream rng(derive_seed(seed, "split-instances"));
  rng.shuffle(rows);

  const std::size_t n_test = n / 5;
  const std::size_t n_val = (n - n_test) / 5;
  const std::size_t n_train = n - n_test - n_val;
  const std::size_t n_pre = (n_train * 4) / 5;

  auto take = [&](std::size_t begin, std::size_t count) {
    std::vector<std::size_t> ids(rows.begin() + static_cast<std::ptrdiff_t>(begin),
                                 rows.begin() + static_cast<std::ptrdiff_t>(begin + count));
    std::sort(ids.begin(), ids.end());
    return ids;
  };
  split.test_rows = take(0, n_test);
  split.validation_rows = take(n_test, n_val);
  split.pretrain_rows = take(n_test + n_val, n_pre);
  split.pool_rows = take(n_test + n_val + n_pre, n_train - n_pre);
  if (split.pretrain_rows.empty() || split.pool_rows.empty() || split.test_rows.empty())
    throw std::invalid_argument("table too small to split");

  split.pretrain = full.select_rows(split.pretrain_rows).select_features(split.pretrain_feature_ids);
  split.validation = full.select_rows(split.validation_rows).select_features(split.pretrain_feature_ids);
  split.downstream_pool = full.select_rows(split.pool_rows).select_features(split.downstream_feature_ids);
  split.test = full.select_rows(split.test_rows).select_features(split.downstream_feature_ids);

  split.overlap.pretrain_features = d;
  split.overlap.downstream_features = dt;
  for (std::size_t j = 0; j < shared; ++j) split.overlap.pairs.emplace_back(j, d - shared + j);
  split.overlap.validate();
  return split;
}

}  // namespace

TransferSplit make_transfer_split(const DatasetTable& full, const FeatureCounts& counts,
                                  std::uint64_t seed) {
  const std::size_t total = full.n_features();
  const std::size_t d = counts.pretrain, dt = counts.downstream, s = counts.shared;
  if (d == 0 || dt == 0) throw std::invalid_argument("feature counts must be positive");
  if (s > std::min(d, dt)) throw std::invalid_argument("shared feature count exceeds min(d, d_t)");
  if (d + dt - s > total) throw std::invalid_argument("not enough features for requested counts");

  std::vector<std::size_t> ids(total);
  for (std::size_t i = 0; i < total; ++i) ids[i] = i;
  RngStream rng(derive_seed(seed, "split-features"));
  rng.shuffle(ids);

  std::vector<std::size_t> pre(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(d - s));
  std::vector<std::size_t> shared_ids(ids.begin() + static_cast<std::ptrdiff_t>(d - s),
                                      ids.begin() + static_cast<std::ptrdiff_t>(d));
  std::vector<std::size_t> down_only(ids.begin() + static_cast<std::ptrdiff_t>(d),
                                     ids.begin() + static_cast<std::ptrdiff_t>(d + dt - s));
  pre.insert(pre.end(), shared_ids.begin(), shared_ids.end());
  std::vector<std::size_t> down = shared_ids;
  down.insert(down.end(), down_only.begin(), down_only.end());
  return build_split(full, std::move(pre), std::move(down), s, seed);
}

TransferSplit make_transfer_split(const DatasetTable& full, OverlapLevel level, std::uint64_t seed) {
  return make_transfer_split(full, resolve_overlap_level(full.n_features(), level), seed);
}

TransferSplit make_transfer_split(const DatasetTable& full,
                                  const std::vector<std::size_t>& pretrain_ids,
                                  const std::vector<std::size_t>& downstream_ids,
                                  std::size_t shared, std::uint64_t seed) {
  for (std::size_t id : pretrain_ids)
    if (id >= full.n_features()) throw std::out_of_range("pretrain feature id out of range");
  for (std::size_t id : downstream_ids)
    if (id >= full.n_features()) throw std::out_of_range("downstream feature id out of range");
  return build_split(full, pretrain_ids, downstream_ids, shared, seed);
}

std::string split_manifest_to_json(const TransferSplit& split) {
  nlohmann::json j;
  j["version"] = 1;
  j["seed"] = split.seed;
  j["feature_split"] = {{"pretrain", split.pretrain_feature_ids},
                        {"downstream", split.downstream_feature_ids},
                        {"shared", split.overlap.overlap_count()}};
  j["instance_split"] = {{"test", split.test_rows},
                         {"validation", split.validation_rows},
                         {"pretrain", split.pretrain_rows},
                         {"downstream_pool", split.pool_rows}};
  return j.dump(2);
}

TransferSplit split_from_manifest_json(const DatasetTable& full, const std::string& json_text) {
  const nlohmann::json j = nlohmann::json::parse(json_text);
  TransferSplit split;
  split.seed = j.at("seed").get<std::uint64_t>();
  split.pretrain_feature_ids = j.at("feature_split").at("pretrain").get<std::vector<std::size_t>>();
  split.downstream_feature_ids = j.at("feature_split").at("downstream").get<std::vector<std::size_t>>();
  const auto shared = j.at("feature_split").at("shared").get<std::size_t>();
  const std::size_t d = split.pretrain_feature_ids.size();
  for (std::size_t jj = 0; jj < shared; ++jj)
    if (split.pretrain_feature_ids[d - shared + jj] != split.downstream_feature_ids[jj])
      throw std::invalid_argument("manifest shared block mismatch");

  split.test_rows = j.at("instance_split").at("test").get<std::vector<std::size_t>>();
  split.validation_rows = j.at("instance_split").at("validation").get<std::vector<std::size_t>>();
  split.pretrain_rows = j.at("instance_split").at("pretrain").get<std::vector<std::size_t>>();
  split.pool_rows = j.at("instance_split").at("downstream_pool").get<std::vector<std::size_t>>();

  split.pretrain = full.select_rows(split.pretrain_rows).select_features(split.pretrain_feature_ids);
  split.validation = full.select_rows(split.validation_rows).select_features(split.pretrain_feature_ids);
  split.downstream_pool = full.select_rows(split.pool_rows).select_features(split.downstream_feature_ids);
  split.test = full.select_rows(split.test_rows).select_features(split.downstream_feature_ids);

  split.overlap.pretrain_features = d;
  split.overlap.downstream_features = split.downstream_feature_ids.size();
  for (std::size_t jj = 0; jj < shared; ++jj) split.overlap.pairs.emplace_back(jj, d - shared + jj);
  split.overlap.validate();
  return split;
}

// ---- few-shot sampling --------------------------------------------------------

namespace {

std::vector<std::size_t> few_shot_rows(const DatasetTable& pool, std::size_t shots,
                                       std::uint64_t seed) {
  if (shots == 0) throw std::invalid_argument("shots must be positive");
  RngStream rng(derive_seed(seed, "few-shot"));
  std::vector<std::size_t> rows;
  if (pool.task == TaskKind::regression) {
    if (pool.n_rows() < shots) throw DataError("pool smaller than requested shots");
    std::vector<std::size_t> ids(pool.n_rows());
    for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = i;
    rng.shuffle(ids);
    rows.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(shots));
  } else {
    std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(pool.n_classes));
    for (std::size_t i = 0; i < pool.class_labels.size(); ++i)
      by_class[static_cast<std::size_t>(pool.class_labels[i])].push_back(i);
    for (std::size_t c = 0; c < by_class.size(); ++c) {
      if (by_class[c].size() < shots)
        throw DataError("class " + std::to_string(c) + " has fewer rows than shots");
      rng.shuffle(by_class[c]);
      rows.insert(rows.end(), by_class[c].begin(),
                  by_class[c].begin() + static_cast<std::ptrdiff_t>(shots));
    }
  }
  return rows;
}

}  // namespace

DatasetTable sample_few_shot(const DatasetTable& pool, std::size_t shots, std::uint64_t seed) {
  return pool.select_rows(few_shot_rows(pool, shots, seed));
}

std::uint64_t few_shot_subset_hash(const DatasetTable& pool, std::size_t shots, std::uint64_t seed) {
  const auto rows = few_shot_rows(pool, shots, seed);
  return fnv1a64(rows.data(), rows.size() * sizeof(rows[0]));
}

// ---- synthetic data -------------------------------------------------------------

DatasetTable gen_synthetic_fourclass(std::size_t n, std::uint64_t seed) {
  if (n == 0) throw std::invalid_argument("n must be >= 1");
  static const std::vector<std::vector<std::string>> kCats = {
      {"A", "B", "C", "D"},     {"E", "F", "G", "H"},     {"A'", "B'", "C'", "D'"},
      {"E'", "F'", "G'", "H'"}, {"I", "J", "K", "L"},     {"M", "N", "O", "P"},
  };
  DatasetTable table;
  for (std::size_t j = 0; j < 6; ++j) {
    FeatureSpec spec;
    spec.name = "x" + std::to_string(j + 1);
    spec.kind = FeatureKind::categorical;
    spec.categories = kCats[j];
    table.schema.push_back(std::move(spec));
    table.cat_cols.emplace_back();
    table.num_cols.emplace_back();
  }
  table.task = TaskKind::multiclass;
  table.n_classes = 4;
  table.class_names = {"1", "2", "3", "4"};

  RngStream rng(derive_seed(seed, "synthetic-fourclass"));
  auto noisy_copy = [&](int source) {
    if (rng.uniform() < 0.8) return source;
    return static_cast<int>(rng.uniform_int(4));
  };
  for (std::size_t i = 0; i < n; ++i) {
    const int x1 = static_cast<int>(rng.uniform_int(4));
    const int x2 = static_cast<int>(rng.uniform_int(4));
    const int x3 = noisy_copy(x1);
    const int x4 = noisy_copy(x2);
    const int x5 = static_cast<int>(rng.uniform_int(4));
    const int x6 = static_cast<int>(rng.uniform_int(4));
    // Quadrant rule on (x1, x2); the first two choices of each feature form
    // one half, the last two the other.
    int rule;
    const bool x1_hi = x1 >= 2;  // {C, D}
    const bool x2_hi = x2 >= 2;  // {G, H}
    if (x1_hi && !x2_hi) rule = 0;       // y = 1
    else if (!x1_hi && x2_hi) rule = 1;  // y = 2
    else if (!x1_hi && !x2_hi) rule = 2; // y = 3
    else rule = 3;                       // y = 4
    const int y = rng.uniform() < 0.8 ? rule : static_cast<int>(rng.uniform_int(4));

    table.cat_cols[0].push_back(x1);
    table.cat_cols[1].push_back(x2);
    table.cat_cols[2].push_back(x3);
    table.cat_cols[3].push_back(x4);
    table.cat_cols[4].push_back(x5);
    table.cat_cols[5].push_back(x6);
    table.class_labels.push_back(y);
  }
  return table;
}

// ---- distribution shift ----------------------------------------------------------

DatasetTable add_gaussian_noise(const DatasetTable& table, double ratio, std::uint64_t seed,
                                bool skip_categorical) {
  if (ratio < 0.0) throw std::invalid_argument("noise ratio must be >= 0");
  for (const auto& f : table.schema)
    if (f.kind == FeatureKind::categorical && !skip_categorical)
      throw std::invalid_argument("categorical feature '" + f.name +
                                  "' present; pass skip_categorical to leave it untouched");
  DatasetTable out = table;
  if (ratio == 0.0) return out;
  RngStream rng(derive_seed(seed, "gaussian-noise"));
  for (std::size_t j = 0; j < table.schema.size(); ++j) {
    if (table.schema[j].kind != FeatureKind::numerical) continue;
    const auto& col = table.num_cols[j];
    double sum = 0.0;
    std::size_t count = 0;
    for (double v : col)
      if (!std::isnan(v)) {
        sum += v;
        ++count;
      }
    if (count == 0) continue;
    const double mean = sum / static_cast<double>(count);
    double var = 0.0;
    for (double v : col)
      if (!std::isnan(v)) var += (v - mean) * (v - mean);
    const double sd = std::sqrt(var / static_cast<double>(count));
    for (double& v : out.num_cols[j])
      if (!std::isnan(v)) v += rng.normal(0.0, ratio * sd);
  }
  return out;
}

}  // namespace tabtoken
