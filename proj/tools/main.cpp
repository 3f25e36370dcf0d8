#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "tabtoken/experiment.hpp"
#include "tabtoken/transfer.hpp"

using namespace tabtoken;

namespace {

bool g_quiet = false;

void progress(const std::string& line) {
  if (!g_quiet) std::cerr << line << "\n";
}

RunConfig load_config_or_default(const std::string& path) {
  if (path.empty()) return RunConfig{};
  return load_run_config(path);
}

std::string require_path(const std::string& flag_value, const std::string& config_value,
                         const std::string& what) {
  if (!flag_value.empty()) return flag_value;
  if (!config_value.empty()) return config_value;
  throw ConfigError("missing required path: " + what);
}

DatasetTable load_table(const std::string& data_path, const std::string& schema_path,
                        const std::string& label_column, const std::string& task) {
  SchemaHint hint;
  if (!schema_path.empty()) hint = load_schema_sidecar(schema_path);
  if (!task.empty() && task != "auto") hint.task = task_from_string(task);
  return load_csv(data_path, hint, label_column);
}

TransferSplit load_split(const DatasetTable& full, const std::string& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw DataError("cannot open split manifest: " + manifest_path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return split_from_manifest_json(full, text);
}

struct CommonOptions {
  std::string config_path;
  std::string data_path;
  std::string split_path;
  std::string checkpoint_path;
  std::string schema_path;
  std::string out_path;
  std::string label_column = "label";
  std::string task = "auto";
  std::optional<std::uint64_t> seed_override;
};

void add_common(CLI::App* cmd, CommonOptions& opt, bool with_split, bool with_checkpoint) {
  cmd->add_option("--config", opt.config_path, "JSON run configuration");
  cmd->add_option("--data", opt.data_path, "input dataset CSV");
  if (with_split) cmd->add_option("--split", opt.split_path, "split manifest JSON");
  if (with_checkpoint) cmd->add_option("--checkpoint", opt.checkpoint_path, "checkpoint JSON");
  cmd->add_option("--schema", opt.schema_path, "schema sidecar JSON");
  cmd->add_option("--out", opt.out_path, "output file");
  cmd->add_option("--label", opt.label_column, "label column name")->capture_default_str();
  cmd->add_option("--task", opt.task, "task kind: auto|binary|multiclass|regression")
      ->capture_default_str();
  cmd->add_option("--seed", opt.seed_override, "master seed (overrides the config)");
}

RunConfig resolve_config(const CommonOptions& opt) {
  RunConfig config = load_config_or_default(opt.config_path);
  if (opt.seed_override) config.train.seed = *opt.seed_override;
  return config;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Token-regularized tabular learner with cross-feature-set transfer"};
  app.require_subcommand(1);
  app.add_flag("--quiet", g_quiet, "suppress progress lines on stderr");

  // gen-synthetic ------------------------------------------------------------
  auto* gen = app.add_subcommand("gen-synthetic", "generate the four-class synthetic dataset");
  std::size_t gen_n = 10000;
  std::uint64_t gen_seed = 0;
  std::string gen_out;
  gen->add_option("--n", gen_n, "number of rows")->capture_default_str();
  gen->add_option("--seed", gen_seed, "generator seed")->capture_default_str();
  gen->add_option("--out", gen_out, "output CSV path")->required();

  // split ---------------------------------------------------------------------
  auto* split_cmd = app.add_subcommand("split", "build a transfer split manifest");
  CommonOptions split_opt;
  add_common(split_cmd, split_opt, false, false);
  std::string split_level = "medium";
  std::size_t split_d = 0, split_dt = 0, split_s = 0;
  std::uint64_t split_seed = 0;
  split_cmd->add_option("--level", split_level, "overlap level: low|medium|high")
      ->capture_default_str();
  split_cmd->add_option("--pretrain-features", split_d, "explicit pre-training feature count");
  split_cmd->add_option("--downstream-features", split_dt, "explicit downstream feature count");
  split_cmd->add_option("--shared-features", split_s, "explicit overlapping feature count");
  split_cmd->add_option("--split-seed", split_seed, "split seed")->capture_default_str();

  // pretrain ------------------------------------------------------------------
  auto* pre_cmd = app.add_subcommand("pretrain", "pre-train tokenizer and top-layer model");
  CommonOptions pre_opt;
  add_common(pre_cmd, pre_opt, true, false);

  // finetune ------------------------------------------------------------------
  auto* fin_cmd = app.add_subcommand("finetune", "few-shot fine-tuning with token reuse");
  CommonOptions fin_opt;
  add_common(fin_cmd, fin_opt, true, true);
  std::size_t fin_shots = 5, fin_subset = 0;
  bool fin_eval = false;
  fin_cmd->add_option("--shots", fin_shots, "shots per class (total shots for regression)")
      ->capture_default_str();
  fin_cmd->add_option("--subset", fin_subset, "few-shot subset index")->capture_default_str();
  fin_cmd->add_flag("--eval-test", fin_eval, "print the test metric to stdout");

  // reweight-finetune -----------------------------------------------------------
  auto* rew_cmd = app.add_subcommand("reweight-finetune",
                                     "fine-tune through a re-weighted token library");
  CommonOptions rew_opt;
  add_common(rew_cmd, rew_opt, true, true);
  std::size_t rew_shots = 5, rew_subset = 0, rew_new = 2;
  bool rew_eval = false;
  rew_cmd->add_option("--shots", rew_shots, "shots per class (total shots for regression)")
      ->capture_default_str();
  rew_cmd->add_option("--subset", rew_subset, "few-shot subset index")->capture_default_str();
  rew_cmd->add_option("--new-tokens", rew_new, "learnable new library rows")->capture_default_str();
  rew_cmd->add_flag("--eval-test", rew_eval, "print the test metric to stdout");

  // run-protocol -----------------------------------------------------------------
  auto* proto_cmd = app.add_subcommand("run-protocol", "subset x seed evaluation protocol");
  CommonOptions proto_opt;
  add_common(proto_cmd, proto_opt, true, true);
  int proto_jobs = 1;
  proto_cmd->add_option("--jobs", proto_jobs, "parallel workers")->capture_default_str();

  // export-tokens ------------------------------------------------------------------
  auto* exp_cmd = app.add_subcommand("export-tokens", "dump the raw token matrix as CSV");
  CommonOptions exp_opt;
  add_common(exp_cmd, exp_opt, false, true);

  // token-report ----------------------------------------------------------------------
  auto* rep_cmd = app.add_subcommand("token-report", "token geometry diagnostics");
  CommonOptions rep_opt;
  add_common(rep_cmd, rep_opt, false, true);
  std::string rep_request;
  rep_cmd->add_option("--request", rep_request, "JSON with pairs and noise_features");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      DatasetTable table = gen_synthetic_fourclass(gen_n, gen_seed);
      save_csv(table, gen_out);
      progress("wrote " + gen_out);
      return 0;
    }

    if (*split_cmd) {
      RunConfig config = resolve_config(split_opt);
      const std::string data = require_path(split_opt.data_path, config.paths.data, "--data");
      const std::string out = require_path(split_opt.out_path, config.paths.out, "--out");
      DatasetTable full = load_table(data, split_opt.schema_path, split_opt.label_column,
                                     split_opt.task);
      TransferSplit split;
      if (split_d > 0 || split_dt > 0 || split_s > 0) {
        split = make_transfer_split(full, FeatureCounts{split_d, split_dt, split_s}, split_seed);
      } else {
        std::string level_name = split_level;
        if (split_cmd->count("--level") == 0 && !config.protocol.overlap_level.empty())
          level_name = config.protocol.overlap_level;
        if (level_name != "low" && level_name != "medium" && level_name != "high")
          throw ConfigError("--level must be low|medium|high");
        OverlapLevel level = level_name == "low"
                                 ? OverlapLevel::low
                                 : (level_name == "high" ? OverlapLevel::high : OverlapLevel::medium);
        split = make_transfer_split(full, level, split_seed);
      }
      std::ofstream os(out);
      if (!os) throw DataError("cannot write manifest: " + out);
      os << split_manifest_to_json(split);
      progress("wrote " + out);
      return 0;
    }

    if (*pre_cmd) {
      RunConfig config = resolve_config(pre_opt);
      const std::string data = require_path(pre_opt.data_path, config.paths.data, "--data");
      const std::string manifest = require_path(pre_opt.split_path, config.paths.split, "--split");
      const std::string out = require_path(pre_opt.out_path, config.paths.out, "--out");
      DatasetTable full = load_table(data, pre_opt.schema_path, pre_opt.label_column, pre_opt.task);
      TransferSplit split = load_split(full, manifest);
      DatasetTable train = split.pretrain, val = split.validation;
      preprocess(train, {&val});
      progress("pre-training on " + std::to_string(train.n_rows()) + " rows, " +
               std::to_string(train.n_features()) + " features");
      Checkpoint chk = pretrain(train, val, config.train);
      save_checkpoint(chk, out);
      progress("wrote " + out);
      return 0;
    }

    auto finetune_like = [&](const CommonOptions& opt, std::size_t shots, std::size_t subset,
                             bool eval_test, std::optional<std::size_t> new_tokens) {
      RunConfig config = resolve_config(opt);
      const std::string data = require_path(opt.data_path, config.paths.data, "--data");
      const std::string manifest = require_path(opt.split_path, config.paths.split, "--split");
      const std::string chk_path =
          require_path(opt.checkpoint_path, config.paths.checkpoint, "--checkpoint");
      const std::string out = require_path(opt.out_path, config.paths.out, "--out");
      DatasetTable full = load_table(data, opt.schema_path, opt.label_column, opt.task);
      TransferSplit split = load_split(full, manifest);
      Checkpoint chk = load_checkpoint(chk_path);
      if (opt.seed_override) config.train.seed = *opt.seed_override;

      const std::uint64_t data_seed = derive_seed(config.train.seed, "protocol-subset", subset);
      DatasetTable fewshot = sample_few_shot(split.downstream_pool, shots, data_seed);
      const PreprocessStats stats = compute_preprocess_stats(fewshot);
      fewshot = apply_preprocess(stats, fewshot);
      progress("fine-tuning on " + std::to_string(fewshot.n_rows()) + " rows");

      Checkpoint tuned = new_tokens.has_value()
                             ? reweight_finetune(chk, fewshot, *new_tokens, config.train)
                             : finetune(chk, fewshot, split.overlap, config.train);
      save_checkpoint(tuned, out);
      progress("wrote " + out);

      if (eval_test) {
        DatasetTable test = apply_preprocess(stats, split.test);
        const auto outputs = predict_outputs(tuned, test);
        nlohmann::json j;
        if (test.task == TaskKind::regression) {
          std::vector<double> preds(outputs.size());
          for (std::size_t i = 0; i < outputs.size(); ++i)
            preds[i] = outputs[i] * stats.target_std + stats.target_mean;
          j["metric"] = "rmse";
          j["value"] = metric_rmse(preds, split.test.targets);
        } else {
          const DatasetTable aligned = align_class_labels(tuned, test);
          j["metric"] = "accuracy";
          j["value"] = metric_accuracy(
              argmax_rows(outputs, static_cast<std::size_t>(aligned.n_classes)),
              aligned.class_labels);
        }
        std::cout << j.dump() << "\n";
      }
    };

    if (*fin_cmd) {
      finetune_like(fin_opt, fin_shots, fin_subset, fin_eval, std::nullopt);
      return 0;
    }
    if (*rew_cmd) {
      finetune_like(rew_opt, rew_shots, rew_subset, rew_eval, rew_new);
      return 0;
    }

    if (*proto_cmd) {
      RunConfig config = resolve_config(proto_opt);
      const std::string data = require_path(proto_opt.data_path, config.paths.data, "--data");
      const std::string manifest =
          require_path(proto_opt.split_path, config.paths.split, "--split");
      const std::string out = require_path(proto_opt.out_path, config.paths.out, "--out");
      DatasetTable full = load_table(data, proto_opt.schema_path, proto_opt.label_column,
                                     proto_opt.task);
      TransferSplit split = load_split(full, manifest);

      ExperimentPlan plan;
      plan.shots = config.protocol.shots;
      plan.n_subsets = config.protocol.n_subsets;
      plan.n_seeds = config.protocol.n_seeds;
      plan.pipeline = config.protocol.pipeline;
      plan.reweight_new_tokens = config.protocol.reweight_new_tokens;

      std::optional<Checkpoint> pre;
      const std::string chk_path = !proto_opt.checkpoint_path.empty()
                                       ? proto_opt.checkpoint_path
                                       : config.paths.checkpoint;
      if (!chk_path.empty()) pre = load_checkpoint(chk_path);
      progress("running protocol: " + std::to_string(plan.n_subsets) + " subsets x " +
               std::to_string(plan.n_seeds) + " seeds, jobs=" + std::to_string(proto_jobs));
      MetricsReport report =
          run_protocol(split, plan, config.train, proto_jobs, pre ? &*pre : nullptr);
      save_report(report, config, out);
      progress("wrote " + out + "  mean=" + std::to_string(report.mean) +
               " std=" + std::to_string(report.stddev));
      return 0;
    }

    if (*exp_cmd) {
      RunConfig config = resolve_config(exp_opt);
      const std::string chk_path =
          require_path(exp_opt.checkpoint_path, config.paths.checkpoint, "--checkpoint");
      const std::string out = require_path(exp_opt.out_path, config.paths.out, "--out");
      Checkpoint chk = load_checkpoint(chk_path);
      export_tokens_csv(chk, out);
      progress("wrote " + out);
      return 0;
    }

    if (*rep_cmd) {
      RunConfig config = resolve_config(rep_opt);
      const std::string chk_path =
          require_path(rep_opt.checkpoint_path, config.paths.checkpoint, "--checkpoint");
      const std::string out = require_path(rep_opt.out_path, config.paths.out, "--out");
      Checkpoint chk = load_checkpoint(chk_path);

      TokenReportRequest req;
      if (!rep_request.empty()) {
        std::ifstream in(rep_request);
        if (!in) throw DataError("cannot open request: " + rep_request);
        nlohmann::json j;
        try {
          in >> j;
        } catch (const nlohmann::json::exception& e) {
          throw DataError(std::string("request is not valid JSON: ") + e.what());
        }
        if (j.contains("pairs"))
          for (const auto& p : j.at("pairs"))
            req.pairs.push_back({p.at(0).get<std::string>(), p.at(1).get<std::string>(),
                                 p.at(2).get<std::string>(), p.at(3).get<std::string>()});
        if (j.contains("noise_features"))
          req.noise_features = j.at("noise_features").get<std::vector<std::string>>();
      }

      std::optional<DatasetTable> table;
      if (!rep_opt.data_path.empty()) {
        DatasetTable raw = load_table(rep_opt.data_path, rep_opt.schema_path, rep_opt.label_column,
                                      rep_opt.task);
        PreprocessStats stats = compute_preprocess_stats(raw);
        table = apply_preprocess(stats, raw);
      }
      TokenGeometryReport rep = token_geometry_report(chk, req, table ? &*table : nullptr);
      std::ofstream os(out);
      if (!os) throw DataError("cannot write report: " + out);
      os << token_geometry_report_to_json_text(rep);
      progress("wrote " + out);
      return 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << nlohmann::json{{"error", {{"kind", "config"}, {"message", e.what()}}}}.dump()
              << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << nlohmann::json{{"error", {{"kind", "data"}, {"message", e.what()}}}}.dump()
              << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << nlohmann::json{{"error", {{"kind", "runtime"}, {"message", e.what()}}}}.dump()
              << "\n";
    return 4;
  }
  return 0;
}
