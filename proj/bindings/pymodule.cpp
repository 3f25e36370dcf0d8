#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <fstream>

#include "tabtoken/experiment.hpp"
#include "tabtoken/transfer.hpp"

namespace py = pybind11;
using namespace tabtoken;

namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open file: " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

TrainConfig config_from_json_or_default(const std::string& config_json) {
  if (config_json.empty()) return TrainConfig{};
  return run_config_from_json_text(config_json).train;
}

Tensor tensor_from_array(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  Shape shape(a.ndim());
  for (py::ssize_t i = 0; i < a.ndim(); ++i) shape[static_cast<std::size_t>(i)] =
      static_cast<std::size_t>(a.shape(i));
  std::vector<double> data(a.data(), a.data() + a.size());
  return Tensor::constant(std::move(shape), std::move(data));
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Tabular feature-token transfer learner";

  py::register_exception<ConfigError>(m, "ConfigError");
  py::register_exception<DataError>(m, "DataError");

  m.def(
      "generate_synthetic_csv",
      [](const std::string& path, std::size_t n, std::uint64_t seed) {
        save_csv(gen_synthetic_fourclass(n, seed), path);
      },
      py::arg("path"), py::arg("n"), py::arg("seed") = 0,
      "Write the four-class synthetic dataset to a CSV file.");

  m.def(
      "make_split_manifest",
      [](const std::string& data_csv, const std::string& out_manifest, const std::string& level,
         std::size_t pretrain_features, std::size_t downstream_features, std::size_t shared,
         std::uint64_t seed, const std::string& label) {
        DatasetTable full = load_csv(data_csv, {}, label);
        TransferSplit split;
        if (pretrain_features > 0 || downstream_features > 0 || shared > 0) {
          split = make_transfer_split(
              full, FeatureCounts{pretrain_features, downstream_features, shared}, seed);
        } else {
          OverlapLevel lv = level == "low" ? OverlapLevel::low
                                           : (level == "high" ? OverlapLevel::high
                                                              : OverlapLevel::medium);
          split = make_transfer_split(full, lv, seed);
        }
        std::ofstream out(out_manifest);
        if (!out) throw DataError("cannot write manifest: " + out_manifest);
        out << split_manifest_to_json(split);
      },
      py::arg("data_csv"), py::arg("out_manifest"), py::arg("level") = "medium",
      py::arg("pretrain_features") = 0, py::arg("downstream_features") = 0, py::arg("shared") = 0,
      py::arg("seed") = 0, py::arg("label") = "label",
      "Build a transfer split and write its manifest JSON.");

  m.def(
      "pretrain",
      [](const std::string& data_csv, const std::string& manifest_path,
         const std::string& out_checkpoint, const std::string& config_json,
         const std::string& label) {
        const TrainConfig config = config_from_json_or_default(config_json);
        DatasetTable full = load_csv(data_csv, {}, label);
        TransferSplit split = split_from_manifest_json(full, read_file(manifest_path));
        DatasetTable train = split.pretrain, val = split.validation;
        preprocess(train, {&val});
        Checkpoint chk = ::tabtoken::pretrain(train, val, config);
        save_checkpoint(chk, out_checkpoint);
      },
      py::arg("data_csv"), py::arg("manifest"), py::arg("out_checkpoint"),
      py::arg("config_json") = "", py::arg("label") = "label",
      "Pre-train tokenizer and top-layer model; writes a checkpoint JSON.");

  m.def(
      "finetune",
      [](const std::string& data_csv, const std::string& manifest_path,
         const std::string& checkpoint_path, const std::string& out_checkpoint, std::size_t shots,
         std::size_t subset, const std::string& config_json, const std::string& label) {
        TrainConfig config = config_from_json_or_default(config_json);
        DatasetTable full = load_csv(data_csv, {}, label);
        TransferSplit split = split_from_manifest_json(full, read_file(manifest_path));
        Checkpoint chk = load_checkpoint(checkpoint_path);
        const std::uint64_t data_seed = derive_seed(config.seed, "protocol-subset", subset);
        DatasetTable fewshot = sample_few_shot(split.downstream_pool, shots, data_seed);
        const PreprocessStats stats = compute_preprocess_stats(fewshot);
        fewshot = apply_preprocess(stats, fewshot);
        Checkpoint tuned = ::tabtoken::finetune(chk, fewshot, split.overlap, config);
        save_checkpoint(tuned, out_checkpoint);

        DatasetTable test = apply_preprocess(stats, split.test);
        const auto outputs = predict_outputs(tuned, test);
        if (test.task == TaskKind::regression) {
          std::vector<double> preds(outputs.size());
          for (std::size_t i = 0; i < outputs.size(); ++i)
            preds[i] = outputs[i] * stats.target_std + stats.target_mean;
          return metric_rmse(preds, split.test.targets);
        }
        const DatasetTable aligned = align_class_labels(tuned, test);
        return metric_accuracy(argmax_rows(outputs, static_cast<std::size_t>(aligned.n_classes)),
                               aligned.class_labels);
      },
      py::arg("data_csv"), py::arg("manifest"), py::arg("checkpoint"), py::arg("out_checkpoint"),
      py::arg("shots") = 5, py::arg("subset") = 0, py::arg("config_json") = "",
      py::arg("label") = "label",
      "Few-shot fine-tuning with token reuse; returns the test metric.");

  m.def(
      "run_protocol",
      [](const std::string& data_csv, const std::string& manifest_path,
         const std::string& out_report, const std::string& config_json, int jobs,
         const std::string& checkpoint_path, const std::string& label) {
        RunConfig config =
            config_json.empty() ? RunConfig{} : run_config_from_json_text(config_json);
        DatasetTable full = load_csv(data_csv, {}, label);
        TransferSplit split = split_from_manifest_json(full, read_file(manifest_path));
        ExperimentPlan plan;
        plan.shots = config.protocol.shots;
        plan.n_subsets = config.protocol.n_subsets;
        plan.n_seeds = config.protocol.n_seeds;
        plan.pipeline = config.protocol.pipeline;
        plan.reweight_new_tokens = config.protocol.reweight_new_tokens;
        std::optional<Checkpoint> pre;
        if (!checkpoint_path.empty()) pre = load_checkpoint(checkpoint_path);
        MetricsReport report =
            ::tabtoken::run_protocol(split, plan, config.train, jobs, pre ? &*pre : nullptr);
        save_report(report, config.train, out_report);
        return py::make_tuple(report.mean, report.stddev, report.records.size());
      },
      py::arg("data_csv"), py::arg("manifest"), py::arg("out_report"),
      py::arg("config_json") = "", py::arg("jobs") = 1, py::arg("checkpoint") = "",
      py::arg("label") = "label",
      "Run the subset x seed evaluation protocol; returns (mean, std, runs).");

  m.def(
      "export_tokens",
      [](const std::string& checkpoint_path, const std::string& out_csv) {
        export_tokens_csv(load_checkpoint(checkpoint_path), out_csv);
      },
      py::arg("checkpoint"), py::arg("out_csv"), "Dump the raw token matrix to CSV.");

  m.def(
      "token_report",
      [](const std::string& checkpoint_path, const std::vector<std::vector<std::string>>& pairs,
         const std::vector<std::string>& noise_features) {
        Checkpoint chk = load_checkpoint(checkpoint_path);
        TokenReportRequest req;
        for (const auto& p : pairs) {
          if (p.size() != 4)
            throw ConfigError("each pairing needs [feature_a, cat_a, feature_b, cat_b]");
          req.pairs.push_back({p[0], p[1], p[2], p[3]});
        }
        req.noise_features = noise_features;
        return token_geometry_report_to_json_text(token_geometry_report(chk, req));
      },
      py::arg("checkpoint"), py::arg("pairs") = std::vector<std::vector<std::string>>{},
      py::arg("noise_features") = std::vector<std::string>{},
      "Token geometry diagnostics as a JSON string.");

  // Direct numeric surfaces, handy for quick checks from python.
  m.def(
      "ctr_loss",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& tokens,
         const std::vector<int>& labels, const std::string& variant) {
        if (tokens.ndim() != 2) throw py::value_error("tokens must be (batch, dim)");
        return ctr_loss(tensor_from_array(tokens), labels, variant_from_string(variant)).item();
      },
      py::arg("tokens"), py::arg("labels"), py::arg("variant") = "vanilla",
      "Contrastive token regularization over instance tokens.");

  m.def(
      "combine_average",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& tokens) {
        if (tokens.ndim() != 3) throw py::value_error("tokens must be (batch, features, dim)");
        Tensor avg = combine_average(tensor_from_array(tokens));
        py::array_t<double> out({avg.dim(0), avg.dim(1)});
        std::copy(avg.data().begin(), avg.data().end(), out.mutable_data());
        return out;
      },
      py::arg("tokens"), "Average feature tokens into instance tokens.");

  m.def("pseudo_labels_regression", &pseudo_labels_regression, py::arg("targets"),
        "Median-threshold pseudo-classes for regression targets.");
  m.def("metric_accuracy", &metric_accuracy, py::arg("preds"), py::arg("labels"));
  m.def("metric_rmse", &metric_rmse, py::arg("preds"), py::arg("targets"));
  m.def("default_config_json", [] { return run_config_to_json_text(RunConfig{}); },
        "The full default configuration as JSON.");

  m.attr("__version__") = "0.1.0";
}
