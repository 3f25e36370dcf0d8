// Acceptance suite: one checkable criterion per entry, each printing a single
// PASS/FAIL line. Run with no arguments for the full suite or with a criterion
// number to run one entry (the ctest registration does the latter).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "../fd_check.hpp"
#include "tabtoken/experiment.hpp"
#include "tabtoken/objective.hpp"
#include "tabtoken/optim.hpp"
#include "tabtoken/transfer.hpp"

using namespace tabtoken;
using tabtoken::testing::fd_max_rel_error;
using tabtoken::testing::random_values;

namespace {

struct CheckFailure {
  std::string message;
};

void require(bool condition, const std::string& message) {
  if (!condition) throw CheckFailure{message};
}

std::string fmt(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

// ---- criterion 1: gradient suite -------------------------------------------

void criterion_gradients() {
  RngStream rng(101);
  const double tol = 1e-4;
  auto check_fd = [&](const char* what, std::vector<Tensor> params,
                      const std::function<Tensor()>& build) {
    const double err = fd_max_rel_error(std::move(params), build, 1e-5);
    require(err < tol, std::string(what) + " rel err " + fmt(err));
  };

  {
    Tensor a = Tensor::param({3, 4}, random_values(12, rng));
    Tensor b = Tensor::param({3, 4}, random_values(12, rng));
    Tensor v = Tensor::param({4}, random_values(4, rng));
    Tensor u = Tensor::param({3}, random_values(3, rng));
    check_fd("add/mul/sub", {a, b}, [&] { return sum_all(mul(add(a, b), sub(a, b))); });
    check_fd("scale", {a}, [&] { return mean_all(scale(a, -2.5)); });
    check_fd("rowvec", {a, v}, [&] { return sum_all(mul(add_rowvec(a, v), sub_rowvec(a, v))); });
    check_fd("mul_rowvec", {a, v}, [&] { return sum_all(mul(mul_rowvec(a, v), a)); });
    check_fd("colvec", {a, u}, [&] { return sum_all(mul(sub_colvec(a, u), mul_colvec(a, u))); });
  }
  {
    Tensor a = Tensor::param({4, 3}, random_values(12, rng));
    Tensor b = Tensor::param({3, 5}, random_values(15, rng));
    check_fd("matmul", {a, b}, [&] {
      Tensor c = matmul(a, b);
      return sum_all(mul(c, c));
    });
    Tensor p = Tensor::param({2, 3, 4}, random_values(24, rng));
    Tensor q = Tensor::param({2, 4, 2}, random_values(16, rng));
    check_fd("bmm", {p, q}, [&] {
      Tensor c = bmm(p, q);
      return sum_all(mul(c, c));
    });
    Tensor r = Tensor::param({2, 5, 4}, random_values(40, rng));
    check_fd("bmm_t", {p, r}, [&] {
      Tensor c = bmm(p, r, true);
      return sum_all(mul(c, c));
    });
  }
  {
    auto away = [&](std::size_t n) {
      std::vector<double> v(n);
      for (double& x : v) {
        x = rng.uniform(-1, 1);
        if (std::abs(x) < 1e-3) x += x >= 0 ? 0.5 : -0.5;
      }
      return v;
    };
    Tensor a = Tensor::param({3, 4}, away(12));
    check_fd("relu", {a}, [&] { return sum_all(mul(relu(a), relu(a))); });
    Tensor g = Tensor::param({3, 6}, away(18));
    check_fd("reglu", {g}, [&] { return sum_all(mul(reglu(g), reglu(g))); });
    Tensor s = Tensor::param({3, 4}, random_values(12, rng, -2, 2));
    Tensor w = Tensor::constant({3, 4}, random_values(12, rng));
    check_fd("softmax", {s}, [&] { return sum_all(mul(softmax_lastdim(s), w)); });
    Tensor pos = Tensor::param({6}, random_values(6, rng, 0.5, 2.0));
    check_fd("rsqrt", {pos}, [&] { return sum_all(rsqrt_shift(pos, 1e-5)); });
  }
  {
    Tensor a = Tensor::param({3, 4}, random_values(12, rng));
    check_fd("mean_axis0", {a}, [&] { return sum_all(mul(mean_axis0(a), mean_axis0(a))); });
    check_fd("mean_lastdim", {a}, [&] { return sum_all(mul(mean_lastdim(a), mean_lastdim(a))); });
    Tensor t = Tensor::param({2, 3, 4}, random_values(24, rng));
    check_fd("mean_axis1", {t}, [&] { return sum_all(mul(mean_axis1(t), mean_axis1(t))); });
    check_fd("reshape/slice/concat", {a}, [&] {
      Tensor r = reshape(a, {4, 3});
      Tensor s = slice_rows(r, 1, 3);
      Tensor c = concat_rows(s, s);
      return sum_all(mul(c, c));
    });
    Tensor h = Tensor::param({2, 3, 4}, random_values(24, rng));
    check_fd("heads", {h}, [&] {
      Tensor s = merge_heads(split_heads(h, 2), 2);
      return sum_all(mul(s, s));
    });
    Tensor table = Tensor::param({5, 3}, random_values(15, rng));
    std::vector<std::size_t> idx = {0, 4, 2, 4};
    check_fd("embed_rows", {table}, [&] {
      Tensor e = embed_rows(table, idx);
      return sum_all(mul(e, e));
    });
    Tensor vec = Tensor::param({4}, random_values(4, rng));
    std::vector<double> xs = {0.3, -1.1, 2.0};
    check_fd("outer", {vec}, [&] {
      Tensor o = outer(xs, vec);
      return sum_all(mul(o, o));
    });
    Tensor logits = Tensor::param({4, 3}, random_values(12, rng, -2, 2));
    check_fd("cross_entropy", {logits}, [&] { return cross_entropy(logits, {0, 2, 1, 1}); });
    Tensor pred = Tensor::param({5}, random_values(5, rng));
    check_fd("mse", {pred}, [&] { return mse(pred, {0.1, -0.2, 0.3, 0.4, -0.5}); });
  }

  // Full architectures on tiny configs (k=4, d=3, 1 layer).
  std::vector<int> labels = {0, 1, 2};
  {
    ModelConfig mc;
    mc.kind = ModelKind::mlp;
    mc.mlp.hidden_sizes = {4};
    mc.mlp.dropout = 0.0;
    auto model = make_model(mc, 4, 3, 11);
    Tensor x = Tensor::constant({3, 4}, random_values(12, rng));
    check_fd("mlp end-to-end", model->parameters(),
             [&] { return cross_entropy(model->forward(x, false, nullptr), labels); });
  }
  {
    ModelConfig mc;
    mc.kind = ModelKind::resnet;
    mc.resnet.layer_count = 1;
    mc.resnet.layer_size = 4;
    mc.resnet.hidden_dropout = 0.0;
    mc.resnet.residual_dropout = 0.0;
    auto model = make_model(mc, 4, 3, 12);
    Tensor x = Tensor::constant({4, 4}, random_values(16, rng));
    check_fd("resnet end-to-end", model->parameters(),
             [&] { return cross_entropy(model->forward(x, true, nullptr), {0, 1, 2, 0}); });
  }
  {
    ModelConfig mc;
    mc.kind = ModelKind::transformer;
    mc.transformer.layer_count = 1;
    mc.transformer.head_count = 2;
    auto model = make_model(mc, 4, 3, 13);
    Tensor tokens = Tensor::constant({3, 3, 4}, random_values(36, rng));
    check_fd("transformer end-to-end", model->parameters(),
             [&] { return cross_entropy(model->forward(tokens, false, nullptr), labels); });
  }
  {
    // Through the tokenizer and CTR objective as trained in practice.
    std::vector<FeatureSpec> schema = {{"n0", FeatureKind::numerical, {}},
                                       {"c0", FeatureKind::categorical, {"a", "b", "c"}}};
    DatasetTable table;
    table.schema = schema;
    table.num_cols = {{0.7, -1.2, 0.4}, {}};
    table.cat_cols = {{}, {0, 2, 1}};
    table.task = TaskKind::multiclass;
    table.n_classes = 3;
    table.class_names = {"0", "1", "2"};
    table.class_labels = {0, 1, 2};
    TokenizerParams tok = init_tokenizer(schema, 4, 3);
    ModelConfig mc;
    mc.kind = ModelKind::linear;
    auto model = make_model(mc, 4, 3, 14);
    std::vector<Tensor> params = tok.parameters();
    for (auto& t : model->parameters()) params.push_back(t);
    check_fd("tokenizer+ctr objective", params, [&] {
      Tensor tokens = tokenize_batch(tok, table);
      Tensor inst = combine_average(tokens);
      Tensor out = model->forward(inst, false, nullptr);
      return training_objective(out, table.task, table.class_labels, {}, inst,
                                table.class_labels, 1.0, CtrVariant::vanilla);
    });
  }
}

// ---- criterion 2: capacity equivalence ---------------------------------------

void criterion_capacity() {
  RngStream rng(202);
  const std::size_t k = 7;
  {
    std::vector<FeatureSpec> schema = {{"x", FeatureKind::numerical, {}}};
    TokenizerParams tok = init_tokenizer(schema, k, 5);
    Tensor w = Tensor::param({k, 1}, random_values(k, rng));
    double w_prime = 0.0;
    for (std::size_t c = 0; c < k; ++c) w_prime += tok.tokens[0].data()[c] * w.data()[c];
    for (int i = 0; i < 100; ++i) {
      const double x = rng.uniform(-10, 10);
      DatasetTable point;
      point.schema = schema;
      point.num_cols = {{x}};
      point.cat_cols.resize(1);
      point.task = TaskKind::regression;
      point.targets = {0.0};
      Tensor pred = matmul(reshape(tokenize_batch(tok, point), {1, k}), w);
      require(std::abs(pred.data()[0] - w_prime * x) < 1e-10,
              "numerical capacity gap " + fmt(std::abs(pred.data()[0] - w_prime * x)));
    }
  }
  {
    const std::size_t K = 5;
    std::vector<FeatureSpec> schema = {
        {"c", FeatureKind::categorical, {"p", "q", "r", "s", "t"}}};
    TokenizerParams tok = init_tokenizer(schema, k, 9);
    Tensor eta = Tensor::param({k, 1}, random_values(k, rng));
    std::vector<double> eta_prime(K, 0.0);
    for (std::size_t p = 0; p < K; ++p)
      for (std::size_t c = 0; c < k; ++c)
        eta_prime[p] += tok.tokens[0].data()[p * k + c] * eta.data()[c];
    for (int i = 0; i < 100; ++i) {
      const int cat = static_cast<int>(rng.uniform_int(K));
      DatasetTable point;
      point.schema = schema;
      point.num_cols.resize(1);
      point.cat_cols = {{cat}};
      point.task = TaskKind::regression;
      point.targets = {0.0};
      Tensor pred = matmul(reshape(tokenize_batch(tok, point), {1, k}), eta);
      const double gap = std::abs(pred.data()[0] - eta_prime[static_cast<std::size_t>(cat)]);
      require(gap < 1e-10, "categorical capacity gap " + fmt(gap));
    }
  }
}

// ---- criterion 3: CTR algebra --------------------------------------------------

void criterion_ctr_algebra() {
  RngStream rng(303);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t B = 2 + rng.uniform_int(14);
    const std::size_t k = 1 + rng.uniform_int(6);
    std::vector<int> labels(B);
    for (std::size_t i = 0; i < B; ++i) labels[i] = static_cast<int>(rng.uniform_int(3));
    Tensor t = Tensor::constant({B, k}, random_values(B * k, rng, -2, 2));
    require(ctr_loss(t, labels, CtrVariant::vanilla).item() >= 0.0, "vanilla CTR negative");
  }
  {
    Tensor at_centers = Tensor::constant({4, 3}, {1, 2, 3, 1, 2, 3, -1, 0, 2, -1, 0, 2});
    require(ctr_loss(at_centers, {0, 0, 1, 1}, CtrVariant::vanilla).item() == 0.0,
            "vanilla CTR nonzero at centers");
    Tensor off = Tensor::constant({2, 1}, {0.0, 1.0});
    require(ctr_loss(off, {0, 0}, CtrVariant::vanilla).item() > 0.0,
            "vanilla CTR zero away from centers");
  }
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t B = 2 + rng.uniform_int(10);
    const std::size_t k = 1 + rng.uniform_int(4);
    std::vector<int> labels(B);
    labels[0] = 0;
    labels[1] = 1;
    for (std::size_t i = 2; i < B; ++i) labels[i] = static_cast<int>(rng.uniform_int(2));
    Tensor t = Tensor::constant({B, k}, random_values(B * k, rng, -2, 2));
    const double gap = std::abs(ctr_loss(t, labels, CtrVariant::hardest).item() -
                                ctr_loss(t, labels, CtrVariant::all_hard).item());
    require(gap < 1e-12, "hardest vs all-hard gap " + fmt(gap));
  }
  {
    const std::size_t B = 15, k = 5;
    std::vector<int> labels(B);
    for (std::size_t i = 0; i < B; ++i) labels[i] = static_cast<int>(i % 4);
    std::vector<double> base = random_values(B * k, rng, -1, 1);
    std::vector<double> shift = random_values(k, rng, -7, 7);
    std::vector<double> moved = base;
    for (std::size_t i = 0; i < B; ++i)
      for (std::size_t c = 0; c < k; ++c) moved[i * k + c] += shift[c];
    Tensor t0 = Tensor::constant({B, k}, base);
    Tensor t1 = Tensor::constant({B, k}, moved);
    for (auto variant : {CtrVariant::vanilla, CtrVariant::hardest, CtrVariant::all_hard,
                         CtrVariant::vanilla_plus_hard}) {
      const double gap =
          std::abs(ctr_loss(t0, labels, variant).item() - ctr_loss(t1, labels, variant).item());
      require(gap < 1e-10, "translation gap " + fmt(gap));
    }
  }
}

// ---- criterion 4: permutation laws ----------------------------------------------

void criterion_permutation() {
  RngStream rng(404);
  {
    const std::size_t B = 6, d = 9, k = 5;
    std::vector<double> base = random_values(B * d * k, rng);
    base[0] = 0.1;
    base[k] = 0.2;
    base[2 * k] = 0.3;
    std::vector<std::size_t> perm(d);
    for (std::size_t j = 0; j < d; ++j) perm[j] = j;
    rng.shuffle(perm);
    std::vector<double> permuted(base.size());
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t j = 0; j < d; ++j)
        for (std::size_t c = 0; c < k; ++c)
          permuted[(b * d + j) * k + c] = base[(b * d + perm[j]) * k + c];
    Tensor a = combine_average(Tensor::constant({B, d, k}, base));
    Tensor b = combine_average(Tensor::constant({B, d, k}, permuted));
    for (std::size_t i = 0; i < a.numel(); ++i)
      require(a.data()[i] == b.data()[i], "combine_average not bitwise invariant");
  }
  {
    ModelConfig mc;
    mc.kind = ModelKind::transformer;
    mc.transformer.layer_count = 2;
    mc.transformer.head_count = 4;
    auto model = make_model(mc, 16, 4, 21);
    const std::size_t d = 6;
    std::vector<double> base = random_values(d * 16, rng);
    std::vector<std::size_t> perm(d);
    for (std::size_t j = 0; j < d; ++j) perm[j] = j;
    rng.shuffle(perm);
    std::vector<double> permuted(base.size());
    for (std::size_t j = 0; j < d; ++j)
      for (std::size_t c = 0; c < 16; ++c) permuted[j * 16 + c] = base[perm[j] * 16 + c];
    Tensor pa = model->forward(Tensor::constant({1, d, 16}, base), false, nullptr);
    Tensor pb = model->forward(Tensor::constant({1, d, 16}, permuted), false, nullptr);
    for (std::size_t c = 0; c < 4; ++c) {
      const double gap = std::abs(pa.data()[c] - pb.data()[c]);
      require(gap < 1e-10, "transformer prediction permutation gap " + fmt(gap));
    }
  }
}

// ---- criterion 5: synthetic token semantics ---------------------------------------

void criterion_token_semantics() {
  TokenReportRequest req;
  req.pairs = {{"x1", "A", "x3", "A'"}, {"x1", "B", "x3", "B'"}, {"x1", "C", "x3", "C'"},
               {"x1", "D", "x3", "D'"}, {"x2", "E", "x4", "E'"}, {"x2", "F", "x4", "F'"},
               {"x2", "G", "x4", "G'"}, {"x2", "H", "x4", "H'"}};
  req.noise_features = {"x5", "x6"};

  int noise_clustered = 0;
  double paired_sum = 0.0, random_sum = 0.0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    DatasetTable data = gen_synthetic_fourclass(8000, 1000 + seed);
    DatasetTable train = data, val = data;
    preprocess(train, {&val});

    TrainConfig config;
    config.token_dim = 2;
    config.model.kind = ModelKind::linear;
    config.beta = 1.0;
    config.variant = CtrVariant::vanilla;
    config.batch_size = 1024;
    config.pretrain_epochs = 200;
    config.seed = seed;
    Checkpoint chk = pretrain(train, val, config);

    TokenGeometryReport rep = token_geometry_report(chk, req);
    paired_sum += rep.paired_mean_distance;
    random_sum += rep.random_pair_mean_distance;
    if (!rep.degenerate && rep.noise_cluster_ratio < 1.0) ++noise_clustered;
  }
  require(paired_sum / 5.0 < random_sum / 5.0,
          "semantic pairs not closer than random pairs: " + fmt(paired_sum / 5.0) + " vs " +
              fmt(random_sum / 5.0));
  require(noise_clustered >= 4,
          "noise cluster ratio < 1 in only " + fmt(noise_clustered) + "/5 seeds");
}

// ---- criterion 6: synthetic transfer benefit ---------------------------------------

void criterion_transfer_benefit() {
  DatasetTable data = gen_synthetic_fourclass(4000, 42);
  TransferSplit split = make_transfer_split(data, FeatureCounts{4, 4, 2}, 7);

  TrainConfig config;
  config.token_dim = 16;
  config.model.kind = ModelKind::transformer;
  config.model.transformer.layer_count = 2;
  config.model.transformer.head_count = 4;
  config.batch_size = 512;
  config.pretrain_epochs = 100;
  config.finetune_epochs = 30;
  config.beta = 1.0;
  config.seed = 5;

  ExperimentPlan plan;
  plan.shots = 5;
  plan.n_subsets = 20;
  plan.n_seeds = 5;

  plan.pipeline = PipelineKind::tabtoken;
  MetricsReport tab = run_protocol(split, plan, config, 2);
  plan.pipeline = PipelineKind::scratch;
  MetricsReport scratch = run_protocol(split, plan, config, 2);

  for (std::size_t i = 0; i < tab.records.size(); ++i)
    require(tab.records[i].subset_hash == scratch.records[i].subset_hash,
            "subset streams diverged between pipelines");

  std::printf("  token-reuse mean accuracy %.4f, scratch mean accuracy %.4f\n", tab.mean,
              scratch.mean);
  require(tab.mean >= scratch.mean, "token reuse " + fmt(tab.mean) +
                                        " worse than scratch " + fmt(scratch.mean));
  require(tab.mean >= 0.30, "token reuse not above the random-guess floor: " + fmt(tab.mean));
  require(scratch.mean >= 0.30, "scratch not above the random-guess floor: " + fmt(scratch.mean));
}

// ---- criterion 7: freeze and reuse contracts ------------------------------------------

void criterion_freeze_reuse() {
  DatasetTable data = gen_synthetic_fourclass(1200, 9);
  TransferSplit split = make_transfer_split(data, FeatureCounts{4, 4, 2}, 3);
  DatasetTable train = split.pretrain, val = split.validation;
  preprocess(train, {&val});

  TrainConfig config;
  config.token_dim = 8;
  config.model.kind = ModelKind::transformer;
  config.model.transformer.layer_count = 1;
  config.model.transformer.head_count = 2;
  config.batch_size = 256;
  config.pretrain_epochs = 3;
  config.finetune_epochs = 5;
  config.seed = 31;
  Checkpoint chk = pretrain(train, val, config);

  // Unseen rows start exactly at the pooled mean.
  const std::vector<double> pooled = chk.tokenizer.pooled_rows();
  const std::size_t k = chk.tokenizer.dim;
  std::vector<double> mean_row(k, 0.0);
  const std::size_t rows = pooled.size() / k;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < k; ++c) mean_row[c] += pooled[r * k + c];
  for (double& v : mean_row) v /= static_cast<double>(rows);

  DatasetTable fewshot = sample_few_shot(split.downstream_pool, 5, 77);
  PreprocessStats stats = compute_preprocess_stats(fewshot);
  fewshot = apply_preprocess(stats, fewshot);

  TokenizerParams built = build_finetune_tokenizer(chk, fewshot.schema, split.overlap);
  std::set<std::size_t> overlapping;
  for (const auto& [dj, pj] : split.overlap.pairs) overlapping.insert(dj);
  for (std::size_t j = 0; j < built.tokens.size(); ++j) {
    if (overlapping.count(j)) continue;
    const auto& t = built.tokens[j];
    for (std::size_t r = 0; r < t.row_count(); ++r)
      for (std::size_t c = 0; c < k; ++c)
        require(t.data()[r * k + c] == mean_row[c], "unseen row not at the pooled mean");
  }

  // Frozen rows bit-identical across fine-tuning.
  Checkpoint tuned = finetune(chk, fewshot, split.overlap, config);
  for (const auto& [dj, pj] : split.overlap.pairs) {
    const auto& src = chk.tokenizer.tokens[pj];
    const auto& dst = tuned.tokenizer.tokens[dj];
    const auto& up_spec = chk.tokenizer.schema[pj];
    const auto& down_spec = tuned.tokenizer.schema[dj];
    for (std::size_t r = 0; r < down_spec.categories.size(); ++r) {
      auto it = std::find(up_spec.categories.begin(), up_spec.categories.end(),
                          down_spec.categories[r]);
      require(it != up_spec.categories.end(), "category missing upstream");
      const auto sr = static_cast<std::size_t>(it - up_spec.categories.begin());
      require(dst.row_frozen(r), "overlap row not frozen");
      for (std::size_t c = 0; c < k; ++c)
        require(dst.data()[r * k + c] == src.data()[sr * k + c],
                "frozen row drifted during fine-tuning");
    }
  }

  // Checkpoint round trip is bit-exact.
  const std::string text = checkpoint_to_json_text(tuned);
  Checkpoint back = checkpoint_from_json_text(text);
  require(checkpoint_to_json_text(back) == text, "checkpoint round trip not bit-exact");
  const auto a = predict_outputs(tuned, fewshot);
  const auto b = predict_outputs(back, fewshot);
  for (std::size_t i = 0; i < a.size(); ++i)
    require(a[i] == b[i], "round-tripped checkpoint predictions differ");
}

// ---- criterion 8: protocol plumbing ------------------------------------------------

void criterion_protocol() {
  DatasetTable data = gen_synthetic_fourclass(1500, 3);
  TransferSplit split = make_transfer_split(data, FeatureCounts{4, 4, 2}, 5);

  TrainConfig config;
  config.token_dim = 4;
  config.model.kind = ModelKind::mlp;
  config.model.mlp.hidden_sizes = {8};
  config.batch_size = 64;
  config.pretrain_epochs = 0;
  config.finetune_epochs = 2;
  config.seed = 17;

  ExperimentPlan plan;
  plan.shots = 2;
  plan.n_subsets = 30;
  plan.n_seeds = 10;
  plan.pipeline = PipelineKind::scratch;

  MetricsReport sequential = run_protocol(split, plan, config, 1);
  require(sequential.records.size() == 300,
          "expected 300 records, got " + fmt(sequential.records.size()));

  double mean = 0.0;
  for (const auto& r : sequential.records) mean += r.metric;
  mean /= 300.0;
  double var = 0.0;
  for (const auto& r : sequential.records) var += (r.metric - mean) * (r.metric - mean);
  const double stddev = std::sqrt(var / 300.0);
  require(std::abs(sequential.mean - mean) < 1e-12, "mean does not recompute");
  require(std::abs(sequential.stddev - stddev) < 1e-12, "stddev does not recompute");

  MetricsReport parallel = run_protocol(split, plan, config, 4);
  for (std::size_t i = 0; i < 300; ++i) {
    require(sequential.records[i].metric == parallel.records[i].metric,
            "jobs=1 vs jobs=4 metrics differ at run " + fmt(i));
    require(sequential.records[i].subset_hash == parallel.records[i].subset_hash,
            "jobs=1 vs jobs=4 subsets differ");
  }
}

// ---- criterion 9: config fidelity -----------------------------------------------------

void criterion_config_fidelity() {
  const TrainConfig c;
  require(c.model.transformer.layer_count == 3, "transformer layer count");
  require(c.token_dim == 64, "token size");
  require(c.model.transformer.head_count == 8, "head count");
  require(c.model.transformer.attention_dropout == 0.08, "attention dropout");
  require(c.model.transformer.ffn_dropout == 0.3, "ffn dropout");
  require(c.model.transformer.residual_dropout == 0.1, "transformer residual dropout");
  require(c.model.transformer.ffn_factor == 4.0 / 3.0, "reglu ffn factor");
  require(c.model.resnet.layer_count == 3, "resnet layer count");
  require(c.model.resnet.layer_size == 168, "resnet layer size");
  require(c.model.resnet.hidden_factor == 2.9, "resnet hidden factor");
  require(c.model.resnet.hidden_dropout == 0.5, "resnet hidden dropout");
  require(c.model.resnet.residual_dropout == 0.0, "resnet residual dropout");
  require(c.pretrain_lr == 1e-3, "pre-train learning rate");
  require(c.finetune_lr == 5e-4, "fine-tune learning rate");
  require(c.weight_decay == 2e-4, "weight decay");
  require(c.batch_size == 1024, "batch size");
  require(c.finetune_epochs == 10, "fine-tune epochs");

  // The parsed empty config equals the defaults.
  const TrainConfig parsed = train_config_from_json_text("{}");
  require(train_config_to_json_text(parsed) == train_config_to_json_text(c),
          "empty config does not reproduce defaults");
}

// ---- criterion 10: synthetic generator statistics ---------------------------------------

void criterion_generator_stats() {
  const std::size_t n = 100000;
  DatasetTable t = gen_synthetic_fourclass(n, 777);
  std::size_t copy_hits = 0, label_hits = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (t.cat_cols[2][i] == t.cat_cols[0][i]) ++copy_hits;
    const bool x1_hi = t.cat_cols[0][i] >= 2;
    const bool x2_hi = t.cat_cols[1][i] >= 2;
    int rule;
    if (x1_hi && !x2_hi) rule = 0;
    else if (!x1_hi && x2_hi) rule = 1;
    else if (!x1_hi && !x2_hi) rule = 2;
    else rule = 3;
    if (t.class_labels[i] == rule) ++label_hits;
  }
  const double p_copy = static_cast<double>(copy_hits) / n;
  const double p_label = static_cast<double>(label_hits) / n;
  require(std::abs(p_copy - 0.85) < 0.01, "copy-rule probability " + fmt(p_copy));
  require(std::abs(p_label - 0.85) < 0.01, "label-rule probability " + fmt(p_label));
}

// ---- criterion 11: beta sensitivity ----------------------------------------------------

void criterion_beta_sensitivity() {
  DatasetTable data = gen_synthetic_fourclass(1000, 55);
  TransferSplit split = make_transfer_split(data, FeatureCounts{6, 6, 6}, 2);
  DatasetTable train = split.pretrain, val = split.validation;
  preprocess(train, {&val});

  for (double beta : {0.0, 0.1, 1.0, 10.0}) {
    TrainConfig config;
    config.token_dim = 8;
    config.model.kind = ModelKind::transformer;
    config.model.transformer.layer_count = 1;
    config.model.transformer.head_count = 2;
    config.batch_size = 256;
    config.pretrain_epochs = 10;
    config.beta = beta;
    config.seed = 71;
    Checkpoint chk = pretrain(train, val, config);
    const auto outputs = predict_outputs(chk, val);
    for (double v : outputs)
      require(std::isfinite(v), "divergence at beta " + fmt(beta));
  }

  // beta = 0 reduces the objective to the bare task loss exactly.
  RngStream rng(5);
  Tensor logits = Tensor::constant({6, 4}, random_values(24, rng, -1, 1));
  Tensor tokens = Tensor::constant({6, 3}, random_values(18, rng));
  std::vector<int> labels = {0, 1, 2, 3, 0, 1};
  const double bare = task_loss(logits, TaskKind::multiclass, labels, {}).item();
  const double objective = training_objective(logits, TaskKind::multiclass, labels, {}, tokens,
                                              labels, 0.0, CtrVariant::vanilla)
                               .item();
  require(objective == bare, "beta=0 objective differs from the task loss");
}

struct Criterion {
  int id;
  const char* title;
  void (*fn)();
};

const Criterion kCriteria[] = {
    {1, "gradient suite: primitives and architectures vs finite differences", criterion_gradients},
    {2, "capacity equivalence of tokenized linear models", criterion_capacity},
    {3, "CTR algebra: nonnegativity, translation invariance, binary variant equality",
     criterion_ctr_algebra},
    {4, "permutation laws for averaging and the transformer", criterion_permutation},
    {5, "synthetic token semantics: pairs cluster, noise collapses", criterion_token_semantics},
    {6, "synthetic transfer benefit over scratch training", criterion_transfer_benefit},
    {7, "freeze/reuse contracts and bit-exact checkpoints", criterion_freeze_reuse},
    {8, "protocol plumbing: 300 records, exact aggregates, parallel invariance",
     criterion_protocol},
    {9, "default configuration fidelity", criterion_config_fidelity},
    {10, "synthetic generator statistics vs the analytic oracle", criterion_generator_stats},
    {11, "beta sensitivity: no divergence, exact beta=0 reduction", criterion_beta_sensitivity},
};

}  // namespace

int main(int argc, char** argv) {
  int only = 0;
  if (argc > 1) only = std::atoi(argv[1]);

  int failures = 0;
  for (const auto& criterion : kCriteria) {
    if (only != 0 && criterion.id != only) continue;
    const auto start = std::chrono::steady_clock::now();
    try {
      criterion.fn();
      const double sec =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      std::printf("PASS criterion %2d (%6.1fs): %s\n", criterion.id, sec, criterion.title);
    } catch (const CheckFailure& f) {
      std::printf("FAIL criterion %2d: %s — %s\n", criterion.id, criterion.title,
                  f.message.c_str());
      ++failures;
    } catch (const std::exception& e) {
      std::printf("FAIL criterion %2d: %s — unexpected error: %s\n", criterion.id, criterion.title,
                  e.what());
      ++failures;
    }
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
