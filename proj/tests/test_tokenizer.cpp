#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "fd_check.hpp"
#include "tabtoken/checkpoint.hpp"
#include "tabtoken/optim.hpp"
#include "tabtoken/tokenizer.hpp"

using namespace tabtoken;
using tabtoken::testing::random_values;

namespace {

DatasetTable tiny_table() {
  DatasetTable t;
  t.schema = {{"num", FeatureKind::numerical, {}},
              {"cat", FeatureKind::categorical, {"a", "b", "c"}}};
  t.num_cols = {{2.0, 0.0, -1.5, 1.0}, {}};
  t.cat_cols = {{}, {0, 2, 1, 2}};
  t.task = TaskKind::binary;
  t.n_classes = 2;
  t.class_names = {"0", "1"};
  t.class_labels = {0, 1, 0, 1};
  return t;
}

}  // namespace

TEST_CASE("token row counts follow the schema") {
  DatasetTable t = tiny_table();
  TokenizerParams params = init_tokenizer(t.schema, 2, 0);
  REQUIRE(params.tokens.size() == 2);
  CHECK(params.tokens[0].shape() == Shape{2});
  CHECK(params.tokens[1].shape() == Shape{3, 2});
  CHECK(params.total_token_rows() == 4);

  TokenizerParams wide = init_tokenizer(t.schema, 64, 0);
  CHECK(wide.tokens[0].numel() == 64);
  CHECK(wide.tokens[1].dim(1) == 64);
}

TEST_CASE("initialization is deterministic per seed and bounded") {
  DatasetTable t = tiny_table();
  TokenizerParams a = init_tokenizer(t.schema, 8, 5);
  TokenizerParams b = init_tokenizer(t.schema, 8, 5);
  TokenizerParams c = init_tokenizer(t.schema, 8, 6);
  bool all_equal = true, any_diff = false;
  const double bound = std::sqrt(6.0 / 8.0);
  for (std::size_t j = 0; j < a.tokens.size(); ++j)
    for (std::size_t i = 0; i < a.tokens[j].numel(); ++i) {
      all_equal = all_equal && a.tokens[j].data()[i] == b.tokens[j].data()[i];
      any_diff = any_diff || a.tokens[j].data()[i] != c.tokens[j].data()[i];
      CHECK(std::abs(a.tokens[j].data()[i]) <= bound);
    }
  CHECK(all_equal);
  CHECK(any_diff);
}

TEST_CASE("numerical tokens scale the feature vector") {
  DatasetTable t = tiny_table();
  TokenizerParams params = init_tokenizer(t.schema, 2, 0);
  auto e = params.tokens[0].data();
  e[0] = 0.5;
  e[1] = -1.0;

  Tensor tokens = tokenize_batch(params, t, {0});
  CHECK(tokens.shape() == Shape{1, 2, 2});
  CHECK(tokens.data()[0] == 1.0);   // 2.0 * 0.5
  CHECK(tokens.data()[1] == -2.0);  // 2.0 * -1.0

  Tensor zero = tokenize_batch(params, t, {1});
  CHECK(zero.data()[0] == 0.0);
  CHECK(zero.data()[1] == 0.0);
}

TEST_CASE("categorical tokens are a row lookup") {
  DatasetTable t = tiny_table();
  TokenizerParams params = init_tokenizer(t.schema, 2, 0);
  auto e = params.tokens[1].data();
  const std::vector<double> rows = {1, 0, 0, 1, 2, 2};
  std::copy(rows.begin(), rows.end(), e.begin());

  Tensor tokens = tokenize_batch(params, t, {1});  // category index 2
  CHECK(tokens.data()[2] == 2.0);
  CHECK(tokens.data()[3] == 2.0);
}

TEST_CASE("batch tokenization shapes and gradient sparsity") {
  DatasetTable t = tiny_table();
  TokenizerParams params = init_tokenizer(t.schema, 2, 1);
  Tensor tokens = tokenize_batch(params, t);
  CHECK(tokens.shape() == Shape{4, 2, 2});

  sum_all(mul(tokens, tokens)).backward();
  // Category "b" (row 1) appears in the batch; every category used gets
  // gradient, unused rows stay zero.
  DatasetTable one = tiny_table();
  one.cat_cols[1] = {0, 0, 0, 0};
  TokenizerParams p2 = init_tokenizer(t.schema, 2, 1);
  Tensor tk = tokenize_batch(p2, one);
  sum_all(mul(tk, tk)).backward();
  CHECK(p2.tokens[1].grad()[0] != 0.0);
  CHECK(p2.tokens[1].grad()[2] == 0.0);  // row 1 unused
  CHECK(p2.tokens[1].grad()[4] == 0.0);  // row 2 unused
}

TEST_CASE("tokenization is linear in numerical inputs") {
  DatasetTable t = tiny_table();
  TokenizerParams params = init_tokenizer(t.schema, 4, 2);
  DatasetTable scaled = t;
  for (double& v : scaled.num_cols[0]) v *= 3.0;
  Tensor base = tokenize_batch(params, t);
  Tensor big = tokenize_batch(params, scaled);
  for (std::size_t b = 0; b < 4; ++b)
    for (std::size_t c = 0; c < 4; ++c)
      CHECK(big.data()[(b * 2 + 0) * 4 + c] ==
            doctest::Approx(3.0 * base.data()[(b * 2 + 0) * 4 + c]).epsilon(1e-12));
}

TEST_CASE("missing cells and bad category indices fail fast") {
  DatasetTable t = tiny_table();
  TokenizerParams params = init_tokenizer(t.schema, 2, 0);
  DatasetTable with_nan = t;
  with_nan.num_cols[0][2] = std::nan("");
  CHECK_THROWS_AS(tokenize_batch(params, with_nan), std::invalid_argument);
  DatasetTable bad_cat = t;
  bad_cat.cat_cols[1][0] = 7;
  CHECK_THROWS_AS(tokenize_batch(params, bad_cat), std::out_of_range);
}

TEST_CASE("frozen token rows survive a training step bit-identically") {
  DatasetTable t = tiny_table();
  TokenizerParams params = init_tokenizer(t.schema, 2, 3);
  params.tokens[1].set_row_frozen(1, true);
  const std::vector<double> before(params.tokens[1].data().begin(),
                                   params.tokens[1].data().end());

  AdamWConfig config;
  config.weight_decay = 0.1;
  AdamW opt(params.parameters(), config);
  for (int step = 0; step < 3; ++step) {
    opt.zero_grad();
    Tensor tokens = tokenize_batch(params, t);
    sum_all(mul(tokens, tokens)).backward();
    opt.step();
  }
  auto after = params.tokens[1].data();
  CHECK(after[2] == before[2]);
  CHECK(after[3] == before[3]);
  CHECK(after[0] != before[0]);
}

TEST_CASE("a tokenized numerical feature cannot beat the raw linear model") {
  // Fit a linear head on tokens, then collapse it onto the raw feature and
  // compare predictions on held-out points.
  const std::size_t k = 6;
  RngStream rng(17);
  std::vector<FeatureSpec> schema = {{"x", FeatureKind::numerical, {}}};
  TokenizerParams params = init_tokenizer(schema, k, 7);

  Tensor w = Tensor::param({k, 1}, random_values(k, rng));
  // Fit w on a small regression problem over tokenized x.
  AdamWConfig oc;
  oc.learning_rate = 0.05;
  oc.weight_decay = 0.0;
  AdamW opt({w}, oc);
  DatasetTable train;
  train.schema = schema;
  train.num_cols.resize(1);
  train.cat_cols.resize(1);
  train.task = TaskKind::regression;
  for (int i = 0; i < 32; ++i) {
    const double x = rng.uniform(-2, 2);
    train.num_cols[0].push_back(x);
    train.targets.push_back(1.7 * x);
  }
  for (int step = 0; step < 60; ++step) {
    opt.zero_grad();
    Tensor tokens = tokenize_batch(params, train);
    Tensor flat = reshape(tokens, {train.n_rows(), k});
    Tensor pred = matmul(flat, w);
    mse(reshape(pred, {train.n_rows()}), train.targets).backward();
    opt.step();
  }

  // Collapsed scalar weight w' = E . w
  double w_prime = 0.0;
  for (std::size_t c = 0; c < k; ++c) w_prime += params.tokens[0].data()[c] * w.data()[c];

  for (int i = 0; i < 100; ++i) {
    const double x = rng.uniform(-5, 5);
    DatasetTable point;
    point.schema = schema;
    point.num_cols = {{x}};
    point.cat_cols.resize(1);
    point.task = TaskKind::regression;
    point.targets = {0.0};
    Tensor tok = tokenize_batch(params, point);
    Tensor pred = matmul(reshape(tok, {1, k}), w);
    CHECK(std::abs(pred.data()[0] - w_prime * x) < 1e-10);
  }
}

TEST_CASE("a tokenized categorical feature collapses onto one-hot weights") {
  const std::size_t k = 5, K = 4;
  RngStream rng(23);
  std::vector<FeatureSpec> schema = {{"c", FeatureKind::categorical, {"p", "q", "r", "s"}}};
  TokenizerParams params = init_tokenizer(schema, k, 11);
  Tensor eta = Tensor::param({k, 1}, random_values(k, rng));

  // eta'_p = eta . e_p for each category row.
  std::vector<double> eta_prime(K, 0.0);
  for (std::size_t p = 0; p < K; ++p)
    for (std::size_t c = 0; c < k; ++c)
      eta_prime[p] += params.tokens[0].data()[p * k + c] * eta.data()[c];

  for (int i = 0; i < 100; ++i) {
    const int cat = static_cast<int>(rng.uniform_int(K));
    DatasetTable point;
    point.schema = schema;
    point.num_cols.resize(1);
    point.cat_cols = {{cat}};
    point.task = TaskKind::regression;
    point.targets = {0.0};
    Tensor tok = tokenize_batch(params, point);
    Tensor pred = matmul(reshape(tok, {1, k}), eta);
    CHECK(std::abs(pred.data()[0] - eta_prime[static_cast<std::size_t>(cat)]) < 1e-10);
  }
}

TEST_CASE("freeze flags survive a checkpoint round trip") {
  DatasetTable t = tiny_table();
  Checkpoint chk;
  chk.task = t.task;
  chk.n_classes = t.n_classes;
  chk.class_names = t.class_names;
  chk.tokenizer = init_tokenizer(t.schema, 3, 4);
  chk.tokenizer.tokens[1].set_row_frozen(0, true);
  chk.tokenizer.tokens[1].set_row_frozen(2, true);
  chk.model_config.kind = ModelKind::linear;
  chk.model_input_dim = 3;
  chk.model_output_dim = 2;
  chk.model = make_model(chk.model_config, 3, 2, 1);
  chk.train_config.model.kind = ModelKind::linear;

  Checkpoint back = checkpoint_from_json_text(checkpoint_to_json_text(chk));
  CHECK(back.tokenizer.tokens[1].row_frozen(0));
  CHECK(!back.tokenizer.tokens[1].row_frozen(1));
  CHECK(back.tokenizer.tokens[1].row_frozen(2));
  for (std::size_t j = 0; j < 2; ++j)
    for (std::size_t i = 0; i < chk.tokenizer.tokens[j].numel(); ++i)
      CHECK(back.tokenizer.tokens[j].data()[i] == chk.tokenizer.tokens[j].data()[i]);
}
