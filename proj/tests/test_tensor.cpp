#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "fd_check.hpp"
#include "tabtoken/tensor.hpp"

using namespace tabtoken;
using tabtoken::testing::fd_max_rel_error;
using tabtoken::testing::random_values;

TEST_CASE("sum backward is the identity Jacobian") {
  Tensor x = Tensor::param({3}, {1, 2, 3});
  Tensor root = sum_all(x);
  root.backward();
  CHECK(root.item() == 6.0);
  for (double g : x.grad()) CHECK(g == 1.0);
}

TEST_CASE("mean of relu gates the gradient") {
  Tensor x = Tensor::param({2}, {-1.0, 2.0});
  Tensor root = mean_all(relu(x));
  root.backward();
  CHECK(x.grad()[0] == 0.0);
  CHECK(x.grad()[1] == 0.5);
}

TEST_CASE("matmul gradients match finite differences") {
  RngStream rng(7);
  Tensor a = Tensor::param({3, 3}, random_values(9, rng));
  Tensor b = Tensor::param({3, 3}, random_values(9, rng));
  auto build = [&] {
    Tensor c = matmul(a, b);
    return sum_all(mul(c, c));  // squared Frobenius norm
  };
  CHECK(fd_max_rel_error({a, b}, build) < 1e-6);
}

TEST_CASE("backward requires a scalar root") {
  Tensor x = Tensor::param({2, 2}, {1, 2, 3, 4});
  Tensor y = relu(x);
  CHECK_THROWS_AS(y.backward(), std::logic_error);
}

TEST_CASE("repeated backward accumulates additively") {
  RngStream rng(3);
  Tensor x = Tensor::param({4}, random_values(4, rng));
  Tensor loss = sum_all(mul(x, x));
  loss.backward();
  std::vector<double> once(x.grad().begin(), x.grad().end());
  loss.backward();
  for (std::size_t i = 0; i < once.size(); ++i) CHECK(x.grad()[i] == 2.0 * once[i]);
}

TEST_CASE("gradient accumulation composes across separate graphs") {
  Tensor x = Tensor::param({2}, {1.0, 2.0});
  sum_all(x).backward();
  sum_all(mul(x, x)).backward();
  CHECK(x.grad()[0] == doctest::Approx(1.0 + 2.0).epsilon(1e-15));
  CHECK(x.grad()[1] == doctest::Approx(1.0 + 4.0).epsilon(1e-15));
}

TEST_CASE("every primitive matches finite differences on random inputs") {
  RngStream rng(11);
  const double tol = 1e-4;

  auto away_from_zero = [&](std::size_t n) {
    std::vector<double> v(n);
    for (double& x : v) {
      x = rng.uniform(-1.0, 1.0);
      if (std::abs(x) < 1e-3) x += x >= 0 ? 0.5 : -0.5;
    }
    return v;
  };

  SUBCASE("add/sub/mul/scale") {
    Tensor a = Tensor::param({2, 3}, random_values(6, rng));
    Tensor b = Tensor::param({2, 3}, random_values(6, rng));
    CHECK(fd_max_rel_error({a, b}, [&] { return sum_all(mul(add(a, b), sub(a, b))); }) < tol);
    CHECK(fd_max_rel_error({a}, [&] { return sum_all(scale(mul(a, a), -1.7)); }) < tol);
  }
  SUBCASE("row and column broadcasts") {
    Tensor a = Tensor::param({3, 4}, random_values(12, rng));
    Tensor v = Tensor::param({4}, random_values(4, rng));
    Tensor u = Tensor::param({3}, random_values(3, rng));
    CHECK(fd_max_rel_error({a, v}, [&] { return sum_all(mul(add_rowvec(a, v), sub_rowvec(a, v))); }) < tol);
    CHECK(fd_max_rel_error({a, v}, [&] { return sum_all(mul(mul_rowvec(a, v), mul_rowvec(a, v))); }) < tol);
    CHECK(fd_max_rel_error({a, u}, [&] { return sum_all(mul(sub_colvec(a, u), mul_colvec(a, u))); }) < tol);
  }
  SUBCASE("bmm and transposed bmm") {
    Tensor a = Tensor::param({2, 3, 4}, random_values(24, rng));
    Tensor b = Tensor::param({2, 4, 3}, random_values(24, rng));
    CHECK(fd_max_rel_error({a, b}, [&] { return sum_all(mul(bmm(a, b), bmm(a, b))); }) < tol);
    Tensor c = Tensor::param({2, 5, 4}, random_values(40, rng));
    CHECK(fd_max_rel_error({a, c}, [&] {
            Tensor s = bmm(a, c, true);
            return sum_all(mul(s, s));
          }) < tol);
  }
  SUBCASE("relu away from the kink") {
    Tensor a = Tensor::param({3, 3}, away_from_zero(9));
    CHECK(fd_max_rel_error({a}, [&] { return sum_all(mul(relu(a), relu(a))); }) < tol);
  }
  SUBCASE("reglu") {
    Tensor a = Tensor::param({3, 6}, away_from_zero(18));
    CHECK(fd_max_rel_error({a}, [&] { return sum_all(mul(reglu(a), reglu(a))); }) < tol);
  }
  SUBCASE("softmax") {
    Tensor a = Tensor::param({3, 4}, random_values(12, rng, -2.0, 2.0));
    Tensor w = Tensor::constant({3, 4}, random_values(12, rng));
    CHECK(fd_max_rel_error({a}, [&] { return sum_all(mul(softmax_lastdim(a), w)); }) < tol);
  }
  SUBCASE("rsqrt_shift") {
    Tensor a = Tensor::param({5}, random_values(5, rng, 0.5, 2.0));
    CHECK(fd_max_rel_error({a}, [&] { return sum_all(rsqrt_shift(a, 1e-5)); }) < tol);
  }
  SUBCASE("reductions") {
    Tensor a = Tensor::param({3, 4}, random_values(12, rng));
    CHECK(fd_max_rel_error({a}, [&] { return sum_all(mul(mean_axis0(a), mean_axis0(a))); }) < tol);
    CHECK(fd_max_rel_error({a}, [&] { return sum_all(mul(mean_lastdim(a), mean_lastdim(a))); }) < tol);
    Tensor t = Tensor::param({2, 3, 4}, random_values(24, rng));
    CHECK(fd_max_rel_error({t}, [&] { return sum_all(mul(mean_axis1(t), mean_axis1(t))); }) < tol);
    CHECK(fd_max_rel_error({a}, [&] { return mean_all(mul(a, a)); }) < tol);
  }
  SUBCASE("structure ops") {
    Tensor a = Tensor::param({4, 3}, random_values(12, rng));
    CHECK(fd_max_rel_error({a}, [&] {
            Tensor r = reshape(a, {2, 6});
            return sum_all(mul(r, r));
          }) < tol);
    CHECK(fd_max_rel_error({a}, [&] {
            Tensor s = slice_rows(a, 1, 3);
            return sum_all(mul(s, s));
          }) < tol);
    Tensor b = Tensor::param({2, 3}, random_values(6, rng));
    CHECK(fd_max_rel_error({a, b}, [&] {
            Tensor c = concat_rows(a, b);
            return sum_all(mul(c, c));
          }) < tol);
    Tensor p0 = Tensor::param({2, 3}, random_values(6, rng));
    Tensor p1 = Tensor::param({2, 3}, random_values(6, rng));
    CHECK(fd_max_rel_error({p0, p1}, [&] {
            Tensor s = stack_axis1({p0, p1});
            return sum_all(mul(s, s));
          }) < tol);
    Tensor h = Tensor::param({2, 3, 4}, random_values(24, rng));
    CHECK(fd_max_rel_error({h}, [&] {
            Tensor s = merge_heads(split_heads(h, 2), 2);
            return sum_all(mul(s, s));
          }) < tol);
  }
  SUBCASE("embedding lookup and outer product") {
    Tensor table = Tensor::param({4, 3}, random_values(12, rng));
    std::vector<std::size_t> idx = {2, 0, 2, 3};
    CHECK(fd_max_rel_error({table}, [&] {
            Tensor e = embed_rows(table, idx);
            return sum_all(mul(e, e));
          }) < tol);
    Tensor v = Tensor::param({3}, random_values(3, rng));
    std::vector<double> xs = {0.5, -1.25, 2.0};
    CHECK(fd_max_rel_error({v}, [&] {
            Tensor o = outer(xs, v);
            return sum_all(mul(o, o));
          }) < tol);
  }
  SUBCASE("losses") {
    Tensor logits = Tensor::param({4, 3}, random_values(12, rng, -2.0, 2.0));
    std::vector<int> labels = {0, 2, 1, 2};
    CHECK(fd_max_rel_error({logits}, [&] { return cross_entropy(logits, labels); }) < tol);
    Tensor pred = Tensor::param({5}, random_values(5, rng));
    std::vector<double> tgt = random_values(5, rng);
    CHECK(fd_max_rel_error({pred}, [&] { return mse(pred, tgt); }) < tol);
  }
}

TEST_CASE("softmax handles large logits without NaN") {
  Tensor a = Tensor::param({2, 3}, {1e3, -1e3, 0.0, 999.0, 1000.0, -500.0});
  Tensor y = softmax_lastdim(a);
  for (double v : y.data()) CHECK(std::isfinite(v));
  double row0 = y.data()[0] + y.data()[1] + y.data()[2];
  CHECK(row0 == doctest::Approx(1.0).epsilon(1e-12));
  Tensor ce = cross_entropy(a, {0, 1});
  CHECK(std::isfinite(ce.item()));
}

TEST_CASE("softmax rows sum to one") {
  RngStream rng(5);
  Tensor a = Tensor::param({6, 5}, random_values(30, rng, -3.0, 3.0));
  Tensor y = softmax_lastdim(a);
  for (std::size_t i = 0; i < 6; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < 5; ++j) s += y.data()[i * 5 + j];
    CHECK(std::abs(s - 1.0) < 1e-12);
  }
}

TEST_CASE("mean_axis1 is bitwise invariant to row permutations") {
  RngStream rng(13);
  const std::size_t B = 3, d = 5, k = 4;
  std::vector<double> base = random_values(B * d * k, rng);
  base[0] = 0.1;
  base[k] = 0.2;
  base[2 * k] = 0.3;  // adversarial rounding candidates
  Tensor t = Tensor::constant({B, d, k}, base);

  std::vector<std::size_t> perm = {4, 2, 0, 3, 1};
  std::vector<double> permuted(B * d * k);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t j = 0; j < d; ++j)
      for (std::size_t c = 0; c < k; ++c)
        permuted[(b * d + j) * k + c] = base[(b * d + perm[j]) * k + c];
  Tensor tp = Tensor::constant({B, d, k}, permuted);

  Tensor m1 = mean_axis1(t);
  Tensor m2 = mean_axis1(tp);
  for (std::size_t i = 0; i < m1.numel(); ++i) CHECK(m1.data()[i] == m2.data()[i]);
}

TEST_CASE("frozen rows receive zero gradient") {
  Tensor table = Tensor::param({3, 2}, {1, 2, 3, 4, 5, 6});
  table.set_row_frozen(1, true);
  Tensor e = embed_rows(table, {0, 1, 1, 2});
  sum_all(mul(e, e)).backward();
  CHECK(table.grad()[2] == 0.0);
  CHECK(table.grad()[3] == 0.0);
  CHECK(table.grad()[0] != 0.0);
  CHECK(table.grad()[4] != 0.0);
}

TEST_CASE("dropout masks") {
  SUBCASE("rate zero keeps everything") {
    Tensor m = dropout_mask({10}, 0.0, 42u);
    for (double v : m.data()) CHECK(v == 1.0);
  }
  SUBCASE("zero fraction concentrates around the rate") {
    Tensor m = dropout_mask({10000}, 0.5, 42u);
    std::size_t zeros = 0;
    for (double v : m.data()) {
      if (v == 0.0) ++zeros;
      else CHECK(v == doctest::Approx(2.0));
    }
    const double frac = static_cast<double>(zeros) / 10000.0;
    CHECK(frac > 0.48);
    CHECK(frac < 0.52);
  }
  SUBCASE("same seed gives identical masks") {
    Tensor a = dropout_mask({100}, 0.3, 7u);
    Tensor b = dropout_mask({100}, 0.3, 7u);
    for (std::size_t i = 0; i < 100; ++i) CHECK(a.data()[i] == b.data()[i]);
  }
  SUBCASE("rate one is rejected") {
    CHECK_THROWS_AS(dropout_mask({4}, 1.0, 0u), std::invalid_argument);
  }
}

TEST_CASE("NaN in forward values propagates") {
  Tensor a = Tensor::constant({2, 2}, {std::nan(""), 1.0, 2.0, 3.0});
  Tensor b = Tensor::constant({2, 2}, {1.0, 1.0, 1.0, 1.0});
  Tensor c = matmul(a, b);
  CHECK(std::isnan(c.data()[0]));
  CHECK(std::isnan(sum_all(c).item()));
}
