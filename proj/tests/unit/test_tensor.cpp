#include <doctest.h>

#include <cmath>
#include <numeric>

#include "oracles.hpp"
#include "wf/ops.hpp"

using namespace wf;

TEST_CASE("tensor construction and shape checks") {
  CHECK_THROWS_AS(Tensor({2, 0}), DimensionError);
  CHECK_THROWS_AS(Tensor({2, 2}, std::vector<double>{1, 2, 3}), DimensionError);
  Tensor t({2, 3}, 1.5);
  CHECK(t.size() == 6);
  CHECK(numel(t.shape()) == t.size());
  CHECK(t.reshaped({3, 2}).shape() == Shape{3, 2});
  CHECK_THROWS_AS(t.reshaped({4, 2}), DimensionError);
  CHECK(Tensor().rank() == 0);
  CHECK(Tensor().item() == 0.0);
}

TEST_CASE("matmul") {
  Rng rng(1);
  Tensor b = Tensor::randn({2, 3}, rng);
  CHECK(ops::matmul(Tensor::matrix({{1, 0}, {0, 1}}), b) == b);
  CHECK(ops::matmul(Tensor::matrix({{1, 2}, {3, 4}}), Tensor::matrix({{1}, {1}})) == Tensor::matrix({{3}, {7}}));

  Tensor x = Tensor::randn({5, 4}, rng), y = Tensor::randn({4, 3}, rng);
  CHECK(max_abs_diff(ops::matmul(x, y), oracle::matmul(x, y)) < 1e-12);
  CHECK(max_abs_diff(ops::matmul_tn(x, x), oracle::matmul(oracle::transpose(x), x)) < 1e-12);
  CHECK(max_abs_diff(ops::matmul_nt(y, y), oracle::matmul(y, oracle::transpose(y))) < 1e-12);

  try {
    ops::matmul(x, x);
    FAIL("expected a dimension error");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[5, 4]") != std::string::npos);
  }
}

TEST_CASE("matmul is associative at unit scale") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    Tensor a = Tensor::randn({6, 5}, rng), b = Tensor::randn({5, 7}, rng), c = Tensor::randn({7, 4}, rng);
    CHECK(max_abs_diff(ops::matmul(ops::matmul(a, b), c), ops::matmul(a, ops::matmul(b, c))) < 1e-8);
  }
}

TEST_CASE("softmax") {
  const Tensor u = ops::softmax(Tensor::vector({0, 0, 0}), 0);
  for (double v : u.data()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  const Tensor big = ops::softmax(Tensor::vector({1000, 1000}), 0);
  CHECK(big[0] == 0.5);
  CHECK(big[1] == 0.5);
  CHECK_THROWS_AS(ops::softmax(Tensor({2, 3}), 2), DimensionError);

  Rng rng(3);
  const Tensor x = Tensor::randn({7}, rng, 3.0);
  const Tensor s = ops::softmax(x, 0);
  long double z = 0;
  for (double v : x.data()) z += std::exp(static_cast<long double>(v));
  for (std::size_t i = 0; i < 7; ++i) {
    CHECK(std::abs(s[i] - static_cast<double>(std::exp(static_cast<long double>(x[i])) / z)) < 1e-12);
  }
}

TEST_CASE("softmax rows are stochastic and shift invariant") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    Tensor x = Tensor::randn({4, 9}, rng, 4.0);
    for (std::size_t axis : {0u, 1u}) {
      const Tensor s = ops::softmax(x, axis);
      const std::size_t outer = axis == 1 ? 4 : 9, inner = axis == 1 ? 9 : 4;
      for (std::size_t i = 0; i < outer; ++i) {
        double sum = 0.0;
        for (std::size_t j = 0; j < inner; ++j) {
          const double v = axis == 1 ? s.at(i, j) : s.at(j, i);
          CHECK(v > 0.0);
          CHECK(v < 1.0);
          sum += v;
        }
        CHECK(std::abs(sum - 1.0) < 1e-12);
      }
      Tensor shifted = x;
      for (double& v : shifted.data()) v += 17.25;
      CHECK(max_abs_diff(ops::softmax(shifted, axis), s) < 1e-12);
    }
  }
}

TEST_CASE("global average pool") {
  CHECK(ops::global_avg_pool(Tensor({3, 2}, 4.0)) == Tensor({2}, 4.0));
  CHECK(ops::global_avg_pool(Tensor::matrix({{1, 3}, {3, 1}})) == Tensor::vector({2, 2}));
  Rng rng(4);
  Tensor x = Tensor::randn({9, 4}, rng);
  CHECK(max_abs_diff(ops::global_avg_pool(x), oracle::column_mean(x)) < 1e-12);
  // Zero-length sequences cannot be represented.
  CHECK_THROWS_AS(Tensor({0, 4}), DimensionError);
}

TEST_CASE("adaptive average pool") {
  CHECK(ops::adaptive_avg_pool(Tensor({1, 4, 4}, 2.5), 2, 2) == Tensor({1, 2, 2}, 2.5));
  Rng rng(5);
  Tensor x = Tensor::randn({2, 5, 7}, rng);
  CHECK(ops::adaptive_avg_pool(x, 5, 7) == x);
  Tensor y = Tensor::randn({3, 6, 6}, rng);
  CHECK(max_abs_diff(ops::adaptive_avg_pool(y, 3, 3), oracle::adaptive_pool(y, 3, 3)) < 1e-12);
  Tensor z = Tensor::randn({2, 7, 5}, rng);
  CHECK(max_abs_diff(ops::adaptive_avg_pool(z, 3, 2), oracle::adaptive_pool(z, 3, 2)) < 1e-12);
  CHECK_THROWS_AS(ops::adaptive_avg_pool(y, 7, 3), DomainError);
  CHECK_THROWS_AS(ops::adaptive_avg_pool(y, 0, 3), DomainError);
}

TEST_CASE("adaptive average pool preserves the mean on exact partitions") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    Tensor x = Tensor::randn({2, 12, 8}, rng);
    for (auto [h, w] : {std::pair<std::size_t, std::size_t>{6, 4}, {3, 2}, {1, 1}, {12, 8}, {4, 8}}) {
      const Tensor p = ops::adaptive_avg_pool(x, h, w);
      const double a = std::accumulate(x.data().begin(), x.data().end(), 0.0) / static_cast<double>(x.size());
      const double b = std::accumulate(p.data().begin(), p.data().end(), 0.0) / static_cast<double>(p.size());
      CHECK(std::abs(a - b) < 1e-10);
    }
  }
}

TEST_CASE("depthwise convolution") {
  Rng rng(6);
  Tensor x = Tensor::randn({3, 5, 6}, rng);
  Tensor delta({3, 3, 3});
  for (std::size_t c = 0; c < 3; ++c) delta.at(c, 1, 1) = 1.0;
  CHECK(ops::depthwise_conv2d(x, delta) == x);

  const Tensor box = ops::depthwise_conv2d(Tensor({1, 5, 5}, 1.0), Tensor({1, 3, 3}, 1.0));
  for (std::size_t i = 1; i < 4; ++i)
    for (std::size_t j = 1; j < 4; ++j) CHECK(box.at(0, i, j) == 9.0);
  CHECK(box.at(0, 0, 0) == 4.0);

  Tensor a = Tensor::randn({2, 5, 5}, rng), k = Tensor::randn({2, 3, 3}, rng);
  CHECK(max_abs_diff(ops::depthwise_conv2d(a, k), oracle::depthwise_conv(a, k)) < 1e-12);
  Tensor k5 = Tensor::randn({2, 5, 5}, rng);
  CHECK(max_abs_diff(ops::depthwise_conv2d(a, k5), oracle::depthwise_conv(a, k5)) < 1e-12);

  CHECK_THROWS_AS(ops::depthwise_conv2d(a, Tensor({2, 2, 2})), ConfigError);
  CHECK_THROWS_AS(ops::depthwise_conv2d(a, Tensor({3, 3, 3})), DimensionError);
}

TEST_CASE("depthwise convolution keeps channels separate") {
  Rng rng(7);
  Tensor x = Tensor::randn({3, 6, 6}, rng), k = Tensor::randn({3, 3, 3}, rng);
  Tensor y = ops::depthwise_conv2d(x, k);
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = 0; j < 6; ++j) x.at(1, i, j) += 5.0;
  Tensor y2 = ops::depthwise_conv2d(x, k);
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = 0; j < 6; ++j) {
      CHECK(y.at(0, i, j) == y2.at(0, i, j));
      CHECK(y.at(2, i, j) == y2.at(2, i, j));
    }
}

TEST_CASE("dense convolution") {
  Rng rng(8);
  Tensor x = Tensor::randn({3, 5, 4}, rng), w = Tensor::randn({2, 3, 3, 3}, rng), b = Tensor::randn({2}, rng);
  CHECK(max_abs_diff(ops::conv2d(x, w, b), oracle::conv(x, w, b)) < 1e-12);
  CHECK_THROWS_AS(ops::conv2d(x, Tensor({2, 3, 2, 2}), b), ConfigError);
}

TEST_CASE("activations") {
  CHECK(ops::activation(Activation::silu, Tensor::scalar(0.0)).item() == 0.0);
  CHECK(ops::activation(Activation::sigmoid, Tensor::scalar(0.0)).item() == 0.5);
  Tensor grid({61});
  for (std::size_t i = 0; i < 61; ++i) grid[i] = -3.0 + 0.1 * static_cast<double>(i);
  CHECK(max_abs_diff(ops::activation(Activation::gelu, grid), oracle::map(grid, oracle::gelu)) < 1e-6);
  CHECK(max_abs_diff(ops::activation(Activation::silu, grid), oracle::map(grid, oracle::silu)) < 1e-14);
  const Tensor rows = ops::activation(Activation::softmax_row, Tensor::matrix({{0, 0}, {1000, 1000}}));
  CHECK(rows == Tensor::matrix({{0.5, 0.5}, {0.5, 0.5}}));
  CHECK_THROWS_AS(parse_activation("tanh"), ConfigError);
  for (auto a : {Activation::silu, Activation::gelu, Activation::sigmoid, Activation::softmax_row}) {
    CHECK(parse_activation(activation_name(a)) == a);
  }
}

TEST_CASE("layer norm") {
  const Tensor g({2}, 1.0), b = Tensor::vector({0.3, -0.7});
  const Tensor flat = ops::layer_norm(Tensor::matrix({{1, 1}}), g, b);
  CHECK(flat.at(0, 0) == doctest::Approx(0.3));
  CHECK(flat.at(0, 1) == doctest::Approx(-0.7));
  const Tensor pair = ops::layer_norm(Tensor::matrix({{0, 2}}), g, Tensor({2}));
  CHECK(std::abs(pair.at(0, 0) + 1.0) < 1e-3);
  CHECK(std::abs(pair.at(0, 1) - 1.0) < 1e-3);

  Rng rng(9);
  Tensor x = Tensor::randn({4, 8}, rng, 3.0);
  const Tensor y = ops::layer_norm(x, Tensor({8}, 1.0), Tensor({8}));
  for (std::size_t i = 0; i < 4; ++i) {
    double mean = 0.0, var = 0.0;
    for (std::size_t c = 0; c < 8; ++c) mean += y.at(i, c) / 8.0;
    for (std::size_t c = 0; c < 8; ++c) var += (y.at(i, c) - mean) * (y.at(i, c) - mean) / 8.0;
    CHECK(std::abs(mean) < 1e-6);
    CHECK(std::abs(var - 1.0) < 1e-6);
  }
  Tensor gr = Tensor::randn({8}, rng), br = Tensor::randn({8}, rng);
  CHECK(max_abs_diff(ops::layer_norm(x, gr, br), oracle::layer_norm(x, gr, br)) < 1e-12);
  CHECK_THROWS_AS(ops::layer_norm(x, Tensor({7}), Tensor({7})), DimensionError);
}

TEST_CASE("token and map views round trip") {
  Rng rng(10);
  Tensor x = Tensor::randn({12, 5}, rng);
  const Tensor m = ops::tokens_to_map(x, {3, 4});
  CHECK(m == oracle::to_map(x, 3, 4));
  CHECK(ops::map_to_tokens(m) == x);
  CHECK_THROWS_AS(ops::tokens_to_map(x, {3, 3}), DimensionError);

  Tensor img = Tensor::randn({2, 6, 4}, rng);
  const Tensor p = ops::patchify(img, 2);
  CHECK(p.shape() == Shape{6, 8});
  CHECK(p.at(0, 0) == img.at(0, 0, 0));
  CHECK(p.at(0, 3) == img.at(0, 1, 1));
  CHECK(p.at(0, 4) == img.at(1, 0, 0));
  CHECK(p.at(1, 0) == img.at(0, 0, 2));
  CHECK(ops::unpatchify(p, img.shape(), 2) == img);
  CHECK_THROWS_AS(ops::patchify(img, 4), ConfigError);
}

TEST_CASE("non-finite forward values are errors") {
  Tensor x = Tensor::vector({1.0, std::numeric_limits<double>::infinity()});
  CHECK_THROWS_AS(ops::activation(Activation::silu, x), EvaluationError);
  CHECK_THROWS_AS(ops::matmul(Tensor::matrix({{1e200}}), Tensor::matrix({{1e200}})), EvaluationError);
}
