#include <doctest.h>

#include <Eigen/Dense>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "oracles.hpp"
#include "wf/analysis.hpp"
#include "wf/dyn_linear.hpp"
#include "wf/gradcheck.hpp"

using namespace wf;

namespace {

const LinearStrategy kAll[] = {LinearStrategy::gap, LinearStrategy::linear, LinearStrategy::nonlinear,
                               LinearStrategy::deep, LinearStrategy::bilateral};

LinearDeltaSpec random_spec(LinearStrategy s, std::size_t d_in, std::size_t d_out, Rng& rng,
                            std::size_t pool = 2) {
  LinearDeltaOptions o;
  o.rank = 2;
  o.pool_factor = pool;
  o.zero_final = false;
  return make_linear_delta(s, d_in, d_out, o, rng);
}

Tensor pooled_oracle(const Tensor& x, Grid g, std::size_t f) {
  const std::size_t h = (g.height + f - 1) / f, w = (g.width + f - 1) / f;
  return oracle::to_tokens(oracle::adaptive_pool(oracle::to_map(x, g.height, g.width), h, w));
}

Tensor delta_oracle(const Tensor& x, Grid grid, const LinearDeltaSpec& s) {
  using oracle::matmul;
  using oracle::transpose;
  auto act = [](const Tensor& t) { return oracle::map(t, oracle::silu); };
  if (s.strategy == LinearStrategy::gap) {
    const Tensor z = oracle::column_mean(x).reshaped({1, s.d_in});
    const Tensor h = act(oracle::dense(z, s.mlp_w1, s.mlp_b1));
    return oracle::dense(h, s.mlp_w2, s.mlp_b2).reshaped({s.d_out, s.d_in});
  }
  const Tensor xp = pooled_oracle(x, grid, s.pool_factor);
  const Tensor corr = matmul(transpose(xp), xp);
  switch (s.strategy) {
    case LinearStrategy::linear:
      return matmul(matmul(s.w1, corr), s.w2);
    case LinearStrategy::nonlinear:
      return act(matmul(matmul(s.w1, corr), s.w2));
    case LinearStrategy::deep:
      return matmul(matmul(s.w1, act(matmul(matmul(s.w2, corr), s.w3))), s.w4);
    default:
      return matmul(matmul(s.w1, matmul(act(matmul(s.w2, transpose(xp))), act(matmul(xp, s.w3)))), s.w4);
  }
}

Tensor permute_rows(const Tensor& x, const std::vector<std::size_t>& perm) {
  Tensor y(x.shape());
  for (std::size_t i = 0; i < perm.size(); ++i)
    for (std::size_t c = 0; c < x.dim(1); ++c) y.at(i, c) = x.at(perm[i], c);
  return y;
}

}  // namespace

TEST_CASE("strategy names round trip") {
  for (auto s : kAll) CHECK(parse_linear_strategy(linear_strategy_name(s)) == s);
  CHECK(linear_strategy_name(LinearStrategy::bilateral) == "bilateral");
  CHECK_THROWS_AS(parse_linear_strategy("Bilateral"), ConfigError);
}

TEST_CASE("pooled input") {
  Rng rng(1);
  const Tensor x = Tensor::randn({12, 3}, rng);
  CHECK(pooled_input(x, {3, 4}, 1) == x);
  const Tensor pooled_const = pooled_input(Tensor({16, 2}, 1.25), {4, 4}, 2);
  CHECK(pooled_const == Tensor({4, 2}, 1.25));

  const Tensor r = Tensor::randn({16, 3}, rng);
  Tensor windows({4, 3});
  for (std::size_t bi = 0; bi < 2; ++bi)
    for (std::size_t bj = 0; bj < 2; ++bj)
      for (std::size_t c = 0; c < 3; ++c) {
        double s = 0.0;
        for (std::size_t i = 0; i < 2; ++i)
          for (std::size_t j = 0; j < 2; ++j) s += r.at((2 * bi + i) * 4 + 2 * bj + j, c);
        windows.at(bi * 2 + bj, c) = s / 4.0;
      }
  CHECK(max_abs_diff(pooled_input(r, {4, 4}, 2), windows) < 1e-12);
  CHECK(pooled_input(Tensor::randn({15, 2}, rng), {3, 5}, 2).shape() == Shape{6, 2});
  CHECK_THROWS_AS(pooled_input(x, {4, 4}, 2), DimensionError);
}

TEST_CASE("correlation") {
  const Tensor onehot = Tensor::matrix({{1, 0, 0}, {0, 1, 0}, {1, 0, 0}, {0, 0, 1}});
  CHECK(correlation(onehot) == Tensor::matrix({{2, 0, 0}, {0, 1, 0}, {0, 0, 1}}));
  CHECK(correlation(Tensor({4, 3})) == Tensor({3, 3}));

  Rng rng(2);
  const Tensor c = correlation(Tensor::randn({7, 5}, rng));
  Eigen::MatrixXd m(5, 5);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 5; ++j) {
      CHECK(std::abs(c.at(i, j) - c.at(j, i)) < 1e-12);
      m(i, j) = c.at(i, j);
    }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(m);
  CHECK(eig.eigenvalues().minCoeff() >= -1e-10);
}

TEST_CASE("each strategy matches its formula") {
  const Grid grid{4, 4};
  for (auto s : kAll) {
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      Rng rng(seed);
      const LinearDeltaSpec spec = random_spec(s, 8, 6, rng);
      const Tensor x = Tensor::randn({16, 8}, rng);
      const Tensor delta = predict_linear_delta(x, grid, spec);
      CHECK(delta.shape() == Shape{6, 8});
      CHECK(max_abs_diff(delta, delta_oracle(x, grid, spec)) < 1e-10);
    }
  }
}

TEST_CASE("zero context gives zero delta for the correlation family") {
  Rng rng(3);
  for (auto s : {LinearStrategy::linear, LinearStrategy::nonlinear, LinearStrategy::deep, LinearStrategy::bilateral}) {
    const LinearDeltaSpec spec = random_spec(s, 8, 8, rng);
    CHECK(predict_linear_delta(Tensor({16, 8}), {4, 4}, spec) == Tensor({8, 8}));
  }
}

TEST_CASE("bilateral core collapses to rank one for a single pooled token") {
  Rng rng(4);
  const LinearDeltaSpec spec = random_spec(LinearStrategy::bilateral, 6, 5, rng);
  const Tensor x = Tensor::randn({4, 6}, rng);
  const Tensor delta = predict_linear_delta(x, {2, 2}, spec);
  const Tensor mean = oracle::column_mean(x).reshaped({1, 6});
  const Tensor u = oracle::map(oracle::matmul(spec.w2, oracle::transpose(mean)), oracle::silu);
  const Tensor v = oracle::map(oracle::matmul(mean, spec.w3), oracle::silu);
  const Tensor core = oracle::matmul(u, v);
  CHECK(max_abs_diff(delta, oracle::matmul(oracle::matmul(spec.w1, core), spec.w4)) < 1e-12);
}

TEST_CASE("linear strategy is homogeneous in the context") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed);
    const LinearDeltaSpec spec = random_spec(LinearStrategy::linear, 8, 6, rng);
    const Tensor x = Tensor::randn({16, 8}, rng);
    for (double alpha : {0.25, 3.0, 11.0}) {
      Tensor xs = x;
      xs *= std::sqrt(alpha);
      Tensor expected = predict_linear_delta(x, {4, 4}, spec);
      expected *= alpha;
      const Tensor got = predict_linear_delta(xs, {4, 4}, spec);
      CHECK(max_abs_diff(got, expected) / expected.max_abs() < 1e-8);
    }
  }
}

TEST_CASE("token permutation invariance without pooling") {
  for (auto s : kAll) {
    Rng rng(5);
    const LinearDeltaSpec spec = random_spec(s, 6, 6, rng, 1);
    const Tensor x = Tensor::randn({16, 6}, rng);
    std::vector<std::size_t> perm(16);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    CHECK(max_abs_diff(predict_linear_delta(permute_rows(x, perm), {4, 4}, spec),
                       predict_linear_delta(x, {4, 4}, spec)) < 1e-10);
    if (s != LinearStrategy::gap) {
      const LinearDeltaSpec pooled = random_spec(s, 6, 6, rng, 2);
      CHECK(max_abs_diff(predict_linear_delta(permute_rows(x, perm), {4, 4}, pooled),
                         predict_linear_delta(x, {4, 4}, pooled)) > 1e-6);
    }
  }
}

TEST_CASE("zero-initialised predictors are exactly static") {
  Rng rng(6);
  for (auto s : kAll) {
    LinearDeltaOptions o;
    const LinearDeltaSpec spec = make_linear_delta(s, 8, 12, o, rng);
    const Tensor x = Tensor::randn({16, 8}, rng);
    CHECK(predict_linear_delta(x, {4, 4}, spec) == Tensor({12, 8}));
    DynamicLinearLayer layer{Tensor::randn({12, 8}, rng), Tensor::randn({12}, rng), spec};
    DynamicLinearLayer plain{layer.w0, layer.bias, std::nullopt};
    CHECK(dynamic_linear_forward(x, {4, 4}, layer) == dynamic_linear_forward(x, {4, 4}, plain));
    Tape t(false);
    CHECK(dynamic_linear_forward(x, {4, 4}, plain) ==
          ag::linear(t.constant(x), t.constant(layer.w0), t.constant(layer.bias)).value());
  }
}

TEST_CASE("dynamic linear forward") {
  Rng rng(7);
  DynamicLinearLayer layer{Tensor::randn({5, 6}, rng), Tensor::randn({5}, rng),
                           random_spec(LinearStrategy::bilateral, 6, 5, rng)};
  const Tensor y0 = dynamic_linear_forward(Tensor({12, 6}), {3, 4}, layer);
  for (std::size_t i = 0; i < 12; ++i)
    for (std::size_t j = 0; j < 5; ++j) CHECK(y0.at(i, j) == layer.bias[j]);

  const Tensor x = Tensor::randn({12, 6}, rng);
  Tensor w = layer.w0;
  w += predict_linear_delta(x, {3, 4}, *layer.delta);
  CHECK(max_abs_diff(dynamic_linear_forward(x, {3, 4}, layer), oracle::dense(x, w, layer.bias)) < 1e-12);

  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    Rng r(seed);
    Tensor xs = Tensor::randn({12, 6}, r);
    std::vector<Tensor*> params{&xs, &layer.w0, &layer.bias};
    layer.delta->visit([&](const char*, Tensor& t) { params.push_back(&t); });
    const double err = gradient_error(
        [&](Tape& t) { return ag::mean(dynamic_linear_forward(t, t.param(xs), {3, 4}, layer)); }, params, r);
    CHECK(err < 1e-4);
  }
}

TEST_CASE("inconsistent specs are configuration errors") {
  Rng rng(8);
  LinearDeltaSpec spec = random_spec(LinearStrategy::deep, 8, 6, rng);
  spec.w3 = Tensor({8, 3});
  CHECK_THROWS_AS(spec.validate(), ConfigError);
  CHECK_THROWS_AS(predict_linear_delta(Tensor({16, 8}), {4, 4}, spec), ConfigError);
  LinearDeltaSpec zero_rank = random_spec(LinearStrategy::bilateral, 8, 6, rng);
  zero_rank.rank = 0;
  CHECK_THROWS_AS(zero_rank.validate(), ConfigError);
  CHECK(make_linear_delta(LinearStrategy::deep, 16, 16, {}, rng).rank == 4);
  CHECK(make_linear_delta(LinearStrategy::deep, 3, 16, {}, rng).rank == 1);
  CHECK_THROWS_AS(predict_linear_delta(Tensor({16, 7}), {4, 4}, random_spec(LinearStrategy::linear, 8, 6, rng)),
                  DimensionError);
}

TEST_CASE("predictor wall time grows at most linearly in tokens") {
  const std::vector<std::size_t> sizes{256, 1024, 4096, 16384};
  for (auto s : kAll) {
    Rng rng(9);
    const LinearDeltaSpec spec = random_spec(s, 32, 32, rng);
    std::vector<double> n, ms;
    for (std::size_t tokens : sizes) {
      const Grid g = grid_for_tokens(tokens);
      const Tensor x = Tensor::randn({tokens, 32}, rng);
      std::vector<double> samples;
      for (int rep = 0; rep < 5; ++rep) {
        const auto t0 = std::chrono::steady_clock::now();
        for (int i = 0; i < 3; ++i) predict_linear_delta(x, g, spec);
        samples.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
      }
      std::nth_element(samples.begin(), samples.begin() + 2, samples.end());
      n.push_back(static_cast<double>(tokens));
      ms.push_back(samples[2]);
    }
    INFO(linear_strategy_name(s));
    CHECK(loglog_slope(n, ms) <= 1.15);
  }
}
