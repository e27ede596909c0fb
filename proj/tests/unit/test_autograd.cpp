#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "wf/autograd.hpp"

using namespace wf;

TEST_CASE("backward of elementary losses") {
  Rng rng(1);
  const Tensor xv = Tensor::randn({3, 4}, rng);
  {
    Tape tape;
    Var x = tape.leaf(xv);
    const Gradients g = tape.backward(ag::sum(x));
    CHECK(g[x] == Tensor({3, 4}, 1.0));
  }
  {
    Tape tape;
    Var x = tape.leaf(xv);
    const Gradients g = tape.backward(ag::sum(ag::mul(x, x)));
    Tensor twice = xv;
    twice *= 2.0;
    CHECK(max_abs_diff(g[x], twice) < 1e-15);
  }
}

TEST_CASE("unused leaves get zero gradient") {
  Tape tape;
  Var x = tape.leaf(Tensor::vector({1, 2}));
  Var unused = tape.leaf(Tensor::vector({3, 4, 5}));
  const Gradients g = tape.backward(ag::sum(x));
  CHECK(g[unused] == Tensor({3}));
}

TEST_CASE("non-scalar loss is rejected") {
  Tape tape;
  Var x = tape.leaf(Tensor::vector({1, 2}));
  CHECK_THROWS_AS(tape.backward(ag::scale(x, 2.0)), DomainError);
}

TEST_CASE("gradients accumulate across uses") {
  Tape tape;
  Var x = tape.leaf(Tensor::vector({1.5, -2.0}));
  Var y = ag::add(ag::scale(x, 3.0), ag::mul(x, x));
  const Gradients g = tape.backward(ag::sum(ag::add(y, x)));
  CHECK(g[x][0] == doctest::Approx(3.0 + 3.0 + 1.0));
  CHECK(g[x][1] == doctest::Approx(3.0 - 4.0 + 1.0));
}

TEST_CASE("backward visits ops in reverse execution order") {
  Tape tape;
  Var x = tape.leaf(Tensor::vector({0.1, 0.2, 0.3}));
  Var a = ag::activation(Activation::silu, x);
  Var b = ag::mul(a, x);
  Var c = ag::scale(b, 2.0);
  Var loss = ag::sum(ag::add(c, a));
  std::vector<std::size_t> order;
  tape.backward(loss, &order);
  CHECK(std::is_sorted(order.rbegin(), order.rend()));
  CHECK(order.front() == loss.id);
  CHECK(std::find(order.begin(), order.end(), a.id) != order.end());
}

TEST_CASE("parameters bind once per address") {
  Tensor w = Tensor::vector({1, 2});
  Tape tape;
  Var a = tape.param(w), b = tape.param(w);
  CHECK(a.id == b.id);
  const Gradients g = tape.backward(ag::sum(ag::mul(a, b)));
  CHECK(g.has_param(w));
  CHECK(g.param(w) == Tensor::vector({2, 4}));
}

TEST_CASE("a non-recording tape keeps values only") {
  Tape tape(false);
  Var x = tape.leaf(Tensor::vector({1, 2}));
  Var y = ag::scale(x, 3.0);
  CHECK(y.value() == Tensor::vector({3, 6}));
  CHECK_FALSE(tape.recording());
}

TEST_CASE("finite differences") {
  const Tensor g = finite_diff_grad([](const Tensor& x) { return x[0] * x[0]; }, Tensor::vector({3.0}), 1e-4);
  CHECK(std::abs(g[0] - 6.0) < 1e-6);
  CHECK(finite_diff_grad([](const Tensor&) { return 4.0; }, Tensor::vector({1, 2, 3})) == Tensor({3}));
  CHECK_THROWS_AS(finite_diff_grad([](const Tensor&) { return std::nan(""); }, Tensor::vector({1})),
                  EvaluationError);
  CHECK_THROWS_AS(finite_diff_grad([](const Tensor& x) { return x[0]; }, Tensor::vector({1}), 0.0), DomainError);
}

TEST_CASE("softmax cross-entropy gradient is p - y") {
  Rng rng(2);
  const Tensor logits = Tensor::randn({3}, rng);
  const std::size_t label = 1;
  auto ce = [&](const Tensor& z) {
    Tape t(false);
    return ag::cross_entropy(t.constant(z), label).value().item();
  };
  const Tensor numeric = finite_diff_grad(ce, logits);
  double z = 0.0;
  for (double v : logits.data()) z += std::exp(v);
  for (std::size_t i = 0; i < 3; ++i) {
    const double expected = std::exp(logits[i]) / z - (i == label ? 1.0 : 0.0);
    CHECK(std::abs(numeric[i] - expected) < 1e-5);
  }
  Tape tape;
  Var x = tape.leaf(logits);
  const Tensor analytic = tape.backward(ag::cross_entropy(x, label))[x];
  CHECK(max_abs_diff(analytic, numeric) < 1e-8);
  CHECK_THROWS_AS(ag::cross_entropy(x, 3), DomainError);
}
