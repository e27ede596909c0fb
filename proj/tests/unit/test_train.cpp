#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include <Eigen/Dense>

#include "wf/train.hpp"

using namespace wf;
namespace fs = std::filesystem;

namespace {

RunConfig tiny_run(const std::string& out) {
  RunConfig c;
  c.seed = 5;
  c.out = out;
  c.model.depth = 3;
  c.model.width = 8;
  c.model.patch = 2;
  c.model.image_height = c.model.image_width = 8;
  c.optim.steps = 12;
  c.optim.batch = 4;
  c.optim.lr = 1e-2;
  c.task.train_samples = 32;
  c.task.test_samples = 16;
  return c;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("cosine schedule") {
  CHECK(cosine_lr(0, 100, 0, 2.0) == 2.0);
  CHECK(cosine_lr(50, 100, 0, 2.0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(cosine_lr(99, 100, 0, 2.0) == doctest::Approx(1.0 + std::cos(std::numbers::pi * 0.99)).epsilon(1e-12));
  CHECK(cosine_lr(0, 100, 10, 1.0) == doctest::Approx(0.1));
  CHECK(cosine_lr(9, 100, 10, 1.0) == 1.0);
  CHECK(cosine_lr(10, 100, 10, 1.0) == 1.0);
  double prev = 2.0;
  for (std::size_t s = 0; s < 100; ++s) {
    const double lr = cosine_lr(s, 100, 0, 2.0);
    CHECK(lr <= prev);
    CHECK(lr > 0.0);
    prev = lr;
  }
}

TEST_CASE("AdamW solves a least-squares problem") {
  Rng rng(2);
  const std::size_t m = 20, n = 5;
  const Tensor a = Tensor::randn({m, n}, rng), b = Tensor::randn({m}, rng);
  Eigen::MatrixXd am(m, n);
  Eigen::VectorXd bv(m);
  for (std::size_t i = 0; i < m; ++i) {
    bv(i) = b[i];
    for (std::size_t j = 0; j < n; ++j) am(i, j) = a.at(i, j);
  }
  const Eigen::VectorXd xs = (am.transpose() * am).ldlt().solve(am.transpose() * bv);
  const double optimum = (am * xs - bv).squaredNorm();

  Tensor x({n});
  OptimConfig cfg;
  cfg.weight_decay = 0.1;
  AdamW opt({&x}, cfg);
  const std::size_t steps = 6000;
  double loss = 0.0;
  for (std::size_t s = 0; s < steps; ++s) {
    Eigen::VectorXd xv(n);
    for (std::size_t j = 0; j < n; ++j) xv(j) = x[j];
    const Eigen::VectorXd r = am * xv - bv;
    loss = r.squaredNorm();
    const Eigen::VectorXd g = 2.0 * am.transpose() * r;
    Tensor gt({n});
    for (std::size_t j = 0; j < n; ++j) gt[j] = g(j);
    opt.step({gt}, cosine_lr(s, steps, 0, 0.05));
  }
  CHECK(opt.steps_taken() == steps);
  CHECK(loss - optimum < 1e-6);
  CHECK(loss >= optimum - 1e-12);
}

TEST_CASE("AdamW decays matrices only") {
  Tensor w = Tensor::matrix({{1.0, 2.0}}), v = Tensor::vector({1.0, 2.0});
  OptimConfig cfg;
  cfg.weight_decay = 0.5;
  AdamW opt({&w, &v}, cfg);
  opt.step({Tensor(w.shape()), Tensor(v.shape())}, 0.1);
  CHECK(w.at(0, 1) == doctest::Approx(2.0 * (1.0 - 0.05)));
  CHECK(v[1] == 2.0);
  CHECK_THROWS_AS(opt.step({Tensor(w.shape())}, 0.1), DimensionError);
}

TEST_CASE("zero learning rate keeps the loss constant") {
  RunConfig c = tiny_run("unused");
  c.optim.lr = 0.0;
  c.optim.batch = 64;
  Rng rng(c.seed);
  Model model = init_model(c.model, rng);
  const Dataset ds = generate_dataset(c.train_task());
  const TrainResult r = train_model(model, ds, c.optim, c.seed);
  REQUIRE(r.log.size() == c.optim.steps);
  for (const auto& row : r.log) CHECK(row.loss == r.log.front().loss);
}

TEST_CASE("training reduces the loss on a tiny task") {
  RunConfig c = tiny_run("unused");
  c.optim.steps = 60;
  c.optim.batch = 64;
  c.optim.lr = 3e-2;
  c.task.noise = 0.0;
  Rng rng(c.seed);
  Model model = init_model(c.model, rng);
  const TrainResult r = train_model(model, generate_dataset(c.train_task()), c.optim, c.seed);
  CHECK_FALSE(r.diverged);
  CHECK(r.log.back().loss < 0.7 * r.log.front().loss);
}

TEST_CASE("training runs are deterministic") {
  const fs::path root = fs::temp_directory_path() / "wf_test_train";
  fs::remove_all(root);
  const RunConfig a = tiny_run((root / "a").string());
  const RunConfig b = tiny_run((root / "b").string());
  const RunSummary sa = run_training(a);
  const RunSummary sb = run_training(b);
  CHECK(sa.test.accuracy == sb.test.accuracy);
  CHECK(slurp(root / "a" / "log.csv") == slurp(root / "b" / "log.csv"));
  CHECK(slurp(root / "a" / "metrics.csv") == slurp(root / "b" / "metrics.csv"));
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(root / "a" / "checkpoint")) {
    CHECK(slurp(e.path()) == slurp(root / "b" / "checkpoint" / e.path().filename()));
    ++files;
  }
  CHECK(files > 10);
  CHECK(parse_run_config(slurp(root / "a" / "config.txt")) == a);
  CHECK(slurp(root / "a" / "log.csv").rfind("step,loss,grad_norm,lr\n0,", 0) == 0);

  const Model reloaded = load_checkpoint(root / "a" / "checkpoint");
  const EvalResult e = evaluate(reloaded, load_or_generate(a, true));
  CHECK(e.accuracy == sa.test.accuracy);
  CHECK(e.predictions == sa.test.predictions);
  fs::remove_all(root);
}

TEST_CASE("divergence keeps the last good state") {
  const fs::path root = fs::temp_directory_path() / "wf_test_diverge";
  fs::remove_all(root);
  RunConfig c = tiny_run(root.string());
  c.optim.lr = 1e30;
  c.optim.steps = 20;
  Rng rng(c.seed);
  Model model = init_model(c.model, rng);
  const TrainResult r = train_model(model, generate_dataset(c.train_task()), c.optim, c.seed);
  REQUIRE(r.diverged);
  CHECK(std::isnan(r.log.back().loss));
  CHECK(r.log.size() == r.divergence_step + 1);
  for (std::size_t i = 0; i + 1 < r.log.size(); ++i) CHECK(std::isfinite(r.log[i].loss));
  bool all_finite = true;
  Model& m = model;
  m.visit([&](const std::string&, Tensor& t) {
    for (double v : t.data()) all_finite = all_finite && std::isfinite(v);
  });
  CHECK(all_finite);

  CHECK_THROWS_AS(run_training(c), DivergenceError);
  CHECK(fs::exists(root / "checkpoint" / "manifest.txt"));
  CHECK_NOTHROW(load_checkpoint(root / "checkpoint"));
  CHECK(slurp(root / "log.csv").find("nan") != std::string::npos);
  fs::remove_all(root);
}

TEST_CASE("argmax and evaluation") {
  CHECK(argmax(Tensor::vector({0.1, 0.7, 0.7, 0.2})) == 1);
  CHECK(argmax(Tensor::vector({3.0, 3.0})) == 0);
  CHECK(argmax(Tensor::vector({-1.0, -2.0, 0.0})) == 2);

  RunConfig c = tiny_run("unused");
  Rng rng(c.seed);
  Model model = init_model(c.model, rng);
  const Dataset ds = generate_dataset(c.test_task());
  const EvalResult r = evaluate(model, ds);
  std::size_t correct = 0;
  double loss = 0.0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const Tensor logits = model_forward(ds.images[i], model);
    std::size_t best = 0;
    for (std::size_t k = 1; k < logits.size(); ++k)
      if (logits[k] > logits[best]) best = k;
    CHECK(r.predictions[i] == best);
    correct += best == ds.labels[i];
    double mx = logits[0];
    for (double v : logits.data()) mx = std::max(mx, v);
    double z = 0.0;
    for (double v : logits.data()) z += std::exp(v - mx);
    loss += std::log(z) + mx - logits[ds.labels[i]];
  }
  CHECK(r.accuracy == static_cast<double>(correct) / static_cast<double>(ds.size()));
  CHECK(r.loss == doctest::Approx(loss / static_cast<double>(ds.size())).epsilon(1e-12));
  CHECK(evaluate(model, ds).accuracy == r.accuracy);
}

TEST_CASE("a constant-class predictor scores the class frequency") {
  RunConfig c = tiny_run("unused");
  c.task.test_samples = 400;
  Rng rng(c.seed);
  Model model = init_model(c.model, rng);
  model.head_w = Tensor(model.head_w.shape());
  model.head_b = Tensor(model.head_b.shape());
  model.head_b[2] = 1.0;
  const Dataset ds = generate_dataset(c.test_task());
  const EvalResult r = evaluate(model, ds);
  const double freq =
      static_cast<double>(std::count(ds.labels.begin(), ds.labels.end(), 2u)) / static_cast<double>(ds.size());
  CHECK(r.accuracy == freq);
  CHECK(std::abs(r.accuracy - 0.25) < 0.1);

  Dataset bad = ds;
  bad.labels[0] = 9;
  CHECK_THROWS_AS(evaluate(model, bad), ConfigError);
}
