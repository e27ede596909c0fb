#include "wf/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <ostream>

#include "wf/config.hpp"
#include "wf/model.hpp"

namespace wf {

double relative_error(const Tensor& analytic, const Tensor& numeric) {
  if (analytic.shape() != numeric.shape()) {
    throw DimensionError("relative_error: shapes " + to_string(analytic.shape()) + " and " +
                         to_string(numeric.shape()) + " differ");
  }
  double diff = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
  const double denom = std::max({analytic.frobenius_norm(), numeric.frobenius_norm(), 1e-10});
  return std::sqrt(diff) / denom;
}

double gradient_error(const std::function<Var(Tape&)>& build, const std::vector<Tensor*>& params, Rng& rng,
                      double h) {
  Tape tape;
  for (Tensor* p : params) tape.param(*p);
  Var out = build(tape);
  const Tensor weights = Tensor::randn(out.value().shape(), rng);
  Var loss = ag::sum(ag::mul(out, tape.constant(weights)));
  const Gradients grads = tape.backward(loss);

  auto evaluate = [&] {
    Tape t(false);
    const Tensor y = build(t).value();
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * weights[i];
    return s;
  };

  double worst = 0.0;
  for (Tensor* p : params) {
    const Tensor analytic = grads.has_param(*p) ? grads.param(*p) : Tensor(p->shape());
    Tensor numeric(p->shape());
    for (std::size_t i = 0; i < p->size(); ++i) {
      const double saved = (*p)[i];
      (*p)[i] = saved + h;
      const double up = evaluate();
      (*p)[i] = saved - h;
      const double down = evaluate();
      (*p)[i] = saved;
      numeric[i] = (up - down) / (2.0 * h);
    }
    worst = std::max(worst, relative_error(analytic, numeric));
  }
  return worst;
}

namespace {

using CaseFn = double (*)(Rng&);

double unary(Rng& rng, Shape shape, Var (*op)(Var)) {
  Tensor x = Tensor::randn(shape, rng);
  return gradient_error([&](Tape& t) { return op(t.param(x)); }, {&x}, rng);
}

double binary(Rng& rng, Shape a_shape, Shape b_shape, Var (*op)(Var, Var)) {
  Tensor a = Tensor::randn(a_shape, rng);
  Tensor b = Tensor::randn(b_shape, rng);
  return gradient_error([&](Tape& t) { return op(t.param(a), t.param(b)); }, {&a, &b}, rng);
}

double activation_case(Rng& rng, Activation kind) {
  Tensor x = Tensor::randn({5, 7}, rng, 1.5);
  return gradient_error([&](Tape& t) { return ag::activation(kind, t.param(x)); }, {&x}, rng);
}

template <typename Spec>
std::vector<Tensor*> spec_tensors(Spec& spec) {
  std::vector<Tensor*> out;
  spec.visit([&](const char*, Tensor& t) { out.push_back(&t); });
  return out;
}

double linear_strategy_case(Rng& rng, LinearStrategy s) {
  const Grid grid{4, 4};
  LinearDeltaOptions opts;
  opts.rank = 2;
  opts.zero_final = false;
  LinearDeltaSpec spec = make_linear_delta(s, 8, 6, opts, rng);
  Tensor x = Tensor::randn({grid.tokens(), 8}, rng);
  std::vector<Tensor*> params = spec_tensors(spec);
  params.push_back(&x);
  return gradient_error([&](Tape& t) { return predict_linear_delta(t, t.param(x), grid, spec); }, params, rng);
}

double dwc_strategy_case(Rng& rng, DwcStrategy s) {
  DwcDeltaOptions opts;
  opts.zero_final = false;
  DwcDeltaSpec spec = make_dwc_delta(s, 4, opts, rng);
  Tensor x = Tensor::randn({4, 6, 6}, rng);
  std::vector<Tensor*> params = spec_tensors(spec);
  params.push_back(&x);
  return gradient_error([&](Tape& t) { return predict_dwc_delta(t, t.param(x), spec); }, params, rng);
}

double dwc_ampdir_global_case(Rng& rng) {
  DwcDeltaOptions opts;
  opts.zero_final = false;
  opts.per_channel_norm = false;
  DwcDeltaSpec spec = make_dwc_delta(DwcStrategy::ampdir, 4, opts, rng);
  Tensor x = Tensor::randn({4, 6, 6}, rng);
  std::vector<Tensor*> params = spec_tensors(spec);
  params.push_back(&x);
  return gradient_error([&](Tape& t) { return predict_dwc_delta(t, t.param(x), spec); }, params, rng);
}

double dynamic_linear_case(Rng& rng) {
  const Grid grid{3, 4};
  LinearDeltaOptions opts;
  opts.rank = 2;
  opts.zero_final = false;
  DynamicLinearLayer layer{Tensor::randn({5, 6}, rng), Tensor::randn({5}, rng),
                           make_linear_delta(LinearStrategy::bilateral, 6, 5, opts, rng)};
  Tensor x = Tensor::randn({grid.tokens(), 6}, rng);
  std::vector<Tensor*> params = spec_tensors(*layer.delta);
  params.insert(params.end(), {&layer.w0, &layer.bias, &x});
  return gradient_error([&](Tape& t) { return dynamic_linear_forward(t, t.param(x), grid, layer); }, params, rng);
}

double dynamic_dwc_case(Rng& rng) {
  DwcDeltaOptions opts;
  opts.zero_final = false;
  DynamicDwcLayer layer{Tensor::randn({4, 3, 3}, rng), make_dwc_delta(DwcStrategy::adaptive, 4, opts, rng)};
  Tensor x = Tensor::randn({4, 5, 6}, rng);
  std::vector<Tensor*> params = spec_tensors(*layer.delta);
  params.insert(params.end(), {&layer.k0, &x});
  return gradient_error([&](Tape& t) { return dynamic_dwc_forward(t, t.param(x), layer); }, params, rng);
}

BlockConfig small_block() {
  BlockConfig cfg;
  cfg.kind = BlockKind::dynamic_block;
  cfg.width = 8;
  cfg.mlp_ratio = 2;
  cfg.rank = 2;
  cfg.dynamic_fc2 = true;
  return cfg;
}

double block_case(Rng& rng) {
  const Grid grid{4, 4};
  InitOptions init;
  init.weight_std = 0.3;
  init.zero_predictors = false;
  BlockParams block = make_block(small_block(), rng, init);
  Tensor x = Tensor::randn({grid.tokens(), 8}, rng);
  std::vector<Tensor*> params{&x};
  block.visit("", [&](const std::string&, Tensor& t) { params.push_back(&t); });
  return gradient_error([&](Tape& t) { return block_forward(t, t.param(x), grid, block); }, params, rng);
}

double model_case(Rng& rng) {
  ModelConfig cfg;
  cfg.depth = 2;
  cfg.period = 2;
  cfg.width = 8;
  cfg.mlp_ratio = 2;
  cfg.rank = 2;
  cfg.patch = 2;
  cfg.image_height = 8;
  cfg.image_width = 8;
  cfg.in_channels = 2;
  cfg.num_classes = 3;
  cfg.dynamic_fc2 = true;
  InitOptions init;
  init.weight_std = 0.3;
  init.zero_predictors = false;
  Model model = init_model(cfg, rng, init);
  Tensor image = Tensor::randn({2, 8, 8}, rng);
  const std::size_t label = rng() % 3;
  std::vector<Tensor*> params{&image};
  model.visit([&](const std::string&, Tensor& t) { params.push_back(&t); });
  return gradient_error(
      [&](Tape& t) { return ag::cross_entropy(model_forward(t, t.param(image), model), label); }, params, rng);
}

const std::vector<std::pair<std::string, std::function<double(Rng&)>>>& registry() {
  static const std::vector<std::pair<std::string, std::function<double(Rng&)>>> cases = {
      {"op:add", [](Rng& r) { return binary(r, {3, 4}, {3, 4}, ag::add); }},
      {"op:sub", [](Rng& r) { return binary(r, {3, 4}, {3, 4}, ag::sub); }},
      {"op:mul", [](Rng& r) { return binary(r, {3, 4}, {3, 4}, ag::mul); }},
      {"op:scale", [](Rng& r) { return unary(r, {3, 4}, [](Var a) { return ag::scale(a, -1.7); }); }},
      {"op:add_row_bias", [](Rng& r) { return binary(r, {3, 4}, {4}, ag::add_row_bias); }},
      {"op:add_col_bias", [](Rng& r) { return binary(r, {3, 4}, {3}, ag::add_col_bias); }},
      {"op:mul_rows", [](Rng& r) { return binary(r, {3, 4}, {3}, ag::mul_rows); }},
      {"op:matmul", [](Rng& r) { return binary(r, {3, 5}, {5, 2}, ag::matmul); }},
      {"op:transpose", [](Rng& r) { return unary(r, {3, 5}, ag::transpose); }},
      {"op:reshape", [](Rng& r) { return unary(r, {3, 4}, [](Var a) { return ag::reshape(a, {2, 6}); }); }},
      {"op:sum", [](Rng& r) { return unary(r, {3, 4}, ag::sum); }},
      {"op:mean", [](Rng& r) { return unary(r, {3, 4}, ag::mean); }},
      {"op:softmax_rows", [](Rng& r) { return unary(r, {3, 5}, [](Var a) { return ag::softmax(a, 1); }); }},
      {"op:softmax_cols", [](Rng& r) { return unary(r, {3, 5}, [](Var a) { return ag::softmax(a, 0); }); }},
      {"op:gelu", [](Rng& r) { return activation_case(r, Activation::gelu); }},
      {"op:silu", [](Rng& r) { return activation_case(r, Activation::silu); }},
      {"op:sigmoid", [](Rng& r) { return activation_case(r, Activation::sigmoid); }},
      {"op:softmax_row_activation", [](Rng& r) { return activation_case(r, Activation::softmax_row); }},
      {"op:layer_norm",
       [](Rng& r) {
         Tensor x = Tensor::randn({4, 6}, r), g = Tensor::randn({6}, r), b = Tensor::randn({6}, r);
         return gradient_error([&](Tape& t) { return ag::layer_norm(t.param(x), t.param(g), t.param(b)); },
                               {&x, &g, &b}, r);
       }},
      {"op:global_avg_pool", [](Rng& r) { return unary(r, {6, 4}, ag::global_avg_pool); }},
      {"op:adaptive_avg_pool",
       [](Rng& r) { return unary(r, {2, 7, 5}, [](Var a) { return ag::adaptive_avg_pool(a, 3, 2); }); }},
      {"op:depthwise_conv2d", [](Rng& r) { return binary(r, {3, 5, 6}, {3, 3, 3}, ag::depthwise_conv2d); }},
      {"op:conv2d",
       [](Rng& r) {
         Tensor x = Tensor::randn({3, 4, 5}, r), w = Tensor::randn({2, 3, 3, 3}, r), b = Tensor::randn({2}, r);
         return gradient_error([&](Tape& t) { return ag::conv2d(t.param(x), t.param(w), t.param(b)); },
                               {&x, &w, &b}, r);
       }},
      {"op:normalize_rows",
       [](Rng& r) { return unary(r, {3, 5}, [](Var a) { return ag::normalize_rows(a, 1e-6); }); }},
      {"op:tokens_to_map", [](Rng& r) { return unary(r, {12, 3}, [](Var a) { return ag::tokens_to_map(a, {3, 4}); }); }},
      {"op:map_to_tokens", [](Rng& r) { return unary(r, {3, 4, 2}, ag::map_to_tokens); }},
      {"op:patchify", [](Rng& r) { return unary(r, {2, 6, 4}, [](Var a) { return ag::patchify(a, 2); }); }},
      {"op:cross_entropy",
       [](Rng& r) {
         const std::size_t label = r() % 5;
         Tensor x = Tensor::randn({5}, r);
         return gradient_error([&](Tape& t) { return ag::cross_entropy(t.param(x), label); }, {&x}, r);
       }},
      {"op:linear",
       [](Rng& r) {
         Tensor x = Tensor::randn({4, 5}, r), w = Tensor::randn({3, 5}, r), b = Tensor::randn({3}, r);
         return gradient_error([&](Tape& t) { return ag::linear(t.param(x), t.param(w), t.param(b)); },
                               {&x, &w, &b}, r);
       }},
      {"op:pooled_input",
       [](Rng& r) { return unary(r, {24, 3}, [](Var a) { return pooled_input(a, {4, 6}, 2); }); }},
      {"op:correlation", [](Rng& r) { return unary(r, {6, 4}, correlation); }},
      {"op:attention",
       [](Rng& r) {
         Tensor x = Tensor::randn({5, 4}, r);
         AttentionParams p = AttentionParams::random(4, r);
         return gradient_error(
             [&](Tape& t) { return attention_explicit(t.param(x), t.param(p.wq), t.param(p.wk), t.param(p.wv)); },
             {&x, &p.wq, &p.wk, &p.wv}, r);
       }},
      {"linear:gap", [](Rng& r) { return linear_strategy_case(r, LinearStrategy::gap); }},
      {"linear:linear", [](Rng& r) { return linear_strategy_case(r, LinearStrategy::linear); }},
      {"linear:nonlinear", [](Rng& r) { return linear_strategy_case(r, LinearStrategy::nonlinear); }},
      {"linear:deep", [](Rng& r) { return linear_strategy_case(r, LinearStrategy::deep); }},
      {"linear:bilateral", [](Rng& r) { return linear_strategy_case(r, LinearStrategy::bilateral); }},
      {"dwc:gap", [](Rng& r) { return dwc_strategy_case(r, DwcStrategy::gap); }},
      {"dwc:adaptive", [](Rng& r) { return dwc_strategy_case(r, DwcStrategy::adaptive); }},
      {"dwc:ampdir", [](Rng& r) { return dwc_strategy_case(r, DwcStrategy::ampdir); }},
      {"dwc:ampdir_global", dwc_ampdir_global_case},
      {"dwc:conv", [](Rng& r) { return dwc_strategy_case(r, DwcStrategy::conv); }},
      {"layer:dynamic_linear", dynamic_linear_case},
      {"layer:dynamic_dwc", dynamic_dwc_case},
      {"layer:block", block_case},
      {"layer:model", model_case},
  };
  return cases;
}

}  // namespace

std::vector<std::string> gradcheck_cases() {
  std::vector<std::string> names;
  for (const auto& [name, fn] : registry()) names.push_back(name);
  return names;
}

std::vector<GradcheckRow> run_gradcheck(const std::vector<std::uint64_t>& seeds, const std::vector<std::string>& only,
                                        double tolerance) {
  for (const auto& name : only) {
    const auto& cases = registry();
    if (std::none_of(cases.begin(), cases.end(), [&](const auto& c) { return c.first == name; })) {
      throw ConfigError("gradcheck: unknown case '" + name + "'");
    }
  }
  std::vector<GradcheckRow> rows;
  for (const auto& [name, fn] : registry()) {
    if (!only.empty() && std::find(only.begin(), only.end(), name) == only.end()) continue;
    for (std::uint64_t seed : seeds) {
      Rng rng(seed);
      const double err = fn(rng);
      rows.push_back({name, seed, err, std::isfinite(err) && err < tolerance});
    }
  }
  return rows;
}

void write_gradcheck_csv(std::ostream& os, const std::vector<GradcheckRow>& rows) {
  os << "name,seed,rel_error,pass\n";
  for (const auto& r : rows) {
    os << r.name << ',' << r.seed << ',' << format_double(r.rel_error) << ',' << (r.pass ? "true" : "false") << '\n';
  }
}

}  // namespace wf
