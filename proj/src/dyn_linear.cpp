#include "wf/dyn_linear.hpp"

#include <cmath>

namespace wf {

namespace {

void expect_shape(const Tensor& t, const Shape& shape, const char* name) {
  if (t.shape() != shape) {
    throw ConfigError(std::string("linear delta: ") + name + " has shape " + to_string(t.shape()) +
                      ", expected " + to_string(shape));
  }
}

Tensor fan_in_normal(Shape shape, std::size_t fan_in, Rng& rng) {
  return Tensor::randn(std::move(shape), rng, 1.0 / std::sqrt(static_cast<double>(fan_in)));
}

}  // namespace

LinearStrategy parse_linear_strategy(std::string_view name) {
  if (name == "gap") return LinearStrategy::gap;
  if (name == "linear") return LinearStrategy::linear;
  if (name == "nonlinear") return LinearStrategy::nonlinear;
  if (name == "deep") return LinearStrategy::deep;
  if (name == "bilateral") return LinearStrategy::bilateral;
  throw ConfigError("unknown linear strategy '" + std::string(name) + "'");
}

std::string_view linear_strategy_name(LinearStrategy s) {
  switch (s) {
    case LinearStrategy::gap: return "gap";
    case LinearStrategy::linear: return "linear";
    case LinearStrategy::nonlinear: return "nonlinear";
    case LinearStrategy::deep: return "deep";
    case LinearStrategy::bilateral: return "bilateral";
  }
  return "?";
}

void LinearDeltaSpec::validate() const {
  if (d_in == 0 || d_out == 0) throw ConfigError("linear delta: widths must be positive");
  if (pool_factor == 0) throw ConfigError("linear delta: pool_factor must be positive");
  const std::size_t d = d_in;
  switch (strategy) {
    case LinearStrategy::gap:
      expect_shape(mlp_w1, {d, d}, "mlp_w1");
      expect_shape(mlp_b1, {d}, "mlp_b1");
      expect_shape(mlp_w2, {d_out * d_in, d}, "mlp_w2");
      expect_shape(mlp_b2, {d_out * d_in}, "mlp_b2");
      break;
    case LinearStrategy::linear:
    case LinearStrategy::nonlinear:
      expect_shape(w1, {d_out, d}, "w1");
      expect_shape(w2, {d, d_in}, "w2");
      break;
    case LinearStrategy::deep:
    case LinearStrategy::bilateral:
      if (rank == 0) throw ConfigError("linear delta: rank must be positive");
      expect_shape(w1, {d_out, rank}, "w1");
      expect_shape(w2, {rank, d}, "w2");
      expect_shape(w3, {d, rank}, "w3");
      expect_shape(w4, {rank, d_in}, "w4");
      break;
  }
}

LinearDeltaSpec make_linear_delta(LinearStrategy strategy, std::size_t d_in, std::size_t d_out,
                                  const LinearDeltaOptions& options, Rng& rng) {
  LinearDeltaSpec spec;
  spec.strategy = strategy;
  spec.d_in = d_in;
  spec.d_out = d_out;
  spec.pool_factor = options.pool_factor;
  spec.activation = options.activation;
  const std::size_t d = d_in;
  switch (strategy) {
    case LinearStrategy::gap:
      spec.mlp_w1 = fan_in_normal({d, d}, d, rng);
      spec.mlp_b1 = Tensor({d});
      spec.mlp_w2 = options.zero_final ? Tensor({d_out * d_in, d}) : fan_in_normal({d_out * d_in, d}, d, rng);
      spec.mlp_b2 = Tensor({d_out * d_in});
      break;
    case LinearStrategy::linear:
    case LinearStrategy::nonlinear:
      spec.w2 = fan_in_normal({d, d_in}, d, rng);
      spec.w1 = options.zero_final ? Tensor({d_out, d}) : fan_in_normal({d_out, d}, d, rng);
      break;
    case LinearStrategy::deep:
    case LinearStrategy::bilateral: {
      const std::size_t r = options.rank ? options.rank : std::max<std::size_t>(1, d_in / 4);
      spec.rank = r;
      spec.w2 = fan_in_normal({r, d}, d, rng);
      spec.w3 = fan_in_normal({d, r}, d, rng);
      spec.w4 = fan_in_normal({r, d_in}, r, rng);
      spec.w1 = options.zero_final ? Tensor({d_out, r}) : fan_in_normal({d_out, r}, r, rng);
      break;
    }
  }
  spec.validate();
  return spec;
}

Var pooled_input(Var x, Grid grid, std::size_t factor) {
  if (x.value().rank() != 2 || x.dim(0) != grid.tokens()) {
    throw DimensionError("pooled_input: tokens " + to_string(x.shape()) + " do not fill a " +
                         std::to_string(grid.height) + "x" + std::to_string(grid.width) + " grid");
  }
  if (factor == 0) throw ConfigError("pooled_input: factor must be positive");
  if (factor == 1) return x;
  const std::size_t h = (grid.height + factor - 1) / factor;
  const std::size_t w = (grid.width + factor - 1) / factor;
  return ag::map_to_tokens(ag::adaptive_avg_pool(ag::tokens_to_map(x, grid), h, w));
}

Tensor pooled_input(const Tensor& x, Grid grid, std::size_t factor) {
  Tape tape(false);
  return pooled_input(tape.constant(x), grid, factor).value();
}

Var correlation(Var xp) { return ag::matmul(ag::transpose(xp), xp); }

Tensor correlation(const Tensor& xp) { return ops::matmul_tn(xp, xp); }

Var predict_linear_delta(Tape& tape, Var x, Grid grid, const LinearDeltaSpec& spec) {
  spec.validate();
  if (x.value().rank() != 2 || x.dim(1) != spec.d_in) {
    throw DimensionError("linear delta: input " + to_string(x.shape()) + " does not have width " +
                         std::to_string(spec.d_in));
  }
  const Activation act = spec.activation;
  switch (spec.strategy) {
    case LinearStrategy::gap: {
      Var z = ag::reshape(ag::global_avg_pool(x), {1, spec.d_in});
      Var hidden = ag::activation(act, ag::linear(z, tape.param(spec.mlp_w1), tape.param(spec.mlp_b1)));
      Var flat = ag::linear(hidden, tape.param(spec.mlp_w2), tape.param(spec.mlp_b2));
      return ag::reshape(flat, {spec.d_out, spec.d_in});
    }
    case LinearStrategy::linear:
    case LinearStrategy::nonlinear: {
      Var corr = correlation(pooled_input(x, grid, spec.pool_factor));
      Var delta = ag::matmul(ag::matmul(tape.param(spec.w1), corr), tape.param(spec.w2));
      return spec.strategy == LinearStrategy::nonlinear ? ag::activation(act, delta) : delta;
    }
    case LinearStrategy::deep: {
      Var corr = correlation(pooled_input(x, grid, spec.pool_factor));
      Var inner = ag::matmul(ag::matmul(tape.param(spec.w2), corr), tape.param(spec.w3));
      Var core = ag::activation(act, inner);
      return ag::matmul(ag::matmul(tape.param(spec.w1), core), tape.param(spec.w4));
    }
    case LinearStrategy::bilateral: {
      Var xp = pooled_input(x, grid, spec.pool_factor);
      // Contract over tokens first: [r, N'] x [N', r] -> [r, r].
      Var left = ag::activation(act, ag::matmul(tape.param(spec.w2), ag::transpose(xp)));
      Var right = ag::activation(act, ag::matmul(xp, tape.param(spec.w3)));
      Var core = ag::matmul(left, right);
      return ag::matmul(ag::matmul(tape.param(spec.w1), core), tape.param(spec.w4));
    }
  }
  throw ConfigError("linear delta: unhandled strategy");
}

Tensor predict_linear_delta(const Tensor& x, Grid grid, const LinearDeltaSpec& spec) {
  Tape tape(false);
  return predict_linear_delta(tape, tape.constant(x), grid, spec).value();
}

Var dynamic_linear_forward(Tape& tape, Var x, Grid grid, const DynamicLinearLayer& layer,
                           Var* delta_out) {
  if (layer.w0.rank() != 2 || x.value().rank() != 2 || x.dim(1) != layer.w0.dim(1)) {
    throw DimensionError("dynamic linear: input " + to_string(x.shape()) +
                         " incompatible with weight " + to_string(layer.w0.shape()));
  }
  Var w = tape.param(layer.w0);
  if (layer.delta) {
    if (layer.delta->d_out != layer.w0.dim(0) || layer.delta->d_in != layer.w0.dim(1)) {
      throw ConfigError("dynamic linear: delta widths do not match W0 " + to_string(layer.w0.shape()));
    }
    Var delta = predict_linear_delta(tape, x, grid, *layer.delta);
    if (delta_out) *delta_out = delta;
    w = ag::add(w, delta);
  }
  return ag::linear(x, w, tape.param(layer.bias));
}

Tensor dynamic_linear_forward(const Tensor& x, Grid grid, const DynamicLinearLayer& layer) {
  Tape tape(false);
  return dynamic_linear_forward(tape, tape.constant(x), grid, layer).value();
}

}  // namespace wf
