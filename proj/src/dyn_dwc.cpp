#include "wf/dyn_dwc.hpp"

#include <cmath>

namespace wf {

namespace {

void expect_shape(const Tensor& t, const Shape& shape, const char* name) {
  if (t.shape() != shape) {
    throw ConfigError(std::string("dwc delta: ") + name + " has shape " + to_string(t.shape()) +
                      ", expected " + to_string(shape));
  }
}

Tensor fan_in_normal(Shape shape, std::size_t fan_in, Rng& rng) {
  return Tensor::randn(std::move(shape), rng, 1.0 / std::sqrt(static_cast<double>(fan_in)));
}

// Channel-mixing MLP applied at every cell of the pooled K x K grid with shared weights.
// Returns [d, K*K].
Var cell_mlp(Tape& tape, Var x, const DwcDeltaSpec& spec) {
  const std::size_t d = spec.channels, k = spec.kernel;
  Var cells = ag::reshape(ag::adaptive_avg_pool(x, k, k), {d, k * k});
  Var hidden = ag::activation(
      spec.activation, ag::add_col_bias(ag::matmul(tape.param(spec.mlp_w1), cells), tape.param(spec.mlp_b1)));
  return ag::add_col_bias(ag::matmul(tape.param(spec.mlp_w2), hidden), tape.param(spec.mlp_b2));
}

Var spatial_mean(Var x) { return ag::global_avg_pool(ag::map_to_tokens(x)); }

}  // namespace

DwcStrategy parse_dwc_strategy(std::string_view name) {
  if (name == "gap") return DwcStrategy::gap;
  if (name == "adaptive") return DwcStrategy::adaptive;
  if (name == "ampdir") return DwcStrategy::ampdir;
  if (name == "conv") return DwcStrategy::conv;
  throw ConfigError("unknown dwc strategy '" + std::string(name) + "'");
}

std::string_view dwc_strategy_name(DwcStrategy s) {
  switch (s) {
    case DwcStrategy::gap: return "gap";
    case DwcStrategy::adaptive: return "adaptive";
    case DwcStrategy::ampdir: return "ampdir";
    case DwcStrategy::conv: return "conv";
  }
  return "?";
}

std::size_t DwcDeltaSpec::bottleneck_width() const {
  return std::max<std::size_t>(1, channels / std::max<std::size_t>(1, bottleneck));
}

void DwcDeltaSpec::validate() const {
  if (kernel % 2 == 0) throw ConfigError("dwc delta: kernel extent must be odd, got " + std::to_string(kernel));
  if (channels == 0) throw ConfigError("dwc delta: channel count must be positive");
  const std::size_t d = channels, kk = kernel * kernel;
  switch (strategy) {
    case DwcStrategy::gap:
      expect_shape(mlp_w1, {d, d}, "mlp_w1");
      expect_shape(mlp_b1, {d}, "mlp_b1");
      expect_shape(mlp_w2, {d * kk, d}, "mlp_w2");
      expect_shape(mlp_b2, {d * kk}, "mlp_b2");
      break;
    case DwcStrategy::ampdir:
      expect_shape(amp_w, {d, d}, "amp_w");
      [[fallthrough]];
    case DwcStrategy::adaptive:
      expect_shape(mlp_w1, {d, d}, "mlp_w1");
      expect_shape(mlp_b1, {d}, "mlp_b1");
      expect_shape(mlp_w2, {d, d}, "mlp_w2");
      expect_shape(mlp_b2, {d}, "mlp_b2");
      break;
    case DwcStrategy::conv: {
      const std::size_t b = bottleneck_width();
      expect_shape(conv1_w, {b, d, 3, 3}, "conv1_w");
      expect_shape(conv1_b, {b}, "conv1_b");
      expect_shape(conv2_w, {d, b, 3, 3}, "conv2_w");
      expect_shape(conv2_b, {d}, "conv2_b");
      break;
    }
  }
}

DwcDeltaSpec make_dwc_delta(DwcStrategy strategy, std::size_t channels,
                            const DwcDeltaOptions& options, Rng& rng) {
  DwcDeltaSpec spec;
  spec.strategy = strategy;
  spec.channels = channels;
  spec.kernel = options.kernel;
  spec.bottleneck = options.bottleneck;
  spec.eps = options.eps;
  spec.per_channel_norm = options.per_channel_norm;
  spec.activation = options.activation;
  const std::size_t d = channels, kk = options.kernel * options.kernel;
  switch (strategy) {
    case DwcStrategy::gap:
      spec.mlp_w1 = fan_in_normal({d, d}, d, rng);
      spec.mlp_b1 = Tensor({d});
      spec.mlp_w2 = options.zero_final ? Tensor({d * kk, d}) : fan_in_normal({d * kk, d}, d, rng);
      spec.mlp_b2 = Tensor({d * kk});
      break;
    case DwcStrategy::ampdir:
      spec.amp_w = fan_in_normal({d, d}, d, rng);
      [[fallthrough]];
    case DwcStrategy::adaptive:
      spec.mlp_w1 = fan_in_normal({d, d}, d, rng);
      spec.mlp_b1 = Tensor({d});
      spec.mlp_w2 = options.zero_final ? Tensor({d, d}) : fan_in_normal({d, d}, d, rng);
      spec.mlp_b2 = Tensor({d});
      break;
    case DwcStrategy::conv: {
      const std::size_t b = spec.bottleneck_width();
      spec.conv1_w = fan_in_normal({b, d, 3, 3}, d * 9, rng);
      spec.conv1_b = Tensor({b});
      spec.conv2_w = options.zero_final ? Tensor({d, b, 3, 3}) : fan_in_normal({d, b, 3, 3}, b * 9, rng);
      spec.conv2_b = Tensor({d});
      break;
    }
  }
  spec.validate();
  return spec;
}

Var predict_dwc_delta(Tape& tape, Var x, const DwcDeltaSpec& spec) {
  spec.validate();
  const Tensor& xv = x.value();
  if (xv.rank() != 3 || xv.dim(0) != spec.channels) {
    throw DimensionError("dwc delta: input " + to_string(xv.shape()) + " does not have " +
                         std::to_string(spec.channels) + " channels");
  }
  const std::size_t d = spec.channels, k = spec.kernel;
  if (spec.strategy != DwcStrategy::gap && (xv.dim(1) < k || xv.dim(2) < k)) {
    throw DomainError("dwc delta: " + std::string(dwc_strategy_name(spec.strategy)) +
                      " needs H, W >= " + std::to_string(k) + ", got " + to_string(xv.shape()));
  }
  switch (spec.strategy) {
    case DwcStrategy::gap: {
      Var z = ag::reshape(spatial_mean(x), {1, d});
      Var hidden = ag::activation(spec.activation,
                                  ag::linear(z, tape.param(spec.mlp_w1), tape.param(spec.mlp_b1)));
      Var flat = ag::linear(hidden, tape.param(spec.mlp_w2), tape.param(spec.mlp_b2));
      return ag::reshape(flat, {d, k, k});
    }
    case DwcStrategy::adaptive:
      return ag::reshape(cell_mlp(tape, x, spec), {d, k, k});
    case DwcStrategy::ampdir: {
      Var z = ag::reshape(spatial_mean(x), {1, d});
      Var amplitude = ag::reshape(
          ag::activation(Activation::sigmoid, ag::matmul(z, tape.param(spec.amp_w))), {d});
      Var u = cell_mlp(tape, x, spec);
      Var direction = spec.per_channel_norm
                          ? ag::normalize_rows(u, spec.eps)
                          : ag::reshape(ag::normalize_rows(ag::reshape(u, {1, d * k * k}), spec.eps),
                                        {d, k * k});
      return ag::reshape(ag::mul_rows(direction, amplitude), {d, k, k});
    }
    case DwcStrategy::conv: {
      Var hidden = ag::activation(Activation::gelu,
                                  ag::conv2d(x, tape.param(spec.conv1_w), tape.param(spec.conv1_b)));
      Var features = ag::conv2d(hidden, tape.param(spec.conv2_w), tape.param(spec.conv2_b));
      return ag::adaptive_avg_pool(features, k, k);
    }
  }
  throw ConfigError("dwc delta: unhandled strategy");
}

Tensor predict_dwc_delta(const Tensor& x, const DwcDeltaSpec& spec) {
  Tape tape(false);
  return predict_dwc_delta(tape, tape.constant(x), spec).value();
}

Var dynamic_dwc_forward(Tape& tape, Var x, const DynamicDwcLayer& layer, Var* delta_out) {
  Var kernel = tape.param(layer.k0);
  if (layer.delta) {
    if (layer.delta->channels != layer.k0.dim(0) || layer.delta->kernel != layer.k0.dim(1)) {
      throw ConfigError("dynamic dwc: delta spec does not match K0 " + to_string(layer.k0.shape()));
    }
    Var delta = predict_dwc_delta(tape, x, *layer.delta);
    if (delta_out) *delta_out = delta;
    kernel = ag::add(kernel, delta);
  }
  return ag::depthwise_conv2d(x, kernel);
}

Tensor dynamic_dwc_forward(const Tensor& x, const DynamicDwcLayer& layer) {
  Tape tape(false);
  return dynamic_dwc_forward(tape, tape.constant(x), layer).value();
}

}  // namespace wf
