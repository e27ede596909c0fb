#include "wf/model.hpp"

#include <algorithm>
#include <set>

namespace wf {

BlockKind parse_block_kind(std::string_view name) {
  if (name == "static") return BlockKind::static_block;
  if (name == "dynamic") return BlockKind::dynamic_block;
  throw ConfigError("unknown block kind '" + std::string(name) + "'");
}

std::string_view block_kind_name(BlockKind kind) {
  return kind == BlockKind::dynamic_block ? "dynamic" : "static";
}

std::vector<std::size_t> placement(std::int64_t depth, std::int64_t period) {
  if (period <= 0) throw ConfigError("placement: period must be positive, got " + std::to_string(period));
  if (depth < 0) throw ConfigError("placement: depth must be non-negative, got " + std::to_string(depth));
  std::vector<std::size_t> out;
  for (std::int64_t i = period - 1; i < depth; i += period) out.push_back(static_cast<std::size_t>(i));
  return out;
}

std::vector<std::size_t> placement_for_count(std::size_t depth, std::size_t n) {
  if (n > depth) {
    throw ConfigError("placement: cannot place " + std::to_string(n) + " dynamic blocks in depth " +
                      std::to_string(depth));
  }
  std::vector<std::size_t> out;
  for (std::size_t k = 0; k < n; ++k) out.push_back(((k + 1) * depth + n - 1) / n - 1);
  return out;
}

std::vector<std::size_t> ModelConfig::dynamic_indices() const {
  if (!dynamic_blocks) return placement(static_cast<std::int64_t>(depth), period);
  std::set<std::size_t> unique(dynamic_blocks->begin(), dynamic_blocks->end());
  for (std::size_t i : unique) {
    if (i >= depth) {
      throw ConfigError("dynamic block index " + std::to_string(i) + " outside depth " + std::to_string(depth));
    }
  }
  return {unique.begin(), unique.end()};
}

BlockConfig ModelConfig::block(std::size_t index) const {
  const auto dyn = dynamic_indices();
  BlockConfig b;
  b.kind = std::binary_search(dyn.begin(), dyn.end(), index) ? BlockKind::dynamic_block
                                                              : BlockKind::static_block;
  b.width = width;
  b.mlp_ratio = mlp_ratio;
  b.kernel = kernel;
  b.linear_strategy = linear_strategy;
  b.dwc_strategy = dwc_strategy;
  b.rank = rank;
  b.pool_factor = pool_factor;
  b.predictor_activation = predictor_activation;
  b.mlp_activation = mlp_activation;
  b.dynamic_fc2 = dynamic_fc2;
  b.per_channel_norm = per_channel_norm;
  return b;
}

Grid ModelConfig::grid() const { return {image_height / patch, image_width / patch}; }

void ModelConfig::validate() const {
  if (patch == 0) throw ConfigError("model: patch size must be positive");
  if (width == 0) throw ConfigError("model: width must be positive");
  if (mlp_ratio == 0) throw ConfigError("model: mlp_ratio must be positive");
  if (num_classes == 0) throw ConfigError("model: num_classes must be positive");
  if (in_channels == 0) throw ConfigError("model: in_channels must be positive");
  if (kernel % 2 == 0) throw ConfigError("model: kernel extent must be odd, got " + std::to_string(kernel));
  if (pool_factor == 0) throw ConfigError("model: pool_factor must be positive");
  if (image_height == 0 || image_width == 0 || image_height % patch != 0 || image_width % patch != 0) {
    throw ConfigError("model: input " + std::to_string(image_height) + "x" + std::to_string(image_width) +
                      " not divisible by patch size " + std::to_string(patch));
  }
  if (mlp_activation == Activation::softmax_row || predictor_activation == Activation::softmax_row) {
    throw ConfigError("model: softmax-row is not an elementwise activation");
  }
  dynamic_indices();
}

ModelConfig wf_micro() { return ModelConfig{}; }

BlockParams make_block(const BlockConfig& cfg, Rng& rng, const InitOptions& options, Rng* predictor_rng) {
  Rng& prng = predictor_rng ? *predictor_rng : rng;
  const std::size_t d = cfg.width, h = cfg.hidden(), k = cfg.kernel;
  BlockParams p;
  p.mlp_activation = cfg.mlp_activation;
  p.ln1_g = Tensor({d}, 1.0);
  p.ln1_b = Tensor({d});
  p.dwc.k0 = Tensor::randn({d, k, k}, rng, options.weight_std);
  p.ln2_g = Tensor({d}, 1.0);
  p.ln2_b = Tensor({d});
  p.fc1.w0 = Tensor::randn({h, d}, rng, options.weight_std);
  p.fc1.bias = Tensor({h});
  p.fc2.w0 = Tensor::randn({d, h}, rng, options.weight_std);
  p.fc2.bias = Tensor({d});
  if (cfg.kind == BlockKind::dynamic_block) {
    DwcDeltaOptions dwc_opts;
    dwc_opts.kernel = k;
    dwc_opts.per_channel_norm = cfg.per_channel_norm;
    dwc_opts.activation = cfg.predictor_activation;
    dwc_opts.zero_final = options.zero_predictors;
    p.dwc.delta = make_dwc_delta(cfg.dwc_strategy, d, dwc_opts, prng);
    LinearDeltaOptions lin_opts;
    lin_opts.rank = cfg.rank;
    lin_opts.pool_factor = cfg.pool_factor;
    lin_opts.activation = cfg.predictor_activation;
    lin_opts.zero_final = options.zero_predictors;
    p.fc1.delta = make_linear_delta(cfg.linear_strategy, d, h, lin_opts, prng);
    if (cfg.dynamic_fc2) p.fc2.delta = make_linear_delta(cfg.linear_strategy, h, d, lin_opts, prng);
  }
  return p;
}

std::size_t Model::parameter_count() const {
  std::size_t total = 0;
  const_cast<Model*>(this)->visit([&](const std::string&, Tensor& t) { total += t.size(); });
  return total;
}

Model init_model(const ModelConfig& cfg, Rng& rng, const InitOptions& options) {
  cfg.validate();
  const std::size_t d = cfg.width, row = cfg.in_channels * cfg.patch * cfg.patch;
  Rng predictor_rng(rng());
  Model m;
  m.config = cfg;
  m.patch_w = Tensor::randn({d, row}, rng, options.weight_std);
  m.patch_b = Tensor({d});
  for (std::size_t i = 0; i < cfg.depth; ++i) m.blocks.push_back(make_block(cfg.block(i), rng, options, &predictor_rng));
  m.norm_g = Tensor({d}, 1.0);
  m.norm_b = Tensor({d});
  m.head_w = Tensor::randn({cfg.num_classes, d}, rng, options.weight_std);
  m.head_b = Tensor({cfg.num_classes});
  return m;
}

Model to_static(const Model& model) {
  Model out = model;
  out.config.dynamic_blocks = std::vector<std::size_t>{};
  for (auto& b : out.blocks) {
    b.dwc.delta.reset();
    b.fc1.delta.reset();
    b.fc2.delta.reset();
  }
  return out;
}

Var block_forward(Tape& tape, Var x, Grid grid, const BlockParams& p, ForwardTrace* trace,
                  std::size_t block_index) {
  if (x.value().rank() != 2 || x.dim(0) != grid.tokens()) {
    throw DimensionError("block: tokens " + to_string(x.shape()) + " do not fill a " +
                         std::to_string(grid.height) + "x" + std::to_string(grid.width) + " grid");
  }
  auto record = [&](const char* kind, const Tensor& w0, const Var& delta) {
    if (trace) trace->entries.push_back({block_index, kind, w0, delta.value()});
  };

  Var h = ag::layer_norm(x, tape.param(p.ln1_g), tape.param(p.ln1_b));
  Var dk;
  Var mixed = dynamic_dwc_forward(tape, ag::tokens_to_map(h, grid), p.dwc, &dk);
  if (p.dwc.delta) record("dwc", p.dwc.k0, dk);
  x = ag::add(x, ag::map_to_tokens(mixed));

  h = ag::layer_norm(x, tape.param(p.ln2_g), tape.param(p.ln2_b));
  Var dw1, dw2;
  h = dynamic_linear_forward(tape, h, grid, p.fc1, &dw1);
  if (p.fc1.delta) record("fc1", p.fc1.w0, dw1);
  h = ag::activation(p.mlp_activation, h);
  h = dynamic_linear_forward(tape, h, grid, p.fc2, &dw2);
  if (p.fc2.delta) record("fc2", p.fc2.w0, dw2);
  return ag::add(x, h);
}

Tensor block_forward(const Tensor& x, Grid grid, const BlockParams& params) {
  Tape tape(false);
  return block_forward(tape, tape.constant(x), grid, params).value();
}

Var model_features(Tape& tape, Var image, const Model& model, ForwardTrace* trace) {
  const Tensor& img = image.value();
  if (img.rank() != 3 || img.dim(0) != model.config.in_channels) {
    throw DimensionError("model: image " + to_string(img.shape()) + " does not have " +
                         std::to_string(model.config.in_channels) + " channels");
  }
  const std::size_t p = model.config.patch;
  Var x = ag::linear(ag::patchify(image, p), tape.param(model.patch_w), tape.param(model.patch_b));
  const Grid grid{img.dim(1) / p, img.dim(2) / p};
  for (std::size_t i = 0; i < model.blocks.size(); ++i) {
    x = block_forward(tape, x, grid, model.blocks[i], trace, i);
  }
  return x;
}

Var model_forward(Tape& tape, Var image, const Model& model, ForwardTrace* trace) {
  Var x = model_features(tape, image, model, trace);
  x = ag::layer_norm(x, tape.param(model.norm_g), tape.param(model.norm_b));
  Var pooled = ag::reshape(ag::global_avg_pool(x), {1, model.config.width});
  Var logits = ag::linear(pooled, tape.param(model.head_w), tape.param(model.head_b));
  return ag::reshape(logits, {model.config.num_classes});
}

Tensor model_forward(const Tensor& image, const Model& model) {
  Tape tape(false);
  return model_forward(tape, tape.constant(image), model).value();
}

AttentionBlockParams make_attention_block(std::size_t width, std::size_t mlp_ratio, Rng& rng,
                                          double weight_std) {
  const std::size_t d = width, h = width * mlp_ratio;
  AttentionBlockParams p;
  p.ln1_g = Tensor({d}, 1.0);
  p.ln1_b = Tensor({d});
  p.attn = AttentionParams::random(d, rng);
  p.ln2_g = Tensor({d}, 1.0);
  p.ln2_b = Tensor({d});
  p.fc1.w0 = Tensor::randn({h, d}, rng, weight_std);
  p.fc1.bias = Tensor({h});
  p.fc2.w0 = Tensor::randn({d, h}, rng, weight_std);
  p.fc2.bias = Tensor({d});
  return p;
}

Var attention_block_forward(Tape& tape, Var x, const AttentionBlockParams& p) {
  Var h = ag::layer_norm(x, tape.param(p.ln1_g), tape.param(p.ln1_b));
  x = ag::add(x, attention_explicit(h, tape.param(p.attn.wq), tape.param(p.attn.wk), tape.param(p.attn.wv)));
  h = ag::layer_norm(x, tape.param(p.ln2_g), tape.param(p.ln2_b));
  h = ag::linear(h, tape.param(p.fc1.w0), tape.param(p.fc1.bias));
  h = ag::activation(p.mlp_activation, h);
  h = ag::linear(h, tape.param(p.fc2.w0), tape.param(p.fc2.bias));
  return ag::add(x, h);
}

Tensor attention_block_forward(const Tensor& x, const AttentionBlockParams& params) {
  Tape tape(false);
  return attention_block_forward(tape, tape.constant(x), params).value();
}

namespace {

using u64 = std::uint64_t;

std::size_t resolve_rank(std::size_t rank, std::size_t d_in) {
  return rank ? rank : std::max<std::size_t>(1, d_in / 4);
}

std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

// Static MLP half of a block: LN, fc1, activation, fc2, residual.
FlopCount mlp_flops(u64 n, u64 d, u64 h) {
  return {0, 7 * n * d + 2 * n * d * h + n * h + n * h + 2 * n * h * d + n * d + n * d};
}

u64 mlp_params(u64 d, u64 h) { return 2 * d + h * d + h + d * h + d; }

}  // namespace

std::uint64_t linear_delta_params(LinearStrategy s, std::size_t d_in, std::size_t d_out, std::size_t rank) {
  const u64 d = d_in, o = d_out, r = resolve_rank(rank, d_in);
  switch (s) {
    case LinearStrategy::gap: return d * d + d + o * d_in * d + o * d_in;
    case LinearStrategy::linear:
    case LinearStrategy::nonlinear: return o * d + d * d_in;
    case LinearStrategy::deep:
    case LinearStrategy::bilateral: return o * r + r * d + d * r + r * d_in;
  }
  return 0;
}

std::uint64_t dwc_delta_params(DwcStrategy s, std::size_t channels, std::size_t kernel) {
  const u64 d = channels, kk = kernel * kernel;
  switch (s) {
    case DwcStrategy::gap: return d * d + d + d * kk * d + d * kk;
    case DwcStrategy::adaptive: return 2 * d * d + 2 * d;
    case DwcStrategy::ampdir: return 3 * d * d + 2 * d;
    case DwcStrategy::conv: {
      const u64 b = std::max<u64>(1, d / 4);
      return b * d * 9 + b + d * b * 9 + d;
    }
  }
  return 0;
}

FlopCount linear_delta_flops(LinearStrategy s, std::size_t d_in, std::size_t d_out, std::size_t rank,
                             Grid grid, std::size_t pool_factor) {
  const u64 d = d_in, o = d_out, r = resolve_rank(rank, d_in), n = grid.tokens();
  const u64 np = pool_factor == 1 ? n : ceil_div(grid.height, pool_factor) * ceil_div(grid.width, pool_factor);
  const u64 pool = pool_factor == 1 ? 0 : d * (n + np);
  FlopCount f;
  switch (s) {
    case LinearStrategy::gap:
      f.scaling = n * d;
      f.fixed = d + 2 * d * d + 2 * d + 2 * d * (o * d_in) + o * d_in;
      break;
    case LinearStrategy::linear:
    case LinearStrategy::nonlinear:
      f.scaling = pool + 2 * d * np * d;
      f.fixed = 2 * o * d * d + 2 * o * d * d_in + (s == LinearStrategy::nonlinear ? o * d_in : 0);
      break;
    case LinearStrategy::deep:
      f.scaling = pool + 2 * d * np * d;
      f.fixed = 2 * r * d * d + 2 * r * d * r + r * r + 2 * o * r * r + 2 * o * r * d_in;
      break;
    case LinearStrategy::bilateral:
      f.scaling = pool + (2 * r * d * np + r * np) + (2 * np * d * r + np * r) + 2 * r * np * r;
      f.fixed = 2 * o * r * r + 2 * o * r * d_in;
      break;
  }
  return f;
}

FlopCount dwc_delta_flops(DwcStrategy s, std::size_t channels, std::size_t kernel, Grid grid) {
  const u64 d = channels, kk = kernel * kernel, n = grid.tokens();
  const FlopCount cell_mlp{d * kk + 2 * d * d * kk + 2 * d * kk + 2 * d * d * kk + d * kk, d * n};
  FlopCount f;
  switch (s) {
    case DwcStrategy::gap:
      f.scaling = d * n;
      f.fixed = d + 2 * d * d + 2 * d + 2 * d * (d * kk) + d * kk;
      break;
    case DwcStrategy::adaptive:
      f = cell_mlp;
      break;
    case DwcStrategy::ampdir:
      f = cell_mlp;
      f.scaling += d * n;
      f.fixed += d + 2 * d * d + d + (3 * d * kk + 2 * d) + d * kk;
      break;
    case DwcStrategy::conv: {
      const u64 b = std::max<u64>(1, d / 4);
      f.scaling = 2 * b * d * 9 * n + b * n + b * n + 2 * d * b * 9 * n + d * n + d * n;
      f.fixed = d * kk;
      break;
    }
  }
  return f;
}

CostReport block_cost(const BlockConfig& cfg, Grid grid) {
  const u64 d = cfg.width, h = cfg.hidden(), kk = cfg.kernel * cfg.kernel, n = grid.tokens();
  CostReport c;
  c.params = 2 * d + d * kk + mlp_params(d, h);
  c.flops.scaling = 7 * n * d + 2 * d * n * kk + n * d;
  c.flops += mlp_flops(n, d, h);
  if (cfg.kind == BlockKind::dynamic_block) {
    c.params += dwc_delta_params(cfg.dwc_strategy, d, cfg.kernel);
    c.flops += dwc_delta_flops(cfg.dwc_strategy, d, cfg.kernel, grid);
    c.flops.fixed += d * kk;
    c.params += linear_delta_params(cfg.linear_strategy, d, h, cfg.rank);
    c.flops += linear_delta_flops(cfg.linear_strategy, d, h, cfg.rank, grid, cfg.pool_factor);
    c.flops.fixed += h * d;
    if (cfg.dynamic_fc2) {
      c.params += linear_delta_params(cfg.linear_strategy, h, d, cfg.rank);
      c.flops += linear_delta_flops(cfg.linear_strategy, h, d, cfg.rank, grid, cfg.pool_factor);
      c.flops.fixed += d * h;
    }
  }
  return c;
}

CostReport attention_block_cost(std::size_t width, std::size_t mlp_ratio, std::size_t tokens) {
  const u64 d = width, h = width * mlp_ratio, n = tokens;
  CostReport c;
  c.params = 2 * d + 3 * d * d + mlp_params(d, h);
  c.flops.scaling = 7 * n * d + 6 * n * d * d + 2 * n * n * d + n * n + 5 * n * n + 2 * n * n * d + n * d;
  c.flops += mlp_flops(n, d, h);
  return c;
}

CostReport count_params_flops(const ModelConfig& cfg) {
  cfg.validate();
  const Grid grid = cfg.grid();
  const u64 d = cfg.width, n = grid.tokens(), row = cfg.in_channels * cfg.patch * cfg.patch;
  const u64 classes = cfg.num_classes;
  CostReport c;
  c.params = row * d + d + 2 * d + classes * d + classes;
  c.flops.scaling = 2 * n * row * d + n * d + 7 * n * d + n * d;
  c.flops.fixed = d + 2 * d * classes + classes;
  for (std::size_t i = 0; i < cfg.depth; ++i) {
    const CostReport b = block_cost(cfg.block(i), grid);
    c.params += b.params;
    c.flops += b.flops;
  }
  return c;
}

}  // namespace wf
