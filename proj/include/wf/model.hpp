#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "wf/attention.hpp"
#include "wf/dyn_dwc.hpp"
#include "wf/dyn_linear.hpp"

namespace wf {

enum class BlockKind { static_block, dynamic_block };

/// Config names: "static", "dynamic".
BlockKind parse_block_kind(std::string_view name);
std::string_view block_kind_name(BlockKind kind);

struct BlockConfig {
  BlockKind kind = BlockKind::static_block;
  std::size_t width = 64;
  std::size_t mlp_ratio = 4;
  std::size_t kernel = 3;
  LinearStrategy linear_strategy = LinearStrategy::bilateral;
  DwcStrategy dwc_strategy = DwcStrategy::adaptive;
  std::size_t rank = 0;
  std::size_t pool_factor = 2;
  Activation predictor_activation = Activation::silu;
  Activation mlp_activation = Activation::gelu;
  bool dynamic_fc2 = false;
  bool per_channel_norm = true;

  std::size_t hidden() const { return width * mlp_ratio; }
};

/// Dynamic block indices {period-1, 2*period-1, ...} below depth.
std::vector<std::size_t> placement(std::int64_t depth, std::int64_t period);

/// Evenly spread indices for exactly n dynamic blocks: ceil((k+1)*depth/n) - 1.
std::vector<std::size_t> placement_for_count(std::size_t depth, std::size_t n);

struct ModelConfig {
  std::size_t depth = 18;
  std::int64_t period = 3;
  /// Overrides the periodic placement when set. An empty list means all static.
  std::optional<std::vector<std::size_t>> dynamic_blocks;
  std::size_t patch = 4;
  std::size_t width = 64;
  std::size_t num_classes = 4;
  std::size_t in_channels = 3;
  std::size_t image_height = 32;
  std::size_t image_width = 32;

  std::size_t mlp_ratio = 4;
  std::size_t kernel = 3;
  LinearStrategy linear_strategy = LinearStrategy::bilateral;
  DwcStrategy dwc_strategy = DwcStrategy::adaptive;
  std::size_t rank = 0;
  std::size_t pool_factor = 2;
  Activation predictor_activation = Activation::silu;
  Activation mlp_activation = Activation::gelu;
  bool dynamic_fc2 = false;
  bool per_channel_norm = true;

  std::vector<std::size_t> dynamic_indices() const;
  BlockConfig block(std::size_t index) const;
  Grid grid() const;
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// The desk-scale default: depth 18, width 64, patch 4 on 32x32 inputs.
ModelConfig wf_micro();

struct BlockParams {
  Activation mlp_activation = Activation::gelu;
  Tensor ln1_g, ln1_b;
  DynamicDwcLayer dwc;
  Tensor ln2_g, ln2_b;
  DynamicLinearLayer fc1;
  DynamicLinearLayer fc2;

  bool dynamic() const { return dwc.delta || fc1.delta || fc2.delta; }

  template <typename Fn>
  void visit(const std::string& prefix, Fn&& fn) {
    fn(prefix + "ln1.g", ln1_g);
    fn(prefix + "ln1.b", ln1_b);
    fn(prefix + "dwc.k0", dwc.k0);
    if (dwc.delta) dwc.delta->visit([&](const char* n, Tensor& t) { fn(prefix + "dwc.delta." + n, t); });
    fn(prefix + "ln2.g", ln2_g);
    fn(prefix + "ln2.b", ln2_b);
    visit_linear(prefix + "fc1.", fc1, fn);
    visit_linear(prefix + "fc2.", fc2, fn);
  }

 private:
  template <typename Fn>
  static void visit_linear(const std::string& prefix, DynamicLinearLayer& layer, Fn& fn) {
    fn(prefix + "w", layer.w0);
    fn(prefix + "b", layer.bias);
    if (layer.delta) layer.delta->visit([&](const char* n, Tensor& t) { fn(prefix + "delta." + n, t); });
  }
};

struct InitOptions {
  double weight_std = 0.02;
  /// Zero the last predictor projection in every dynamic layer, so the model
  /// starts out equal to its static counterpart.
  bool zero_predictors = true;
};

/// Static weights draw from `rng`, predictor weights from `predictor_rng`
/// (or `rng` when null), so static and dynamic models built from the same
/// seed share their static weights.
BlockParams make_block(const BlockConfig& cfg, Rng& rng, const InitOptions& options = {},
                       Rng* predictor_rng = nullptr);

struct Model {
  ModelConfig config;
  Tensor patch_w, patch_b;
  std::vector<BlockParams> blocks;
  Tensor norm_g, norm_b;
  Tensor head_w, head_b;

  template <typename Fn>
  void visit(Fn&& fn) {
    fn(std::string("patch.w"), patch_w);
    fn(std::string("patch.b"), patch_b);
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      blocks[i].visit("blocks." + std::to_string(i) + ".", fn);
    }
    fn(std::string("norm.g"), norm_g);
    fn(std::string("norm.b"), norm_b);
    fn(std::string("head.w"), head_w);
    fn(std::string("head.b"), head_b);
  }
  std::size_t parameter_count() const;
};

Model init_model(const ModelConfig& cfg, Rng& rng, const InitOptions& options = {});

/// Same static weights with every predictor removed.
Model to_static(const Model& model);

/// Dynamic weights seen during a forward pass.
struct ForwardTrace {
  struct Entry {
    std::size_t block = 0;
    std::string kind;  // "dwc", "fc1" or "fc2"
    Tensor w0;
    Tensor delta;
  };
  std::vector<Entry> entries;
};

Var block_forward(Tape& tape, Var x, Grid grid, const BlockParams& params,
                  ForwardTrace* trace = nullptr, std::size_t block_index = 0);
Tensor block_forward(const Tensor& x, Grid grid, const BlockParams& params);

/// Patch embedding followed by every block: returns tokens [N, d].
Var model_features(Tape& tape, Var image, const Model& model, ForwardTrace* trace = nullptr);
/// Features, final LayerNorm, token mean and classifier head: returns logits.
Var model_forward(Tape& tape, Var image, const Model& model, ForwardTrace* trace = nullptr);
Tensor model_forward(const Tensor& image, const Model& model);

/// Pre-norm transformer block with single-head attention in place of the
/// depthwise convolution; used as the quadratic reference in benchmarks.
struct AttentionBlockParams {
  Tensor ln1_g, ln1_b;
  AttentionParams attn;
  Tensor ln2_g, ln2_b;
  DynamicLinearLayer fc1, fc2;
  Activation mlp_activation = Activation::gelu;
};

AttentionBlockParams make_attention_block(std::size_t width, std::size_t mlp_ratio, Rng& rng,
                                          double weight_std = 0.02);
Var attention_block_forward(Tape& tape, Var x, const AttentionBlockParams& params);
Tensor attention_block_forward(const Tensor& x, const AttentionBlockParams& params);

/// Floating-point operation count split into a part that does not depend on
/// the token count and a part that does.
struct FlopCount {
  std::uint64_t fixed = 0;
  std::uint64_t scaling = 0;

  std::uint64_t total() const { return fixed + scaling; }
  FlopCount& operator+=(const FlopCount& o) {
    fixed += o.fixed;
    scaling += o.scaling;
    return *this;
  }
  friend bool operator==(const FlopCount&, const FlopCount&) = default;
};

struct CostReport {
  std::uint64_t params = 0;
  FlopCount flops;
};

std::uint64_t linear_delta_params(LinearStrategy s, std::size_t d_in, std::size_t d_out, std::size_t rank);
std::uint64_t dwc_delta_params(DwcStrategy s, std::size_t d, std::size_t kernel);
FlopCount linear_delta_flops(LinearStrategy s, std::size_t d_in, std::size_t d_out, std::size_t rank,
                             Grid grid, std::size_t pool_factor);
FlopCount dwc_delta_flops(DwcStrategy s, std::size_t d, std::size_t kernel, Grid grid);

CostReport block_cost(const BlockConfig& cfg, Grid grid);
/// Pre-norm attention block of the same width: single-head attention without
/// output projection, followed by the same MLP as a static block.
CostReport attention_block_cost(std::size_t width, std::size_t mlp_ratio, std::size_t tokens);
CostReport count_params_flops(const ModelConfig& cfg);

}  // namespace wf
