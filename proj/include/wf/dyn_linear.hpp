#pragma once

#include <optional>
#include <string_view>

#include "wf/autograd.hpp"

namespace wf {

enum class LinearStrategy { gap, linear, nonlinear, deep, bilateral };

/// Config names: "gap", "linear", "nonlinear", "deep", "bilateral".
LinearStrategy parse_linear_strategy(std::string_view name);
std::string_view linear_strategy_name(LinearStrategy s);

/// Predictor for a dynamic linear update ΔW(X) of shape [d_out, d_in]. The
/// input X has width d_in.
///
/// Factor shapes by strategy (d = d_in, r = rank):
///   linear, nonlinear: w1 [d_out, d], w2 [d, d_in]
///   deep, bilateral:   w1 [d_out, r], w2 [r, d], w3 [d, r], w4 [r, d_in]
///   gap:               mlp_w1 [d, d], mlp_b1 [d], mlp_w2 [d_out*d_in, d], mlp_b2 [d_out*d_in]
struct LinearDeltaSpec {
  LinearStrategy strategy = LinearStrategy::bilateral;
  std::size_t d_in = 0;
  std::size_t d_out = 0;
  std::size_t rank = 0;
  std::size_t pool_factor = 2;
  Activation activation = Activation::silu;

  Tensor w1, w2, w3, w4;
  Tensor mlp_w1, mlp_b1, mlp_w2, mlp_b2;

  void validate() const;
  template <typename Fn>
  void visit(Fn&& fn) {
    visit_impl(*this, fn);
  }
  template <typename Fn>
  void visit(Fn&& fn) const {
    visit_impl(*this, fn);
  }

 private:
  template <typename Self, typename Fn>
  static void visit_impl(Self& self, Fn& fn) {
    if (self.strategy == LinearStrategy::gap) {
      fn("mlp_w1", self.mlp_w1);
      fn("mlp_b1", self.mlp_b1);
      fn("mlp_w2", self.mlp_w2);
      fn("mlp_b2", self.mlp_b2);
      return;
    }
    fn("w1", self.w1);
    fn("w2", self.w2);
    if (self.strategy == LinearStrategy::deep || self.strategy == LinearStrategy::bilateral) {
      fn("w3", self.w3);
      fn("w4", self.w4);
    }
  }
};

struct LinearDeltaOptions {
  std::size_t rank = 0;  // 0 selects max(1, d_in / 4)
  std::size_t pool_factor = 2;
  Activation activation = Activation::silu;
  /// Zero the last projection (w1, or the final GAP-MLP layer) so ΔW starts at 0.
  bool zero_final = true;
};

LinearDeltaSpec make_linear_delta(LinearStrategy strategy, std::size_t d_in, std::size_t d_out,
                                  const LinearDeltaOptions& options, Rng& rng);

/// W(X) = W0 + ΔW(X), applied as Y = X W(X)ᵀ + bias. Without a delta spec the
/// layer is static.
struct DynamicLinearLayer {
  Tensor w0;
  Tensor bias;
  std::optional<LinearDeltaSpec> delta;
};

/// Tokens [N, d] on grid (H, W) -> adaptive-average-pooled tokens on the
/// (ceil(H/f), ceil(W/f)) grid.
Var pooled_input(Var x, Grid grid, std::size_t factor);
Tensor pooled_input(const Tensor& x, Grid grid, std::size_t factor);

/// Gram matrix Xpᵀ Xp.
Var correlation(Var xp);
Tensor correlation(const Tensor& xp);

Var predict_linear_delta(Tape& tape, Var x, Grid grid, const LinearDeltaSpec& spec);
Tensor predict_linear_delta(const Tensor& x, Grid grid, const LinearDeltaSpec& spec);

/// When `delta_out` is given and the layer is dynamic, receives ΔW.
Var dynamic_linear_forward(Tape& tape, Var x, Grid grid, const DynamicLinearLayer& layer,
                           Var* delta_out = nullptr);
Tensor dynamic_linear_forward(const Tensor& x, Grid grid, const DynamicLinearLayer& layer);

}  // namespace wf
