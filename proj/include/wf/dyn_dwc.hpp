#pragma once

#include <optional>
#include <string_view>

#include "wf/autograd.hpp"

namespace wf {

enum class DwcStrategy { gap, adaptive, ampdir, conv };

/// Config names: "gap", "adaptive", "ampdir", "conv".
DwcStrategy parse_dwc_strategy(std::string_view name);
std::string_view dwc_strategy_name(DwcStrategy s);

/// Predictor for a depthwise kernel update ΔK of shape [d, K, K].
///
///   gap:      mlp_w1 [d, d], mlp_b1 [d], mlp_w2 [d*K*K, d], mlp_b2 [d*K*K]
///   adaptive: per-cell MLP over the K x K pooled grid, mlp_w1/mlp_w2 [d, d], biases [d]
///   ampdir:   the adaptive MLP as direction, plus amp_w [d, d] for the amplitude
///   conv:     conv1_w [b, d, 3, 3], conv1_b [b], conv2_w [d, b, 3, 3], conv2_b [d]
///             with bottleneck width b = max(1, d / bottleneck)
struct DwcDeltaSpec {
  DwcStrategy strategy = DwcStrategy::adaptive;
  std::size_t channels = 0;
  std::size_t kernel = 3;
  double eps = 1e-6;
  std::size_t bottleneck = 4;
  /// Amp-Dir direction normalized per channel slice (true) or over the whole kernel.
  bool per_channel_norm = true;
  Activation activation = Activation::silu;

  Tensor mlp_w1, mlp_b1, mlp_w2, mlp_b2;
  Tensor amp_w;
  Tensor conv1_w, conv1_b, conv2_w, conv2_b;

  std::size_t bottleneck_width() const;
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
    if (self.strategy == DwcStrategy::conv) {
      fn("conv1_w", self.conv1_w);
      fn("conv1_b", self.conv1_b);
      fn("conv2_w", self.conv2_w);
      fn("conv2_b", self.conv2_b);
      return;
    }
    if (self.strategy == DwcStrategy::ampdir) fn("amp_w", self.amp_w);
    fn("mlp_w1", self.mlp_w1);
    fn("mlp_b1", self.mlp_b1);
    fn("mlp_w2", self.mlp_w2);
    fn("mlp_b2", self.mlp_b2);
  }
};

struct DwcDeltaOptions {
  std::size_t kernel = 3;
  std::size_t bottleneck = 4;
  double eps = 1e-6;
  bool per_channel_norm = true;
  Activation activation = Activation::silu;
  /// Zero the final predictor layer so ΔK starts at 0.
  bool zero_final = true;
};

DwcDeltaSpec make_dwc_delta(DwcStrategy strategy, std::size_t channels,
                            const DwcDeltaOptions& options, Rng& rng);

/// K(X) = K0 + ΔK(X). Without a delta spec the layer is a static depthwise conv.
struct DynamicDwcLayer {
  Tensor k0;
  std::optional<DwcDeltaSpec> delta;
};

Var predict_dwc_delta(Tape& tape, Var x, const DwcDeltaSpec& spec);
Tensor predict_dwc_delta(const Tensor& x, const DwcDeltaSpec& spec);

Var dynamic_dwc_forward(Tape& tape, Var x, const DynamicDwcLayer& layer, Var* delta_out = nullptr);
Tensor dynamic_dwc_forward(const Tensor& x, const DynamicDwcLayer& layer);

}  // namespace wf
