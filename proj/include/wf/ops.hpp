#pragma once

#include <string_view>

#include "wf/tensor.hpp"

// Forward kernels on plain tensors. Every op validates shapes, throws the
// matching error type, and rejects non-finite results with EvaluationError.
namespace wf {

enum class Activation { silu, gelu, sigmoid, softmax_row };

Activation parse_activation(std::string_view name);
std::string_view activation_name(Activation kind);

struct Grid {
  std::size_t height = 0;
  std::size_t width = 0;

  std::size_t tokens() const { return height * width; }
  friend bool operator==(const Grid&, const Grid&) = default;
};

inline constexpr double kLayerNormEps = 1e-6;

namespace ops {

void check_finite(const Tensor& t, std::string_view op);

Tensor matmul(const Tensor& a, const Tensor& b);
/// aᵀ·b without materializing the transpose.
Tensor matmul_tn(const Tensor& a, const Tensor& b);
/// a·bᵀ without materializing the transpose.
Tensor matmul_nt(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor softmax(const Tensor& x, std::size_t axis);
Tensor activation(Activation kind, const Tensor& x);
/// Derivative of the activation applied to upstream gradient `g`, given the
/// forward input `x` and output `y`.
Tensor activation_backward(Activation kind, const Tensor& x, const Tensor& y, const Tensor& g);

/// Mean over tokens: [N, d] -> [d].
Tensor global_avg_pool(const Tensor& x);

/// [d, H, W] -> [d, h, w]; cell (i, j) averages rows [floor(iH/h), ceil((i+1)H/h)).
Tensor adaptive_avg_pool(const Tensor& x, std::size_t out_h, std::size_t out_w);
Tensor adaptive_avg_pool_backward(const Tensor& g, const Shape& input_shape);

/// Per-channel same-padded cross-correlation. x: [d, H, W], kernel: [d, K, K], K odd.
Tensor depthwise_conv2d(const Tensor& x, const Tensor& kernel);
void depthwise_conv2d_backward(const Tensor& x, const Tensor& kernel, const Tensor& g,
                               Tensor* gx, Tensor* gk);

/// Dense same-padded convolution. x: [c_in, H, W], w: [c_out, c_in, K, K], bias: [c_out].
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias);
void conv2d_backward(const Tensor& x, const Tensor& w, const Tensor& g, Tensor* gx, Tensor* gw,
                     Tensor* gb);

struct LayerNormStats {
  std::vector<double> mean;
  std::vector<double> inv_std;
};
/// Per-token normalization of x: [N, d] with affine gamma, beta: [d].
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  LayerNormStats* stats = nullptr);

/// Token matrix [N, d] on grid (H, W) -> feature map [d, H, W].
Tensor tokens_to_map(const Tensor& x, Grid grid);
/// Feature map [d, H, W] -> token matrix [H*W, d].
Tensor map_to_tokens(const Tensor& x);

/// Image [c, H, W] -> non-overlapping patch rows [(H/p)*(W/p), c*p*p].
Tensor patchify(const Tensor& image, std::size_t patch);
Tensor unpatchify(const Tensor& patches, const Shape& image_shape, std::size_t patch);

}  // namespace ops
}  // namespace wf
