#include "wf/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numbers>

namespace wf {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

ConstMap as_matrix(const Tensor& t) {
  return ConstMap(t.raw(), static_cast<Eigen::Index>(t.dim(0)), static_cast<Eigen::Index>(t.dim(1)));
}

MutMap as_matrix(Tensor& t) {
  return MutMap(t.raw(), static_cast<Eigen::Index>(t.dim(0)), static_cast<Eigen::Index>(t.dim(1)));
}

void require_rank(const Tensor& t, std::size_t rank, std::string_view op) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) +
                         ", got shape " + to_string(t.shape()));
  }
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

double normal_pdf(double x) {
  return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
}

// Pooling window along one axis.
std::size_t window_begin(std::size_t i, std::size_t in, std::size_t out) { return (i * in) / out; }
std::size_t window_end(std::size_t i, std::size_t in, std::size_t out) {
  return ((i + 1) * in + out - 1) / out;
}

}  // namespace

Activation parse_activation(std::string_view name) {
  if (name == "silu") return Activation::silu;
  if (name == "gelu") return Activation::gelu;
  if (name == "sigmoid") return Activation::sigmoid;
  if (name == "softmax-row") return Activation::softmax_row;
  throw ConfigError("unknown activation '" + std::string(name) + "'");
}

std::string_view activation_name(Activation kind) {
  switch (kind) {
    case Activation::silu: return "silu";
    case Activation::gelu: return "gelu";
    case Activation::sigmoid: return "sigmoid";
    case Activation::softmax_row: return "softmax-row";
  }
  return "?";
}

namespace ops {

void check_finite(const Tensor& t, std::string_view op) {
  if (!t.all_finite()) {
    throw EvaluationError(std::string(op) + " produced a non-finite value");
  }
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  if (a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: inner extents differ: " + to_string(a.shape()) + " x " +
                         to_string(b.shape()));
  }
  Tensor c({a.dim(0), b.dim(1)});
  as_matrix(c).noalias() = as_matrix(a) * as_matrix(b);
  check_finite(c, "matmul");
  return c;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul_tn");
  require_rank(b, 2, "matmul_tn");
  if (a.dim(0) != b.dim(0)) {
    throw DimensionError("matmul_tn: leading extents differ: " + to_string(a.shape()) + " vs " +
                         to_string(b.shape()));
  }
  Tensor c({a.dim(1), b.dim(1)});
  as_matrix(c).noalias() = as_matrix(a).transpose() * as_matrix(b);
  check_finite(c, "matmul_tn");
  return c;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul_nt");
  require_rank(b, 2, "matmul_nt");
  if (a.dim(1) != b.dim(1)) {
    throw DimensionError("matmul_nt: trailing extents differ: " + to_string(a.shape()) + " vs " +
                         to_string(b.shape()));
  }
  Tensor c({a.dim(0), b.dim(0)});
  as_matrix(c).noalias() = as_matrix(a) * as_matrix(b).transpose();
  check_finite(c, "matmul_nt");
  return c;
}

Tensor transpose(const Tensor& a) {
  require_rank(a, 2, "transpose");
  const std::size_t rows = a.dim(0), cols = a.dim(1);
  Tensor t({cols, rows});
  constexpr std::size_t row_tile = 64, col_tile = 8;
  const double* src = a.raw();
  double* dst = t.raw();
  for (std::size_t i0 = 0; i0 < rows; i0 += row_tile) {
    const std::size_t i1 = std::min(rows, i0 + row_tile);
    for (std::size_t j0 = 0; j0 < cols; j0 += col_tile) {
      const std::size_t j1 = std::min(cols, j0 + col_tile);
      for (std::size_t j = j0; j < j1; ++j) {
        for (std::size_t i = i0; i < i1; ++i) dst[j * rows + i] = src[i * cols + j];
      }
    }
  }
  return t;
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  if (axis >= x.rank()) {
    throw DimensionError("softmax: axis " + std::to_string(axis) + " invalid for shape " +
                         to_string(x.shape()));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  const std::size_t len = x.dim(axis);
  Tensor y(x.shape());
  const double* in = x.raw();
  double* out = y.raw();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t r = 0; r < inner; ++r) {
      const std::size_t base = o * len * inner + r;
      double m = in[base];
      for (std::size_t k = 1; k < len; ++k) m = std::max(m, in[base + k * inner]);
      double s = 0.0;
      for (std::size_t k = 0; k < len; ++k) {
        const double e = std::exp(in[base + k * inner] - m);
        out[base + k * inner] = e;
        s += e;
      }
      const double inv = 1.0 / s;
      for (std::size_t k = 0; k < len; ++k) out[base + k * inner] *= inv;
    }
  }
  check_finite(y, "softmax");
  return y;
}

Tensor activation(Activation kind, const Tensor& x) {
  if (kind == Activation::softmax_row) {
    if (x.rank() == 0) throw DimensionError("softmax-row on a scalar");
    return softmax(x, x.rank() - 1);
  }
  Tensor y(x.shape());
  const double* in = x.raw();
  double* out = y.raw();
  const std::size_t n = x.size();
  switch (kind) {
    case Activation::silu:
      for (std::size_t i = 0; i < n; ++i) out[i] = in[i] * sigmoid(in[i]);
      break;
    case Activation::gelu:
      for (std::size_t i = 0; i < n; ++i) out[i] = in[i] * normal_cdf(in[i]);
      break;
    case Activation::sigmoid:
      for (std::size_t i = 0; i < n; ++i) out[i] = sigmoid(in[i]);
      break;
    case Activation::softmax_row: break;
  }
  check_finite(y, activation_name(kind));
  return y;
}

Tensor activation_backward(Activation kind, const Tensor& x, const Tensor& y, const Tensor& g) {
  Tensor gx(x.shape());
  const std::size_t n = x.size();
  switch (kind) {
    case Activation::silu:
      for (std::size_t i = 0; i < n; ++i) {
        const double s = sigmoid(x[i]);
        gx[i] = g[i] * s * (1.0 + x[i] * (1.0 - s));
      }
      break;
    case Activation::gelu:
      for (std::size_t i = 0; i < n; ++i) {
        const double cdf = std::abs(x[i]) > 1e-3 ? y[i] / x[i] : normal_cdf(x[i]);
        gx[i] = g[i] * (cdf + x[i] * normal_pdf(x[i]));
      }
      break;
    case Activation::sigmoid:
      for (std::size_t i = 0; i < n; ++i) gx[i] = g[i] * y[i] * (1.0 - y[i]);
      break;
    case Activation::softmax_row: {
      const std::size_t len = x.dim(x.rank() - 1);
      for (std::size_t base = 0; base < n; base += len) {
        double dot = 0.0;
        for (std::size_t k = 0; k < len; ++k) dot += g[base + k] * y[base + k];
        for (std::size_t k = 0; k < len; ++k) gx[base + k] = y[base + k] * (g[base + k] - dot);
      }
      break;
    }
  }
  return gx;
}

Tensor global_avg_pool(const Tensor& x) {
  require_rank(x, 2, "global_avg_pool");
  const std::size_t n = x.dim(0), d = x.dim(1);
  Tensor z({d});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < d; ++c) z[c] += x.at(i, c);
  }
  z *= 1.0 / static_cast<double>(n);
  return z;
}

Tensor adaptive_avg_pool(const Tensor& x, std::size_t out_h, std::size_t out_w) {
  require_rank(x, 3, "adaptive_avg_pool");
  const std::size_t d = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (out_h < 1 || out_w < 1 || out_h > h || out_w > w) {
    throw DomainError("adaptive_avg_pool: target (" + std::to_string(out_h) + ", " +
                      std::to_string(out_w) + ") invalid for input " + to_string(x.shape()));
  }
  Tensor y({d, out_h, out_w});
  for (std::size_t c = 0; c < d; ++c) {
    for (std::size_t i = 0; i < out_h; ++i) {
      const std::size_t r0 = window_begin(i, h, out_h), r1 = window_end(i, h, out_h);
      for (std::size_t j = 0; j < out_w; ++j) {
        const std::size_t c0 = window_begin(j, w, out_w), c1 = window_end(j, w, out_w);
        double s = 0.0;
        for (std::size_t r = r0; r < r1; ++r) {
          for (std::size_t q = c0; q < c1; ++q) s += x.at(c, r, q);
        }
        y.at(c, i, j) = s / static_cast<double>((r1 - r0) * (c1 - c0));
      }
    }
  }
  return y;
}

Tensor adaptive_avg_pool_backward(const Tensor& g, const Shape& input_shape) {
  const std::size_t d = input_shape[0], h = input_shape[1], w = input_shape[2];
  const std::size_t out_h = g.dim(1), out_w = g.dim(2);
  Tensor gx(input_shape);
  for (std::size_t c = 0; c < d; ++c) {
    for (std::size_t i = 0; i < out_h; ++i) {
      const std::size_t r0 = window_begin(i, h, out_h), r1 = window_end(i, h, out_h);
      for (std::size_t j = 0; j < out_w; ++j) {
        const std::size_t c0 = window_begin(j, w, out_w), c1 = window_end(j, w, out_w);
        const double share = g.at(c, i, j) / static_cast<double>((r1 - r0) * (c1 - c0));
        for (std::size_t r = r0; r < r1; ++r) {
          for (std::size_t q = c0; q < c1; ++q) gx.at(c, r, q) += share;
        }
      }
    }
  }
  return gx;
}

namespace {

void require_odd_kernel(std::size_t k, std::string_view op) {
  if (k % 2 == 0) {
    throw ConfigError(std::string(op) + ": kernel extent must be odd, got " + std::to_string(k));
  }
}

// out[i, j] += sum over taps (u, v) of k[u, v] * in[i + du, j + dv] with (du, dv) = (u, v) - pad, or
// its negation when `flip` is set. Taps are visited in row-major order one output row at a time.
inline void correlate_plane(double* out, const double* in, const double* k, std::size_t kk, bool flip,
                            std::size_t h, std::size_t w) {
  const auto H = static_cast<std::ptrdiff_t>(h), W = static_cast<std::ptrdiff_t>(w);
  const auto K = static_cast<std::ptrdiff_t>(kk), pad = K / 2;
  for (std::ptrdiff_t i = 0; i < H; ++i) {
    double* o = out + i * W;
    for (std::ptrdiff_t u = 0; u < K; ++u) {
      const std::ptrdiff_t r = flip ? i - (u - pad) : i + (u - pad);
      if (r < 0 || r >= H) continue;
      const double* s = in + r * W;
      for (std::ptrdiff_t v = 0; v < K; ++v) {
        const std::ptrdiff_t dv = flip ? pad - v : v - pad;
        const double kv = k[u * K + v];
        const std::ptrdiff_t j0 = std::max<std::ptrdiff_t>(0, -dv), j1 = std::min(W, W - dv);
        const double* sv = s + dv;
        for (std::ptrdiff_t j = j0; j < j1; ++j) o[j] += kv * sv[j];
      }
    }
  }
}

inline double shifted_dot(const double* a, const double* b, std::size_t h, std::size_t w,
                          std::ptrdiff_t du, std::ptrdiff_t dv) {
  const auto H = static_cast<std::ptrdiff_t>(h), W = static_cast<std::ptrdiff_t>(w);
  const std::ptrdiff_t i0 = std::max<std::ptrdiff_t>(0, -du), i1 = std::min(H, H - du);
  const std::ptrdiff_t j0 = std::max<std::ptrdiff_t>(0, -dv), j1 = std::min(W, W - dv);
  double s = 0.0;
  for (std::ptrdiff_t i = i0; i < i1; ++i) {
    const double* ai = a + i * W;
    const double* bi = b + (i + du) * W + dv;
    for (std::ptrdiff_t j = j0; j < j1; ++j) s += ai[j] * bi[j];
  }
  return s;
}

}  // namespace

Tensor depthwise_conv2d(const Tensor& x, const Tensor& kernel) {
  require_rank(x, 3, "depthwise_conv2d");
  require_rank(kernel, 3, "depthwise_conv2d");
  const std::size_t d = x.dim(0), h = x.dim(1), w = x.dim(2), k = kernel.dim(1);
  require_odd_kernel(k, "depthwise_conv2d");
  if (kernel.dim(0) != d || kernel.dim(2) != k) {
    throw DimensionError("depthwise_conv2d: kernel " + to_string(kernel.shape()) +
                         " incompatible with input " + to_string(x.shape()));
  }
  Tensor y(x.shape());
  for (std::size_t c = 0; c < d; ++c) {
    const double* in = x.raw() + c * h * w;
    double* out = y.raw() + c * h * w;
    correlate_plane(out, in, kernel.raw() + c * k * k, k, false, h, w);
  }
  check_finite(y, "depthwise_conv2d");
  return y;
}

void depthwise_conv2d_backward(const Tensor& x, const Tensor& kernel, const Tensor& g, Tensor* gx,
                               Tensor* gk) {
  const std::size_t d = x.dim(0), h = x.dim(1), w = x.dim(2), k = kernel.dim(1);
  const auto pad = static_cast<std::ptrdiff_t>(k / 2);
  if (gx) *gx = Tensor(x.shape());
  if (gk) *gk = Tensor(kernel.shape());
  for (std::size_t c = 0; c < d; ++c) {
    const double* in = x.raw() + c * h * w;
    const double* go = g.raw() + c * h * w;
    if (gx) correlate_plane(gx->raw() + c * h * w, go, kernel.raw() + c * k * k, k, true, h, w);
    if (!gk) continue;
    for (std::size_t u = 0; u < k; ++u) {
      for (std::size_t v = 0; v < k; ++v) {
        const auto du = static_cast<std::ptrdiff_t>(u) - pad;
        const auto dv = static_cast<std::ptrdiff_t>(v) - pad;
        gk->at(c, u, v) = shifted_dot(go, in, h, w, du, dv);
      }
    }
  }
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias) {
  require_rank(x, 3, "conv2d");
  require_rank(w, 4, "conv2d");
  const std::size_t cin = x.dim(0), h = x.dim(1), wd = x.dim(2);
  const std::size_t cout = w.dim(0), k = w.dim(2);
  require_odd_kernel(k, "conv2d");
  if (w.dim(1) != cin || w.dim(3) != k || bias.rank() != 1 || bias.dim(0) != cout) {
    throw DimensionError("conv2d: weight " + to_string(w.shape()) + " / bias " +
                         to_string(bias.shape()) + " incompatible with input " +
                         to_string(x.shape()));
  }
  Tensor y({cout, h, wd});
  for (std::size_t o = 0; o < cout; ++o) {
    double* out = y.raw() + o * h * wd;
    std::fill(out, out + h * wd, bias[o]);
    for (std::size_t i = 0; i < cin; ++i) {
      const double* in = x.raw() + i * h * wd;
      correlate_plane(out, in, w.raw() + (o * cin + i) * k * k, k, false, h, wd);
    }
  }
  check_finite(y, "conv2d");
  return y;
}

void conv2d_backward(const Tensor& x, const Tensor& w, const Tensor& g, Tensor* gx, Tensor* gw,
                     Tensor* gb) {
  const std::size_t cin = x.dim(0), h = x.dim(1), wd = x.dim(2);
  const std::size_t cout = w.dim(0), k = w.dim(2);
  const auto pad = static_cast<std::ptrdiff_t>(k / 2);
  if (gx) *gx = Tensor(x.shape());
  if (gw) *gw = Tensor(w.shape());
  if (gb) *gb = Tensor({cout});
  for (std::size_t o = 0; o < cout; ++o) {
    const double* go = g.raw() + o * h * wd;
    if (gb) {
      double s = 0.0;
      for (std::size_t p = 0; p < h * wd; ++p) s += go[p];
      (*gb)[o] = s;
    }
    for (std::size_t i = 0; i < cin; ++i) {
      const double* in = x.raw() + i * h * wd;
      if (gx) correlate_plane(gx->raw() + i * h * wd, go, w.raw() + (o * cin + i) * k * k, k, true, h, wd);
      if (!gw) continue;
      for (std::size_t u = 0; u < k; ++u) {
        for (std::size_t v = 0; v < k; ++v) {
          const auto du = static_cast<std::ptrdiff_t>(u) - pad;
          const auto dv = static_cast<std::ptrdiff_t>(v) - pad;
          (*gw)[((o * cin + i) * k + u) * k + v] = shifted_dot(go, in, h, wd, du, dv);
        }
      }
    }
  }
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  LayerNormStats* stats) {
  require_rank(x, 2, "layer_norm");
  const std::size_t n = x.dim(0), d = x.dim(1);
  if (gamma.rank() != 1 || beta.rank() != 1 || gamma.dim(0) != d || beta.dim(0) != d) {
    throw DimensionError("layer_norm: affine " + to_string(gamma.shape()) + "/" +
                         to_string(beta.shape()) + " does not match width of " +
                         to_string(x.shape()));
  }
  Tensor y(x.shape());
  if (stats) {
    stats->mean.assign(n, 0.0);
    stats->inv_std.assign(n, 0.0);
  }
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = x.raw() + i * d;
    double mean = 0.0;
    for (std::size_t c = 0; c < d; ++c) mean += row[c];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t c = 0; c < d; ++c) var += (row[c] - mean) * (row[c] - mean);
    var /= static_cast<double>(d);
    const double inv_std = 1.0 / std::sqrt(var + kLayerNormEps);
    double* out = y.raw() + i * d;
    for (std::size_t c = 0; c < d; ++c) out[c] = (row[c] - mean) * inv_std * gamma[c] + beta[c];
    if (stats) {
      stats->mean[i] = mean;
      stats->inv_std[i] = inv_std;
    }
  }
  check_finite(y, "layer_norm");
  return y;
}

Tensor tokens_to_map(const Tensor& x, Grid grid) {
  require_rank(x, 2, "tokens_to_map");
  if (x.dim(0) != grid.tokens()) {
    throw DimensionError("tokens_to_map: " + std::to_string(x.dim(0)) + " tokens on a " +
                         std::to_string(grid.height) + "x" + std::to_string(grid.width) + " grid");
  }
  return transpose(x).reshaped({x.dim(1), grid.height, grid.width});
}

Tensor map_to_tokens(const Tensor& x) {
  require_rank(x, 3, "map_to_tokens");
  return transpose(x.reshaped({x.dim(0), x.dim(1) * x.dim(2)}));
}

Tensor patchify(const Tensor& image, std::size_t patch) {
  require_rank(image, 3, "patchify");
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  if (patch == 0 || h % patch != 0 || w % patch != 0) {
    throw ConfigError("patchify: resolution " + std::to_string(h) + "x" + std::to_string(w) +
                      " not divisible by patch size " + std::to_string(patch));
  }
  const std::size_t gh = h / patch, gw = w / patch, row = c * patch * patch;
  Tensor out({gh * gw, row});
  for (std::size_t pi = 0; pi < gh; ++pi) {
    for (std::size_t pj = 0; pj < gw; ++pj) {
      double* dst = out.raw() + (pi * gw + pj) * row;
      for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t a = 0; a < patch; ++a) {
          for (std::size_t b = 0; b < patch; ++b) {
            *dst++ = image.at(ch, pi * patch + a, pj * patch + b);
          }
        }
      }
    }
  }
  return out;
}

Tensor unpatchify(const Tensor& patches, const Shape& image_shape, std::size_t patch) {
  const std::size_t c = image_shape[0], h = image_shape[1], w = image_shape[2];
  const std::size_t gw = w / patch, row = c * patch * patch;
  Tensor image(image_shape);
  for (std::size_t pi = 0; pi < h / patch; ++pi) {
    for (std::size_t pj = 0; pj < gw; ++pj) {
      const double* src = patches.raw() + (pi * gw + pj) * row;
      for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t a = 0; a < patch; ++a) {
          for (std::size_t b = 0; b < patch; ++b) {
            image.at(ch, pi * patch + a, pj * patch + b) = *src++;
          }
        }
      }
    }
  }
  return image;
}

}  // namespace ops
}  // namespace wf
