#pragma once

#include <cmath>
#include <vector>

#include "wf/tensor.hpp"

namespace oracle {

using wf::Tensor;

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor c({m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      long double s = 0;
      for (std::size_t p = 0; p < k; ++p) s += static_cast<long double>(a.at(i, p)) * b.at(p, j);
      c.at(i, j) = static_cast<double>(s);
    }
  return c;
}

inline Tensor transpose(const Tensor& a) {
  Tensor t({a.dim(1), a.dim(0)});
  for (std::size_t i = 0; i < a.dim(0); ++i)
    for (std::size_t j = 0; j < a.dim(1); ++j) t.at(j, i) = a.at(i, j);
  return t;
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
inline double silu(double x) { return x * sigmoid(x); }
inline double gelu(double x) {
  return static_cast<double>(0.5L * x * (1.0L + std::erf(static_cast<long double>(x) / std::sqrt(2.0L))));
}

template <typename F>
Tensor map(const Tensor& t, F f) {
  Tensor out = t;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(out[i]);
  return out;
}

/// Window-enumeration adaptive average pool on [d, H, W].
inline Tensor adaptive_pool(const Tensor& x, std::size_t h, std::size_t w) {
  const std::size_t d = x.dim(0), H = x.dim(1), W = x.dim(2);
  Tensor out({d, h, w});
  for (std::size_t c = 0; c < d; ++c)
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j) {
        const std::size_t r0 = i * H / h, r1 = ((i + 1) * H + h - 1) / h;
        const std::size_t c0 = j * W / w, c1 = ((j + 1) * W + w - 1) / w;
        double s = 0.0;
        for (std::size_t r = r0; r < r1; ++r)
          for (std::size_t q = c0; q < c1; ++q) s += x.at(c, r, q);
        out.at(c, i, j) = s / static_cast<double>((r1 - r0) * (c1 - c0));
      }
  return out;
}

inline double padded(const Tensor& x, std::size_t c, long i, long j) {
  if (i < 0 || j < 0 || i >= static_cast<long>(x.dim(1)) || j >= static_cast<long>(x.dim(2))) return 0.0;
  return x.at(c, static_cast<std::size_t>(i), static_cast<std::size_t>(j));
}

inline Tensor depthwise_conv(const Tensor& x, const Tensor& k) {
  const std::size_t d = x.dim(0), H = x.dim(1), W = x.dim(2), K = k.dim(1);
  const long r = static_cast<long>(K / 2);
  Tensor out({d, H, W});
  for (std::size_t c = 0; c < d; ++c)
    for (std::size_t i = 0; i < H; ++i)
      for (std::size_t j = 0; j < W; ++j) {
        double s = 0.0;
        for (std::size_t a = 0; a < K; ++a)
          for (std::size_t b = 0; b < K; ++b)
            s += k.at(c, a, b) * padded(x, c, static_cast<long>(i + a) - r, static_cast<long>(j + b) - r);
        out.at(c, i, j) = s;
      }
  return out;
}

/// Dense same-padded conv, w: [cout, cin, K, K].
inline Tensor conv(const Tensor& x, const Tensor& w, const Tensor& bias) {
  const std::size_t cin = x.dim(0), H = x.dim(1), W = x.dim(2), cout = w.dim(0), K = w.dim(2);
  const long r = static_cast<long>(K / 2);
  Tensor out({cout, H, W});
  for (std::size_t o = 0; o < cout; ++o)
    for (std::size_t i = 0; i < H; ++i)
      for (std::size_t j = 0; j < W; ++j) {
        double s = bias[o];
        for (std::size_t c = 0; c < cin; ++c)
          for (std::size_t a = 0; a < K; ++a)
            for (std::size_t b = 0; b < K; ++b)
              s += w[((o * cin + c) * K + a) * K + b] *
                   padded(x, c, static_cast<long>(i + a) - r, static_cast<long>(j + b) - r);
        out.at(o, i, j) = s;
      }
  return out;
}

/// [N, d] tokens on an (h, w) grid to [d, h, w].
inline Tensor to_map(const Tensor& x, std::size_t h, std::size_t w) {
  Tensor m({x.dim(1), h, w});
  for (std::size_t c = 0; c < x.dim(1); ++c)
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j) m.at(c, i, j) = x.at(i * w + j, c);
  return m;
}

inline Tensor to_tokens(const Tensor& m) {
  const std::size_t d = m.dim(0), h = m.dim(1), w = m.dim(2);
  Tensor x({h * w, d});
  for (std::size_t c = 0; c < d; ++c)
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j) x.at(i * w + j, c) = m.at(c, i, j);
  return x;
}

inline Tensor layer_norm(const Tensor& x, const Tensor& g, const Tensor& b) {
  Tensor y(x.shape());
  const std::size_t n = x.dim(0), d = x.dim(1);
  for (std::size_t i = 0; i < n; ++i) {
    double mean = 0.0, var = 0.0;
    for (std::size_t c = 0; c < d; ++c) mean += x.at(i, c);
    mean /= static_cast<double>(d);
    for (std::size_t c = 0; c < d; ++c) var += (x.at(i, c) - mean) * (x.at(i, c) - mean);
    var /= static_cast<double>(d);
    for (std::size_t c = 0; c < d; ++c) y.at(i, c) = (x.at(i, c) - mean) / std::sqrt(var + 1e-6) * g[c] + b[c];
  }
  return y;
}

/// x: [N, in], w: [out, in] -> x w^T + b.
inline Tensor dense(const Tensor& x, const Tensor& w, const Tensor& b) {
  Tensor y = matmul(x, transpose(w));
  for (std::size_t i = 0; i < y.dim(0); ++i)
    for (std::size_t j = 0; j < y.dim(1); ++j) y.at(i, j) += b[j];
  return y;
}

inline Tensor column_mean(const Tensor& x) {
  Tensor m({x.dim(1)});
  for (std::size_t i = 0; i < x.dim(0); ++i)
    for (std::size_t c = 0; c < x.dim(1); ++c) m[c] += x.at(i, c) / static_cast<double>(x.dim(0));
  return m;
}

inline double frobenius(const Tensor& t) {
  long double s = 0;
  for (std::size_t i = 0; i < t.size(); ++i) s += static_cast<long double>(t[i]) * t[i];
  return static_cast<double>(std::sqrt(s));
}

}  // namespace oracle
