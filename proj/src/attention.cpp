#include "wf/attention.hpp"

#include <cmath>
#include <ostream>

namespace wf {

namespace {

void check_params(const Tensor& x, const AttentionParams& p) {
  if (x.rank() != 2) throw DimensionError("attention: X must be [N, d], got " + to_string(x.shape()));
  const std::size_t d = x.dim(1);
  for (const Tensor* w : {&p.wq, &p.wk, &p.wv}) {
    if (w->shape() != Shape{d, d}) {
      throw DimensionError("attention: projection " + to_string(w->shape()) +
                           " does not match width " + std::to_string(d));
    }
  }
}

}  // namespace

AttentionParams AttentionParams::random(std::size_t d, Rng& rng) {
  const double std = 1.0 / std::sqrt(static_cast<double>(d));
  AttentionParams p;
  p.wq = Tensor::randn({d, d}, rng, std);
  p.wk = Tensor::randn({d, d}, rng, std);
  p.wv = Tensor::randn({d, d}, rng, std);
  return p;
}

Var attention_explicit(Var x, Var wq, Var wk, Var wv) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(x.dim(1)));
  Var q = ag::matmul(x, wq);
  Var k = ag::matmul(x, wk);
  Var v = ag::matmul(x, wv);
  Var a = ag::softmax(ag::scale(ag::matmul(q, ag::transpose(k)), scale), 1);
  return ag::matmul(a, v);
}

Tensor attention_explicit(const Tensor& x, const AttentionParams& p) {
  check_params(x, p);
  Tape tape(false);
  Var out = attention_explicit(tape.constant(x), tape.constant(p.wq), tape.constant(p.wk),
                               tape.constant(p.wv));
  return out.value();
}

Tensor attention_matrix(const Tensor& x, const AttentionParams& p) {
  check_params(x, p);
  const double scale = 1.0 / std::sqrt(static_cast<double>(x.dim(1)));
  Tensor scores = ops::matmul_nt(ops::matmul(x, p.wq), ops::matmul(x, p.wk));
  scores *= scale;
  return ops::softmax(scores, 1);
}

Tensor attention_dynamic_mlp(const Tensor& x, const AttentionParams& p) {
  check_params(x, p);
  const std::size_t n = x.dim(0), d = x.dim(1);
  if (n == 0) throw DomainError("attention: empty sequence");
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));

  // Dynamic parameters G(X): layer-1 weights Kᵀ/sqrt(d) and layer-2 weights V.
  const Tensor q = ops::matmul(x, p.wq);
  const Tensor k = ops::matmul(x, p.wk);
  const Tensor v = ops::matmul(x, p.wv);

  Tensor out({n, d});
  Tensor hidden({n});
  for (std::size_t i = 0; i < n; ++i) {
    const double* qi = q.raw() + i * d;
    double peak = -INFINITY;
    for (std::size_t j = 0; j < n; ++j) {
      const double* kj = k.raw() + j * d;
      double s = 0.0;
      for (std::size_t c = 0; c < d; ++c) s += qi[c] * (kj[c] * scale);
      hidden[j] = s;
      peak = std::max(peak, s);
    }
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      hidden[j] = std::exp(hidden[j] - peak);
      total += hidden[j];
    }
    const double inv = 1.0 / total;
    double* oi = out.raw() + i * d;
    for (std::size_t j = 0; j < n; ++j) {
      const double w = hidden[j] * inv;
      const double* vj = v.raw() + j * d;
      for (std::size_t c = 0; c < d; ++c) oi[c] += w * vj[c];
    }
  }
  ops::check_finite(out, "attention_dynamic_mlp");
  return out;
}

std::vector<EquivalenceRow> equivalence_report(
    const std::vector<std::uint64_t>& seeds,
    const std::vector<std::pair<std::size_t, std::size_t>>& sizes, double tolerance) {
  if (sizes.empty()) throw ConfigError("equivalence_report: no sizes given");
  std::vector<EquivalenceRow> rows;
  for (std::uint64_t seed : seeds) {
    for (auto [n, d] : sizes) {
      Rng rng(seed * 1000003ULL + n * 131ULL + d);
      const Tensor x = Tensor::randn({n, d}, rng);
      const AttentionParams p = AttentionParams::random(d, rng);
      EquivalenceRow row{seed, n, d, 0.0, false};
      row.max_abs_diff = max_abs_diff(attention_explicit(x, p), attention_dynamic_mlp(x, p));
      row.pass = row.max_abs_diff < tolerance;
      rows.push_back(row);
    }
  }
  return rows;
}

void write_equivalence_csv(std::ostream& os, const std::vector<EquivalenceRow>& rows) {
  os << "seed,N,d,max_abs_diff\n";
  const auto old = os.precision(17);
  for (const auto& r : rows) {
    os << r.seed << ',' << r.tokens << ',' << r.width << ',' << r.max_abs_diff << '\n';
  }
  os.precision(old);
}

}  // namespace wf
