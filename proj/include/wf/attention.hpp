#pragma once

#include <cstdint>
#include <iosfwd>
#include <utility>
#include <vector>

#include "wf/autograd.hpp"

namespace wf {

/// Single-head projections, all [d, d].
struct AttentionParams {
  Tensor wq;
  Tensor wk;
  Tensor wv;

  std::size_t width() const { return wq.dim(0); }
  static AttentionParams random(std::size_t d, Rng& rng);
};

/// Softmax(Q Kᵀ / sqrt(d)) V with Q = X Wq, K = X Wk, V = X Wv. Materializes the
/// N x N attention matrix.
Tensor attention_explicit(const Tensor& x, const AttentionParams& p);
Var attention_explicit(Var x, Var wq, Var wk, Var wv);

/// The realized row-stochastic attention matrix A.
Tensor attention_matrix(const Tensor& x, const AttentionParams& p);

/// Same output computed row by row as a two-layer MLP whose layer-1 weights are
/// Kᵀ / sqrt(d) and layer-2 weights are V, with softmax as the nonlinearity.
/// Auxiliary storage per row is O(N + d); no N x N buffer is allocated.
Tensor attention_dynamic_mlp(const Tensor& x, const AttentionParams& p);

struct EquivalenceRow {
  std::uint64_t seed = 0;
  std::size_t tokens = 0;
  std::size_t width = 0;
  double max_abs_diff = 0.0;
  bool pass = false;
};

inline constexpr double kEquivalenceTolerance = 1e-10;

/// Compares both formulations on random (X, params) for every seed and size.
std::vector<EquivalenceRow> equivalence_report(
    const std::vector<std::uint64_t>& seeds,
    const std::vector<std::pair<std::size_t, std::size_t>>& sizes,
    double tolerance = kEquivalenceTolerance);

/// CSV: seed,N,d,max_abs_diff
void write_equivalence_csv(std::ostream& os, const std::vector<EquivalenceRow>& rows);

}  // namespace wf
