#pragma once

#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "wf/model.hpp"

namespace wf {

// Effective receptive field.

struct ErfMap {
  /// [H, W] saliency normalized to max 1 (left as zeros when all zero).
  Tensor grid;
  double tau = 0.01;
  double coverage = 0.0;
};

/// Fraction of cells strictly greater than tau.
double erf_coverage(const Tensor& grid, double tau);

/// Maps an image [c, H, W] to tokens [N, d].
using FeatureFn = std::function<Var(Tape&, Var)>;

/// grid[i, j] = sum_c |d(sum of token `center`'s channels) / d image[c, i, j]|.
ErfMap erf_map(const FeatureFn& features, const Tensor& image, std::size_t center, double tau = 0.01);
/// Uses the model's features after the last block. Without `center` the
/// middle token of the patch grid is used.
ErfMap erf_map(const Model& model, const Tensor& image, std::optional<std::size_t> center = std::nullopt,
               double tau = 0.01);

std::size_t center_token(Grid grid);
void write_erf_csv(std::ostream& os, const ErfMap& map);

// Dynamic strength.

/// ||delta||_F / ||w0||_F, absent when ||w0||_F = 0.
std::optional<double> strength_ratio(const Tensor& w0, const Tensor& delta);

struct StrengthEntry {
  std::size_t layer = 0;
  std::string kind;
  std::optional<double> r;
};
using StrengthProfile = std::vector<StrengthEntry>;

/// Mean ratio over the inputs for every dynamic layer, ordered by depth.
StrengthProfile strength_profile(const Model& model, const std::vector<Tensor>& inputs);
void write_strength_csv(std::ostream& os, const StrengthProfile& profile);
/// Checks the "layer,kind,r" schema; returns an error description or nothing.
std::optional<std::string> validate_strength_csv(const std::string& text);

// Complexity.

enum class BenchSubject { dynamic_block, attention_block };

/// Names: "dynamic_block", "attention_block".
BenchSubject parse_bench_subject(std::string_view name);
std::string_view bench_subject_name(BenchSubject s);

/// Near-square (h, w) with h * w = tokens and h the largest divisor <= sqrt(tokens).
Grid grid_for_tokens(std::size_t tokens);

/// Analytic forward FLOPs of one block of the subject at `tokens`.
FlopCount subject_flops(BenchSubject s, std::size_t width, std::size_t tokens);

/// Local log-log slope d log S / d log N of the token-dependent FLOPs S at N.
double analytic_slope_at(BenchSubject s, std::size_t width, std::size_t tokens);

/// Least-squares slope of log(y) against log(x).
double loglog_slope(const std::vector<double>& x, const std::vector<double>& y);

struct BenchOptions {
  std::size_t width = 64;
  std::size_t repeats = 3;
  /// Forward passes per timed sample.
  std::size_t inner = 1;
  std::uint64_t seed = 0;
};

struct BenchRow {
  BenchSubject subject = BenchSubject::dynamic_block;
  std::size_t tokens = 0;
  double median_ms = 0.0;
  std::uint64_t analytic_flops = 0;
};

struct BenchReport {
  std::vector<BenchRow> rows;
  double measured_slope = 0.0;
  /// Least-squares slope of total analytic FLOPs over the same sizes.
  double analytic_slope = 0.0;
};

/// Median wall time per forward pass over `repeats` samples after as many
/// warm-up samples. Throws BenchmarkError when a timed sample at the smallest
/// size is under 1 ms.
BenchReport scaling_benchmark(BenchSubject subject, const std::vector<std::size_t>& sizes,
                              const BenchOptions& options = {});
void write_bench_csv(std::ostream& os, const std::vector<BenchRow>& rows);

/// Bytes of tensor storage allocated by one forward pass of the subject.
std::size_t forward_allocation_bytes(BenchSubject subject, std::size_t width, std::size_t tokens,
                                     std::uint64_t seed = 0);

}  // namespace wf
