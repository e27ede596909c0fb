#pragma once

#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "wf/autograd.hpp"

namespace wf {

inline constexpr double kGradcheckStep = 1e-4;
inline constexpr double kGradcheckTolerance = 1e-4;

/// ||a - n|| / max(||a||, ||n||, 1e-10).
double relative_error(const Tensor& analytic, const Tensor& numeric);

/// Compares reverse-mode gradients of a random weighted sum of `build`'s
/// output against central differences, for every tensor in `params`.
/// `build` must bind each of them through Tape::param. Returns the largest
/// per-tensor relative error.
double gradient_error(const std::function<Var(Tape&)>& build, const std::vector<Tensor*>& params, Rng& rng,
                      double h = kGradcheckStep);

struct GradcheckRow {
  std::string name;
  std::uint64_t seed = 0;
  double rel_error = 0.0;
  bool pass = false;
};

/// Names of every op, predictor strategy and layer in the suite.
std::vector<std::string> gradcheck_cases();

/// Runs the selected cases (all when `only` is empty) for every seed.
std::vector<GradcheckRow> run_gradcheck(const std::vector<std::uint64_t>& seeds,
                                        const std::vector<std::string>& only = {},
                                        double tolerance = kGradcheckTolerance);
void write_gradcheck_csv(std::ostream& os, const std::vector<GradcheckRow>& rows);

}  // namespace wf
