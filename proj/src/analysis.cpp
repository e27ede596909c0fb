#include "wf/analysis.hpp"

#include <algorithm>
#include <chrono>
#include <memory>
#include <cmath>
#include <ostream>
#include <sstream>

#include "wf/config.hpp"

namespace wf {

double erf_coverage(const Tensor& grid, double tau) {
  std::size_t above = 0;
  for (double v : grid.data()) above += v > tau;
  return static_cast<double>(above) / static_cast<double>(grid.size());
}

ErfMap erf_map(const FeatureFn& features, const Tensor& image, std::size_t center, double tau) {
  if (image.rank() != 3) throw DimensionError("erf_map: image must be [c, H, W], got " + to_string(image.shape()));
  Tape tape;
  Var img = tape.leaf(image);
  Var feats = features(tape, img);
  if (feats.value().rank() != 2) throw DimensionError("erf_map: features must be [N, d]");
  const std::size_t n = feats.dim(0);
  if (center >= n) {
    throw DomainError("erf_map: center token " + std::to_string(center) + " outside " + std::to_string(n) +
                      " tokens");
  }
  Tensor pick({1, n});
  pick[center] = 1.0;
  Var target = ag::sum(ag::matmul(tape.constant(pick), feats));
  const Tensor g = tape.backward(target)[img];
  if (!g.all_finite()) throw EvaluationError("erf_map: non-finite input gradient");

  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  ErfMap map;
  map.tau = tau;
  map.grid = Tensor({h, w});
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t i = 0; i < h; ++i) {
      for (std::size_t j = 0; j < w; ++j) map.grid.at(i, j) += std::abs(g.at(ch, i, j));
    }
  }
  const double peak = map.grid.max_abs();
  if (peak > 0.0) map.grid *= 1.0 / peak;
  map.coverage = erf_coverage(map.grid, tau);
  return map;
}

std::size_t center_token(Grid grid) { return (grid.height / 2) * grid.width + grid.width / 2; }

ErfMap erf_map(const Model& model, const Tensor& image, std::optional<std::size_t> center, double tau) {
  if (image.rank() != 3) throw DimensionError("erf_map: image must be [c, H, W], got " + to_string(image.shape()));
  const std::size_t p = model.config.patch;
  const Grid grid{image.dim(1) / p, image.dim(2) / p};
  return erf_map([&](Tape& tape, Var img) { return model_features(tape, img, model); }, image,
                 center.value_or(center_token(grid)), tau);
}

void write_erf_csv(std::ostream& os, const ErfMap& map) {
  os << "i,j,value\n";
  for (std::size_t i = 0; i < map.grid.dim(0); ++i) {
    for (std::size_t j = 0; j < map.grid.dim(1); ++j) {
      os << i << ',' << j << ',' << format_double(map.grid.at(i, j)) << '\n';
    }
  }
}

std::optional<double> strength_ratio(const Tensor& w0, const Tensor& delta) {
  if (w0.shape() != delta.shape()) {
    throw DimensionError("strength_ratio: shapes " + to_string(w0.shape()) + " and " + to_string(delta.shape()) +
                         " differ");
  }
  const double base = w0.frobenius_norm();
  if (base == 0.0) return std::nullopt;
  return delta.frobenius_norm() / base;
}

StrengthProfile strength_profile(const Model& model, const std::vector<Tensor>& inputs) {
  if (inputs.empty()) throw ConfigError("strength_profile: no inputs given");
  StrengthProfile profile;
  std::vector<double> sums;
  std::vector<bool> defined;
  for (std::size_t s = 0; s < inputs.size(); ++s) {
    Tape tape(false);
    ForwardTrace trace;
    model_forward(tape, tape.constant(inputs[s]), model, &trace);
    if (s == 0) {
      for (const auto& e : trace.entries) profile.push_back({e.block, e.kind, std::nullopt});
      sums.assign(profile.size(), 0.0);
      defined.assign(profile.size(), true);
    }
    for (std::size_t k = 0; k < trace.entries.size(); ++k) {
      const auto r = strength_ratio(trace.entries[k].w0, trace.entries[k].delta);
      if (r) {
        sums[k] += *r;
      } else {
        defined[k] = false;
      }
    }
  }
  for (std::size_t k = 0; k < profile.size(); ++k) {
    if (defined[k]) profile[k].r = sums[k] / static_cast<double>(inputs.size());
  }
  return profile;
}

void write_strength_csv(std::ostream& os, const StrengthProfile& profile) {
  os << "layer,kind,r\n";
  for (const auto& e : profile) {
    os << e.layer << ',' << e.kind << ',' << (e.r ? format_double(*e.r) : "") << '\n';
  }
}

std::optional<std::string> validate_strength_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "layer,kind,r") return "header must be 'layer,kind,r'";
  std::size_t lineno = 1;
  long long previous = -1;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string where = "line " + std::to_string(lineno) + ": ";
    const auto c1 = line.find(',');
    const auto c2 = c1 == std::string::npos ? c1 : line.find(',', c1 + 1);
    if (c2 == std::string::npos || line.find(',', c2 + 1) != std::string::npos) return where + "expected 3 fields";
    const std::string layer = line.substr(0, c1), kind = line.substr(c1 + 1, c2 - c1 - 1), r = line.substr(c2 + 1);
    if (layer.empty() || !std::all_of(layer.begin(), layer.end(), [](char ch) { return ch >= '0' && ch <= '9'; })) {
      return where + "layer must be a non-negative integer";
    }
    const long long index = std::stoll(layer);
    if (index < previous) return where + "layers must be ordered by depth";
    previous = index;
    if (kind != "dwc" && kind != "fc1" && kind != "fc2") return where + "kind must be dwc, fc1 or fc2";
    if (!r.empty()) {
      std::size_t used = 0;
      double v = 0.0;
      try {
        v = std::stod(r, &used);
      } catch (const std::exception&) {
        return where + "r is not a number";
      }
      if (used != r.size() || !std::isfinite(v) || v < 0.0) return where + "r must be a finite non-negative number";
    }
  }
  return std::nullopt;
}

BenchSubject parse_bench_subject(std::string_view name) {
  if (name == "dynamic_block") return BenchSubject::dynamic_block;
  if (name == "attention_block") return BenchSubject::attention_block;
  throw ConfigError("unknown benchmark subject '" + std::string(name) + "'");
}

std::string_view bench_subject_name(BenchSubject s) {
  return s == BenchSubject::dynamic_block ? "dynamic_block" : "attention_block";
}

Grid grid_for_tokens(std::size_t tokens) {
  if (tokens == 0) throw DomainError("grid_for_tokens: token count must be positive");
  std::size_t h = static_cast<std::size_t>(std::sqrt(static_cast<double>(tokens)));
  while (h * h > tokens) --h;
  while (tokens % h != 0) --h;
  return {h, tokens / h};
}

namespace {

BlockConfig bench_block(std::size_t width) {
  BlockConfig cfg;
  cfg.kind = BlockKind::dynamic_block;
  cfg.width = width;
  return cfg;
}

}  // namespace

FlopCount subject_flops(BenchSubject s, std::size_t width, std::size_t tokens) {
  if (s == BenchSubject::dynamic_block) return block_cost(bench_block(width), grid_for_tokens(tokens)).flops;
  return attention_block_cost(width, 4, tokens).flops;
}

double analytic_slope_at(BenchSubject s, std::size_t width, std::size_t tokens) {
  // S(N) = aN + bN^2 gives N S'(N) / S(N) = S(2N) / (2 S(N)).
  const std::uint64_t here = subject_flops(s, width, tokens).scaling;
  const std::uint64_t twice = subject_flops(s, width, 2 * tokens).scaling;
  return static_cast<double>(twice) / (2.0 * static_cast<double>(here));
}

double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw DomainError("loglog_slope: need at least two paired points");
  double mx = 0.0, my = 0.0;
  std::vector<double> lx, ly;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i] <= 0.0 || y[i] <= 0.0) throw DomainError("loglog_slope: values must be positive");
    lx.push_back(std::log(x[i]));
    ly.push_back(std::log(y[i]));
    mx += lx.back();
    my += ly.back();
  }
  mx /= static_cast<double>(x.size());
  my /= static_cast<double>(x.size());
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (lx[i] - mx) * (ly[i] - my);
    sxx += (lx[i] - mx) * (lx[i] - mx);
  }
  if (sxx == 0.0) throw DomainError("loglog_slope: x values must differ");
  return sxy / sxx;
}

namespace {

// Builds the subject's parameters and input, returning a forward-pass closure.
std::function<void()> make_subject(BenchSubject subject, std::size_t width, std::size_t tokens, std::uint64_t seed) {
  Rng rng(seed);
  const Grid grid = grid_for_tokens(tokens);
  auto x = std::make_shared<Tensor>(Tensor::randn({tokens, width}, rng));
  if (subject == BenchSubject::dynamic_block) {
    InitOptions init;
    init.zero_predictors = false;
    auto params = std::make_shared<BlockParams>(make_block(bench_block(width), rng, init));
    return [x, params, grid] { block_forward(*x, grid, *params); };
  }
  auto params = std::make_shared<AttentionBlockParams>(make_attention_block(width, 4, rng));
  return [x, params] { attention_block_forward(*x, *params); };
}

}  // namespace

BenchReport scaling_benchmark(BenchSubject subject, const std::vector<std::size_t>& sizes,
                              const BenchOptions& options) {
  if (sizes.size() < 4) throw ConfigError("benchmark: need at least 4 sizes");
  for (std::size_t i = 1; i < sizes.size(); ++i) {
    if (sizes[i] <= sizes[i - 1]) throw ConfigError("benchmark: sizes must be strictly increasing");
  }
  if (sizes.front() == 0) throw ConfigError("benchmark: sizes must be positive");
  if (options.repeats < 3) throw ConfigError("benchmark: repeats must be at least 3");
  if (options.inner == 0) throw ConfigError("benchmark: inner iterations must be positive");

  using clock = std::chrono::steady_clock;
  BenchReport report;
  std::vector<double> ns, times, flops;
  for (std::size_t n : sizes) {
    auto forward = make_subject(subject, options.width, n, options.seed);
    for (std::size_t w = 0; w < options.repeats; ++w) forward();
    std::vector<double> samples;
    for (std::size_t r = 0; r < options.repeats; ++r) {
      const auto t0 = clock::now();
      for (std::size_t k = 0; k < options.inner; ++k) forward();
      const double ms = std::chrono::duration<double, std::milli>(clock::now() - t0).count();
      if (n == sizes.front() && ms < 1.0) {
        throw BenchmarkError("benchmark: a timed sample at N=" + std::to_string(n) + " took " + std::to_string(ms) +
                             " ms, below timer resolution; use larger sizes or more inner iterations");
      }
      samples.push_back(ms / static_cast<double>(options.inner));
    }
    std::sort(samples.begin(), samples.end());
    const std::size_t m = samples.size();
    const double median = m % 2 ? samples[m / 2] : 0.5 * (samples[m / 2 - 1] + samples[m / 2]);
    BenchRow row{subject, n, median, subject_flops(subject, options.width, n).total()};
    report.rows.push_back(row);
    ns.push_back(static_cast<double>(n));
    times.push_back(median);
    flops.push_back(static_cast<double>(row.analytic_flops));
  }
  report.measured_slope = loglog_slope(ns, times);
  report.analytic_slope = loglog_slope(ns, flops);
  return report;
}

void write_bench_csv(std::ostream& os, const std::vector<BenchRow>& rows) {
  os << "subject,N,median_ms,analytic_flops\n";
  for (const auto& r : rows) {
    os << bench_subject_name(r.subject) << ',' << r.tokens << ',' << format_double(r.median_ms) << ','
       << r.analytic_flops << '\n';
  }
}

std::size_t forward_allocation_bytes(BenchSubject subject, std::size_t width, std::size_t tokens,
                                     std::uint64_t seed) {
  auto forward = make_subject(subject, width, tokens, seed);
  AllocationTracker tracker;
  forward();
  return tracker.bytes();
}

}  // namespace wf
