#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <string>
#include <vector>

#include "wf/analysis.hpp"
#include "wf/attention.hpp"
#include "wf/config.hpp"
#include "wf/gradcheck.hpp"
#include "wf/train.hpp"

namespace fs = std::filesystem;

namespace {

struct CommonOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* sub, CommonOptions& o) {
  sub->add_option("--config", o.config, "key=value config file");
  sub->add_option("--seed", o.seed, "random seed");
  sub->add_option("--out", o.out, "output directory");
  sub->add_option("--set", o.overrides, "override a config key (key=value), repeatable");
}

wf::RunConfig resolve(const CommonOptions& o) {
  wf::RunConfig cfg = o.config.empty() ? wf::RunConfig{} : wf::load_run_config(o.config);
  if (o.seed) cfg.seed = *o.seed;
  if (!o.out.empty()) cfg.out = o.out;
  for (const auto& s : o.overrides) wf::apply_override(cfg, s);
  cfg.validate();
  return cfg;
}

std::ofstream open_output(const wf::RunConfig& cfg, const std::string& name) {
  std::error_code ec;
  fs::create_directories(cfg.out, ec);
  if (ec) throw wf::IoError("cannot create output directory " + cfg.out + ": " + ec.message());
  const fs::path path = fs::path(cfg.out) / name;
  std::ofstream os(path);
  if (!os) throw wf::IoError("cannot write " + path.string());
  std::cout << "wrote " << path.string() << '\n';
  return os;
}

std::vector<std::uint64_t> seed_range(std::uint64_t first, std::size_t count) {
  std::vector<std::uint64_t> seeds(count);
  std::iota(seeds.begin(), seeds.end(), first);
  return seeds;
}

wf::Model model_for(const wf::RunConfig& cfg, const std::string& checkpoint, bool zero_predictors) {
  if (!checkpoint.empty()) return wf::load_checkpoint(checkpoint);
  wf::Rng rng(cfg.seed);
  wf::InitOptions init;
  init.zero_predictors = zero_predictors;
  return wf::init_model(cfg.model, rng, init);
}

std::vector<wf::Tensor> random_images(const wf::ModelConfig& m, std::size_t count, std::uint64_t seed) {
  wf::Rng rng(seed);
  std::vector<wf::Tensor> images;
  for (std::size_t i = 0; i < count; ++i) {
    images.push_back(wf::Tensor::randn({m.in_channels, m.image_height, m.image_width}, rng));
  }
  return images;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"wf: dynamic weight networks at desk scale"};
  app.require_subcommand(1);

  CommonOptions common;

  auto* equiv = app.add_subcommand("equiv", "attention vs dynamic-MLP identity report");
  add_common(equiv, common);
  std::size_t equiv_seeds = 10;
  equiv->add_option("--seeds", equiv_seeds, "seeds per size")->check(CLI::PositiveNumber);

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  add_common(gradcheck, common);
  std::size_t grad_seeds = 10;
  std::vector<std::string> grad_cases;
  gradcheck->add_option("--seeds", grad_seeds, "seeds per case")->check(CLI::PositiveNumber);
  gradcheck->add_option("--case", grad_cases, "restrict to a case, repeatable");

  auto* train = app.add_subcommand("train", "train a model on the configured task");
  add_common(train, common);

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
  add_common(eval, common);
  std::string eval_checkpoint;
  eval->add_option("--checkpoint", eval_checkpoint, "checkpoint directory (default <out>/checkpoint)");
  eval->footer("Without --config, <out>/config.txt from the training run is used when present.");

  auto* erf = app.add_subcommand("erf", "effective receptive field of the centre token");
  add_common(erf, common);
  double tau = 0.01;
  std::string erf_checkpoint;
  bool erf_zero = false;
  erf->add_option("--tau", tau, "coverage threshold");
  erf->add_option("--checkpoint", erf_checkpoint, "checkpoint directory (default: fresh model from config)");
  erf->add_flag("--zero-predictors", erf_zero, "initialise predictors at zero instead of randomly");

  auto* strength = app.add_subcommand("strength", "dynamic strength ratio per dynamic layer");
  add_common(strength, common);
  std::size_t strength_inputs = 32;
  std::string strength_checkpoint;
  bool strength_zero = false;
  strength->add_option("--inputs", strength_inputs, "random inputs to average over")->check(CLI::PositiveNumber);
  strength->add_option("--checkpoint", strength_checkpoint, "checkpoint directory");
  strength->add_flag("--zero-predictors", strength_zero, "initialise predictors at zero instead of randomly");

  auto* bench = app.add_subcommand("bench", "wall-time scaling over token counts");
  add_common(bench, common);
  std::vector<std::string> subjects{"dynamic_block"};
  std::vector<std::size_t> sizes{256, 1024, 4096, 16384};
  wf::BenchOptions bench_opts;
  bench->add_option("--subject", subjects, "dynamic_block and/or attention_block (attention builds an N x N matrix)");
  bench->add_option("--sizes", sizes, "token counts")->delimiter(',');
  bench->add_option("--width", bench_opts.width, "block width");
  bench->add_option("--repeats", bench_opts.repeats, "timed samples per size");
  bench->add_option("--inner", bench_opts.inner, "forward passes per sample");

  auto* flops = app.add_subcommand("flops", "parameter and FLOP counts of the configured model");
  add_common(flops, common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (eval->parsed() && common.config.empty() && !common.out.empty() &&
        fs::exists(fs::path(common.out) / "config.txt")) {
      common.config = (fs::path(common.out) / "config.txt").string();
    }
    const wf::RunConfig cfg = resolve(common);

    if (equiv->parsed()) {
      std::vector<std::pair<std::size_t, std::size_t>> shapes;
      for (std::size_t n : {1, 7, 16, 33, 64}) {
        for (std::size_t d : {1, 8, 32}) shapes.emplace_back(n, d);
      }
      const auto rows = wf::equivalence_report(seed_range(cfg.seed, equiv_seeds), shapes);
      auto os = open_output(cfg, "equiv.csv");
      wf::write_equivalence_csv(os, rows);
      double worst = 0.0;
      bool ok = true;
      for (const auto& r : rows) {
        worst = std::max(worst, r.max_abs_diff);
        ok = ok && r.pass;
      }
      std::cout << rows.size() << " instances, max abs diff " << worst << (ok ? " ok" : " FAILED") << '\n';
      return ok ? 0 : 1;
    }

    if (gradcheck->parsed()) {
      const auto rows = wf::run_gradcheck(seed_range(cfg.seed, grad_seeds), grad_cases);
      auto os = open_output(cfg, "gradcheck.csv");
      wf::write_gradcheck_csv(os, rows);
      std::size_t failed = 0;
      for (const auto& r : rows) {
        if (!r.pass) {
          ++failed;
          std::cout << "FAIL " << r.name << " seed " << r.seed << " rel error " << r.rel_error << '\n';
        }
      }
      std::cout << rows.size() - failed << "/" << rows.size() << " checks passed\n";
      return failed == 0 ? 0 : 1;
    }

    if (train->parsed()) {
      const wf::RunSummary s = wf::run_training(cfg);
      const auto& last = s.train.log.back();
      std::cout << "final loss " << last.loss << ", test accuracy " << s.test.accuracy << ", checkpoint "
                << s.checkpoint.string() << '\n';
      return 0;
    }

    if (eval->parsed()) {
      const fs::path ckpt = eval_checkpoint.empty() ? fs::path(cfg.out) / "checkpoint" : fs::path(eval_checkpoint);
      const wf::Model model = wf::load_checkpoint(ckpt);
      wf::RunConfig data_cfg = cfg;
      data_cfg.model = model.config;
      const wf::EvalResult r = wf::evaluate(model, wf::load_or_generate(data_cfg, true));
      auto os = open_output(cfg, "eval.csv");
      os << "split,accuracy,loss\n"
         << "test," << wf::format_double(r.accuracy) << ',' << wf::format_double(r.loss) << '\n';
      std::cout << "test accuracy " << r.accuracy << ", loss " << r.loss << '\n';
      return 0;
    }

    if (erf->parsed()) {
      const wf::Model model = model_for(cfg, erf_checkpoint, erf_zero);
      const auto image = random_images(model.config, 1, cfg.seed ^ 0x5eedULL).front();
      const wf::ErfMap map = wf::erf_map(model, image, std::nullopt, tau);
      auto os = open_output(cfg, "erf.csv");
      wf::write_erf_csv(os, map);
      std::cout << "coverage " << map.coverage << " at tau " << tau << '\n';
      return 0;
    }

    if (strength->parsed()) {
      const wf::Model model = model_for(cfg, strength_checkpoint, strength_zero);
      const auto profile =
          wf::strength_profile(model, random_images(model.config, strength_inputs, cfg.seed ^ 0x5eedULL));
      auto os = open_output(cfg, "strength.csv");
      wf::write_strength_csv(os, profile);
      for (const auto& e : profile) {
        std::cout << "block " << e.layer << ' ' << e.kind << " r=" << (e.r ? wf::format_double(*e.r) : "n/a")
                  << '\n';
      }
      return 0;
    }

    if (bench->parsed()) {
      bench_opts.seed = cfg.seed;
      std::vector<wf::BenchRow> all;
      std::vector<std::string> summary;
      for (const auto& name : subjects) {
        const wf::BenchSubject subject = wf::parse_bench_subject(name);
        const wf::BenchReport rep = wf::scaling_benchmark(subject, sizes, bench_opts);
        all.insert(all.end(), rep.rows.begin(), rep.rows.end());
        summary.push_back(name + ": measured slope " + wf::format_double(rep.measured_slope) +
                          ", analytic slope " + wf::format_double(rep.analytic_slope) + ", analytic slope at 4096 " +
                          wf::format_double(wf::analytic_slope_at(subject, bench_opts.width, 4096)));
      }
      auto os = open_output(cfg, "bench.csv");
      wf::write_bench_csv(os, all);
      for (const auto& line : summary) std::cout << line << '\n';
      return 0;
    }

    if (flops->parsed()) {
      const wf::ModelConfig& m = cfg.model;
      const wf::Grid grid = m.grid();
      auto os = open_output(cfg, "flops.csv");
      os << "part,kind,params,fixed_flops,scaling_flops\n";
      for (std::size_t i = 0; i < m.depth; ++i) {
        const wf::BlockConfig b = m.block(i);
        const wf::CostReport c = wf::block_cost(b, grid);
        os << "block." << i << ',' << wf::block_kind_name(b.kind) << ',' << c.params << ',' << c.flops.fixed << ','
           << c.flops.scaling << '\n';
      }
      const wf::CostReport total = wf::count_params_flops(m);
      os << "model,total," << total.params << ',' << total.flops.fixed << ',' << total.flops.scaling << '\n';
      std::cout << "params " << total.params << ", flops " << total.flops.total() << '\n';
      return 0;
    }
  } catch (const wf::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const wf::DivergenceError& e) {
    std::cerr << "divergence: " << e.what() << '\n';
    return 3;
  } catch (const wf::IoError& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
