#include "wf/train.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <numeric>
#include <sstream>

#include "wf/io.hpp"

namespace wf {

namespace fs = std::filesystem;

double cosine_lr(std::size_t step, std::size_t total, std::size_t warmup, double base) {
  if (step < warmup) return base * static_cast<double>(step + 1) / static_cast<double>(warmup);
  if (total <= warmup) return base;
  const double progress = static_cast<double>(step - warmup) / static_cast<double>(total - warmup);
  return 0.5 * base * (1.0 + std::cos(std::numbers::pi * progress));
}

AdamW::AdamW(std::vector<Tensor*> params, const OptimConfig& cfg) : params_(std::move(params)), cfg_(cfg) {
  for (const Tensor* p : params_) {
    m_.emplace_back(p->shape());
    v_.emplace_back(p->shape());
  }
}

void AdamW::step(const std::vector<Tensor>& grads, double lr) {
  if (grads.size() != params_.size()) throw DimensionError("AdamW: gradient count does not match parameters");
  ++t_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Tensor& p = *params_[k];
    const Tensor& g = grads[k];
    if (g.shape() != p.shape()) {
      throw DimensionError("AdamW: gradient " + to_string(g.shape()) + " for parameter " + to_string(p.shape()));
    }
    const double decay = p.rank() >= 2 ? cfg_.weight_decay : 0.0;
    double* m = m_[k].raw();
    double* v = v_[k].raw();
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      const double update = (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg_.eps);
      p[i] -= lr * (update + decay * p[i]);
    }
  }
}

void write_log_header(std::ostream& os) { os << "step,loss,grad_norm,lr\n"; }

void write_log_row(std::ostream& os, const LogRow& r) {
  os << r.step << ',' << format_double(r.loss) << ',' << format_double(r.grad_norm) << ','
     << format_double(r.lr) << '\n';
}

std::size_t argmax(const Tensor& logits) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < logits.size(); ++i) {
    if (logits[i] > logits[best]) best = i;
  }
  return best;
}

EvalResult evaluate(const Model& model, const Dataset& data) {
  if (data.size() == 0) throw DomainError("evaluate: empty dataset");
  EvalResult r;
  std::size_t correct = 0;
  double loss = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (data.labels[i] >= model.config.num_classes) {
      throw ConfigError("evaluate: label " + std::to_string(data.labels[i]) + " outside " +
                        std::to_string(model.config.num_classes) + " classes");
    }
    Tape tape(false);
    Var logits = model_forward(tape, tape.constant(data.images[i]), model);
    loss += ag::cross_entropy(logits, data.labels[i]).value().item();
    const std::size_t pred = argmax(logits.value());
    r.predictions.push_back(pred);
    correct += pred == data.labels[i];
  }
  r.accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
  r.loss = loss / static_cast<double>(data.size());
  return r;
}

TrainResult train_model(Model& model, const Dataset& data, const OptimConfig& optim, std::uint64_t seed,
                        std::ostream* log) {
  if (data.size() == 0) throw DomainError("train: empty dataset");
  if (optim.batch == 0) throw ConfigError("train: batch must be positive");
  std::vector<Tensor*> params;
  model.visit([&](const std::string&, Tensor& t) { params.push_back(&t); });
  AdamW opt(params, optim);

  const std::size_t n = data.size();
  const bool full_batch = optim.batch >= n;
  const std::size_t batch = full_batch ? n : optim.batch;
  Rng rng(seed ^ 0xba7c4ed5eedULL);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = n;

  TrainResult result;
  result.last_good = model;
  std::vector<Tensor> grads;
  for (const Tensor* p : params) grads.emplace_back(p->shape());

  for (std::size_t step = 0; step < optim.steps; ++step) {
    const double lr = cosine_lr(step, optim.steps, optim.warmup, optim.lr);
    std::vector<std::size_t> idx(batch);
    if (full_batch) {
      std::iota(idx.begin(), idx.end(), 0);
    } else {
      for (auto& i : idx) {
        if (cursor == n) {
          std::shuffle(order.begin(), order.end(), rng);
          cursor = 0;
        }
        i = order[cursor++];
      }
    }
    for (auto& g : grads) g = Tensor(g.shape());

    double loss = 0.0;
    bool finite = true;
    try {
      for (std::size_t i : idx) {
        Tape tape;
        Var logits = model_forward(tape, tape.constant(data.images[i]), model);
        Var l = ag::cross_entropy(logits, data.labels[i]);
        loss += l.value().item();
        const Gradients g = tape.backward(l);
        for (std::size_t k = 0; k < params.size(); ++k) {
          if (g.has_param(*params[k])) grads[k] += g.param(*params[k]);
        }
      }
    } catch (const EvaluationError&) {
      finite = false;
    }
    loss /= static_cast<double>(batch);

    double norm_sq = 0.0;
    if (finite) {
      for (auto& g : grads) {
        g *= 1.0 / static_cast<double>(batch);
        for (double v : g.data()) norm_sq += v * v;
      }
    }
    const double norm = std::sqrt(norm_sq);
    if (!finite || !std::isfinite(loss) || !std::isfinite(norm)) {
      const double nan = std::numeric_limits<double>::quiet_NaN();
      LogRow row{step, nan, nan, lr};
      result.log.push_back(row);
      if (log) write_log_row(*log, row);
      result.diverged = true;
      result.divergence_step = step;
      model = result.last_good;
      break;
    }
    if (optim.clip > 0.0 && norm > optim.clip) {
      for (auto& g : grads) g *= optim.clip / norm;
    }
    result.last_good = model;
    opt.step(grads, lr);
    LogRow row{step, loss, norm, lr};
    result.log.push_back(row);
    if (log) write_log_row(*log, row);
  }
  if (!result.diverged) result.last_good = model;
  return result;
}

namespace {

std::string tensor_file_name(const std::string& path) { return path + ".dwt"; }

}  // namespace

void save_checkpoint(const fs::path& dir, const Model& model) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("checkpoint: cannot create " + dir.string() + ": " + ec.message());
  std::ostringstream manifest;
  for (const auto& [k, v] : model_config_entries(model.config)) manifest << k << '=' << v << '\n';
  Model& m = const_cast<Model&>(model);
  m.visit([&](const std::string& path, Tensor& t) {
    const std::string file = tensor_file_name(path);
    save_tensor(dir / file, t);
    manifest << "tensor." << path << '=' << file << '\n';
  });
  std::ofstream out(dir / "manifest.txt");
  if (!out) throw IoError("checkpoint: cannot write " + (dir / "manifest.txt").string());
  out << manifest.str();
  if (!out) throw IoError("checkpoint: write failed for " + (dir / "manifest.txt").string());
}

Model load_checkpoint(const fs::path& dir) {
  const fs::path manifest_path = dir / "manifest.txt";
  std::ifstream in(manifest_path);
  if (!in) throw CheckpointError("checkpoint: cannot open " + manifest_path.string());
  std::stringstream ss;
  ss << in.rdbuf();

  RunConfig holder;
  std::map<std::string, std::string> files;
  for (const auto& [key, value] : parse_key_values(ss.str(), manifest_path.string())) {
    if (key.rfind("tensor.", 0) == 0) {
      files[key.substr(7)] = value;
    } else if (key.rfind("model.", 0) == 0) {
      try {
        set_config_value(holder, key, value);
      } catch (const ConfigError& e) {
        throw CheckpointError(std::string("checkpoint: ") + e.what());
      }
    } else {
      throw CheckpointError("checkpoint: unexpected manifest key '" + key + "'");
    }
  }

  Rng rng(0);
  Model model;
  try {
    model = init_model(holder.model, rng);
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("checkpoint: invalid model config: ") + e.what());
  }
  model.visit([&](const std::string& path, Tensor& t) {
    auto it = files.find(path);
    if (it == files.end()) throw CheckpointError("checkpoint: missing parameter '" + path + "'");
    Tensor loaded;
    try {
      loaded = load_tensor(dir / it->second);
    } catch (const IoError& e) {
      throw CheckpointError("checkpoint: parameter '" + path + "': " + e.what());
    }
    if (loaded.shape() != t.shape()) {
      throw CheckpointError("checkpoint: parameter '" + path + "' has shape " + to_string(loaded.shape()) +
                            ", expected " + to_string(t.shape()));
    }
    t = std::move(loaded);
    files.erase(it);
  });
  if (!files.empty()) {
    throw CheckpointError("checkpoint: unexpected parameter '" + files.begin()->first + "'");
  }
  return model;
}

Dataset load_or_generate(const RunConfig& cfg, bool test_split) {
  if (!cfg.task.data_dir.empty()) {
    Dataset ds = load_dataset_dir(fs::path(cfg.task.data_dir) / (test_split ? "test" : "train"));
    if (ds.classes > cfg.model.num_classes) {
      throw ConfigError("dataset has " + std::to_string(ds.classes) + " classes but model.num_classes=" +
                        std::to_string(cfg.model.num_classes));
    }
    ds.classes = cfg.model.num_classes;
    return ds;
  }
  return generate_dataset(test_split ? cfg.test_task() : cfg.train_task());
}

RunSummary run_training(const RunConfig& cfg) {
  cfg.validate();
  const fs::path out(cfg.out);
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw IoError("cannot create output directory " + out.string() + ": " + ec.message());
  {
    std::ofstream c(out / "config.txt");
    if (!c) throw IoError("cannot write " + (out / "config.txt").string());
    c << serialize(cfg);
  }
  const Dataset train_set = load_or_generate(cfg, false);
  const Dataset test_set = load_or_generate(cfg, true);

  Rng rng(cfg.seed);
  Model model = init_model(cfg.model, rng);

  std::ofstream log(out / "log.csv");
  if (!log) throw IoError("cannot write " + (out / "log.csv").string());
  write_log_header(log);
  RunSummary summary;
  summary.train = train_model(model, train_set, cfg.optim, cfg.seed, &log);
  log.flush();
  summary.checkpoint = out / "checkpoint";
  save_checkpoint(summary.checkpoint, model);
  if (summary.train.diverged) {
    throw DivergenceError("training diverged at step " + std::to_string(summary.train.divergence_step) +
                          "; last good checkpoint written to " + summary.checkpoint.string());
  }
  summary.test = evaluate(model, test_set);
  std::ofstream metrics(out / "metrics.csv");
  metrics << "split,accuracy,loss\n";
  const EvalResult train_eval = evaluate(model, train_set);
  metrics << "train," << format_double(train_eval.accuracy) << ',' << format_double(train_eval.loss) << '\n';
  metrics << "test," << format_double(summary.test.accuracy) << ',' << format_double(summary.test.loss) << '\n';
  return summary;
}

}  // namespace wf
