#pragma once

#include <filesystem>
#include <iosfwd>
#include <vector>

#include "wf/config.hpp"

namespace wf {

/// Warmup-then-cosine learning rate at `step` (0-based) of `total`.
double cosine_lr(std::size_t step, std::size_t total, std::size_t warmup, double base);

/// Adam with decoupled weight decay. Decay applies to tensors of rank >= 2.
class AdamW {
 public:
  AdamW(std::vector<Tensor*> params, const OptimConfig& cfg);
  void step(const std::vector<Tensor>& grads, double lr);
  std::size_t steps_taken() const { return t_; }

 private:
  std::vector<Tensor*> params_;
  std::vector<Tensor> m_, v_;
  OptimConfig cfg_;
  std::size_t t_ = 0;
};

struct LogRow {
  std::size_t step = 0;
  double loss = 0.0;
  double grad_norm = 0.0;
  double lr = 0.0;
};

void write_log_header(std::ostream& os);
void write_log_row(std::ostream& os, const LogRow& row);

struct EvalResult {
  double accuracy = 0.0;
  double loss = 0.0;
  std::vector<std::size_t> predictions;
};

/// Index of the largest logit; the lowest index wins ties.
std::size_t argmax(const Tensor& logits);
EvalResult evaluate(const Model& model, const Dataset& data);

struct TrainResult {
  std::vector<LogRow> log;
  bool diverged = false;
  std::size_t divergence_step = 0;
  /// Parameters after the last step whose loss was finite.
  Model last_good;
};

/// Trains in place. When `log` is given, rows are streamed as they are
/// produced. On a non-finite loss training stops, `model` is restored to the
/// last good state and the divergence is recorded in the result.
TrainResult train_model(Model& model, const Dataset& data, const OptimConfig& optim, std::uint64_t seed,
                        std::ostream* log = nullptr);

/// Checkpoint directory: manifest.txt with the model config and one DWT1 file
/// per parameter path.
void save_checkpoint(const std::filesystem::path& dir, const Model& model);
Model load_checkpoint(const std::filesystem::path& dir);

struct RunSummary {
  TrainResult train;
  EvalResult test;
  std::filesystem::path checkpoint;
};

/// Full pipeline for the `train` subcommand: data, init, training with
/// log.csv and config.txt under cfg.out, final checkpoint. Throws
/// DivergenceError after writing the last good checkpoint.
RunSummary run_training(const RunConfig& cfg);

Dataset load_or_generate(const RunConfig& cfg, bool test_split);

}  // namespace wf
