#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "wf/data.hpp"
#include "wf/model.hpp"

namespace wf {

struct OptimConfig {
  double lr = 1e-3;
  double weight_decay = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t steps = 2000;
  std::size_t batch = 8;
  std::size_t warmup = 0;
  /// Global gradient-norm clip; 0 disables clipping.
  double clip = 0.0;

  friend bool operator==(const OptimConfig&, const OptimConfig&) = default;
};

struct TaskConfig {
  TaskKind kind = TaskKind::global_majority;
  std::size_t train_samples = 4096;
  std::size_t test_samples = 1024;
  double noise = 0.25;
  /// When set, training data is read from this directory instead of generated.
  std::string data_dir;

  friend bool operator==(const TaskConfig&, const TaskConfig&) = default;
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::string out = "run";
  ModelConfig model;
  OptimConfig optim;
  TaskConfig task;

  /// Synthetic task matching the model's input shape. Test data uses a
  /// different sample seed than training data.
  SyntheticTask train_task() const;
  SyntheticTask test_task() const;
  void validate() const;

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

using KeyValues = std::vector<std::pair<std::string, std::string>>;

/// Parses "key=value" lines; '#' starts a comment, blank lines are skipped.
KeyValues parse_key_values(const std::string& text, const std::string& source = "config");

/// Applies one dotted key (e.g. "model.depth") to the config.
void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value);
/// Applies a "key=value" override.
void apply_override(RunConfig& cfg, const std::string& assignment);

RunConfig parse_run_config(const std::string& text, const std::string& source = "config");
RunConfig load_run_config(const std::filesystem::path& path);

KeyValues model_config_entries(const ModelConfig& cfg);
KeyValues run_config_entries(const RunConfig& cfg);
std::string serialize(const RunConfig& cfg);

/// Shortest round-trip representation of a double.
std::string format_double(double v);

}  // namespace wf
