#include "wf/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace wf {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* expected) {
  throw ConfigError("config: " + key + "='" + value + "' is not " + expected);
}

template <typename T>
T parse_int(const std::string& key, const std::string& value) {
  T out{};
  const char* end = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end) bad_value(key, value, "an integer in range");
  return out;
}

double parse_double(const std::string& key, const std::string& value) {
  double out = 0.0;
  const char* end = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end) bad_value(key, value, "a number");
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  bad_value(key, value, "a boolean");
}

std::vector<std::size_t> parse_index_list(const std::string& key, const std::string& value) {
  std::vector<std::size_t> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) bad_value(key, value, "a comma-separated index list");
    out.push_back(parse_int<std::size_t>(key, item));
  }
  return out;
}

std::string join(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

std::string bool_str(bool b) { return b ? "true" : "false"; }

using Setter = std::function<void(RunConfig&, const std::string& key, const std::string& value)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = [] {
    std::map<std::string, Setter> t;
    t["seed"] = [](RunConfig& c, const std::string& k, const std::string& v) { c.seed = parse_int<std::uint64_t>(k, v); };
    t["out"] = [](RunConfig& c, const std::string&, const std::string& v) { c.out = v; };

    t["model.depth"] = [](RunConfig& c, const std::string& k, const std::string& v) { c.model.depth = parse_int<std::size_t>(k, v); };
    t["model.period"] = [](RunConfig& c, const std::string& k, const std::string& v) { c.model.period = parse_int<std::int64_t>(k, v); };
    t["model.dynamic_blocks"] = [](RunConfig& c, const std::string& k, const std::string& v) { c.model.dynamic_blocks = parse_index_list(k, v); };
    t["model.patch"] = [](RunConfig& c, const std::string& k, const std::string& v) { c.model.patch = parse_int<std::size_t>(k, v); };
    t["model.width"] = [](RunConfig& c, const std::string& k, const std::string& v) { c.model.width = parse_int<std::size_t>(k, v); };
    t["model.num_classes"] = [](RunConfig& c, const std::string& k, const std::string& v) { c.model.num_classes = parse_int<std::size_t>(k, v); };
    t["model.in_channels"] = [](RunConfig& c, const std::string& k, const std::string& v) { c.model.in_channels = parse_int<std::size_t>(k, v); };
    t["model.image_height"] = [](RunConfig& c, const std::string& k, const std::string& v) { c.model.image_height = parse_int<std::size_t>(k, v); };
    t["model.image_width"] = [](RunConfig& c, const std::string& k, const std::string& v) { c.model.image_width = parse_int<std::size_t>(k, v); };
    t["model.mlp_ratio"] = [](RunConfig& c, const std::string& k, const std::string& v) { c.model.mlp_ratio = parse_int<std::size_t>(k, v); };
    t["model.kernel"] = [](RunConfig& c, const std::string& k, const std::string& v) { c.model.kernel = parse_int<std::size_t>(k, v); };
    t["model.linear_strategy"] = [](RunConfig& c, const std::string&, const std::string& v) { c.model.linear_strategy = parse_linear_strategy(v); };
    t["model.dwc_strategy"] = [](RunConfig& c, const std::string&, const std::string& v) { c.model.dwc_strategy = parse_dwc_strategy(v); };
    t["model.rank"] = [](RunConfig& c, const std::string& k, const std::string& v) { c.model.rank = parse_int<std::size_t>(k, v); };
    t["model.pool_factor"] = [](RunConfig& c, const std::string& k, const std::string& v) { c.model.pool_factor = parse_int<std::size_t>(k, v); };
    t["model.predictor_activation"] = [](RunConfig& c, const std::string&, const std::string& v) { c.model.predictor_activation = parse_activation(v); };
    t["model.mlp_activation"] = [](RunConfig& c, const std::string&, const std::string& v) { c.model.mlp_activation = parse_activation(v); };
    t["model.dynamic_fc2"] = [](RunConfig& c, const std::string& k, const std::string& v) { c.model.dynamic_fc2 = parse_bool(k, v); };
    t["model.per_channel_norm"] = [](RunConfig& c, const std::string& k, const std::string& v) { c.model.per_channel_norm = parse_bool(k, v); };

    t["optim.lr"] = [](RunConfig& c, const std::string& k, const std::string& v) { c.optim.lr = parse_double(k, v); };
    t["optim.weight_decay"] = [](RunConfig& c, const std::string& k, const std::string& v) { c.optim.weight_decay = parse_double(k, v); };
    t["optim.beta1"] = [](RunConfig& c, const std::string& k, const std::string& v) { c.optim.beta1 = parse_double(k, v); };
    t["optim.beta2"] = [](RunConfig& c, const std::string& k, const std::string& v) { c.optim.beta2 = parse_double(k, v); };
    t["optim.eps"] = [](RunConfig& c, const std::string& k, const std::string& v) { c.optim.eps = parse_double(k, v); };
    t["optim.steps"] = [](RunConfig& c, const std::string& k, const std::string& v) { c.optim.steps = parse_int<std::size_t>(k, v); };
    t["optim.batch"] = [](RunConfig& c, const std::string& k, const std::string& v) { c.optim.batch = parse_int<std::size_t>(k, v); };
    t["optim.warmup"] = [](RunConfig& c, const std::string& k, const std::string& v) { c.optim.warmup = parse_int<std::size_t>(k, v); };
    t["optim.clip"] = [](RunConfig& c, const std::string& k, const std::string& v) { c.optim.clip = parse_double(k, v); };

    t["task.kind"] = [](RunConfig& c, const std::string&, const std::string& v) { c.task.kind = parse_task_kind(v); };
    t["task.train_samples"] = [](RunConfig& c, const std::string& k, const std::string& v) { c.task.train_samples = parse_int<std::size_t>(k, v); };
    t["task.test_samples"] = [](RunConfig& c, const std::string& k, const std::string& v) { c.task.test_samples = parse_int<std::size_t>(k, v); };
    t["task.noise"] = [](RunConfig& c, const std::string& k, const std::string& v) { c.task.noise = parse_double(k, v); };
    t["task.data_dir"] = [](RunConfig& c, const std::string&, const std::string& v) { c.task.data_dir = v; };
    return t;
  }();
  return table;
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) throw ConfigError("format_double: conversion failed");
  return std::string(buf, ptr);
}

SyntheticTask RunConfig::train_task() const {
  SyntheticTask t;
  t.kind = task.kind;
  t.height = model.image_height;
  t.width = model.image_width;
  t.channels = model.in_channels;
  t.patch = model.patch;
  t.classes = model.num_classes;
  t.samples = task.train_samples;
  t.seed = seed;
  t.noise = task.noise;
  return t;
}

SyntheticTask RunConfig::test_task() const {
  SyntheticTask t = train_task();
  t.samples = task.test_samples;
  t.seed = seed ^ 0x9e3779b97f4a7c15ULL;
  return t;
}

void RunConfig::validate() const {
  model.validate();
  if (optim.batch == 0) throw ConfigError("config: optim.batch must be positive");
  if (optim.lr < 0.0) throw ConfigError("config: optim.lr must be non-negative");
  if (optim.weight_decay < 0.0) throw ConfigError("config: optim.weight_decay must be non-negative");
  if (!(optim.beta1 >= 0.0 && optim.beta1 < 1.0) || !(optim.beta2 >= 0.0 && optim.beta2 < 1.0)) {
    throw ConfigError("config: optimizer betas must lie in [0, 1)");
  }
  if (optim.eps <= 0.0) throw ConfigError("config: optim.eps must be positive");
  if (optim.clip < 0.0) throw ConfigError("config: optim.clip must be non-negative");
  if (optim.warmup > optim.steps) throw ConfigError("config: optim.warmup exceeds optim.steps");
  if (task.data_dir.empty()) {
    train_task().validate();
    if (task.train_samples == 0) throw ConfigError("config: task.train_samples must be positive");
  }
}

KeyValues parse_key_values(const std::string& text, const std::string& source) {
  KeyValues out;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw ConfigError(source + ":" + std::to_string(lineno) + ": expected key=value, got '" + line + "'");
    }
    out.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return out;
}

void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
  const auto& table = setters();
  auto it = table.find(key);
  if (it == table.end()) throw ConfigError("config: unknown key '" + key + "'");
  it->second(cfg, key, value);
}

void apply_override(RunConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override '" + assignment + "' is not of the form key=value");
  }
  set_config_value(cfg, trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

RunConfig parse_run_config(const std::string& text, const std::string& source) {
  RunConfig cfg;
  for (const auto& [k, v] : parse_key_values(text, source)) set_config_value(cfg, k, v);
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str(), path.string());
}

KeyValues model_config_entries(const ModelConfig& m) {
  KeyValues kv = {
      {"model.depth", std::to_string(m.depth)},
      {"model.period", std::to_string(m.period)},
  };
  if (m.dynamic_blocks) kv.emplace_back("model.dynamic_blocks", join(*m.dynamic_blocks));
  KeyValues rest = {
      {"model.patch", std::to_string(m.patch)},
      {"model.width", std::to_string(m.width)},
      {"model.num_classes", std::to_string(m.num_classes)},
      {"model.in_channels", std::to_string(m.in_channels)},
      {"model.image_height", std::to_string(m.image_height)},
      {"model.image_width", std::to_string(m.image_width)},
      {"model.mlp_ratio", std::to_string(m.mlp_ratio)},
      {"model.kernel", std::to_string(m.kernel)},
      {"model.linear_strategy", std::string(linear_strategy_name(m.linear_strategy))},
      {"model.dwc_strategy", std::string(dwc_strategy_name(m.dwc_strategy))},
      {"model.rank", std::to_string(m.rank)},
      {"model.pool_factor", std::to_string(m.pool_factor)},
      {"model.predictor_activation", std::string(activation_name(m.predictor_activation))},
      {"model.mlp_activation", std::string(activation_name(m.mlp_activation))},
      {"model.dynamic_fc2", bool_str(m.dynamic_fc2)},
      {"model.per_channel_norm", bool_str(m.per_channel_norm)},
  };
  kv.insert(kv.end(), rest.begin(), rest.end());
  return kv;
}

KeyValues run_config_entries(const RunConfig& c) {
  KeyValues kv = {{"seed", std::to_string(c.seed)}, {"out", c.out}};
  for (auto& e : model_config_entries(c.model)) kv.push_back(std::move(e));
  KeyValues rest = {
      {"optim.lr", format_double(c.optim.lr)},
      {"optim.weight_decay", format_double(c.optim.weight_decay)},
      {"optim.beta1", format_double(c.optim.beta1)},
      {"optim.beta2", format_double(c.optim.beta2)},
      {"optim.eps", format_double(c.optim.eps)},
      {"optim.steps", std::to_string(c.optim.steps)},
      {"optim.batch", std::to_string(c.optim.batch)},
      {"optim.warmup", std::to_string(c.optim.warmup)},
      {"optim.clip", format_double(c.optim.clip)},
      {"task.kind", std::string(task_kind_name(c.task.kind))},
      {"task.train_samples", std::to_string(c.task.train_samples)},
      {"task.test_samples", std::to_string(c.task.test_samples)},
      {"task.noise", format_double(c.task.noise)},
      {"task.data_dir", c.task.data_dir},
  };
  kv.insert(kv.end(), rest.begin(), rest.end());
  return kv;
}

std::string serialize(const RunConfig& cfg) {
  std::string out;
  for (const auto& [k, v] : run_config_entries(cfg)) out += k + "=" + v + "\n";
  return out;
}

}  // namespace wf
