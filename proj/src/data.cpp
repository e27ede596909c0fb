#include "wf/data.hpp"

#include <fstream>
#include <functional>
#include <sstream>

#include "wf/io.hpp"

namespace wf {

namespace {

constexpr std::uint64_t kPaletteSeed = 0x5eed0f7a11e77eULL;

Rng sample_rng(const SyntheticTask& task, std::size_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(task.seed), static_cast<std::uint32_t>(task.seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(task.kind)};
  return Rng(seq);
}

Rng palette_rng(const SyntheticTask& task) {
  std::seed_seq seq{static_cast<std::uint32_t>(kPaletteSeed), static_cast<std::uint32_t>(kPaletteSeed >> 32),
                    static_cast<std::uint32_t>(task.classes), static_cast<std::uint32_t>(task.channels),
                    static_cast<std::uint32_t>(task.patch)};
  return Rng(seq);
}

// One p x p x channels texture per class, laid out [channel][a][b].
std::vector<std::vector<double>> textures(const SyntheticTask& task) {
  Rng rng = palette_rng(task);
  rng.discard(1000);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<std::vector<double>> out(task.classes);
  for (auto& t : out) {
    t.resize(task.channels * task.patch * task.patch);
    for (auto& v : t) v = u(rng);
  }
  return out;
}

void fill_cell(Tensor& img, const SyntheticTask& task, std::size_t ci, std::size_t cj,
               const std::function<double(std::size_t, std::size_t, std::size_t)>& value) {
  for (std::size_t ch = 0; ch < task.channels; ++ch) {
    for (std::size_t a = 0; a < task.patch; ++a) {
      for (std::size_t b = 0; b < task.patch; ++b) {
        img.at(ch, ci * task.patch + a, cj * task.patch + b) = value(ch, a, b);
      }
    }
  }
}

}  // namespace

TaskKind parse_task_kind(std::string_view name) {
  if (name == "global-majority") return TaskKind::global_majority;
  if (name == "local-texture") return TaskKind::local_texture;
  throw ConfigError("unknown task kind '" + std::string(name) + "'");
}

std::string_view task_kind_name(TaskKind kind) {
  return kind == TaskKind::global_majority ? "global-majority" : "local-texture";
}

void SyntheticTask::validate() const {
  if (classes < 2) throw ConfigError("task: classes must be at least 2, got " + std::to_string(classes));
  if (channels == 0) throw ConfigError("task: channels must be positive");
  if (patch == 0 || height == 0 || width == 0 || height % patch != 0 || width % patch != 0) {
    throw ConfigError("task: " + std::to_string(height) + "x" + std::to_string(width) +
                      " image is not divisible into " + std::to_string(patch) + "-pixel cells");
  }
  if (noise < 0.0) throw ConfigError("task: noise must be non-negative");
  if (kind == TaskKind::global_majority && cells_high() * cells_wide() < 2) {
    throw ConfigError("task: global-majority needs at least two cells");
  }
}

std::optional<std::size_t> majority_label(const std::vector<std::size_t>& cells, std::size_t classes) {
  std::vector<std::size_t> counts(classes, 0);
  for (std::size_t c : cells) {
    if (c >= classes) throw DomainError("majority_label: class " + std::to_string(c) + " out of range");
    ++counts[c];
  }
  std::size_t best = 0;
  bool tied = false;
  for (std::size_t c = 1; c < classes; ++c) {
    if (counts[c] > counts[best]) {
      best = c;
      tied = false;
    } else if (counts[c] == counts[best]) {
      tied = true;
    }
  }
  if (tied) return std::nullopt;
  return best;
}

std::vector<double> palette_color(const SyntheticTask& task, std::size_t c) {
  Rng rng = palette_rng(task);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> color(task.channels);
  for (std::size_t k = 0; k <= c; ++k) {
    for (auto& v : color) v = u(rng);
  }
  return color;
}

std::vector<std::size_t> majority_cells(const SyntheticTask& task, std::size_t index) {
  task.validate();
  Rng rng = sample_rng(task, index);
  std::uniform_int_distribution<std::size_t> pick(0, task.classes - 1);
  std::vector<std::size_t> cells(task.cells_high() * task.cells_wide());
  do {
    for (auto& c : cells) c = pick(rng);
  } while (!majority_label(cells, task.classes));
  return cells;
}

Dataset generate_dataset(const SyntheticTask& task) {
  task.validate();
  Dataset ds;
  ds.classes = task.classes;
  std::vector<std::vector<double>> palette(task.classes);
  for (std::size_t c = 0; c < task.classes; ++c) palette[c] = palette_color(task, c);
  const auto tex = textures(task);
  const std::size_t gh = task.cells_high(), gw = task.cells_wide(), p = task.patch;
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> u(-1.0, 1.0);

  for (std::size_t i = 0; i < task.samples; ++i) {
    Tensor img({task.channels, task.height, task.width});
    std::size_t label = 0;
    if (task.kind == TaskKind::global_majority) {
      const auto cells = majority_cells(task, i);
      label = *majority_label(cells, task.classes);
      Rng rng = sample_rng(task, i);
      rng.discard(1u << 16);
      for (std::size_t ci = 0; ci < gh; ++ci) {
        for (std::size_t cj = 0; cj < gw; ++cj) {
          const auto& color = palette[cells[ci * gw + cj]];
          fill_cell(img, task, ci, cj,
                    [&](std::size_t ch, std::size_t, std::size_t) { return color[ch] + task.noise * gauss(rng); });
        }
      }
    } else {
      Rng rng = sample_rng(task, i);
      label = std::uniform_int_distribution<std::size_t>(0, task.classes - 1)(rng);
      for (std::size_t ci = 0; ci < gh; ++ci) {
        for (std::size_t cj = 0; cj < gw; ++cj) {
          if (ci == gh / 2 && cj == gw / 2) {
            const auto& t = tex[label];
            fill_cell(img, task, ci, cj, [&](std::size_t ch, std::size_t a, std::size_t b) {
              return t[(ch * p + a) * p + b] + task.noise * gauss(rng);
            });
          } else {
            fill_cell(img, task, ci, cj, [&](std::size_t, std::size_t, std::size_t) { return u(rng); });
          }
        }
      }
    }
    ds.images.push_back(std::move(img));
    ds.labels.push_back(label);
  }
  return ds;
}

Dataset load_dataset_dir(const std::filesystem::path& dir) {
  const auto labels_path = dir / "labels.txt";
  std::ifstream in(labels_path);
  if (!in) throw IoError("dataset: cannot open " + labels_path.string());
  Dataset ds;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ls(line);
    std::string file;
    long long label = -1;
    if (!(ls >> file)) continue;
    if (!(ls >> label) || label < 0) {
      throw IoError("dataset: " + labels_path.string() + ":" + std::to_string(lineno) + ": bad label");
    }
    Tensor img = load_tensor(dir / file);
    if (img.rank() != 3) throw IoError("dataset: " + file + " is not a [c, H, W] tensor");
    if (!ds.images.empty() && img.shape() != ds.images.front().shape()) {
      throw IoError("dataset: " + file + " has shape " + to_string(img.shape()) + ", expected " +
                    to_string(ds.images.front().shape()));
    }
    ds.images.push_back(std::move(img));
    ds.labels.push_back(static_cast<std::size_t>(label));
    ds.classes = std::max(ds.classes, static_cast<std::size_t>(label) + 1);
  }
  if (ds.images.empty()) throw IoError("dataset: " + labels_path.string() + " lists no samples");
  return ds;
}

}  // namespace wf
