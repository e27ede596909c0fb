#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string_view>
#include <vector>

#include "wf/tensor.hpp"

namespace wf {

enum class TaskKind { global_majority, local_texture };

/// Config names: "global-majority", "local-texture".
TaskKind parse_task_kind(std::string_view name);
std::string_view task_kind_name(TaskKind kind);

/// Images of `channels` x height x width split into patch x patch cells.
///   global-majority: every cell takes one of `classes` palette colors i.i.d.;
///                    the label is the most frequent color, ties are re-rolled.
///   local-texture:   the center cell holds the label's texture, every other
///                    cell holds uniform random pixels.
/// Pixel noise with standard deviation `noise` is added in both tasks. The
/// palette and textures depend only on the task shape, not on `seed`.
struct SyntheticTask {
  TaskKind kind = TaskKind::global_majority;
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t channels = 3;
  std::size_t patch = 4;
  std::size_t classes = 4;
  std::size_t samples = 1024;
  std::uint64_t seed = 0;
  double noise = 0.25;

  std::size_t cells_high() const { return height / patch; }
  std::size_t cells_wide() const { return width / patch; }
  void validate() const;
};

struct Dataset {
  std::vector<Tensor> images;
  std::vector<std::size_t> labels;
  std::size_t classes = 0;

  std::size_t size() const { return labels.size(); }
};

Dataset generate_dataset(const SyntheticTask& task);

/// Most frequent class among `cells`, or nothing on a tie.
std::optional<std::size_t> majority_label(const std::vector<std::size_t>& cells, std::size_t classes);

/// Per-cell colors of global-majority sample `index`.
std::vector<std::size_t> majority_cells(const SyntheticTask& task, std::size_t index);

/// Palette color of class c (one value per channel).
std::vector<double> palette_color(const SyntheticTask& task, std::size_t c);

/// Loads `labels.txt` from a directory. Each non-empty line is
/// "<tensor file> <label>" with the tensor stored as DWT1 [c, H, W].
Dataset load_dataset_dir(const std::filesystem::path& dir);

}  // namespace wf
