#pragma once

#include <filesystem>
#include <iosfwd>

#include "wf/tensor.hpp"

namespace wf {

/// DWT1 tensor files: magic "DWTENSR1", u32 rank, rank x u64 extents, then the
/// row-major payload as little-endian f64.
void write_tensor(std::ostream& os, const Tensor& t);
Tensor read_tensor(std::istream& is);

void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

}  // namespace wf
