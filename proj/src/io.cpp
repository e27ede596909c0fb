#include "wf/io.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace wf {

namespace {

constexpr char kMagic[8] = {'D', 'W', 'T', 'E', 'N', 'S', 'R', '1'};
constexpr std::uint32_t kMaxRank = 16;

template <typename T>
void put(std::ostream& os, T value) {
  char bytes[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i) bytes[i] = static_cast<char>((value >> (8 * i)) & 0xff);
  os.write(bytes, sizeof(T));
}

template <typename T>
T get(std::istream& is, const char* what) {
  unsigned char bytes[sizeof(T)];
  if (!is.read(reinterpret_cast<char*>(bytes), sizeof(T))) throw IoError(std::string("DWT1: truncated ") + what);
  T value = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) value |= static_cast<T>(bytes[i]) << (8 * i);
  return value;
}

}  // namespace

void write_tensor(std::ostream& os, const Tensor& t) {
  os.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t e : t.shape()) put<std::uint64_t>(os, e);
  for (double v : t.data()) put<std::uint64_t>(os, std::bit_cast<std::uint64_t>(v));
  if (!os) throw IoError("DWT1: write failed");
}

Tensor read_tensor(std::istream& is) {
  char magic[sizeof(kMagic)];
  if (!is.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw IoError("DWT1: bad magic");
  }
  const auto rank = get<std::uint32_t>(is, "rank");
  if (rank > kMaxRank) throw IoError("DWT1: rank " + std::to_string(rank) + " too large");
  Shape shape(rank);
  for (auto& e : shape) {
    e = get<std::uint64_t>(is, "extent");
    if (e == 0) throw IoError("DWT1: zero extent");
  }
  std::vector<double> data(numel(shape));
  for (auto& v : data) v = std::bit_cast<double>(get<std::uint64_t>(is, "payload"));
  return Tensor(std::move(shape), std::move(data));
}

void save_tensor(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  write_tensor(os, t);
}

Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  try {
    return read_tensor(is);
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

}  // namespace wf
