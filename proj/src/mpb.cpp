#include "maniprobe/mpb.hpp"

#include <bit>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <sstream>

namespace maniprobe::mpb {
namespace {

constexpr char kMagic[4] = {'M', 'P', 'B', '1'};
constexpr std::size_t kHeaderBytes = 4 + 8 + 8;

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

std::uint64_t get_u64(const std::string& in, std::size_t offset) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i)
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[offset + i])) << (8 * i);
  return v;
}

}  // namespace

std::string encode(const Matrix& m) {
  std::string out;
  out.reserve(kHeaderBytes + 8 * static_cast<std::size_t>(m.size()));
  out.append(kMagic, 4);
  put_u64(out, static_cast<std::uint64_t>(m.rows()));
  put_u64(out, static_cast<std::uint64_t>(m.cols()));
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j) put_u64(out, std::bit_cast<std::uint64_t>(m(i, j)));
  return out;
}

Matrix decode(const std::string& bytes) {
  if (bytes.size() < kHeaderBytes || bytes.compare(0, 4, kMagic, 4) != 0)
    throw DataError("MPB1: bad magic or truncated header");
  const std::uint64_t rows = get_u64(bytes, 4);
  const std::uint64_t cols = get_u64(bytes, 12);
  if (cols != 0 && rows > (bytes.size() - kHeaderBytes) / 8 / cols)
    throw DataError("MPB1: payload shorter than declared shape");
  if (bytes.size() != kHeaderBytes + 8 * rows * cols)
    throw DataError("MPB1: payload size does not match declared shape");
  Matrix m(static_cast<Index>(rows), static_cast<Index>(cols));
  std::size_t off = kHeaderBytes;
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j, off += 8) m(i, j) = std::bit_cast<double>(get_u64(bytes, off));
  return m;
}

void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("cannot open for writing: " + tmp.string());
    os.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!os) throw DataError("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open: " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void write_matrix(const std::filesystem::path& path, const Matrix& m) {
  write_file_atomic(path, encode(m));
}

Matrix read_matrix(const std::filesystem::path& path) {
  try {
    return decode(read_file(path));
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

}  // namespace maniprobe::mpb
