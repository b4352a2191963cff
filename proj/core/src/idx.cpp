#include "ncp/idx.hpp"

#include <fstream>
#include <iterator>
#include <sstream>

namespace ncp {

namespace {

constexpr std::uint8_t kUnsignedByte = 0x08;

std::uint32_t read_be32(const std::vector<std::uint8_t>& b, std::size_t off) {
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) |
         (std::uint32_t{b[off + 2]} << 8) | std::uint32_t{b[off + 3]};
}

void write_be32(std::vector<std::uint8_t>& b, std::uint32_t v) {
  b.push_back(static_cast<std::uint8_t>(v >> 24));
  b.push_back(static_cast<std::uint8_t>(v >> 16));
  b.push_back(static_cast<std::uint8_t>(v >> 8));
  b.push_back(static_cast<std::uint8_t>(v));
}

}  // namespace

IdxArray parse_idx(const std::vector<std::uint8_t>& file_bytes) {
  if (file_bytes.size() < 4) {
    throw IdxFormatError("IDX truncated header: expected at least 4 bytes, got " +
                         std::to_string(file_bytes.size()));
  }
  const std::uint32_t magic = read_be32(file_bytes, 0);
  const std::uint8_t type = file_bytes[2];
  const std::uint8_t ndim = file_bytes[3];
  if (file_bytes[0] != 0 || file_bytes[1] != 0 || type != kUnsignedByte || (ndim != 1 && ndim != 3)) {
    std::ostringstream os;
    os << "IDX bad magic 0x" << std::hex << magic << " (expected 0x801 or 0x803)";
    throw IdxFormatError(os.str());
  }
  const std::size_t header = 4 + 4 * std::size_t{ndim};
  if (file_bytes.size() < header) {
    throw IdxFormatError("IDX truncated header: expected " + std::to_string(header) +
                         " bytes, got " + std::to_string(file_bytes.size()));
  }
  IdxArray out;
  std::size_t count = 1;
  for (std::size_t d = 0; d < ndim; ++d) {
    const auto dim = read_be32(file_bytes, 4 + 4 * d);
    out.dims.push_back(dim);
    count *= dim;
  }
  const std::size_t expected = header + count;
  if (file_bytes.size() != expected) {
    const std::size_t got = file_bytes.size() > header ? file_bytes.size() - header : 0;
    throw IdxFormatError("IDX payload size mismatch: dimensions need " + std::to_string(count) +
                         " payload bytes, file has " + std::to_string(got));
  }
  out.bytes.assign(file_bytes.begin() + static_cast<std::ptrdiff_t>(header), file_bytes.end());
  return out;
}

IdxArray read_idx(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open IDX file " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return parse_idx(bytes);
}

std::vector<std::uint8_t> encode_idx(const IdxArray& array) {
  if (array.dims.size() != 1 && array.dims.size() != 3) {
    throw IdxFormatError("IDX encoder supports 1-D and 3-D arrays only");
  }
  std::size_t count = 1;
  for (auto d : array.dims) count *= d;
  if (count != array.bytes.size()) throw IdxFormatError("IDX dims do not match payload length");
  std::vector<std::uint8_t> out{0, 0, kUnsignedByte, static_cast<std::uint8_t>(array.dims.size())};
  for (auto d : array.dims) write_be32(out, d);
  out.insert(out.end(), array.bytes.begin(), array.bytes.end());
  return out;
}

void write_idx(const std::filesystem::path& path, const IdxArray& array) {
  const auto bytes = encode_idx(array);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write IDX file " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + path.string());
}

Tensor load_idx_images(const std::filesystem::path& path, std::uint32_t rows, std::uint32_t cols) {
  auto arr = read_idx(path);
  if (arr.dims.size() != 3 || arr.dims[1] != rows || arr.dims[2] != cols) {
    std::ostringstream os;
    os << "IDX dimension mismatch in " << path.string() << ": expected N x " << rows << " x "
       << cols << ", got rank " << arr.dims.size();
    for (auto d : arr.dims) os << ' ' << d;
    throw IdxFormatError(os.str());
  }
  if (arr.dims[0] == 0) throw IdxFormatError("IDX image file holds zero images");
  Tensor out({arr.dims[0], rows, cols}, 0.0);
  auto dst = out.data();
  for (std::size_t i = 0; i < arr.bytes.size(); ++i) dst[i] = arr.bytes[i] / 255.0;
  return out;
}

std::vector<std::uint8_t> load_idx_labels(const std::filesystem::path& path) {
  auto arr = read_idx(path);
  if (arr.dims.size() != 1) throw IdxFormatError("IDX label file must be 1-D");
  return std::move(arr.bytes);
}

}  // namespace ncp
