#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "ncp/error.hpp"
#include "ncp/tensor.hpp"

namespace ncp {

/// Raw contents of an unsigned-byte IDX file (magic 0x00000801 or 0x00000803).
struct IdxArray {
  std::vector<std::uint32_t> dims;
  std::vector<std::uint8_t> bytes;
};

/// Thrown for bad magic, truncated payloads and unexpected dimensions.
class IdxFormatError : public IoError {
 public:
  using IoError::IoError;
};

IdxArray parse_idx(const std::vector<std::uint8_t>& file_bytes);
IdxArray read_idx(const std::filesystem::path& path);
std::vector<std::uint8_t> encode_idx(const IdxArray& array);
void write_idx(const std::filesystem::path& path, const IdxArray& array);

/// Loads an N x rows x cols image file and scales bytes to [0, 1].
Tensor load_idx_images(const std::filesystem::path& path, std::uint32_t rows = 28,
                       std::uint32_t cols = 28);

/// Loads a 1-D label file.
std::vector<std::uint8_t> load_idx_labels(const std::filesystem::path& path);

}  // namespace ncp
