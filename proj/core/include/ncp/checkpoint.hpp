#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "ncp/tensor.hpp"

namespace ncp {

inline constexpr char kCheckpointMagic[4] = {'N', 'C', 'P', 'V'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct StoredTensor {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

/// Container layout:
///   "NCPV" | uint32 LE version | uint64 LE metadata length | JSON metadata |
///   payload of little-endian float32 values.
/// The metadata carries a "tensors" directory (name, shape, offset, count in
/// floats); it is regenerated on encode, so callers never set it.
struct Checkpoint {
  nlohmann::json metadata = nlohmann::json::object();
  std::vector<StoredTensor> tensors;

  void add(const std::string& name, const Tensor& t);
  const StoredTensor& find(const std::string& name) const;
  bool contains(const std::string& name) const;
  /// Widens a stored tensor back to 64-bit.
  Tensor tensor(const std::string& name) const;
};

std::string encode_checkpoint(const Checkpoint& ckpt);
/// Throws IoError on a bad magic, unsupported version, or inconsistent directory.
Checkpoint decode_checkpoint(std::string_view bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::string read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::string_view bytes);

}  // namespace ncp
