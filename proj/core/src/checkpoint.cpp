#include "ncp/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "ncp/error.hpp"

namespace ncp {

namespace {

template <typename T>
void put_le(std::string& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

template <typename T>
T get_le(std::string_view in, std::size_t at) {
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    v |= static_cast<T>(static_cast<unsigned char>(in[at + i])) << (8 * i);
  }
  return v;
}

}  // namespace

void Checkpoint::add(const std::string& name, const Tensor& t) {
  if (contains(name)) throw IoError("checkpoint: duplicate tensor '" + name + "'");
  StoredTensor s{name, t.shape(), {}};
  s.values.reserve(t.size());
  for (double v : t.data()) s.values.push_back(static_cast<float>(v));
  tensors.push_back(std::move(s));
}

bool Checkpoint::contains(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return true;
  }
  return false;
}

const StoredTensor& Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return t;
  }
  throw IoError("checkpoint: missing tensor '" + name + "'");
}

Tensor Checkpoint::tensor(const std::string& name) const {
  const auto& s = find(name);
  std::vector<double> data(s.values.begin(), s.values.end());
  return Tensor(s.shape, std::move(data));
}

std::string encode_checkpoint(const Checkpoint& ckpt) {
  nlohmann::json meta = ckpt.metadata;
  nlohmann::json dir = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& t : ckpt.tensors) {
    if (shape_size(t.shape) != t.values.size()) {
      throw IoError("checkpoint: tensor '" + t.name + "' does not match its shape");
    }
    dir.push_back({{"name", t.name}, {"shape", t.shape}, {"offset", offset}, {"count", t.values.size()}});
    offset += t.values.size();
  }
  meta["tensors"] = dir;
  const std::string text = meta.dump();

  std::string out(kCheckpointMagic, 4);
  put_le<std::uint32_t>(out, kCheckpointVersion);
  put_le<std::uint64_t>(out, text.size());
  out += text;
  out.reserve(out.size() + offset * 4);
  for (const auto& t : ckpt.tensors) {
    for (float f : t.values) put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(f));
  }
  return out;
}

Checkpoint decode_checkpoint(std::string_view bytes) {
  constexpr std::size_t kHeader = 4 + 4 + 8;
  if (bytes.size() < kHeader) {
    throw IoError("checkpoint: expected at least " + std::to_string(kHeader) + " header bytes, got " +
                  std::to_string(bytes.size()));
  }
  if (std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) {
    throw IoError("checkpoint: bad magic (not an NCPV file)");
  }
  const auto version = get_le<std::uint32_t>(bytes, 4);
  if (version != kCheckpointVersion) {
    throw IoError("checkpoint: unsupported format version " + std::to_string(version) +
                  " (this build reads version " + std::to_string(kCheckpointVersion) + ")");
  }
  const auto meta_len = get_le<std::uint64_t>(bytes, 8);
  if (meta_len > bytes.size() - kHeader) {
    throw IoError("checkpoint: metadata length " + std::to_string(meta_len) + " exceeds file size");
  }
  Checkpoint out;
  try {
    out.metadata = nlohmann::json::parse(bytes.substr(kHeader, meta_len));
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("checkpoint: malformed metadata: ") + e.what());
  }
  if (!out.metadata.is_object() || !out.metadata.contains("tensors")) {
    throw IoError("checkpoint: metadata lacks a tensor directory");
  }
  const std::string_view payload = bytes.substr(kHeader + meta_len);
  std::uint64_t expected = 0;
  try {
    for (const auto& e : out.metadata.at("tensors")) {
      StoredTensor t;
      t.name = e.at("name").get<std::string>();
      t.shape = e.at("shape").get<Shape>();
      const auto off = e.at("offset").get<std::uint64_t>();
      const auto count = e.at("count").get<std::uint64_t>();
      if (off != expected || count != shape_size(t.shape)) {
        throw IoError("checkpoint: inconsistent directory entry for '" + t.name + "'");
      }
      if ((off + count) * 4 > payload.size()) {
        throw IoError("checkpoint: payload truncated: expected " + std::to_string((off + count) * 4) +
                      " bytes, got " + std::to_string(payload.size()));
      }
      t.values.resize(count);
      for (std::uint64_t i = 0; i < count; ++i) {
        t.values[i] = std::bit_cast<float>(get_le<std::uint32_t>(payload, (off + i) * 4));
      }
      expected += count;
      out.tensors.push_back(std::move(t));
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("checkpoint: malformed tensor directory: ") + e.what());
  }
  if (expected * 4 != payload.size()) {
    throw IoError("checkpoint: payload has " + std::to_string(payload.size()) + " bytes, directory covers " +
                  std::to_string(expected * 4));
  }
  out.metadata.erase("tensors");
  return out;
}

std::string read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_bytes(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write to '" + path.string() + "' failed");
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  write_file_bytes(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file_bytes(path));
}

}  // namespace ncp
