#include "fairgrpo/numerics/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "fairgrpo/errors.hpp"

namespace fairgrpo::num {
namespace {

static_assert(sizeof(double) == 8);

void append_le(std::string& out, double value) {
  std::uint64_t bits = std::bit_cast<std::uint64_t>(value);
  for (int i = 0; i < 8; ++i) {
    out.push_back(static_cast<char>(bits & 0xffu));
    bits >>= 8;
  }
}

double read_le(const char* p) {
  std::uint64_t bits = 0;
  for (int i = 7; i >= 0; --i) {
    bits = (bits << 8) | static_cast<unsigned char>(p[i]);
  }
  return std::bit_cast<double>(bits);
}

}  // namespace

const Tensor& Checkpoint::get(const std::string& name) const {
  for (const auto& nt : tensors) {
    if (nt.name == name) return nt.tensor;
  }
  throw IncompatibleError("checkpoint has no tensor named '" + name + "'");
}

bool Checkpoint::contains(const std::string& name) const {
  for (const auto& nt : tensors) {
    if (nt.name == name) return true;
  }
  return false;
}

std::string encode_checkpoint(std::span<const NamedTensor> tensors, const nlohmann::json& metadata) {
  nlohmann::json entries = nlohmann::json::array();
  std::string blob;
  for (const auto& nt : tensors) {
    const std::size_t offset = blob.size();
    for (double v : nt.tensor.values()) append_le(blob, v);
    entries.push_back({{"name", nt.name},
                       {"shape", nt.tensor.shape()},
                       {"offset", offset},
                       {"bytes", blob.size() - offset}});
  }
  nlohmann::json manifest = {{"format", "fairgrpo-checkpoint"},
                             {"version", kCheckpointVersion},
                             {"dtype", "float64"},
                             {"byte_order", "little"},
                             {"blob_bytes", blob.size()},
                             {"tensors", std::move(entries)},
                             {"metadata", metadata}};
  std::string out = manifest.dump();
  out.push_back('\n');
  out += blob;
  return out;
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  const std::size_t newline = bytes.find('\n');
  if (newline == std::string::npos) throw IoError("checkpoint: missing manifest terminator");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(bytes.substr(0, newline));
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("checkpoint: unreadable manifest: ") + e.what());
  }
  if (manifest.value("version", "") != kCheckpointVersion) {
    throw IoError("checkpoint: unsupported version " + manifest.value("version", std::string("?")));
  }
  if (manifest.value("dtype", "") != "float64") throw IoError("checkpoint: unsupported dtype");
  const std::size_t blob_start = newline + 1;
  const std::size_t blob_bytes = manifest.at("blob_bytes").get<std::size_t>();
  if (bytes.size() - blob_start != blob_bytes) {
    throw IoError("checkpoint: blob is " + std::to_string(bytes.size() - blob_start) +
                  " bytes, manifest says " + std::to_string(blob_bytes));
  }
  Checkpoint ckpt;
  ckpt.metadata = manifest.value("metadata", nlohmann::json::object());
  for (const auto& entry : manifest.at("tensors")) {
    const auto shape = entry.at("shape").get<Shape>();
    const std::size_t offset = entry.at("offset").get<std::size_t>();
    const std::size_t nbytes = entry.at("bytes").get<std::size_t>();
    const std::size_t count = shape_size(shape);
    if (nbytes != count * 8 || offset + nbytes > blob_bytes) {
      throw IoError("checkpoint: bad extent for tensor " + entry.at("name").get<std::string>());
    }
    std::vector<double> values(count);
    const char* base = bytes.data() + blob_start + offset;
    for (std::size_t i = 0; i < count; ++i) values[i] = read_le(base + 8 * i);
    ckpt.tensors.push_back({entry.at("name").get<std::string>(),
                            Tensor::from_data(shape, std::move(values))});
  }
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, std::span<const NamedTensor> tensors,
                     const nlohmann::json& metadata) {
  write_file_atomic(path, encode_checkpoint(tensors, metadata));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) {
    throw MissingArtifactError("checkpoint not found: " + path.string());
  }
  return decode_checkpoint(read_file(path));
}

void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + tmp.string());
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw IoError("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for reading: " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

std::string fnv1a_hex(std::span<const unsigned char> bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string hash_values(std::span<const NamedTensor> tensors) {
  const std::string encoded = encode_checkpoint(tensors, nlohmann::json::object());
  return fnv1a_hex({reinterpret_cast<const unsigned char*>(encoded.data()), encoded.size()});
}

}  // namespace fairgrpo::num
