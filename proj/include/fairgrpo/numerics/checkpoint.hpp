#pragma once

// On-disk tensor checkpoints: one UTF-8 JSON manifest line, a '\n', then a
// single blob of little-endian float64 arrays at the byte offsets the
// manifest lists.
//
//   {"format":"fairgrpo-checkpoint","version":"1","dtype":"float64",
//    "byte_order":"little","blob_bytes":N,
//    "tensors":[{"name":..,"shape":[..],"offset":..,"bytes":..},..],
//    "metadata":{..}}

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fairgrpo/numerics/tensor.hpp"

namespace fairgrpo::num {

inline constexpr const char* kCheckpointVersion = "1";

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

struct Checkpoint {
  std::vector<NamedTensor> tensors;
  nlohmann::json metadata = nlohmann::json::object();

  // Throws IncompatibleError when the name is absent.
  const Tensor& get(const std::string& name) const;
  bool contains(const std::string& name) const;
};

std::string encode_checkpoint(std::span<const NamedTensor> tensors, const nlohmann::json& metadata);
Checkpoint decode_checkpoint(const std::string& bytes);

void save_checkpoint(const std::filesystem::path& path, std::span<const NamedTensor> tensors,
                     const nlohmann::json& metadata);
// MissingArtifactError if the file is absent, IoError if it is malformed.
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Write to a sibling temp file, then rename over the target.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);
std::string read_file(const std::filesystem::path& path);

// 64-bit FNV-1a, rendered as 16 hex digits.
std::string fnv1a_hex(std::span<const unsigned char> bytes);
std::string hash_values(std::span<const NamedTensor> tensors);

}  // namespace fairgrpo::num
