#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "sesf/adam.hpp"
#include "sesf/tensor.hpp"

namespace sesf {

// Flat binary parameter file: magic "SESG", u32 format version, then one
// record per tensor (u32 name length, UTF-8 name, u32 rank, u64 axis
// lengths, little-endian f64 payload).
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& entries);
std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path);

// FNV-1a 64-bit of the file bytes, as "fnv1a:<hex>"; used for provenance ids.
std::string file_hash(const std::filesystem::path& path);

}  // namespace sesf
