#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "fedzo/mask.hpp"
#include "fedzo/model.hpp"

namespace fedzo {

using DescriptorHash = std::array<std::uint8_t, 32>;

// SHA-256 of describe(spec).
DescriptorHash descriptor_hash(const ModelSpec& spec);

// ⌈n/8⌉ bytes, bit j of the mask at bit (j % 8) of byte j / 8.
std::vector<std::uint8_t> pack_mask(const Mask& mask);
Mask unpack_mask(std::span<const std::uint8_t> bytes, std::size_t n);

// Mask file: 8-byte little-endian n, packed bits, descriptor hash.
std::vector<std::uint8_t> encode_mask(const ModelSpec& spec, const Mask& mask);
Mask decode_mask(const ModelSpec& spec, std::span<const std::uint8_t> bytes, const std::string& source = "mask");

// Checkpoint: descriptor hash, 8-byte little-endian n, n little-endian
// float64 parameters, packed mask.
struct Checkpoint {
  ModelParams params;
  Mask mask;
};
std::vector<std::uint8_t> encode_checkpoint(const ModelSpec& spec, const ModelParams& params, const Mask& mask);
Checkpoint decode_checkpoint(const ModelSpec& spec, std::span<const std::uint8_t> bytes,
                             const std::string& source = "checkpoint");

// Writes to a temporary sibling, then renames over `path`.
void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> read_file(const std::filesystem::path& path);

void save_mask(const std::filesystem::path& path, const ModelSpec& spec, const Mask& mask);
Mask load_mask(const std::filesystem::path& path, const ModelSpec& spec);
void save_checkpoint(const std::filesystem::path& path, const ModelSpec& spec, const ModelParams& params,
                     const Mask& mask);
Checkpoint load_checkpoint(const std::filesystem::path& path, const ModelSpec& spec);

}  // namespace fedzo
