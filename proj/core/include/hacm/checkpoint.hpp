// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>

#include "hacm/graph.hpp"

// Binary parameter snapshots. Layout, all little-endian:
//   "HACMCKP1"  u32 version  u64 config digest  u32 count
//   count x { u32 name length, name bytes, u32 rank, u64 extents[rank],
//             f64 values[product(extents)] }
namespace hacm::checkpoint {

inline constexpr std::uint32_t kVersion = 1;

void save(const std::filesystem::path& path, std::uint64_t digest, std::span<const Parameter* const> params);

/// Digest stored in a checkpoint header.
std::uint64_t read_digest(const std::filesystem::path& path);

/// Restores values by name and shape. Throws ConfigError when the digest
/// differs from `expected_digest` and FormatError subclasses on malformed
/// files or missing/mismatched parameters.
void load(const std::filesystem::path& path, std::uint64_t expected_digest, std::span<Parameter* const> params);

}  // namespace hacm::checkpoint
