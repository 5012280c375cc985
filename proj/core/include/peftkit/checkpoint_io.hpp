#pragma once

#include <filesystem>
#include <vector>

#include "peftkit/digest.hpp"
#include "peftkit/param_store.hpp"

namespace peftkit {

// PFRG checkpoint container (all integers little-endian):
//
//   offset  size  field
//   0       4     magic "PFRG"
//   4       2     version u16 (currently 1)
//   6       4     group count u32
//   then per group:
//           4     name length u32
//           -     name bytes (UTF-8)
//           1     role byte (Role enum value)
//           1     rank u8
//           8*r   dims u64 x rank
//           4*n   payload, f32 x prod(dims)
//   then:
//           4     CRC-32 over every preceding byte
//
// Payloads are f32 on disk and widened to f64 in memory; group order is
// stable, so identical stores serialize to identical bytes. A sibling
// "<path>.json" manifest mirrors names/shapes/roles plus model meta.

inline constexpr std::uint16_t kCheckpointVersion = 1;

std::vector<std::uint8_t> serialize_checkpoint(const ParameterStore& store);
ParameterStore parse_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const ParameterStore& store, const std::filesystem::path& path);
ParameterStore load_checkpoint(const std::filesystem::path& path);

// SHA-256 of the store's canonical PFRG bytes; the provenance recorded in
// mask files.
Sha256Digest store_content_hash(const ParameterStore& store);

std::string checkpoint_manifest_json(const ParameterStore& store);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);

}  // namespace peftkit
