#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace peftkit {

// IEEE CRC-32 (the zlib polynomial), used as the trailing integrity word of
// the PFRG/PFMK containers.
std::uint32_t crc32(const std::uint8_t* data, std::size_t len, std::uint32_t crc = 0);
std::uint32_t crc32(const std::vector<std::uint8_t>& data);

using Sha256Digest = std::array<std::uint8_t, 32>;

class Sha256 {
public:
  Sha256();
  void update(const std::uint8_t* data, std::size_t len);
  Sha256Digest finish();

  static Sha256Digest of(const std::uint8_t* data, std::size_t len);
  static Sha256Digest of(const std::vector<std::uint8_t>& data);

private:
  void process_block(const std::uint8_t* block);

  std::array<std::uint32_t, 8> state_;
  std::array<std::uint8_t, 64> buffer_;
  std::size_t buffered_ = 0;
  std::uint64_t total_ = 0;
};

std::string hex_string(const std::uint8_t* data, std::size_t len);
std::string hex_string(const Sha256Digest& d);

}  // namespace peftkit
