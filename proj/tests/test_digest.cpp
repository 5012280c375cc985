#include <cstring>

#include "doctest.h"
#include "peftkit/digest.hpp"

using namespace peftkit;

namespace {

std::vector<std::uint8_t> bytes_of(const char* s) {
  return {reinterpret_cast<const std::uint8_t*>(s),
          reinterpret_cast<const std::uint8_t*>(s) + std::strlen(s)};
}

}  // namespace

TEST_CASE("crc32 known vectors") {
  CHECK(crc32(bytes_of("")) == 0u);
  CHECK(crc32(bytes_of("123456789")) == 0xCBF43926u);
  CHECK(crc32(bytes_of("The quick brown fox jumps over the lazy dog")) == 0x414FA339u);
}

TEST_CASE("sha256 known vectors") {
  CHECK(hex_string(Sha256::of(bytes_of(""))) ==
        "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  CHECK(hex_string(Sha256::of(bytes_of("abc"))) ==
        "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  CHECK(hex_string(Sha256::of(bytes_of(
            "abcdbcdecdefdefgefghfghighijhijkijkljklmklmnlmnomnopnopq"))) ==
        "248d6a61d20638b8e5c026930c3e6039a33ce45964ff2167f6ecedd419db06c1");
}

TEST_CASE("sha256 streaming equals one-shot across block boundaries") {
  std::vector<std::uint8_t> data(200);
  for (std::size_t i = 0; i < data.size(); ++i) data[i] = std::uint8_t(i * 7 + 3);
  Sha256 h;
  h.update(data.data(), 63);
  h.update(data.data() + 63, 65);
  h.update(data.data() + 128, data.size() - 128);
  CHECK(hex_string(h.finish()) == hex_string(Sha256::of(data)));
}
