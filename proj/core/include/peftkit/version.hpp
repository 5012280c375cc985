#pragma once

namespace peftkit {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace peftkit
