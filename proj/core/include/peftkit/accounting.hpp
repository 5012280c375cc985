#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string_view>

#include "peftkit/param_store.hpp"

namespace peftkit {

// Symbolic model dimensions feeding the closed-form parameter counts.
// r (adapter bottleneck), l (prefix length) and m (prefix-adapter
// bottleneck) are only needed by the methods that use them.
struct ModelDims {
  std::uint64_t V = 0;  // vocabulary size
  std::uint64_t n = 0;  // maximum sequence length
  std::uint64_t d = 0;  // hidden dimension
  std::uint64_t L = 0;  // encoder layers
  std::optional<std::uint64_t> r;
  std::optional<std::uint64_t> l;
  std::optional<std::uint64_t> m;
};

enum class Method {
  full_ft,
  linear_ft_norm,
  bitfit,
  adapter,
  pfeiffer_adapter,
  lora,
  prefix_tuning,
  mam_adapter,
  hiwi_bias,
  hiwi_weight,
};

inline constexpr std::array<Method, 10> kAllMethods = {
    Method::full_ft,   Method::linear_ft_norm, Method::bitfit,     Method::adapter,
    Method::pfeiffer_adapter, Method::lora,    Method::prefix_tuning, Method::mam_adapter,
    Method::hiwi_bias, Method::hiwi_weight,
};

const char* method_name(Method m);
Method method_from_name(std::string_view name);

struct CountReport {
  Method method;
  std::uint64_t tuned = 0;
  std::uint64_t stored = 0;
  double tuned_pct = 0.0;   // relative to full_ft tuned
  double stored_pct = 0.0;
};

// Exact integer evaluation of the method's #Tuned/#Stored formulas.
// Throws ConfigError naming the missing symbol (r, l or m).
CountReport count(Method method, const ModelDims& dims);

// Parameters actually flagged trainable by the trainer/adapter modules on a
// real store, classifier excluded. The oracle for count(): integer-equal for
// every enumerable method. prefix_tuning/mam_adapter have no forward path
// here and throw ContractError.
std::uint64_t enumerate_tuned(const ParameterStore& store, Method method,
                              std::optional<std::uint64_t> r = std::nullopt);

}  // namespace peftkit
