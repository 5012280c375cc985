#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace peftkit {

// Deterministic RNG. mt19937_64's output sequence is pinned by the standard;
// the samplers below are hand-rolled because std::*_distribution and
// std::shuffle are implementation-defined, which would break byte-identical
// masks/checkpoints across machines.
class Rng {
public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next_u64() { return gen_(); }

  // [0, 1) from the top 53 bits.
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller; second value cached.
  double normal();

  // Uniform in [0, n) by rejection.
  std::uint64_t below(std::uint64_t n);

  template <typename T>
  void shuffle(std::vector<T>& v) {
    if (v.empty()) return;
    for (std::uint64_t i = v.size() - 1; i > 0; --i) {
      std::swap(v[i], v[below(i + 1)]);
    }
  }

  // k distinct values from [0, n), returned sorted ascending.
  std::vector<std::uint64_t> sample_without_replacement(std::uint64_t n, std::uint64_t k);

private:
  std::mt19937_64 gen_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t fnv1a64(std::string_view s);

}  // namespace peftkit
