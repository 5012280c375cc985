#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "peftkit/param_store.hpp"
#include "peftkit/tensor.hpp"

namespace peftkit {

enum class AdapterKind : std::uint8_t {
  adapter,           // two residual bottlenecks per layer + layer norms tuned
  pfeiffer_adapter,  // one residual bottleneck per layer, norms frozen
  lora,              // parallel low-rank branch on the q/v projections
  hiwi_bias,         // adapter applied to the FFN bias vectors, merged after training
  hiwi_weight,       // adapter applied to the FFN weight matrices, merged after training
};

const char* adapter_kind_name(AdapterKind k);
AdapterKind adapter_kind_from_name(std::string_view name);

struct AdapterSpec {
  AdapterKind kind = AdapterKind::hiwi_bias;
  std::size_t r = 4;
  Nonlinearity f = Nonlinearity::relu;
  double lora_scale = 1.0;
  // Empty = kind defaults: FFN groups for hiwi kinds, attn q/v weights for
  // lora, per-layer sites for adapter/pfeiffer.
  std::vector<std::string> targets;
};

// One down/up projection pair. Down is uniform(+-1/sqrt(fan_in)) at init,
// up is exactly zero, so a fresh adapter is the identity. Projection biases
// exist for every kind except lora.
struct AdapterPair {
  std::string target;
  Tensor w_down;
  Tensor b_down;  // empty for lora
  Tensor w_up;
  Tensor b_up;    // empty for lora
  bool has_bias() const { return b_down.numel() > 0; }
  std::size_t param_count() const;
};

struct AdapterWeights {
  AdapterKind kind = AdapterKind::hiwi_bias;
  Nonlinearity f = Nonlinearity::relu;
  double lora_scale = 1.0;
  std::vector<AdapterPair> pairs;

  std::size_t param_count() const;
  const AdapterPair* find(std::string_view target) const;
};

// Resolves the requested targets against the base store and draws fresh
// weights. Naming conventions of toy-bench stores are assumed for default
// targets ("...ffn1.bias", "...attn.q.weight", ...). Seeded and
// deterministic.
AdapterWeights init_adapter_weights(const AdapterSpec& spec, const ParameterStore& base,
                                    std::uint64_t seed);

// f(x Wd + bd) Wu + bu applied to the rows of x (no residual).
Tensor adapter_mlp_rows(const Tensor& x, const AdapterPair& pair, Nonlinearity f);

// h + f(h Wd + bd) Wu + bu  — the residual bottleneck transform.
Tensor adapter_forward(const Tensor& h, const AdapterPair& pair, Nonlinearity f);

// h W + scale * (h Wd) Wu  — parallel low-rank branch.
Tensor lora_forward(const Tensor& h, const Tensor& w, const AdapterPair& pair, double scale);

// W + scale * Wd Wu
Tensor lora_merge(const Tensor& w, const AdapterPair& pair, double scale);

// W + [f(W^T Wd + bd) Wu + bu]^T : the adapter runs over the input-dimension
// vectors of W (its columns in the row-vector convention), so the bias and
// weight variants share adapter_mlp_rows.
Tensor hiwi_weight_merge(const Tensor& w, const AdapterPair& pair, Nonlinearity f);

// b + f(b Wd + bd) Wu + bu with b as a row vector.
Tensor hiwi_bias_merge(const Tensor& b, const AdapterPair& pair, Nonlinearity f);

// Folds every pair into its target group; only lora/hiwi kinds merge.
ParameterStore merge_adapters(const ParameterStore& base, const AdapterWeights& weights);

// Numerical rank: singular values above tol * sigma_max (one-sided Jacobi).
int rank_of(const Tensor& m, double tol);

struct LoraInequalityResult {
  Tensor lhs;  // h W + f(h Wd) Wu
  Tensor rhs;  // h (W + f(Wd) Wu)
  double max_abs_gap = 0.0;
};

LoraInequalityResult demonstrate_lora_inequality(const Tensor& w, const AdapterPair& pair,
                                                 const Tensor& h, Nonlinearity f);

// Adapter weights persist as a PFRG store with groups
// "<target>.<down|up>.<weight|bias>"; kind/f/scale travel out of band (CLI
// flags or the run manifest).
ParameterStore adapters_to_store(const AdapterWeights& weights);
AdapterWeights adapters_from_store(const ParameterStore& store, AdapterKind kind, Nonlinearity f,
                                   double lora_scale);

}  // namespace peftkit
