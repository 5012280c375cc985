#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

#include "peftkit/digest.hpp"
#include "peftkit/param_store.hpp"

namespace peftkit {

// Byte values are part of the PFMK wire format.
enum class MaskScope : std::uint8_t { group_wise = 0, global = 1 };
enum class MaskSelector : std::uint8_t {
  smallest = 0,
  largest = 1,
  middle = 2,
  random = 3,
  diff = 4,
  fisher = 5,
};

const char* mask_scope_name(MaskScope s);
MaskScope mask_scope_from_name(std::string_view name);
const char* mask_selector_name(MaskSelector s);
MaskSelector mask_selector_from_name(std::string_view name);

struct MaskPolicy {
  bool tune_norm = true;   // norm groups fully selected, outside the k budget
  bool tune_embed = false; // embedding groups excluded entirely
};

struct GroupIndices {
  std::string name;
  std::vector<std::uint64_t> indices;  // strictly ascending
};

// A selection is the structural part of a mask: per-group ascending index
// lists over some store. Masks use it for the base checkpoint; the trainer
// reuses it for mode-derived trainable sets (which may include classifier
// groups).
using Selection = std::vector<GroupIndices>;

std::size_t selection_count(const Selection& sel);
const GroupIndices* selection_find(const Selection& sel, std::string_view name);

struct SparseMask {
  Selection groups;  // every non-classifier group of the source store, in order
  double sparsity = 0.0;  // selected / eligible-pool size
  MaskScope scope = MaskScope::group_wise;
  MaskSelector selector = MaskSelector::smallest;
  MaskPolicy policy;
  Sha256Digest provenance{};  // sha256 of the source checkpoint's PFRG bytes

  std::size_t selected_count() const { return selection_count(groups); }
  const GroupIndices* find(std::string_view name) const { return selection_find(groups, name); }
};

// Eligibility pool: non-classifier groups, minus norm groups when
// policy.tune_norm (those are force-included, outside the k budget), minus
// embedding groups when !policy.tune_embed. k = round(sparsity * pool size).
std::size_t eligible_pool_size(const ParameterStore& store, const MaskPolicy& policy);

// PaFi: bottom-k by |theta| over the pool (selector = smallest).
SparseMask pafi_mask(const ParameterStore& store, double sparsity, MaskScope scope,
                     const MaskPolicy& policy);

// Same machinery with the Table-4 ablation selectors. `seed` drives the
// random selector only.
SparseMask magnitude_mask(const ParameterStore& store, double sparsity, MaskScope scope,
                          const MaskPolicy& policy, MaskSelector selector, std::uint64_t seed);

// Exact-k variant (global scope over the eligible pool with default policy).
SparseMask ablation_mask(const ParameterStore& store, std::uint64_t k, MaskSelector selector,
                         std::uint64_t seed);

// Top-k by |theta1 - theta0| over all non-classifier parameters (global).
SparseMask diff_mask(const ParameterStore& theta0, const ParameterStore& theta1, std::uint64_t k);

// Mean over n samples of the elementwise squared per-sample gradient.
// `per_sample_grads(i)` returns a gradient store aligned with the model's.
ParameterStore fisher_scores(const std::function<ParameterStore(std::size_t)>& per_sample_grads,
                             std::size_t n);

// Bottom-k by Fisher score over the eligible pool (global scope).
SparseMask fisher_mask(const ParameterStore& scores, std::uint64_t k, const MaskPolicy& policy);

void check_mask_alignment(const SparseMask& mask, const ParameterStore& store);

// PFMK mask container (all integers little-endian):
//
//   offset  size  field
//   0       4     magic "PFMK"
//   4       2     version u16 (currently 1)
//   6       32    provenance (sha256 of the source checkpoint bytes)
//   38      1     scope byte
//   39      1     selector byte
//   40      1     policy byte (bit0 = tune_norm, bit1 = tune_embed)
//   41      8     sparsity f64
//   49      4     group count u32
//   then per group:
//           4     name length u32
//           -     name bytes
//           8     index count u64
//           -     indices, delta-encoded LEB128 varints
//                 (first index as-is, then gaps to the previous index)
//   then:
//           4     CRC-32 over every preceding byte
inline constexpr std::uint16_t kMaskVersion = 1;

std::vector<std::uint8_t> serialize_mask(const SparseMask& mask);
SparseMask parse_mask(const std::vector<std::uint8_t>& bytes);
void save_mask(const SparseMask& mask, const std::filesystem::path& path);
SparseMask load_mask(const std::filesystem::path& path);

}  // namespace peftkit
