#include "peftkit/mask.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>

#include "peftkit/checkpoint_io.hpp"
#include "peftkit/rng.hpp"

namespace peftkit {

const char* mask_scope_name(MaskScope s) {
  return s == MaskScope::group_wise ? "group_wise" : "global";
}

MaskScope mask_scope_from_name(std::string_view name) {
  if (name == "group_wise") return MaskScope::group_wise;
  if (name == "global") return MaskScope::global;
  throw ConfigError("unknown mask scope: " + std::string(name));
}

const char* mask_selector_name(MaskSelector s) {
  switch (s) {
    case MaskSelector::smallest: return "smallest";
    case MaskSelector::largest: return "largest";
    case MaskSelector::middle: return "middle";
    case MaskSelector::random: return "random";
    case MaskSelector::diff: return "diff";
    case MaskSelector::fisher: return "fisher";
  }
  return "?";
}

MaskSelector mask_selector_from_name(std::string_view name) {
  for (std::uint8_t b = 0; b <= std::uint8_t(MaskSelector::fisher); ++b) {
    if (name == mask_selector_name(MaskSelector(b))) return MaskSelector(b);
  }
  throw ConfigError("unknown mask selector: " + std::string(name));
}

std::size_t selection_count(const Selection& sel) {
  std::size_t n = 0;
  for (const auto& g : sel) n += g.indices.size();
  return n;
}

const GroupIndices* selection_find(const Selection& sel, std::string_view name) {
  for (const auto& g : sel) {
    if (g.name == name) return &g;
  }
  return nullptr;
}

namespace {

enum class GroupClass { excluded_classifier, forced_norm, excluded_embedding, pool };

GroupClass classify(const ParamGroup& g, const MaskPolicy& policy) {
  if (g.role == Role::classifier) return GroupClass::excluded_classifier;
  if (role_is_norm(g.role) && policy.tune_norm) return GroupClass::forced_norm;
  if (role_is_embedding(g.role) && !policy.tune_embed) return GroupClass::excluded_embedding;
  return GroupClass::pool;
}

std::vector<std::uint64_t> all_indices(std::size_t n) {
  std::vector<std::uint64_t> v(n);
  std::iota(v.begin(), v.end(), 0);
  return v;
}

// Ranks `scores` ascending with ties broken by ascending index, then applies
// the selector. Returned indices are sorted ascending.
std::vector<std::uint64_t> select_by_scores(const std::vector<double>& scores, std::uint64_t k,
                                            MaskSelector selector, Rng* rng) {
  const std::uint64_t n = scores.size();
  if (k >= n) return all_indices(n);
  if (k == 0) return {};
  std::vector<std::uint64_t> picked;
  switch (selector) {
    case MaskSelector::random: {
      picked = rng->sample_without_replacement(n, k);
      return picked;
    }
    case MaskSelector::largest:
    case MaskSelector::diff: {  // diff selection is top-k by |theta1 - theta0|
      std::vector<std::uint64_t> order = all_indices(n);
      std::sort(order.begin(), order.end(), [&](std::uint64_t a, std::uint64_t b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return a < b;
      });
      picked.assign(order.begin(), order.begin() + k);
      break;
    }
    case MaskSelector::smallest:
    case MaskSelector::middle:
    case MaskSelector::fisher: {
      std::vector<std::uint64_t> order = all_indices(n);
      std::sort(order.begin(), order.end(), [&](std::uint64_t a, std::uint64_t b) {
        if (scores[a] != scores[b]) return scores[a] < scores[b];
        return a < b;
      });
      const std::uint64_t first = selector == MaskSelector::middle ? (n - k) / 2 : 0;
      picked.assign(order.begin() + first, order.begin() + first + k);
      break;
    }
  }
  std::sort(picked.begin(), picked.end());
  return picked;
}

std::vector<double> abs_scores(const Tensor& t) {
  std::vector<double> s(t.numel());
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = std::fabs(t.at(i));
  return s;
}

std::uint64_t round_count(double sparsity, std::size_t size) {
  return std::uint64_t(std::llround(sparsity * double(size)));
}

// Shared engine behind the magnitude/diff/fisher mask builders. `scores`
// must be aligned with `store` (same group order and sizes).
SparseMask build_mask(const ParameterStore& store, const ParameterStore& scores, double sparsity,
                      std::uint64_t explicit_k, bool use_explicit_k, MaskScope scope,
                      const MaskPolicy& policy, MaskSelector selector, std::uint64_t seed,
                      const Sha256Digest& provenance) {
  if (!use_explicit_k && !(sparsity > 0.0 && sparsity <= 1.0)) {
    throw ConfigError("sparsity must be in (0, 1], got " + std::to_string(sparsity));
  }
  if (store.size() == 0) throw ConfigError("store is empty");

  struct PoolGroup {
    std::size_t store_index;
    std::size_t size;
  };
  std::vector<PoolGroup> pool;
  std::size_t pool_size = 0;
  for (std::size_t i = 0; i < store.size(); ++i) {
    if (classify(store.groups()[i], policy) == GroupClass::pool) {
      pool.push_back({i, store.groups()[i].tensor.numel()});
      pool_size += store.groups()[i].tensor.numel();
    }
  }
  if (pool_size == 0) throw ConfigError("store has no eligible parameters under this policy");

  std::uint64_t k_total = use_explicit_k ? std::min<std::uint64_t>(explicit_k, pool_size)
                                         : round_count(sparsity, pool_size);

  // per-group target counts
  std::vector<std::uint64_t> k_group(pool.size(), 0);
  if (scope == MaskScope::group_wise && !use_explicit_k) {
    std::uint64_t assigned = 0;
    std::size_t largest = 0;
    for (std::size_t p = 0; p < pool.size(); ++p) {
      k_group[p] = std::min<std::uint64_t>(round_count(sparsity, pool[p].size), pool[p].size);
      assigned += k_group[p];
      if (pool[p].size > pool[largest].size) largest = p;
    }
    // rounding residual goes to the largest group
    const std::int64_t residual = std::int64_t(k_total) - std::int64_t(assigned);
    std::int64_t adjusted = std::int64_t(k_group[largest]) + residual;
    adjusted = std::max<std::int64_t>(0, std::min<std::int64_t>(adjusted, pool[largest].size));
    k_group[largest] = std::uint64_t(adjusted);
  }

  SparseMask mask;
  mask.scope = scope;
  mask.selector = selector;
  mask.policy = policy;
  mask.provenance = provenance;

  // selections for pool groups
  std::vector<std::vector<std::uint64_t>> picked(pool.size());
  if (scope == MaskScope::group_wise && !use_explicit_k) {
    for (std::size_t p = 0; p < pool.size(); ++p) {
      const auto& g = scores.groups()[pool[p].store_index];
      Rng rng(seed ^ fnv1a64(g.name));
      picked[p] = select_by_scores(abs_scores(g.tensor), k_group[p], selector, &rng);
    }
  } else {
    // global: rank the flattened pool
    std::vector<double> flat;
    flat.reserve(pool_size);
    std::vector<std::pair<std::size_t, std::uint64_t>> owner;  // pool group, local index
    owner.reserve(pool_size);
    for (std::size_t p = 0; p < pool.size(); ++p) {
      const auto& g = scores.groups()[pool[p].store_index];
      for (std::size_t i = 0; i < g.tensor.numel(); ++i) {
        flat.push_back(std::fabs(g.tensor.at(i)));
        owner.push_back({p, i});
      }
    }
    Rng rng(seed);
    const auto flat_picked = select_by_scores(flat, k_total, selector, &rng);
    for (std::uint64_t fi : flat_picked) picked[owner[fi].first].push_back(owner[fi].second);
    for (auto& v : picked) std::sort(v.begin(), v.end());
  }

  std::size_t selected_in_pool = 0;
  std::size_t pool_cursor = 0;
  for (std::size_t i = 0; i < store.size(); ++i) {
    const auto& g = store.groups()[i];
    switch (classify(g, policy)) {
      case GroupClass::excluded_classifier:
        break;
      case GroupClass::forced_norm:
        mask.groups.push_back({g.name, all_indices(g.tensor.numel())});
        break;
      case GroupClass::excluded_embedding:
        mask.groups.push_back({g.name, {}});
        break;
      case GroupClass::pool:
        selected_in_pool += picked[pool_cursor].size();
        mask.groups.push_back({g.name, std::move(picked[pool_cursor])});
        ++pool_cursor;
        break;
    }
  }
  mask.sparsity = double(selected_in_pool) / double(pool_size);
  return mask;
}

}  // namespace

std::size_t eligible_pool_size(const ParameterStore& store, const MaskPolicy& policy) {
  std::size_t n = 0;
  for (const auto& g : store.groups()) {
    if (classify(g, policy) == GroupClass::pool) n += g.tensor.numel();
  }
  return n;
}

SparseMask pafi_mask(const ParameterStore& store, double sparsity, MaskScope scope,
                     const MaskPolicy& policy) {
  return magnitude_mask(store, sparsity, scope, policy, MaskSelector::smallest, 0);
}

SparseMask magnitude_mask(const ParameterStore& store, double sparsity, MaskScope scope,
                          const MaskPolicy& policy, MaskSelector selector, std::uint64_t seed) {
  if (selector == MaskSelector::diff || selector == MaskSelector::fisher) {
    throw ConfigError("magnitude_mask: selector needs diff_mask/fisher_mask");
  }
  return build_mask(store, store, sparsity, 0, false, scope, policy, selector, seed,
                    store_content_hash(store));
}

SparseMask ablation_mask(const ParameterStore& store, std::uint64_t k, MaskSelector selector,
                         std::uint64_t seed) {
  if (selector == MaskSelector::diff || selector == MaskSelector::fisher) {
    throw ConfigError("ablation_mask: selector needs diff_mask/fisher_mask");
  }
  MaskPolicy policy;  // defaults: tune_norm on, tune_embed off
  return build_mask(store, store, 0.0, k, true, MaskScope::global, policy, selector, seed,
                    store_content_hash(store));
}

SparseMask diff_mask(const ParameterStore& theta0, const ParameterStore& theta1, std::uint64_t k) {
  const ParameterStore diffs = abs_diff(theta0, theta1);
  // Diff-Pruning/LT-SFT selection is global over all (non-classifier) params.
  MaskPolicy policy{/*tune_norm=*/false, /*tune_embed=*/true};
  return build_mask(theta0, diffs, 0.0, k, true, MaskScope::global, policy, MaskSelector::diff, 0,
                    store_content_hash(theta0));
}

ParameterStore fisher_scores(const std::function<ParameterStore(std::size_t)>& per_sample_grads,
                             std::size_t n) {
  if (n == 0) throw ConfigError("fisher_scores needs at least one sample");
  ParameterStore acc;
  for (std::size_t s = 0; s < n; ++s) {
    ParameterStore g;
    try {
      g = per_sample_grads(s);
    } catch (const NumericError& e) {
      throw NumericError("non-finite gradient on sample " + std::to_string(s) + ": " + e.what());
    }
    for (const auto& grp : g.groups()) {
      for (double v : grp.tensor.data()) {
        if (!std::isfinite(v)) {
          throw NumericError("non-finite gradient on sample " + std::to_string(s) + " in group " +
                             grp.name);
        }
      }
    }
    if (s == 0) {
      acc.set_meta(g.meta());
      for (const auto& grp : g.groups()) {
        std::vector<double> sq(grp.tensor.numel());
        for (std::size_t i = 0; i < sq.size(); ++i) sq[i] = grp.tensor.at(i) * grp.tensor.at(i);
        acc.add({grp.name, grp.role, Tensor(grp.tensor.shape(), std::move(sq))});
      }
    } else {
      require_alignment(acc, g, "fisher_scores");
      for (auto& agrp : acc.groups()) {
        const ParamGroup* grp = g.find(agrp.name);
        for (std::size_t i = 0; i < agrp.tensor.numel(); ++i) {
          agrp.tensor.at(i) += grp->tensor.at(i) * grp->tensor.at(i);
        }
      }
    }
  }
  for (auto& agrp : acc.groups()) {
    for (std::size_t i = 0; i < agrp.tensor.numel(); ++i) agrp.tensor.at(i) /= double(n);
  }
  return acc;
}

SparseMask fisher_mask(const ParameterStore& scores, std::uint64_t k, const MaskPolicy& policy) {
  // Provenance stays zeroed: scores are a derived store, the caller binds the
  // mask to its checkpoint (the trainer skips the provenance gate for zeros).
  return build_mask(scores, scores, 0.0, k, true, MaskScope::global, policy, MaskSelector::fisher,
                    0, Sha256Digest{});
}

void check_mask_alignment(const SparseMask& mask, const ParameterStore& store) {
  std::ostringstream bad;
  for (const auto& mg : mask.groups) {
    const ParamGroup* g = store.find(mg.name);
    if (g == nullptr) {
      bad << " " << mg.name << " (not in store);";
      continue;
    }
    if (!mg.indices.empty() && mg.indices.back() >= g->tensor.numel()) {
      bad << " " << mg.name << " (index out of range);";
    }
  }
  for (const auto& g : store.groups()) {
    if (g.role == Role::classifier) continue;
    if (mask.find(g.name) == nullptr) bad << " " << g.name << " (not in mask);";
  }
  const std::string s = bad.str();
  if (!s.empty()) throw AlignmentError("mask/store mismatch:" + s);
}

namespace {

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(std::uint8_t(v));
  out.push_back(std::uint8_t(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(std::uint8_t(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(std::uint8_t(v >> (8 * i)));
}

void put_varint(std::vector<std::uint8_t>& out, std::uint64_t v) {
  while (v >= 0x80) {
    out.push_back(std::uint8_t(v) | 0x80);
    v >>= 7;
  }
  out.push_back(std::uint8_t(v));
}

}  // namespace

std::vector<std::uint8_t> serialize_mask(const SparseMask& mask) {
  std::vector<std::uint8_t> out;
  out.push_back('P');
  out.push_back('F');
  out.push_back('M');
  out.push_back('K');
  put_u16(out, kMaskVersion);
  out.insert(out.end(), mask.provenance.begin(), mask.provenance.end());
  out.push_back(std::uint8_t(mask.scope));
  out.push_back(std::uint8_t(mask.selector));
  out.push_back(std::uint8_t(mask.policy.tune_norm ? 1 : 0) |
                std::uint8_t(mask.policy.tune_embed ? 2 : 0));
  std::uint64_t sparsity_bits;
  std::memcpy(&sparsity_bits, &mask.sparsity, 8);
  put_u64(out, sparsity_bits);
  put_u32(out, std::uint32_t(mask.groups.size()));
  for (const auto& g : mask.groups) {
    put_u32(out, std::uint32_t(g.name.size()));
    out.insert(out.end(), g.name.begin(), g.name.end());
    put_u64(out, g.indices.size());
    std::uint64_t prev = 0;
    for (std::size_t i = 0; i < g.indices.size(); ++i) {
      put_varint(out, i == 0 ? g.indices[0] : g.indices[i] - prev);
      prev = g.indices[i];
    }
  }
  put_u32(out, crc32(out));
  return out;
}

SparseMask parse_mask(const std::vector<std::uint8_t>& bytes) {
  struct Reader {
    const std::vector<std::uint8_t>& b;
    std::size_t pos = 0;
    void need(std::size_t n) const {
      if (pos + n > b.size()) throw CorruptFileError("truncated mask payload");
    }
    std::uint8_t u8() {
      need(1);
      return b[pos++];
    }
    std::uint16_t u16() {
      need(2);
      std::uint16_t v = std::uint16_t(b[pos]) | (std::uint16_t(b[pos + 1]) << 8);
      pos += 2;
      return v;
    }
    std::uint32_t u32() {
      need(4);
      std::uint32_t v = 0;
      for (int i = 0; i < 4; ++i) v |= std::uint32_t(b[pos + i]) << (8 * i);
      pos += 4;
      return v;
    }
    std::uint64_t u64() {
      need(8);
      std::uint64_t v = 0;
      for (int i = 0; i < 8; ++i) v |= std::uint64_t(b[pos + i]) << (8 * i);
      pos += 8;
      return v;
    }
    std::uint64_t varint() {
      std::uint64_t v = 0;
      int shift = 0;
      while (true) {
        const std::uint8_t byte = u8();
        v |= std::uint64_t(byte & 0x7F) << shift;
        if ((byte & 0x80) == 0) break;
        shift += 7;
        if (shift > 63) throw CorruptFileError("varint overflow");
      }
      return v;
    }
    std::string str(std::size_t n) {
      need(n);
      std::string s(reinterpret_cast<const char*>(b.data() + pos), n);
      pos += n;
      return s;
    }
  } r{bytes};

  if (r.str(4) != "PFMK") throw CorruptFileError("bad magic: not a PFMK mask");
  const std::uint16_t version = r.u16();
  if (version != kMaskVersion) {
    throw VersionError("unsupported PFMK version " + std::to_string(version));
  }
  // integrity first: decode only CRC-clean bytes
  if (bytes.size() < 57) throw CorruptFileError("truncated mask payload");
  {
    std::uint32_t stored = 0;
    for (int i = 0; i < 4; ++i) stored |= std::uint32_t(bytes[bytes.size() - 4 + i]) << (8 * i);
    if (stored != crc32(bytes.data(), bytes.size() - 4)) throw CorruptFileError("mask CRC mismatch");
  }
  SparseMask mask;
  r.need(32);
  std::memcpy(mask.provenance.data(), bytes.data() + r.pos, 32);
  r.pos += 32;
  const std::uint8_t scope = r.u8();
  if (scope > 1) throw CorruptFileError("invalid scope byte");
  mask.scope = MaskScope(scope);
  const std::uint8_t selector = r.u8();
  if (selector > std::uint8_t(MaskSelector::fisher)) throw CorruptFileError("invalid selector byte");
  mask.selector = MaskSelector(selector);
  const std::uint8_t policy = r.u8();
  mask.policy.tune_norm = (policy & 1) != 0;
  mask.policy.tune_embed = (policy & 2) != 0;
  const std::uint64_t sparsity_bits = r.u64();
  std::memcpy(&mask.sparsity, &sparsity_bits, 8);
  const std::uint32_t count = r.u32();
  for (std::uint32_t gi = 0; gi < count; ++gi) {
    GroupIndices g;
    g.name = r.str(r.u32());
    const std::uint64_t n = r.u64();
    g.indices.reserve(n);
    std::uint64_t prev = 0;
    for (std::uint64_t i = 0; i < n; ++i) {
      const std::uint64_t delta = r.varint();
      const std::uint64_t idx = i == 0 ? delta : prev + delta;
      if (i > 0 && delta == 0) throw CorruptFileError("mask indices not strictly increasing");
      g.indices.push_back(idx);
      prev = idx;
    }
    mask.groups.push_back(std::move(g));
  }
  if (r.pos != bytes.size() - 4) throw CorruptFileError("trailing bytes after the group records");
  return mask;
}

void save_mask(const SparseMask& mask, const std::filesystem::path& path) {
  write_file_bytes(path, serialize_mask(mask));
}

SparseMask load_mask(const std::filesystem::path& path) {
  return parse_mask(read_file_bytes(path));
}

}  // namespace peftkit
