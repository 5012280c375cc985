#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "peftkit/tensor.hpp"

namespace peftkit {

// Semantic role of a parameter group. The byte values are part of the PFRG
// wire format; do not reorder.
enum class Role : std::uint8_t {
  embedding = 0,
  position_embedding = 1,
  norm_weight = 2,
  norm_bias = 3,
  attn_weight = 4,
  attn_bias = 5,
  ffn_weight = 6,
  ffn_bias = 7,
  classifier = 8,
};

const char* role_name(Role r);
Role role_from_byte(std::uint8_t b);
Role role_from_name(std::string_view name);

bool role_is_norm(Role r);
bool role_is_bias(Role r);       // norm_bias, attn_bias, ffn_bias
bool role_is_embedding(Role r);  // embedding, position_embedding

struct ParamGroup {
  std::string name;
  Role role = Role::ffn_weight;
  Tensor tensor;
};

// Model dimensions carried in the checkpoint manifest. V/n/d/L are derivable
// from group shapes; heads/classes are only known through the manifest.
struct ModelMeta {
  std::size_t d = 0;
  std::size_t layers = 0;
  std::size_t vocab = 0;
  std::size_t max_seq = 0;
  std::size_t heads = 0;
  std::size_t classes = 0;
  bool known() const { return d > 0; }
};

// Named, role-tagged flat tensors: one checkpoint. Groups keep insertion
// order; names are unique; weight roles are rank-2 and bias/norm roles
// rank-1 (classifier groups may be either).
class ParameterStore {
public:
  ParameterStore() = default;

  void add(ParamGroup group);

  const std::vector<ParamGroup>& groups() const { return groups_; }
  std::vector<ParamGroup>& groups() { return groups_; }
  std::size_t size() const { return groups_.size(); }

  const ParamGroup* find(std::string_view name) const;
  ParamGroup* find(std::string_view name);
  std::size_t index_of(std::string_view name) const;  // npos when absent
  static constexpr std::size_t npos = static_cast<std::size_t>(-1);

  std::size_t total_params() const;

  const ModelMeta& meta() const { return meta_; }
  void set_meta(const ModelMeta& m) { meta_ = m; }

  bool same_structure(const ParameterStore& other) const;
  // group names present in only one store, or name-matched with different shapes
  std::vector<std::string> structure_mismatches(const ParameterStore& other) const;

private:
  std::vector<ParamGroup> groups_;
  ModelMeta meta_;
};

// Elementwise |a - b| over aligned stores.
ParameterStore abs_diff(const ParameterStore& a, const ParameterStore& b);

void require_alignment(const ParameterStore& a, const ParameterStore& b, const char* what);

}  // namespace peftkit
