#include "peftkit/param_store.hpp"

#include <cmath>
#include <sstream>

namespace peftkit {

namespace {

const char* kRoleNames[] = {"embedding", "position_embedding", "norm_weight",
                            "norm_bias", "attn_weight",        "attn_bias",
                            "ffn_weight", "ffn_bias",          "classifier"};

}  // namespace

const char* role_name(Role r) { return kRoleNames[static_cast<std::uint8_t>(r)]; }

Role role_from_byte(std::uint8_t b) {
  if (b > static_cast<std::uint8_t>(Role::classifier)) {
    throw CorruptFileError("invalid role byte " + std::to_string(int(b)));
  }
  return static_cast<Role>(b);
}

Role role_from_name(std::string_view name) {
  for (std::uint8_t b = 0; b <= static_cast<std::uint8_t>(Role::classifier); ++b) {
    if (name == kRoleNames[b]) return static_cast<Role>(b);
  }
  throw ConfigError("unknown role name: " + std::string(name));
}

bool role_is_norm(Role r) { return r == Role::norm_weight || r == Role::norm_bias; }

bool role_is_bias(Role r) {
  return r == Role::norm_bias || r == Role::attn_bias || r == Role::ffn_bias;
}

bool role_is_embedding(Role r) {
  return r == Role::embedding || r == Role::position_embedding;
}

void ParameterStore::add(ParamGroup group) {
  if (find(group.name) != nullptr) {
    throw DuplicateNameError("duplicate group name: " + group.name);
  }
  const std::size_t rank = group.tensor.rank();
  const bool rank2_role = group.role == Role::embedding || group.role == Role::position_embedding ||
                          group.role == Role::attn_weight || group.role == Role::ffn_weight;
  const bool rank1_role = role_is_norm(group.role) || group.role == Role::attn_bias ||
                          group.role == Role::ffn_bias;
  if ((rank2_role && rank != 2) || (rank1_role && rank != 1) ||
      (group.role == Role::classifier && rank != 1 && rank != 2)) {
    throw DimensionError("group " + group.name + " (" + role_name(group.role) +
                         ") has inconsistent rank " + std::to_string(rank));
  }
  groups_.push_back(std::move(group));
}

const ParamGroup* ParameterStore::find(std::string_view name) const {
  for (const auto& g : groups_) {
    if (g.name == name) return &g;
  }
  return nullptr;
}

ParamGroup* ParameterStore::find(std::string_view name) {
  for (auto& g : groups_) {
    if (g.name == name) return &g;
  }
  return nullptr;
}

std::size_t ParameterStore::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < groups_.size(); ++i) {
    if (groups_[i].name == name) return i;
  }
  return npos;
}

std::size_t ParameterStore::total_params() const {
  std::size_t n = 0;
  for (const auto& g : groups_) n += g.tensor.numel();
  return n;
}

bool ParameterStore::same_structure(const ParameterStore& other) const {
  return structure_mismatches(other).empty();
}

std::vector<std::string> ParameterStore::structure_mismatches(const ParameterStore& other) const {
  std::vector<std::string> bad;
  for (const auto& g : groups_) {
    const ParamGroup* o = other.find(g.name);
    if (o == nullptr) {
      bad.push_back(g.name + " (only in first)");
    } else if (!g.tensor.same_shape(o->tensor)) {
      bad.push_back(g.name + " (shape " + g.tensor.shape_str() + " vs " + o->tensor.shape_str() + ")");
    }
  }
  for (const auto& g : other.groups_) {
    if (find(g.name) == nullptr) bad.push_back(g.name + " (only in second)");
  }
  return bad;
}

void require_alignment(const ParameterStore& a, const ParameterStore& b, const char* what) {
  auto bad = a.structure_mismatches(b);
  if (bad.empty()) return;
  std::ostringstream os;
  os << what << ": store structures differ:";
  for (const auto& s : bad) os << " " << s << ";";
  throw AlignmentError(os.str());
}

ParameterStore abs_diff(const ParameterStore& a, const ParameterStore& b) {
  require_alignment(a, b, "abs_diff");
  ParameterStore out;
  out.set_meta(a.meta());
  for (const auto& g : a.groups()) {
    const ParamGroup* o = b.find(g.name);
    std::vector<double> d(g.tensor.numel());
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = std::fabs(g.tensor.at(i) - o->tensor.at(i));
    out.add({g.name, g.role, Tensor(g.tensor.shape(), std::move(d))});
  }
  return out;
}

}  // namespace peftkit
