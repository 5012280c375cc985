#include "peftkit/adapters.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "peftkit/rng.hpp"

namespace peftkit {

const char* adapter_kind_name(AdapterKind k) {
  switch (k) {
    case AdapterKind::adapter: return "adapter";
    case AdapterKind::pfeiffer_adapter: return "pfeiffer_adapter";
    case AdapterKind::lora: return "lora";
    case AdapterKind::hiwi_bias: return "hiwi_bias";
    case AdapterKind::hiwi_weight: return "hiwi_weight";
  }
  return "?";
}

AdapterKind adapter_kind_from_name(std::string_view name) {
  for (std::uint8_t b = 0; b <= std::uint8_t(AdapterKind::hiwi_weight); ++b) {
    if (name == adapter_kind_name(AdapterKind(b))) return AdapterKind(b);
  }
  throw ConfigError("unknown adapter kind: " + std::string(name));
}

std::size_t AdapterPair::param_count() const {
  return w_down.numel() + b_down.numel() + w_up.numel() + b_up.numel();
}

std::size_t AdapterWeights::param_count() const {
  std::size_t n = 0;
  for (const auto& p : pairs) n += p.param_count();
  return n;
}

const AdapterPair* AdapterWeights::find(std::string_view target) const {
  for (const auto& p : pairs) {
    if (p.target == target) return &p;
  }
  return nullptr;
}

namespace {

bool contains(std::string_view s, std::string_view sub) {
  return s.find(sub) != std::string_view::npos;
}

bool ends_with(std::string_view s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.substr(s.size() - suffix.size()) == suffix;
}

// f32-quantized uniform init so persisted adapters round-trip bit-exactly.
Tensor uniform_init(Rng& rng, std::size_t rows, std::size_t cols, double limit) {
  std::vector<double> data(rows * cols);
  for (auto& v : data) v = double(float(rng.uniform(-limit, limit)));
  return Tensor({rows, cols}, std::move(data));
}

AdapterPair make_pair(Rng& rng, const std::string& target, std::size_t io, std::size_t bottleneck,
                      bool with_bias) {
  AdapterPair p;
  p.target = target;
  const double limit = 1.0 / std::sqrt(double(io));
  p.w_down = uniform_init(rng, io, bottleneck, limit);
  p.w_up = Tensor::zeros({bottleneck, io});  // exact zero: fresh adapter == identity
  if (with_bias) {
    p.b_down = Tensor::zeros({bottleneck});
    p.b_up = Tensor::zeros({io});
  }
  return p;
}

std::vector<std::size_t> layer_ordinals(const ParameterStore& base) {
  std::set<std::size_t> found;
  for (const auto& g : base.groups()) {
    constexpr std::string_view prefix = "encoder.layer.";
    if (g.name.rfind(prefix, 0) == 0) {
      const std::size_t end = g.name.find('.', prefix.size());
      if (end != std::string::npos) {
        found.insert(std::size_t(std::stoul(g.name.substr(prefix.size(), end - prefix.size()))));
      }
    }
  }
  return {found.begin(), found.end()};
}

std::size_t hidden_dim(const ParameterStore& base) {
  if (base.meta().known()) return base.meta().d;
  for (const auto& g : base.groups()) {
    if (g.role == Role::norm_weight) return g.tensor.numel();
  }
  throw ConfigError("cannot infer hidden dimension from store (no meta, no norm groups)");
}

}  // namespace

AdapterWeights init_adapter_weights(const AdapterSpec& spec, const ParameterStore& base,
                                    std::uint64_t seed) {
  if (spec.r < 1) throw ConfigError("adapter bottleneck r must be >= 1");
  AdapterWeights out;
  out.kind = spec.kind;
  out.f = spec.f;
  out.lora_scale = spec.lora_scale;
  Rng rng(seed);

  auto default_group_targets = [&](Role role, auto name_filter) {
    std::vector<std::string> targets;
    for (const auto& g : base.groups()) {
      if (g.role == role && name_filter(g.name)) targets.push_back(g.name);
    }
    return targets;
  };

  switch (spec.kind) {
    case AdapterKind::hiwi_bias: {
      std::vector<std::string> targets =
          spec.targets.empty()
              ? default_group_targets(Role::ffn_bias, [](const std::string&) { return true; })
              : spec.targets;
      if (targets.empty()) throw ConfigError("hiwi_bias: no FFN bias targets in store");
      for (const auto& t : targets) {
        const ParamGroup* g = base.find(t);
        if (g == nullptr) throw ConfigError("hiwi_bias target not in store: " + t);
        if (g->tensor.rank() != 1) throw ConfigError("hiwi_bias target is not a bias: " + t);
        // first-FFN bias (4d) gets bottleneck 2r, second-FFN bias (d) gets r
        const std::size_t bottleneck = contains(t, ".ffn1.") ? 2 * spec.r : spec.r;
        out.pairs.push_back(make_pair(rng, t, g->tensor.numel(), bottleneck, true));
      }
      break;
    }
    case AdapterKind::hiwi_weight: {
      std::vector<std::string> targets =
          spec.targets.empty()
              ? default_group_targets(Role::ffn_weight, [](const std::string&) { return true; })
              : spec.targets;
      if (targets.empty()) throw ConfigError("hiwi_weight: no FFN weight targets in store");
      for (const auto& t : targets) {
        const ParamGroup* g = base.find(t);
        if (g == nullptr) throw ConfigError("hiwi_weight target not in store: " + t);
        if (g->tensor.rank() != 2) throw ConfigError("hiwi_weight target is not a matrix: " + t);
        // adapter runs over the input-dimension vectors: io = rows in the
        // row-vector convention; the 4d-wide io gets the 2r bottleneck
        const std::size_t bottleneck = contains(t, ".ffn2.") ? 2 * spec.r : spec.r;
        out.pairs.push_back(make_pair(rng, t, g->tensor.rows(), bottleneck, true));
      }
      break;
    }
    case AdapterKind::lora: {
      std::vector<std::string> targets =
          spec.targets.empty() ? default_group_targets(Role::attn_weight,
                                                       [](const std::string& n) {
                                                         return ends_with(n, ".q.weight") ||
                                                                ends_with(n, ".v.weight");
                                                       })
                               : spec.targets;
      if (targets.empty()) throw ConfigError("lora: no q/v projection targets in store");
      for (const auto& t : targets) {
        const ParamGroup* g = base.find(t);
        if (g == nullptr) throw ConfigError("lora target not in store: " + t);
        if (g->tensor.rank() != 2) throw ConfigError("lora target is not a matrix: " + t);
        AdapterPair p;
        p.target = t;
        const double limit = 1.0 / std::sqrt(double(g->tensor.rows()));
        p.w_down = uniform_init(rng, g->tensor.rows(), spec.r, limit);
        p.w_up = Tensor::zeros({spec.r, g->tensor.cols()});
        out.pairs.push_back(std::move(p));
      }
      break;
    }
    case AdapterKind::adapter:
    case AdapterKind::pfeiffer_adapter: {
      const std::size_t d = hidden_dim(base);
      std::vector<std::string> targets = spec.targets;
      if (targets.empty()) {
        for (std::size_t layer : layer_ordinals(base)) {
          const std::string stem = "encoder.layer." + std::to_string(layer);
          if (spec.kind == AdapterKind::adapter) {
            targets.push_back(stem + ".attn.adapter");
            targets.push_back(stem + ".ffn.adapter");
          } else {
            targets.push_back(stem + ".adapter");
          }
        }
      }
      if (targets.empty()) throw ConfigError("adapter: no encoder layers found in store");
      for (const auto& t : targets) out.pairs.push_back(make_pair(rng, t, d, spec.r, true));
      break;
    }
  }
  return out;
}

Tensor adapter_mlp_rows(const Tensor& x, const AdapterPair& pair, Nonlinearity f) {
  Tensor t = matmul(x, pair.w_down);
  if (pair.b_down.numel() > 0) t = add_row_bias(t, pair.b_down);
  t = nonlinearity(t, f);
  t = matmul(t, pair.w_up);
  if (pair.b_up.numel() > 0) t = add_row_bias(t, pair.b_up);
  return t;
}

namespace {

Tensor as_row_matrix(const Tensor& v) { return Tensor({1, v.numel()}, v.data()); }

Tensor as_flat_vector(const Tensor& m) { return Tensor({m.numel()}, m.data()); }

}  // namespace

Tensor adapter_forward(const Tensor& h, const AdapterPair& pair, Nonlinearity f) {
  if (h.rank() == 1) {
    const Tensor row = as_row_matrix(h);
    return as_flat_vector(add(row, adapter_mlp_rows(row, pair, f)));
  }
  return add(h, adapter_mlp_rows(h, pair, f));
}

Tensor lora_forward(const Tensor& h, const Tensor& w, const AdapterPair& pair, double scale) {
  if (h.rank() == 1) {
    const Tensor row = as_row_matrix(h);
    return as_flat_vector(lora_forward(row, w, pair, scale));
  }
  const Tensor base = matmul(h, w);
  const Tensor branch = matmul(matmul(h, pair.w_down), pair.w_up);
  return add(base, peftkit::scale(branch, scale));
}

Tensor lora_merge(const Tensor& w, const AdapterPair& pair, double scale) {
  return add(w, peftkit::scale(matmul(pair.w_down, pair.w_up), scale));
}

Tensor hiwi_weight_merge(const Tensor& w, const AdapterPair& pair, Nonlinearity f) {
  return add(w, transpose(adapter_mlp_rows(transpose(w), pair, f)));
}

Tensor hiwi_bias_merge(const Tensor& b, const AdapterPair& pair, Nonlinearity f) {
  if (b.rank() != 1) throw DimensionError("hiwi_bias_merge expects a bias vector");
  return as_flat_vector(add(as_row_matrix(b), adapter_mlp_rows(as_row_matrix(b), pair, f)));
}

ParameterStore merge_adapters(const ParameterStore& base, const AdapterWeights& weights) {
  if (weights.kind == AdapterKind::adapter || weights.kind == AdapterKind::pfeiffer_adapter) {
    throw ConfigError(std::string(adapter_kind_name(weights.kind)) +
                      " operates on hidden states and cannot be merged into base weights");
  }
  ParameterStore out = base;
  for (const auto& pair : weights.pairs) {
    ParamGroup* g = out.find(pair.target);
    if (g == nullptr) throw ConfigError("merge target not in checkpoint: " + pair.target);
    switch (weights.kind) {
      case AdapterKind::lora:
        g->tensor = lora_merge(g->tensor, pair, weights.lora_scale);
        break;
      case AdapterKind::hiwi_weight:
        g->tensor = hiwi_weight_merge(g->tensor, pair, weights.f);
        break;
      case AdapterKind::hiwi_bias:
        g->tensor = hiwi_bias_merge(g->tensor, pair, weights.f);
        break;
      default:
        break;
    }
  }
  return out;
}

int rank_of(const Tensor& m, double tol) {
  if (m.rank() != 2) throw DimensionError("rank_of expects rank 2, got " + m.shape_str());
  const std::size_t rows = m.rows(), cols = m.cols();
  // one-sided Jacobi: orthogonalize columns, singular values = column norms
  std::vector<double> a(m.data());
  auto col_dot = [&](std::size_t i, std::size_t j) {
    double s = 0.0;
    for (std::size_t r = 0; r < rows; ++r) s += a[r * cols + i] * a[r * cols + j];
    return s;
  };
  const int max_sweeps = 60;
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    bool rotated = false;
    for (std::size_t i = 0; i + 1 < cols; ++i) {
      for (std::size_t j = i + 1; j < cols; ++j) {
        const double aii = col_dot(i, i);
        const double ajj = col_dot(j, j);
        const double aij = col_dot(i, j);
        if (std::fabs(aij) <= 1e-30 || std::fabs(aij) <= 1e-15 * std::sqrt(aii * ajj)) continue;
        rotated = true;
        const double zeta = (ajj - aii) / (2.0 * aij);
        const double t = (zeta >= 0 ? 1.0 : -1.0) / (std::fabs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double cs = 1.0 / std::sqrt(1.0 + t * t);
        const double sn = cs * t;
        for (std::size_t r = 0; r < rows; ++r) {
          const double vi = a[r * cols + i];
          const double vj = a[r * cols + j];
          a[r * cols + i] = cs * vi - sn * vj;
          a[r * cols + j] = sn * vi + cs * vj;
        }
      }
    }
    if (!rotated) break;
  }
  std::vector<double> sigma(cols);
  double sigma_max = 0.0;
  for (std::size_t j = 0; j < cols; ++j) {
    sigma[j] = std::sqrt(col_dot(j, j));
    sigma_max = std::max(sigma_max, sigma[j]);
  }
  if (sigma_max == 0.0) return 0;
  int rank = 0;
  for (double s : sigma) {
    if (s > tol * sigma_max) ++rank;
  }
  return rank;
}

LoraInequalityResult demonstrate_lora_inequality(const Tensor& w, const AdapterPair& pair,
                                                 const Tensor& h, Nonlinearity f) {
  const Tensor hrow = h.rank() == 1 ? as_row_matrix(h) : h;
  // lhs: adapter applied to the hidden representation
  const Tensor lhs = add(matmul(hrow, w), matmul(nonlinearity(matmul(hrow, pair.w_down), f), pair.w_up));
  // rhs: adapter folded into the weight first
  const Tensor rhs = matmul(hrow, add(w, matmul(nonlinearity(pair.w_down, f), pair.w_up)));
  double gap = 0.0;
  for (std::size_t i = 0; i < lhs.numel(); ++i) {
    gap = std::max(gap, std::fabs(lhs.at(i) - rhs.at(i)));
  }
  return {lhs, rhs, gap};
}

ParameterStore adapters_to_store(const AdapterWeights& weights) {
  ParameterStore out;
  for (const auto& p : weights.pairs) {
    const bool attn_family = contains(p.target, "attn");
    const Role weight_role = attn_family ? Role::attn_weight : Role::ffn_weight;
    const Role bias_role = attn_family ? Role::attn_bias : Role::ffn_bias;
    out.add({p.target + ".down.weight", weight_role, p.w_down});
    if (p.b_down.numel() > 0) out.add({p.target + ".down.bias", bias_role, p.b_down});
    out.add({p.target + ".up.weight", weight_role, p.w_up});
    if (p.b_up.numel() > 0) out.add({p.target + ".up.bias", bias_role, p.b_up});
  }
  return out;
}

AdapterWeights adapters_from_store(const ParameterStore& store, AdapterKind kind, Nonlinearity f,
                                   double lora_scale) {
  AdapterWeights out;
  out.kind = kind;
  out.f = f;
  out.lora_scale = lora_scale;
  std::vector<std::string> order;
  auto stem_of = [](const std::string& name) -> std::string {
    for (std::string_view suffix :
         {".down.weight", ".down.bias", ".up.weight", ".up.bias"}) {
      if (ends_with(name, suffix)) return name.substr(0, name.size() - suffix.size());
    }
    throw ConfigError("not an adapter store: group has no down/up suffix: " + name);
  };
  for (const auto& g : store.groups()) {
    const std::string stem = stem_of(g.name);
    if (std::find(order.begin(), order.end(), stem) == order.end()) order.push_back(stem);
  }
  for (const auto& stem : order) {
    AdapterPair p;
    p.target = stem;
    const ParamGroup* dw = store.find(stem + ".down.weight");
    const ParamGroup* uw = store.find(stem + ".up.weight");
    if (dw == nullptr || uw == nullptr) {
      throw ConfigError("adapter store misses projections for " + stem);
    }
    p.w_down = dw->tensor;
    p.w_up = uw->tensor;
    if (const ParamGroup* db = store.find(stem + ".down.bias")) p.b_down = db->tensor;
    if (const ParamGroup* ub = store.find(stem + ".up.bias")) p.b_up = ub->tensor;
    out.pairs.push_back(std::move(p));
  }
  return out;
}

}  // namespace peftkit
