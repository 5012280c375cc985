#include "peftkit/toy_model.hpp"

#include <cmath>

#include "peftkit/rng.hpp"

namespace peftkit {

namespace {

constexpr NodeId kNoNode = static_cast<NodeId>(-1);

std::string layer_name(std::size_t layer, const char* suffix) {
  return "encoder.layer." + std::to_string(layer) + "." + suffix;
}

void validate_config(const ToyModelConfig& c) {
  if (c.vocab < 2 || c.max_seq < 1 || c.d < 1 || c.layers < 1 || c.classes < 1 || c.heads < 1) {
    throw ConfigError("toy model dimensions must be positive (vocab >= 2)");
  }
  if (c.d % c.heads != 0) {
    throw ConfigError("hidden dim " + std::to_string(c.d) + " not divisible by heads " +
                      std::to_string(c.heads));
  }
  if (c.ffn_mult != 4) {
    throw ConfigError("ffn_mult is fixed to 4 by the layer anatomy");
  }
}

double quantize_f32(double v) { return double(float(v)); }

Tensor init_matrix(Rng& rng, std::size_t rows, std::size_t cols, double stddev) {
  std::vector<double> data(rows * cols);
  for (auto& v : data) v = quantize_f32(rng.normal() * stddev);
  return Tensor({rows, cols}, std::move(data));
}

Tensor init_vector(Rng& rng, std::size_t n, double stddev) {
  std::vector<double> data(n);
  for (auto& v : data) v = quantize_f32(rng.normal() * stddev);
  return Tensor({n}, std::move(data));
}

double xavier(std::size_t fan_in, std::size_t fan_out) {
  return std::sqrt(2.0 / double(fan_in + fan_out));
}

}  // namespace

ToyModel build_model(const ToyModelConfig& config, std::uint64_t seed) {
  validate_config(config);
  const std::size_t d = config.d;
  const std::size_t ffn = config.ffn_mult * d;
  Rng rng(seed);
  ParameterStore store;

  store.add({"embed.token", Role::embedding, init_matrix(rng, config.vocab, d, 0.1)});
  store.add({"embed.position", Role::position_embedding, init_matrix(rng, config.max_seq, d, 0.1)});
  store.add({"embed.norm.weight", Role::norm_weight, Tensor::full({d}, 1.0)});
  store.add({"embed.norm.bias", Role::norm_bias, Tensor::zeros({d})});

  for (std::size_t l = 0; l < config.layers; ++l) {
    for (const char* proj : {"attn.q", "attn.k", "attn.v", "attn.out"}) {
      store.add({layer_name(l, proj) + ".weight", Role::attn_weight,
                 init_matrix(rng, d, d, xavier(d, d))});
      store.add({layer_name(l, proj) + ".bias", Role::attn_bias, init_vector(rng, d, 0.02)});
    }
    store.add({layer_name(l, "norm1.weight"), Role::norm_weight, Tensor::full({d}, 1.0)});
    store.add({layer_name(l, "norm1.bias"), Role::norm_bias, Tensor::zeros({d})});
    store.add({layer_name(l, "ffn1.weight"), Role::ffn_weight,
               init_matrix(rng, d, ffn, xavier(d, ffn))});
    store.add({layer_name(l, "ffn1.bias"), Role::ffn_bias, init_vector(rng, ffn, 0.02)});
    store.add({layer_name(l, "ffn2.weight"), Role::ffn_weight,
               init_matrix(rng, ffn, d, xavier(ffn, d))});
    store.add({layer_name(l, "ffn2.bias"), Role::ffn_bias, init_vector(rng, d, 0.02)});
    store.add({layer_name(l, "norm2.weight"), Role::norm_weight, Tensor::full({d}, 1.0)});
    store.add({layer_name(l, "norm2.bias"), Role::norm_bias, Tensor::zeros({d})});
  }

  store.add({"classifier.weight", Role::classifier,
             init_matrix(rng, d, config.classes, xavier(d, config.classes))});
  store.add({"classifier.bias", Role::classifier, Tensor::zeros({config.classes})});

  ModelMeta meta;
  meta.d = d;
  meta.layers = config.layers;
  meta.vocab = config.vocab;
  meta.max_seq = config.max_seq;
  meta.heads = config.heads;
  meta.classes = config.classes;
  store.set_meta(meta);

  return {config, std::move(store)};
}

ToyModel model_from_store(ParameterStore store) {
  const ModelMeta& m = store.meta();
  if (!m.known() || m.heads == 0) {
    throw ConfigError("store carries no model meta (heads unknown); load the checkpoint with its "
                      "sibling .json manifest");
  }
  ToyModelConfig config;
  config.vocab = m.vocab;
  config.max_seq = m.max_seq;
  config.d = m.d;
  config.layers = m.layers;
  config.heads = m.heads;
  config.classes = m.classes;
  validate_config(config);
  return {config, std::move(store)};
}

namespace {

// f(x Wd [+ bd]) Wu [+ bu] on the graph
NodeId graph_mlp_rows(Graph& g, NodeId x, NodeId wd, NodeId bd, NodeId wu, NodeId bu,
                      Nonlinearity f) {
  NodeId t = g.matmul(x, wd);
  if (bd != kNoNode) t = g.add_bias(t, bd);
  t = g.nonlinearity(t, f);
  t = g.matmul(t, wu);
  if (bu != kNoNode) t = g.add_bias(t, bu);
  return t;
}

struct PairNodes {
  NodeId w_down = kNoNode, b_down = kNoNode, w_up = kNoNode, b_up = kNoNode;
};

PairNodes pair_nodes(const ModelGraph& wiring, const std::string& target) {
  PairNodes out;
  auto get = [&](const std::string& name) {
    auto it = wiring.adapter_leaves.find(name);
    return it == wiring.adapter_leaves.end() ? kNoNode : it->second;
  };
  out.w_down = get(target + ".down.weight");
  out.b_down = get(target + ".down.bias");
  out.w_up = get(target + ".up.weight");
  out.b_up = get(target + ".up.bias");
  return out;
}

NodeId graph_mlp_rows(Graph& g, NodeId x, const PairNodes& p, Nonlinearity f) {
  return graph_mlp_rows(g, x, p.w_down, p.b_down, p.w_up, p.b_up, f);
}

}  // namespace

ModelGraph wire_model(Graph& g, const ToyModel& model, const AdapterWeights* adapters,
                      bool base_trainable, bool adapters_trainable) {
  ModelGraph wiring;
  wiring.config = model.config;
  wiring.adapters = adapters;
  for (const auto& grp : model.params.groups()) {
    wiring.base_leaves[grp.name] = g.leaf(grp.tensor, base_trainable);
  }
  if (adapters == nullptr) return wiring;

  for (const auto& pair : adapters->pairs) {
    wiring.adapter_leaves[pair.target + ".down.weight"] =
        g.leaf(pair.w_down, adapters_trainable);
    if (pair.b_down.numel() > 0) {
      wiring.adapter_leaves[pair.target + ".down.bias"] = g.leaf(pair.b_down, adapters_trainable);
    }
    wiring.adapter_leaves[pair.target + ".up.weight"] = g.leaf(pair.w_up, adapters_trainable);
    if (pair.b_up.numel() > 0) {
      wiring.adapter_leaves[pair.target + ".up.bias"] = g.leaf(pair.b_up, adapters_trainable);
    }
  }

  // hiwi kinds rewrite their target tensors once per graph; every sample
  // forward shares the effective nodes
  if (adapters->kind == AdapterKind::hiwi_bias) {
    for (const auto& pair : adapters->pairs) {
      const NodeId base = wiring.base_leaves.at(pair.target);
      const PairNodes p = pair_nodes(wiring, pair.target);
      const NodeId row = g.as_row(base);
      const NodeId eff = g.add(row, graph_mlp_rows(g, row, p, adapters->f));
      wiring.effective[pair.target] = g.as_vector(eff);
    }
  } else if (adapters->kind == AdapterKind::hiwi_weight) {
    for (const auto& pair : adapters->pairs) {
      const NodeId base = wiring.base_leaves.at(pair.target);
      const PairNodes p = pair_nodes(wiring, pair.target);
      const NodeId t = g.transpose(base);
      const NodeId eff = g.add(base, g.transpose(graph_mlp_rows(g, t, p, adapters->f)));
      wiring.effective[pair.target] = eff;
    }
  }
  return wiring;
}

NodeId forward_logits(Graph& g, const ModelGraph& wiring, std::span<const std::size_t> tokens) {
  const ToyModelConfig& cfg = wiring.config;
  if (tokens.empty()) throw ContractError("forward needs at least one token");
  if (tokens.size() > cfg.max_seq) {
    throw ContractError("sequence length " + std::to_string(tokens.size()) +
                        " exceeds model max_seq " + std::to_string(cfg.max_seq));
  }
  auto leaf = [&](const std::string& name) { return wiring.base_leaves.at(name); };
  auto param = [&](const std::string& name) {
    auto it = wiring.effective.find(name);
    return it == wiring.effective.end() ? wiring.base_leaves.at(name) : it->second;
  };
  const bool lora = wiring.adapters != nullptr && wiring.adapters->kind == AdapterKind::lora;
  const bool houlsby = wiring.adapters != nullptr && wiring.adapters->kind == AdapterKind::adapter;
  const bool pfeiffer =
      wiring.adapters != nullptr && wiring.adapters->kind == AdapterKind::pfeiffer_adapter;

  std::vector<std::size_t> positions(tokens.size());
  for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = i;

  NodeId h = g.add(g.embedding(leaf("embed.token"), {tokens.begin(), tokens.end()}),
                   g.embedding(leaf("embed.position"), positions));
  h = g.layer_norm(h, leaf("embed.norm.weight"), leaf("embed.norm.bias"));

  const std::size_t dh = cfg.d / cfg.heads;
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    auto name = [&](const char* suffix) { return layer_name(l, suffix); };

    auto projection = [&](const char* proj) {
      const std::string wname = name(proj) + ".weight";
      NodeId y = g.add_bias(g.matmul(h, leaf(wname)), leaf(name(proj) + ".bias"));
      if (lora && wiring.adapters->find(wname) != nullptr) {
        const PairNodes p = pair_nodes(wiring, wname);
        const NodeId branch = g.matmul(g.matmul(h, p.w_down), p.w_up);
        y = g.add(y, g.scale(branch, wiring.adapters->lora_scale));
      }
      return y;
    };

    const NodeId q = projection("attn.q");
    const NodeId k = projection("attn.k");
    const NodeId v = projection("attn.v");

    std::vector<NodeId> heads;
    heads.reserve(cfg.heads);
    for (std::size_t hd = 0; hd < cfg.heads; ++hd) {
      const NodeId qh = g.slice_cols(q, hd * dh, dh);
      const NodeId kh = g.slice_cols(k, hd * dh, dh);
      const NodeId vh = g.slice_cols(v, hd * dh, dh);
      const NodeId scores = g.scale(g.matmul(qh, g.transpose(kh)), 1.0 / std::sqrt(double(dh)));
      heads.push_back(g.matmul(g.softmax_rows(scores), vh));
    }
    NodeId attn = g.add_bias(g.matmul(g.concat_cols(heads), leaf(name("attn.out") + ".weight")),
                             leaf(name("attn.out") + ".bias"));
    if (houlsby) {
      const PairNodes p = pair_nodes(wiring, name("attn.adapter"));
      attn = g.add(attn, graph_mlp_rows(g, attn, p, wiring.adapters->f));
    }
    h = g.layer_norm(g.add(h, attn), leaf(name("norm1.weight")), leaf(name("norm1.bias")));

    NodeId m = g.add_bias(g.matmul(h, param(name("ffn1.weight"))), param(name("ffn1.bias")));
    m = g.nonlinearity(m, cfg.activation);
    m = g.add_bias(g.matmul(m, param(name("ffn2.weight"))), param(name("ffn2.bias")));
    if (houlsby) {
      const PairNodes p = pair_nodes(wiring, name("ffn.adapter"));
      m = g.add(m, graph_mlp_rows(g, m, p, wiring.adapters->f));
    }
    h = g.layer_norm(g.add(h, m), leaf(name("norm2.weight")), leaf(name("norm2.bias")));
    if (pfeiffer) {
      const PairNodes p = pair_nodes(wiring, name("adapter"));
      h = g.add(h, graph_mlp_rows(g, h, p, wiring.adapters->f));
    }
  }

  return g.add_bias(g.matmul(g.take_row(h, 0), leaf("classifier.weight")),
                    leaf("classifier.bias"));
}

Tensor model_logits(const ToyModel& model, std::span<const std::size_t> tokens,
                    const AdapterWeights* adapters) {
  Graph g;
  const ModelGraph wiring = wire_model(g, model, adapters, false, false);
  return g.value(forward_logits(g, wiring, tokens));
}

ParameterStore collect_base_gradients(const Graph& g, const ModelGraph& wiring,
                                      const ToyModel& model,
                                      const std::unordered_map<NodeId, Tensor>& grads) {
  (void)g;
  ParameterStore out;
  out.set_meta(model.params.meta());
  for (const auto& grp : model.params.groups()) {
    const NodeId leaf = wiring.base_leaves.at(grp.name);
    auto it = grads.find(leaf);
    out.add({grp.name, grp.role,
             it == grads.end() ? Tensor::zeros(grp.tensor.shape()) : it->second});
  }
  return out;
}

ParameterStore collect_adapter_gradients(const Graph& g, const ModelGraph& wiring,
                                         const ParameterStore& adapter_store,
                                         const std::unordered_map<NodeId, Tensor>& grads) {
  (void)g;
  ParameterStore out;
  for (const auto& grp : adapter_store.groups()) {
    const NodeId leaf = wiring.adapter_leaves.at(grp.name);
    auto it = grads.find(leaf);
    out.add({grp.name, grp.role,
             it == grads.end() ? Tensor::zeros(grp.tensor.shape()) : it->second});
  }
  return out;
}

}  // namespace peftkit
