#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "peftkit/adapters.hpp"
#include "peftkit/graph.hpp"
#include "peftkit/param_store.hpp"

namespace peftkit {

// Tiny post-norm transformer encoder with the RoBERTa-style layer anatomy:
// per layer 4 attention projections (q/k/v/out) with biases, two FFN
// projections (d -> 4d -> d) with biases, two layer norms; token + position
// embeddings with a post-embedding norm; a linear classifier on the first
// token.
struct ToyModelConfig {
  std::size_t vocab = 50;
  std::size_t max_seq = 16;
  std::size_t d = 32;
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t classes = 2;
  std::size_t ffn_mult = 4;  // fixed by the anatomy; validated
  Nonlinearity activation = Nonlinearity::gelu;
};

struct ToyModel {
  ToyModelConfig config;
  ParameterStore params;
};

// Fresh model; init values are drawn deterministically from `seed` and
// quantized through f32 so checkpoints round-trip bit-exactly.
ToyModel build_model(const ToyModelConfig& config, std::uint64_t seed);

// Reconstructs the config from a loaded store's meta (heads/classes come
// from the checkpoint manifest).
ToyModel model_from_store(ParameterStore store);

// Per-graph wiring: base-parameter leaves, adapter leaves and the
// adapter-effective FFN tensors are created once and shared by every sample
// forward built on the same graph.
struct ModelGraph {
  ToyModelConfig config;
  std::unordered_map<std::string, NodeId> base_leaves;     // group name -> leaf
  std::unordered_map<std::string, NodeId> adapter_leaves;  // adapter group name -> leaf
  const AdapterWeights* adapters = nullptr;                // borrowed
  // effective FFN tensors after hiwi wiring (group name -> node)
  std::unordered_map<std::string, NodeId> effective;
};

ModelGraph wire_model(Graph& g, const ToyModel& model, const AdapterWeights* adapters,
                      bool base_trainable, bool adapters_trainable);

// Logits of one token sequence: [1 x classes].
NodeId forward_logits(Graph& g, const ModelGraph& wiring, std::span<const std::size_t> tokens);

// Convenience single-shot forward.
Tensor model_logits(const ToyModel& model, std::span<const std::size_t> tokens,
                    const AdapterWeights* adapters = nullptr);

// Gradient store aligned with `model.params` extracted from a backward map.
ParameterStore collect_base_gradients(const Graph& g, const ModelGraph& wiring,
                                      const ToyModel& model,
                                      const std::unordered_map<NodeId, Tensor>& grads);

ParameterStore collect_adapter_gradients(const Graph& g, const ModelGraph& wiring,
                                         const ParameterStore& adapter_store,
                                         const std::unordered_map<NodeId, Tensor>& grads);

}  // namespace peftkit
