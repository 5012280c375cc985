#pragma once

#include <cstdint>
#include <vector>

#include "peftkit/mask.hpp"
#include "peftkit/param_store.hpp"

namespace peftkit {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

enum class OptimizerKind { sgd, adam };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::adam;
  AdamConfig adam;
};

// Applies optimizer updates to the selected coordinates only. Unselected
// coordinates are never written, so they stay bit-identical to the input.
// Adam moments are allocated per selected coordinate only: frozen
// coordinates have no state to drift through.
class MaskedOptimizer {
public:
  MaskedOptimizer(OptimizerConfig config, Selection selection);

  // grads must be aligned with params (same groups/shapes).
  void step(ParameterStore& params, const ParameterStore& grads, double lr);

  const Selection& selection() const { return selection_; }
  std::size_t selected_count() const { return selection_count(selection_); }
  std::uint64_t steps_taken() const { return t_; }

private:
  OptimizerConfig config_;
  Selection selection_;
  std::vector<std::vector<double>> m_;  // first moment, parallel to selection indices
  std::vector<std::vector<double>> v_;  // second moment
  std::uint64_t t_ = 0;
};

// One-shot functional form: returns the updated store, inputs untouched.
ParameterStore masked_step(const ParameterStore& params, const ParameterStore& grads,
                           const Selection& selection, double lr, const OptimizerConfig& config);

}  // namespace peftkit
