#include "peftkit/optimizer.hpp"

#include <cmath>

namespace peftkit {

MaskedOptimizer::MaskedOptimizer(OptimizerConfig config, Selection selection)
    : config_(config), selection_(std::move(selection)) {
  if (config_.kind == OptimizerKind::adam) {
    m_.resize(selection_.size());
    v_.resize(selection_.size());
    for (std::size_t g = 0; g < selection_.size(); ++g) {
      m_[g].assign(selection_[g].indices.size(), 0.0);
      v_[g].assign(selection_[g].indices.size(), 0.0);
    }
  }
}

void MaskedOptimizer::step(ParameterStore& params, const ParameterStore& grads, double lr) {
  require_alignment(params, grads, "masked_step");
  ++t_;
  for (std::size_t g = 0; g < selection_.size(); ++g) {
    const auto& sel = selection_[g];
    ParamGroup* pg = params.find(sel.name);
    const ParamGroup* gg = grads.find(sel.name);
    if (pg == nullptr || gg == nullptr) {
      throw AlignmentError("masked_step: selection group " + sel.name + " missing from store");
    }
    if (!sel.indices.empty() && sel.indices.back() >= pg->tensor.numel()) {
      throw AlignmentError("masked_step: selection index out of range in " + sel.name);
    }
    switch (config_.kind) {
      case OptimizerKind::sgd:
        for (std::uint64_t idx : sel.indices) {
          const double grad = gg->tensor.at(idx);
          if (!std::isfinite(grad)) throw NumericError("non-finite gradient in " + sel.name);
          pg->tensor.at(idx) -= lr * grad;
        }
        break;
      case OptimizerKind::adam: {
        const auto& cfg = config_.adam;
        const double bc1 = 1.0 - std::pow(cfg.beta1, double(t_));
        const double bc2 = 1.0 - std::pow(cfg.beta2, double(t_));
        auto& m = m_[g];
        auto& v = v_[g];
        for (std::size_t i = 0; i < sel.indices.size(); ++i) {
          const std::uint64_t idx = sel.indices[i];
          const double grad = gg->tensor.at(idx);
          if (!std::isfinite(grad)) throw NumericError("non-finite gradient in " + sel.name);
          m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grad;
          v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grad * grad;
          const double mhat = m[i] / bc1;
          const double vhat = v[i] / bc2;
          pg->tensor.at(idx) -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
        }
        break;
      }
    }
  }
}

ParameterStore masked_step(const ParameterStore& params, const ParameterStore& grads,
                           const Selection& selection, double lr, const OptimizerConfig& config) {
  ParameterStore out = params;
  MaskedOptimizer opt(config, selection);
  opt.step(out, grads, lr);
  return out;
}

}  // namespace peftkit
