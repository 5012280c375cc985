#include "peftkit/accounting.hpp"

#include "peftkit/adapters.hpp"
#include "peftkit/trainer.hpp"

namespace peftkit {

const char* method_name(Method m) {
  switch (m) {
    case Method::full_ft: return "full_ft";
    case Method::linear_ft_norm: return "linear_ft_norm";
    case Method::bitfit: return "bitfit";
    case Method::adapter: return "adapter";
    case Method::pfeiffer_adapter: return "pfeiffer_adapter";
    case Method::lora: return "lora";
    case Method::prefix_tuning: return "prefix_tuning";
    case Method::mam_adapter: return "mam_adapter";
    case Method::hiwi_bias: return "hiwi_bias";
    case Method::hiwi_weight: return "hiwi_weight";
  }
  return "?";
}

Method method_from_name(std::string_view name) {
  for (Method m : kAllMethods) {
    if (name == method_name(m)) return m;
  }
  throw ConfigError("unknown method: " + std::string(name));
}

namespace {

std::uint64_t need(const std::optional<std::uint64_t>& v, const char* symbol) {
  if (!v.has_value() || *v == 0) {
    throw ConfigError(std::string("method needs dimension symbol '") + symbol + "'");
  }
  return *v;
}

}  // namespace

CountReport count(Method method, const ModelDims& dims) {
  const std::uint64_t V = dims.V, n = dims.n, d = dims.d, L = dims.L;
  if (V == 0 || n == 0 || d == 0 || L == 0) {
    throw ConfigError("count needs positive V, n, d, L");
  }
  const std::uint64_t full = (V + 2 + n) * d + (12 * d * d + 13 * d) * L;

  std::uint64_t tuned = 0, stored = 0;
  switch (method) {
    case Method::full_ft:
      tuned = stored = full;
      break;
    case Method::linear_ft_norm:
      tuned = stored = 2 * d + 4 * d * L;
      break;
    case Method::bitfit:
      tuned = stored = d + 11 * d * L;
      break;
    case Method::adapter: {
      const std::uint64_t r = need(dims.r, "r");
      tuned = stored = (4 * d * r + 2 * r + 6 * d) * L;
      break;
    }
    case Method::pfeiffer_adapter: {
      const std::uint64_t r = need(dims.r, "r");
      tuned = stored = (2 * d * r + r + d) * L;
      break;
    }
    case Method::lora: {
      const std::uint64_t r = need(dims.r, "r");
      tuned = stored = 4 * d * r * L;
      break;
    }
    case Method::prefix_tuning: {
      const std::uint64_t l = need(dims.l, "l");
      const std::uint64_t m = need(dims.m, "m");
      tuned = l * d + d * m + m + (2 * m * d + 2 * d) * L;
      stored = 2 * l * d * L;  // prefix vectors survive, the reparameterization is discarded
      break;
    }
    case Method::mam_adapter: {
      const std::uint64_t r = need(dims.r, "r");
      const std::uint64_t l = need(dims.l, "l");
      const std::uint64_t m = need(dims.m, "m");
      tuned = l * d + d * m + m + (2 * d * r + r + 3 * d + 2 * m * d) * L;
      stored = (2 * d * r + r + d + 2 * l * d) * L;
      break;
    }
    case Method::hiwi_bias: {
      const std::uint64_t r = need(dims.r, "r");
      tuned = (18 * d * r + 3 * r + 5 * d) * L;
      stored = 5 * d * L;  // only the merged bias vectors persist, whatever r
      break;
    }
    case Method::hiwi_weight: {
      const std::uint64_t r = need(dims.r, "r");
      tuned = stored = (18 * d * r + 3 * r + 5 * d) * L;
      break;
    }
  }

  CountReport report;
  report.method = method;
  report.tuned = tuned;
  report.stored = stored;
  report.tuned_pct = 100.0 * double(tuned) / double(full);
  report.stored_pct = 100.0 * double(stored) / double(full);
  return report;
}

std::uint64_t enumerate_tuned(const ParameterStore& store, Method method,
                              std::optional<std::uint64_t> r) {
  auto classifier_size = [&]() {
    std::uint64_t n = 0;
    for (const auto& g : store.groups()) {
      if (g.role == Role::classifier) n += g.tensor.numel();
    }
    return n;
  };
  auto selection_size = [&](TrainMode mode, const AdapterSpec* spec) {
    return std::uint64_t(
        selection_count(selection_for_mode(store, mode, nullptr, false, spec)));
  };
  auto adapter_total = [&](AdapterKind kind) {
    AdapterSpec spec;
    spec.kind = kind;
    spec.r = std::size_t(need(r, "r"));
    std::uint64_t total = init_adapter_weights(spec, store, 0).param_count();
    total += selection_size(TrainMode::adapter_method, &spec);  // houlsby norm groups
    return total;
  };

  switch (method) {
    case Method::full_ft:
      return store.total_params() - classifier_size();
    case Method::linear_ft_norm:
      return selection_size(TrainMode::linear_ft_norm, nullptr);
    case Method::bitfit:
      return selection_size(TrainMode::bitfit, nullptr);
    case Method::adapter:
      return adapter_total(AdapterKind::adapter);
    case Method::pfeiffer_adapter:
      return adapter_total(AdapterKind::pfeiffer_adapter);
    case Method::lora:
      return adapter_total(AdapterKind::lora);
    case Method::hiwi_bias:
      return adapter_total(AdapterKind::hiwi_bias);
    case Method::hiwi_weight:
      return adapter_total(AdapterKind::hiwi_weight);
    case Method::prefix_tuning:
    case Method::mam_adapter:
      throw ContractError(std::string(method_name(method)) +
                          " has no forward path to enumerate (formula-only)");
  }
  return 0;
}

}  // namespace peftkit
