#include "peftkit/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstring>
#include <numeric>

#include "json.hpp"
#include "peftkit/checkpoint_io.hpp"
#include "peftkit/rng.hpp"

namespace peftkit {

const char* train_mode_name(TrainMode m) {
  switch (m) {
    case TrainMode::full_ft: return "full_ft";
    case TrainMode::linear_ft: return "linear_ft";
    case TrainMode::linear_ft_norm: return "linear_ft_norm";
    case TrainMode::bitfit: return "bitfit";
    case TrainMode::pafi: return "pafi";
    case TrainMode::adapter_method: return "adapter";
  }
  return "?";
}

TrainMode train_mode_from_name(std::string_view name) {
  if (name == "full_ft") return TrainMode::full_ft;
  if (name == "linear_ft") return TrainMode::linear_ft;
  if (name == "linear_ft_norm") return TrainMode::linear_ft_norm;
  if (name == "bitfit") return TrainMode::bitfit;
  if (name == "pafi") return TrainMode::pafi;
  if (name == "adapter") return TrainMode::adapter_method;
  throw ConfigError("unknown train mode: " + std::string(name));
}

namespace {

std::vector<std::uint64_t> full_group_indices(const ParamGroup& g) {
  std::vector<std::uint64_t> v(g.tensor.numel());
  std::iota(v.begin(), v.end(), 0);
  return v;
}

bool layer_norm_group(const ParamGroup& g) {
  return role_is_norm(g.role) && g.name.rfind("encoder.layer.", 0) == 0;
}

}  // namespace

Selection selection_for_mode(const ParameterStore& store, TrainMode mode, const SparseMask* mask,
                             bool include_classifier, const AdapterSpec* adapter) {
  Selection sel;
  for (const auto& g : store.groups()) {
    if (g.role == Role::classifier) continue;
    switch (mode) {
      case TrainMode::full_ft:
        sel.push_back({g.name, full_group_indices(g)});
        break;
      case TrainMode::linear_ft:
        break;
      case TrainMode::linear_ft_norm:
        if (role_is_norm(g.role)) sel.push_back({g.name, full_group_indices(g)});
        break;
      case TrainMode::bitfit:
        if (role_is_bias(g.role)) sel.push_back({g.name, full_group_indices(g)});
        break;
      case TrainMode::pafi: {
        if (mask == nullptr) throw ConfigError("pafi mode needs a mask");
        const GroupIndices* mg = mask->find(g.name);
        if (mg != nullptr && !mg->indices.empty()) sel.push_back({g.name, mg->indices});
        break;
      }
      case TrainMode::adapter_method:
        // the houlsby variant tunes the per-layer norms; the post-embedding
        // norm stays frozen (its count formula has no 2d constant)
        if (adapter != nullptr && adapter->kind == AdapterKind::adapter && layer_norm_group(g)) {
          sel.push_back({g.name, full_group_indices(g)});
        }
        break;
    }
  }
  if (include_classifier) {
    for (const auto& g : store.groups()) {
      if (g.role == Role::classifier) sel.push_back({g.name, full_group_indices(g)});
    }
  }
  return sel;
}

namespace {

double clip_gradients(ParameterStore& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& g : grads.groups()) {
    for (double v : g.tensor.data()) sq += v * v;
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double factor = max_norm / norm;
    for (auto& g : grads.groups()) {
      for (auto& v : g.tensor.data()) v *= factor;
    }
  }
  return norm;
}

}  // namespace

TrainResult train(const ToyModel& model, const TaskData& task, const TrainConfig& config) {
  if (task.train.empty()) throw ConfigError("task has no training samples");
  if (!(config.learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
  if (config.batch_size == 0) throw ConfigError("batch size must be positive");
  if (config.mode == TrainMode::pafi) {
    if (!config.mask.has_value()) throw ConfigError("pafi mode needs a mask");
    check_mask_alignment(*config.mask, model.params);
    const Sha256Digest zero{};
    if (config.mask->provenance != zero &&
        config.mask->provenance != store_content_hash(model.params)) {
      throw AlignmentError("mask provenance does not match the checkpoint");
    }
  }
  if (config.mode == TrainMode::adapter_method && !config.adapter.has_value()) {
    throw ConfigError("adapter mode needs an adapter spec");
  }

  const auto t_start = std::chrono::steady_clock::now();

  TrainResult result;
  result.params = model.params;

  const AdapterSpec* spec = config.adapter.has_value() ? &*config.adapter : nullptr;
  const SparseMask* mask = config.mask.has_value() ? &*config.mask : nullptr;

  std::optional<AdapterWeights> adapters;
  ParameterStore adapter_params;
  if (config.mode == TrainMode::adapter_method) {
    adapters = init_adapter_weights(*spec, model.params, config.seed ^ 0x5afe5eedull);
    adapter_params = adapters_to_store(*adapters);
  }

  const Selection base_sel =
      selection_for_mode(model.params, config.mode, mask, /*include_classifier=*/true, spec);
  MaskedOptimizer base_opt(config.optimizer, base_sel);

  Selection adapter_sel;
  for (const auto& g : adapter_params.groups()) {
    adapter_sel.push_back({g.name, full_group_indices(g)});
  }
  MaskedOptimizer adapter_opt(config.optimizer, adapter_sel);

  result.report.updated_parameter_count =
      selection_count(base_sel) + selection_count(adapter_sel);

  ToyModel current{model.config, result.params};

  const std::size_t steps_per_epoch =
      (task.train.size() + config.batch_size - 1) / config.batch_size;
  const std::size_t total_steps = std::max<std::size_t>(1, steps_per_epoch * config.epochs);
  std::size_t step = 0;

  Rng shuffle_rng(config.seed);
  std::vector<std::size_t> order(task.train.size());
  std::iota(order.begin(), order.end(), 0);

  auto refresh_adapters = [&]() {
    if (!adapters.has_value()) return;
    adapters = adapters_from_store(adapter_params, spec->kind, spec->f, spec->lora_scale);
  };

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double loss_sum = 0.0;
    std::size_t loss_count = 0;
    try {
      for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
        const std::size_t end = std::min(order.size(), begin + config.batch_size);
        Graph g;
        current.params = result.params;
        refresh_adapters();
        const ModelGraph wiring =
            wire_model(g, current, adapters.has_value() ? &*adapters : nullptr,
                       /*base_trainable=*/true, /*adapters_trainable=*/true);
        std::vector<NodeId> losses;
        losses.reserve(end - begin);
        for (std::size_t i = begin; i < end; ++i) {
          losses.push_back(sample_loss(g, wiring, task.train[order[i]], task.spec.kind));
        }
        const NodeId batch_loss = g.scale(g.add_n(losses), 1.0 / double(losses.size()));
        loss_sum += g.value(batch_loss).at(std::size_t{0}) * double(losses.size());
        loss_count += losses.size();

        const auto grads = g.backward(batch_loss);
        ParameterStore base_grads = collect_base_gradients(g, wiring, current, grads);
        if (config.grad_clip > 0.0) clip_gradients(base_grads, config.grad_clip);

        double lr = config.learning_rate;
        if (config.schedule == LrSchedule::linear_decay) {
          lr *= 1.0 - double(step) / double(total_steps);
        }
        base_opt.step(result.params, base_grads, lr);
        if (!adapter_params.groups().empty()) {
          ParameterStore adapter_grads = collect_adapter_gradients(g, wiring, adapter_params, grads);
          if (config.grad_clip > 0.0) clip_gradients(adapter_grads, config.grad_clip);
          adapter_opt.step(adapter_params, adapter_grads, lr);
        }
        ++step;
      }
      current.params = result.params;
      refresh_adapters();
      const Metric dev = evaluate(current, task.dev, task.spec.kind,
                                  adapters.has_value() ? &*adapters : nullptr);
      result.report.epochs.push_back(
          {epoch, loss_count > 0 ? loss_sum / double(loss_count) : 0.0, dev.value});
    } catch (const NumericError& e) {
      throw TrainingError("training diverged at epoch " + std::to_string(epoch) + ": " + e.what());
    }
  }

  current.params = result.params;
  refresh_adapters();
  Metric final_metric;
  try {
    final_metric = evaluate(current, task.dev, task.spec.kind,
                            adapters.has_value() ? &*adapters : nullptr);
  } catch (const NumericError& e) {
    throw TrainingError("training diverged at epoch " + std::to_string(config.epochs) + ": " +
                        e.what());
  }
  result.report.final_metric = final_metric.value;
  result.report.metric_degenerate = final_metric.degenerate;
  result.adapters = adapters;

  // post-hoc byte comparison against theta0 outside the trainable set
  Selection frozen_check = base_sel;
  result.report.frozen_violation_count = verify_frozen(model.params, result.params, frozen_check);

  result.report.wall_ms = std::chrono::duration<double, std::milli>(
                              std::chrono::steady_clock::now() - t_start)
                              .count();
  return result;
}

std::uint64_t verify_frozen(const ParameterStore& theta0, const ParameterStore& theta2,
                            const Selection& selection) {
  require_alignment(theta0, theta2, "verify_frozen");
  std::uint64_t violations = 0;
  for (std::size_t gi = 0; gi < theta0.size(); ++gi) {
    const ParamGroup& g0 = theta0.groups()[gi];
    if (g0.role == Role::classifier) continue;
    const ParamGroup* g2 = theta2.find(g0.name);
    const GroupIndices* sel = selection_find(selection, g0.name);
    std::size_t cursor = 0;
    for (std::size_t i = 0; i < g0.tensor.numel(); ++i) {
      if (sel != nullptr) {
        while (cursor < sel->indices.size() && sel->indices[cursor] < i) ++cursor;
        if (cursor < sel->indices.size() && sel->indices[cursor] == i) continue;  // trainable
      }
      const double a = g0.tensor.at(i);
      const double b = g2->tensor.at(i);
      if (std::memcmp(&a, &b, sizeof(double)) != 0) ++violations;
    }
  }
  return violations;
}

std::uint64_t verify_frozen(const ParameterStore& theta0, const ParameterStore& theta2,
                            const SparseMask& mask) {
  return verify_frozen(theta0, theta2, mask.groups);
}

std::string report_to_jsonl(const TrainReport& report) {
  std::string out;
  for (const auto& e : report.epochs) {
    nlohmann::json j;
    j["epoch"] = e.epoch;
    j["train_loss"] = e.train_loss;
    j["dev_metric"] = e.dev_metric;
    out += j.dump() + "\n";
  }
  nlohmann::json summary;
  summary["final_metric"] = report.final_metric;
  summary["metric_degenerate"] = report.metric_degenerate;
  summary["updated_parameters"] = report.updated_parameter_count;
  summary["frozen_violations"] = report.frozen_violation_count;
  summary["epochs"] = report.epochs.size();
  out += summary.dump() + "\n";
  return out;
}

}  // namespace peftkit
