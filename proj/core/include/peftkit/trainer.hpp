#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "peftkit/adapters.hpp"
#include "peftkit/mask.hpp"
#include "peftkit/optimizer.hpp"
#include "peftkit/tasks.hpp"
#include "peftkit/toy_model.hpp"

namespace peftkit {

enum class TrainMode {
  full_ft,        // everything moves (classifier included)
  linear_ft,      // classifier only
  linear_ft_norm, // classifier + all normalization groups
  bitfit,         // classifier + every bias-role group
  pafi,           // classifier + the coordinates of a sparse mask
  adapter_method, // classifier + adapter params (+ layer norms for houlsby)
};

const char* train_mode_name(TrainMode m);
TrainMode train_mode_from_name(std::string_view name);

enum class LrSchedule { constant, linear_decay };

struct TrainConfig {
  TrainMode mode = TrainMode::full_ft;
  double learning_rate = 5e-3;
  std::size_t batch_size = 16;
  std::size_t epochs = 10;  // 0 = dry run, parameters untouched
  std::uint64_t seed = 0;
  OptimizerConfig optimizer;
  double grad_clip = 0.0;  // 0 = off (the default recipe does not clip)
  LrSchedule schedule = LrSchedule::constant;
  std::optional<SparseMask> mask;       // pafi
  std::optional<AdapterSpec> adapter;   // adapter_method
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double dev_metric = 0.0;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  double final_metric = 0.0;
  bool metric_degenerate = false;
  double wall_ms = 0.0;  // diagnostics only; never serialized (reports hash-stable)
  std::uint64_t updated_parameter_count = 0;  // coordinates the optimizer may move
  std::uint64_t frozen_violation_count = 0;   // must be 0
};

struct TrainResult {
  ParameterStore params;                   // theta2 (classifier updated in every mode)
  std::optional<AdapterWeights> adapters;  // trained adapters for adapter_method
  TrainReport report;
};

// Trainable base-store coordinates for a mode (classifier groups appended
// when include_classifier). For pafi pass the mask; for adapter_method the
// houlsby variant contributes the per-layer norm groups.
Selection selection_for_mode(const ParameterStore& store, TrainMode mode, const SparseMask* mask,
                             bool include_classifier,
                             const AdapterSpec* adapter = nullptr);

TrainResult train(const ToyModel& model, const TaskData& task, const TrainConfig& config);

// Byte-exact count of unmasked coordinates that differ between theta0 and
// theta2; classifier-role groups are skipped (they are the task head).
std::uint64_t verify_frozen(const ParameterStore& theta0, const ParameterStore& theta2,
                            const SparseMask& mask);
std::uint64_t verify_frozen(const ParameterStore& theta0, const ParameterStore& theta2,
                            const Selection& selection);

// One JSON object per epoch plus a trailing summary record; deterministic
// bytes for identical runs.
std::string report_to_jsonl(const TrainReport& report);

}  // namespace peftkit
