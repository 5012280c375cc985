#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "peftkit/toy_model.hpp"

namespace peftkit {

enum class TaskKind { classification, regression };

const char* task_kind_name(TaskKind k);
TaskKind task_kind_from_name(std::string_view name);

// Synthetic task family. Classification: the label is the co-occurrence
// parity of two marker tokens planted among filler tokens. Regression: the
// target is a noisy linear functional of the token values. Token 0 is the
// CLS slot at position 0.
struct TaskSpec {
  TaskKind kind = TaskKind::classification;
  std::uint64_t seed = 1;
  std::size_t train_size = 256;
  std::size_t dev_size = 128;
  std::size_t seq_len = 16;
  std::size_t vocab = 50;
  std::size_t classes = 2;
  std::size_t plants = 3;   // occurrences of each present marker token
  double noise = 0.05;      // regression target noise
};

struct Sample {
  std::vector<std::size_t> tokens;
  std::size_t label = 0;  // classification
  double target = 0.0;    // regression
};

struct TaskData {
  TaskSpec spec;
  std::vector<Sample> train;
  std::vector<Sample> dev;
};

// Deterministic under spec.seed; dev samples are distinct from train
// samples (token sequences are deduplicated at generation).
TaskData make_task(const TaskSpec& spec);

struct Metric {
  double value = 0.0;
  bool degenerate = false;  // zero-variance predictions fed to Pearson
};

Metric accuracy_metric(const std::vector<std::size_t>& predictions,
                       const std::vector<std::size_t>& labels);
Metric pearson_metric(const std::vector<double>& predictions, const std::vector<double>& targets);

// Accuracy for classification, Pearson r for regression.
Metric evaluate(const ToyModel& model, const std::vector<Sample>& samples, TaskKind kind,
                const AdapterWeights* adapters = nullptr);

// Scalar loss node for one sample (cross entropy / squared error).
NodeId sample_loss(Graph& g, const ModelGraph& wiring, const Sample& sample, TaskKind kind);

void dump_tsv(const TaskData& task, const std::filesystem::path& path);

}  // namespace peftkit
