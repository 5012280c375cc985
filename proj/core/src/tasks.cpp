#include "peftkit/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <unordered_set>

#include "peftkit/checkpoint_io.hpp"
#include "peftkit/rng.hpp"

namespace peftkit {

const char* task_kind_name(TaskKind k) {
  return k == TaskKind::classification ? "classification" : "regression";
}

TaskKind task_kind_from_name(std::string_view name) {
  if (name == "classification") return TaskKind::classification;
  if (name == "regression") return TaskKind::regression;
  throw ConfigError("unknown task kind: " + std::string(name));
}

namespace {

constexpr std::size_t kClsToken = 0;
constexpr std::size_t kMarkerA = 1;
constexpr std::size_t kMarkerB = 2;
constexpr std::size_t kFirstFiller = 3;

std::uint64_t token_hash(const std::vector<std::size_t>& tokens) {
  std::uint64_t h = 1469598103934665603ull;
  for (std::size_t t : tokens) {
    h ^= t + 0x9e3779b97f4a7c15ull;
    h *= 1099511628211ull;
  }
  return h;
}

void validate_spec(const TaskSpec& spec) {
  if (spec.seq_len < 4) throw ConfigError("task seq_len must be >= 4");
  if (spec.vocab < kFirstFiller + 2) throw ConfigError("task vocab must be >= 5");
  if (spec.train_size == 0 || spec.dev_size == 0) throw ConfigError("task sizes must be positive");
  if (spec.kind == TaskKind::classification && (spec.classes != 2 && spec.classes != 4)) {
    throw ConfigError("classification task supports 2 or 4 classes");
  }
  if (spec.plants == 0 || 2 * spec.plants >= spec.seq_len) {
    throw ConfigError("task plants must satisfy 0 < 2*plants < seq_len");
  }
}

Sample classification_sample(const TaskSpec& spec, Rng& rng) {
  Sample s;
  s.tokens.assign(spec.seq_len, 0);
  s.tokens[0] = kClsToken;
  for (std::size_t i = 1; i < spec.seq_len; ++i) {
    s.tokens[i] = kFirstFiller + std::size_t(rng.below(spec.vocab - kFirstFiller));
  }
  const bool has_a = rng.below(2) == 1;
  const bool has_b = rng.below(2) == 1;
  // reserved marker slots are drawn label-independently, so sequence
  // statistics beyond the markers themselves do not leak the label
  const auto slots = rng.sample_without_replacement(spec.seq_len - 1, 2 * spec.plants);
  for (std::size_t p = 0; p < spec.plants; ++p) {
    if (has_a) s.tokens[1 + slots[2 * p]] = kMarkerA;
    if (has_b) s.tokens[1 + slots[2 * p + 1]] = kMarkerB;
  }
  const std::size_t a = has_a ? 1 : 0, b = has_b ? 1 : 0;
  s.label = spec.classes == 2 ? (a + b) % 2 : a + 2 * b;
  return s;
}

Sample regression_sample(const TaskSpec& spec, Rng& rng, const std::vector<double>& token_values) {
  Sample s;
  s.tokens.assign(spec.seq_len, 0);
  s.tokens[0] = kClsToken;
  double sum = 0.0;
  for (std::size_t i = 1; i < spec.seq_len; ++i) {
    s.tokens[i] = 1 + std::size_t(rng.below(spec.vocab - 1));
    sum += token_values[s.tokens[i]];
  }
  s.target = sum / double(spec.seq_len - 1) + spec.noise * rng.normal();
  return s;
}

}  // namespace

TaskData make_task(const TaskSpec& spec) {
  validate_spec(spec);
  TaskData data;
  data.spec = spec;
  Rng rng(spec.seed);

  std::vector<double> token_values;
  if (spec.kind == TaskKind::regression) {
    token_values.resize(spec.vocab);
    for (auto& v : token_values) v = rng.normal();
  }

  std::unordered_set<std::uint64_t> seen;
  auto generate = [&](std::vector<Sample>& out, std::size_t count) {
    while (out.size() < count) {
      Sample s = spec.kind == TaskKind::classification ? classification_sample(spec, rng)
                                                       : regression_sample(spec, rng, token_values);
      if (seen.insert(token_hash(s.tokens)).second) out.push_back(std::move(s));
    }
  };
  generate(data.train, spec.train_size);
  generate(data.dev, spec.dev_size);
  return data;
}

Metric accuracy_metric(const std::vector<std::size_t>& predictions,
                       const std::vector<std::size_t>& labels) {
  if (predictions.size() != labels.size() || predictions.empty()) {
    throw ContractError("accuracy needs equal, non-empty prediction/label lists");
  }
  std::size_t hits = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    if (predictions[i] == labels[i]) ++hits;
  }
  return {double(hits) / double(predictions.size()), false};
}

Metric pearson_metric(const std::vector<double>& predictions, const std::vector<double>& targets) {
  if (predictions.size() != targets.size() || predictions.size() < 2) {
    throw ContractError("pearson needs equal lists of at least two values");
  }
  const double n = double(predictions.size());
  double sx = 0, sy = 0, sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    sx += predictions[i];
    sy += targets[i];
    sxy += predictions[i] * targets[i];
    sxx += predictions[i] * predictions[i];
    syy += targets[i] * targets[i];
  }
  const double cov = n * sxy - sx * sy;
  const double vx = n * sxx - sx * sx;
  const double vy = n * syy - sy * sy;
  if (vx <= 0.0 || vy <= 0.0) return {0.0, true};  // zero-variance: defined as 0, flagged
  return {cov / std::sqrt(vx * vy), false};
}

Metric evaluate(const ToyModel& model, const std::vector<Sample>& samples, TaskKind kind,
                const AdapterWeights* adapters) {
  if (samples.empty()) throw ContractError("evaluate needs at least one sample");
  Graph g;
  const ModelGraph wiring = wire_model(g, model, adapters, false, false);
  if (kind == TaskKind::classification) {
    std::vector<std::size_t> preds, labels;
    preds.reserve(samples.size());
    for (const auto& s : samples) {
      const Tensor logits = g.value(forward_logits(g, wiring, s.tokens));
      std::size_t best = 0;
      for (std::size_t c = 1; c < logits.numel(); ++c) {
        if (logits.at(c) > logits.at(best)) best = c;
      }
      preds.push_back(best);
      labels.push_back(s.label);
    }
    return accuracy_metric(preds, labels);
  }
  std::vector<double> preds, targets;
  preds.reserve(samples.size());
  for (const auto& s : samples) {
    const Tensor logits = g.value(forward_logits(g, wiring, s.tokens));
    preds.push_back(logits.at(std::size_t{0}));
    targets.push_back(s.target);
  }
  return pearson_metric(preds, targets);
}

NodeId sample_loss(Graph& g, const ModelGraph& wiring, const Sample& sample, TaskKind kind) {
  const NodeId logits = forward_logits(g, wiring, sample.tokens);
  if (kind == TaskKind::classification) return g.cross_entropy(logits, sample.label);
  return g.squared_error(logits, sample.target);
}

void dump_tsv(const TaskData& task, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << "split\tlabel\ttarget\ttokens\n";
  auto dump_split = [&](const char* split, const std::vector<Sample>& samples) {
    for (const auto& s : samples) {
      out << split << "\t" << s.label << "\t" << s.target << "\t";
      for (std::size_t i = 0; i < s.tokens.size(); ++i) {
        if (i) out << " ";
        out << s.tokens[i];
      }
      out << "\n";
    }
  };
  dump_split("train", task.train);
  dump_split("dev", task.dev);
  out.flush();
  if (!out) throw IoError("write failure on " + path.string());
}

}  // namespace peftkit
