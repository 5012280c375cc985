// peft: command-line front end for the parameter-efficient fine-tuning
// toolkit. Subcommands: make-checkpoint, make-task, gen-mask, train, merge,
// count-params, eval.
//
// Exit codes: 0 ok, 2 bad arguments/config, 3 load failure, 4 write failure,
// 5 frozen-parameter violation. Diagnostics go to stderr; data goes to files
// or stdout. Every file-writing command drops a "<out>.manifest.json" run
// manifest with resolved config, input hashes and output hashes.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "peftkit/accounting.hpp"
#include "peftkit/adapters.hpp"
#include "peftkit/checkpoint_io.hpp"
#include "peftkit/mask.hpp"
#include "peftkit/tasks.hpp"
#include "peftkit/toy_model.hpp"
#include "peftkit/trainer.hpp"
#include "peftkit/version.hpp"

namespace {

using namespace peftkit;
using nlohmann::json;

constexpr int kExitOk = 0;
constexpr int kExitBadArgs = 2;
constexpr int kExitLoadFailure = 3;
constexpr int kExitWriteFailure = 4;
constexpr int kExitFrozenViolation = 5;

std::string file_sha256(const std::filesystem::path& path) {
  return hex_string(Sha256::of(read_file_bytes(path)));
}

struct ManifestBuilder {
  json j;

  ManifestBuilder(const std::string& command, std::uint64_t seed) {
    j["command"] = command;
    j["toolkit_version"] = kVersion;
    j["seed"] = seed;
    j["config"] = json::object();
    j["inputs"] = json::object();
    j["outputs"] = json::array();
  }
  void config(const std::string& key, const json& value) { j["config"][key] = value; }
  void input(const std::string& key, const std::filesystem::path& path) {
    j["inputs"][key] = {{"path", path.string()}, {"sha256", file_sha256(path)}};
  }
  void output(const std::filesystem::path& path) {
    j["outputs"].push_back({{"path", path.string()},
                            {"sha256", file_sha256(path)},
                            {"bytes", std::filesystem::file_size(path)}});
  }
  void write(const std::filesystem::path& out_path) {
    std::filesystem::path p = out_path;
    p += ".manifest.json";
    std::ofstream out(p, std::ios::trunc);
    if (!out) throw IoError("cannot write manifest " + p.string());
    out << j.dump(2) << "\n";
    if (!out) throw IoError("write failure on manifest " + p.string());
  }
};

// ---------------------------------------------------------------------------
// make-checkpoint

struct MakeCheckpointArgs {
  std::size_t vocab = 50, max_seq = 16, d = 32, layers = 2, heads = 4, classes = 2;
  std::uint64_t seed = 0;
  std::string init = "pretrained";
  std::uint64_t pretrain_task_seed = 9001;
  std::size_t pretrain_epochs = 3;  // partial transfer: enough signal for PEFT,
                                    // linear probing still visibly behind full FT
  std::size_t pretrain_train_size = 256;
  double pretrain_lr = 2e-3;
  std::string out;
};

int run_make_checkpoint(const MakeCheckpointArgs& a) {
  ToyModelConfig config;
  config.vocab = a.vocab;
  config.max_seq = a.max_seq;
  config.d = a.d;
  config.layers = a.layers;
  config.heads = a.heads;
  config.classes = a.classes;

  ToyModel model = build_model(config, a.seed);
  if (a.init == "pretrained") {
    // a short full fine-tuning run on the task family stands in for
    // pre-training; downstream tasks then start from trained features
    TaskSpec pre;
    pre.kind = config.classes == 1 ? TaskKind::regression : TaskKind::classification;
    pre.seed = a.pretrain_task_seed;
    pre.train_size = a.pretrain_train_size;
    pre.dev_size = 64;
    pre.seq_len = std::min<std::size_t>(config.max_seq, 16);
    pre.vocab = config.vocab;
    pre.classes = config.classes;
    pre.plants = std::min<std::size_t>(3, (pre.seq_len - 1) / 2);
    TrainConfig tc;
    tc.mode = TrainMode::full_ft;
    tc.learning_rate = a.pretrain_lr;
    tc.epochs = a.pretrain_epochs;
    tc.seed = a.seed;
    TrainResult result = train(model, make_task(pre), tc);
    // the trained f64 values are narrowed to f32 on save; quantize the live
    // store the same way so the written artifact equals the in-memory one
    model.params = parse_checkpoint(serialize_checkpoint(result.params));
    model.params.set_meta(result.params.meta());
    std::cerr << "pretraining dev accuracy: " << result.report.final_metric << "\n";
  } else if (a.init != "random") {
    throw ConfigError("--init must be random or pretrained");
  }

  save_checkpoint(model.params, a.out);

  ManifestBuilder manifest("make-checkpoint", a.seed);
  manifest.config("vocab", a.vocab);
  manifest.config("max_seq", a.max_seq);
  manifest.config("d", a.d);
  manifest.config("layers", a.layers);
  manifest.config("heads", a.heads);
  manifest.config("classes", a.classes);
  manifest.config("init", a.init);
  if (a.init == "pretrained") {
    manifest.config("pretrain_task_seed", a.pretrain_task_seed);
    manifest.config("pretrain_epochs", a.pretrain_epochs);
    manifest.config("pretrain_train_size", a.pretrain_train_size);
    manifest.config("pretrain_lr", a.pretrain_lr);
  }
  manifest.output(a.out);
  manifest.write(a.out);

  json record;
  record["checkpoint"] = a.out;
  record["total_params"] = model.params.total_params();
  record["sha256"] = file_sha256(a.out);
  std::cout << record.dump() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// make-task

struct MakeTaskArgs {
  std::string task = "classification";
  std::uint64_t task_seed = 1;
  std::size_t train_size = 256, dev_size = 128, seq_len = 16, vocab = 50, classes = 2, plants = 3;
  std::string out;
};

TaskSpec task_spec_of(const std::string& kind, std::uint64_t seed, std::size_t train_size,
                      std::size_t dev_size, std::size_t seq_len, std::size_t vocab,
                      std::size_t classes, std::size_t plants) {
  TaskSpec spec;
  spec.kind = task_kind_from_name(kind);
  spec.seed = seed;
  spec.train_size = train_size;
  spec.dev_size = dev_size;
  spec.seq_len = seq_len;
  spec.vocab = vocab;
  spec.classes = classes;
  spec.plants = plants;
  return spec;
}

int run_make_task(const MakeTaskArgs& a) {
  const TaskSpec spec = task_spec_of(a.task, a.task_seed, a.train_size, a.dev_size, a.seq_len,
                                     a.vocab, a.classes, a.plants);
  dump_tsv(make_task(spec), a.out);
  ManifestBuilder manifest("make-task", a.task_seed);
  manifest.config("task", a.task);
  manifest.config("train_size", a.train_size);
  manifest.config("dev_size", a.dev_size);
  manifest.config("seq_len", a.seq_len);
  manifest.config("vocab", a.vocab);
  manifest.config("classes", a.classes);
  manifest.output(a.out);
  manifest.write(a.out);
  return kExitOk;
}

// ---------------------------------------------------------------------------
// gen-mask

struct GenMaskArgs {
  std::string checkpoint;
  double sparsity = 0.005;
  std::string scope = "group_wise";
  std::string selector = "smallest";
  bool tune_norm = true;
  bool tune_embed = false;
  std::uint64_t seed = 0;
  std::string out;
};

int run_gen_mask(const GenMaskArgs& a) {
  const ParameterStore store = load_checkpoint(a.checkpoint);
  MaskPolicy policy{a.tune_norm, a.tune_embed};
  const SparseMask mask = magnitude_mask(store, a.sparsity, mask_scope_from_name(a.scope), policy,
                                         mask_selector_from_name(a.selector), a.seed);
  save_mask(mask, a.out);

  ManifestBuilder manifest("gen-mask", a.seed);
  manifest.config("sparsity", a.sparsity);
  manifest.config("scope", a.scope);
  manifest.config("selector", a.selector);
  manifest.config("tune_norm", a.tune_norm);
  manifest.config("tune_embed", a.tune_embed);
  manifest.input("checkpoint", a.checkpoint);
  manifest.output(a.out);
  manifest.write(a.out);

  json record;
  record["mask"] = a.out;
  record["selected"] = mask.selected_count();
  record["eligible"] = eligible_pool_size(store, policy);
  record["pool_sparsity"] = mask.sparsity;
  record["sha256"] = file_sha256(a.out);
  std::cout << record.dump() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
  std::string mode;
  std::string checkpoint;
  std::string mask;
  std::string adapter_kind;
  std::size_t r = 4;
  std::string f = "relu";
  double lora_scale = 1.0;
  std::string task = "classification";
  std::uint64_t task_seed = 1;
  std::size_t train_size = 256, dev_size = 128, seq_len = 16, plants = 3;
  std::uint64_t seed = 0;
  double lr = 5e-3;
  std::size_t epochs = 10;
  std::size_t batch_size = 16;
  std::string optimizer = "adam";
  double grad_clip = 0.0;
  std::string schedule = "constant";
  std::string out;
  std::string report;       // default <out>.report.jsonl
  std::string adapter_out;  // default <out>.adapters.pfrg
};

int run_train(const TrainArgs& a) {
  TrainConfig config;
  config.mode = train_mode_from_name(a.mode);
  config.learning_rate = a.lr;
  config.batch_size = a.batch_size;
  config.epochs = a.epochs;
  config.seed = a.seed;
  config.grad_clip = a.grad_clip;
  if (a.optimizer == "sgd") {
    config.optimizer.kind = OptimizerKind::sgd;
  } else if (a.optimizer == "adam") {
    config.optimizer.kind = OptimizerKind::adam;
  } else {
    throw ConfigError("--optimizer must be sgd or adam");
  }
  if (a.schedule == "constant") {
    config.schedule = LrSchedule::constant;
  } else if (a.schedule == "linear_decay") {
    config.schedule = LrSchedule::linear_decay;
  } else {
    throw ConfigError("--schedule must be constant or linear_decay");
  }

  if (config.mode == TrainMode::pafi && a.mask.empty()) {
    throw ConfigError("pafi mode needs --mask");
  }
  if (config.mode == TrainMode::adapter_method && a.adapter_kind.empty()) {
    throw ConfigError("adapter mode needs --adapter-kind");
  }
  if (config.mode != TrainMode::pafi && !a.mask.empty()) {
    throw ConfigError("--mask is only valid with --mode pafi");
  }

  const ParameterStore theta0 = load_checkpoint(a.checkpoint);
  ToyModel model = model_from_store(theta0);

  if (config.mode == TrainMode::pafi) config.mask = load_mask(a.mask);
  if (config.mode == TrainMode::adapter_method) {
    AdapterSpec spec;
    spec.kind = adapter_kind_from_name(a.adapter_kind);
    spec.r = a.r;
    spec.f = nonlinearity_from_name(a.f);
    spec.lora_scale = a.lora_scale;
    config.adapter = spec;
  }

  const TaskSpec task_spec = task_spec_of(a.task, a.task_seed, a.train_size, a.dev_size, a.seq_len,
                                          model.config.vocab, model.config.classes, a.plants);
  if (task_spec.kind == TaskKind::regression && model.config.classes != 1) {
    throw ConfigError("regression tasks need a checkpoint with classes=1");
  }
  const TaskData task = make_task(task_spec);

  const TrainResult result = train(model, task, config);
  std::cerr << "train wall time: " << result.report.wall_ms << " ms, final metric: "
            << result.report.final_metric << "\n";

  if (result.report.frozen_violation_count > 0) {
    std::cerr << "error: frozen-parameter violations: " << result.report.frozen_violation_count
              << "\n";
    return kExitFrozenViolation;
  }

  save_checkpoint(result.params, a.out);
  const std::string report_path = a.report.empty() ? a.out + ".report.jsonl" : a.report;
  {
    std::ofstream rep(report_path, std::ios::trunc);
    if (!rep) throw IoError("cannot write report " + report_path);
    rep << report_to_jsonl(result.report);
    if (!rep) throw IoError("write failure on report " + report_path);
  }

  ManifestBuilder manifest("train", a.seed);
  manifest.config("mode", a.mode);
  manifest.config("task", a.task);
  manifest.config("task_seed", a.task_seed);
  manifest.config("train_size", a.train_size);
  manifest.config("dev_size", a.dev_size);
  manifest.config("seq_len", a.seq_len);
  manifest.config("lr", a.lr);
  manifest.config("epochs", a.epochs);
  manifest.config("batch_size", a.batch_size);
  manifest.config("optimizer", a.optimizer);
  manifest.config("grad_clip", a.grad_clip);
  manifest.config("schedule", a.schedule);
  manifest.input("checkpoint", a.checkpoint);
  if (!a.mask.empty()) manifest.input("mask", a.mask);
  if (config.mode == TrainMode::adapter_method) {
    manifest.config("adapter_kind", a.adapter_kind);
    manifest.config("r", a.r);
    manifest.config("f", a.f);
    manifest.config("lora_scale", a.lora_scale);
  }
  manifest.output(a.out);
  manifest.output(report_path);

  json record;
  record["checkpoint"] = a.out;
  record["report"] = report_path;
  record["final_metric"] = result.report.final_metric;
  record["updated_parameters"] = result.report.updated_parameter_count;
  record["frozen_violations"] = result.report.frozen_violation_count;

  if (result.adapters.has_value()) {
    const std::string adapter_path = a.adapter_out.empty() ? a.out + ".adapters.pfrg" : a.adapter_out;
    save_checkpoint(adapters_to_store(*result.adapters), adapter_path);
    manifest.output(adapter_path);
    record["adapters"] = adapter_path;
    if (result.adapters->kind == AdapterKind::hiwi_bias) {
      // the deployable artifact: merged bias vectors only, invariant to r
      ParameterStore merged_bias;
      const ParameterStore merged = merge_adapters(result.params, *result.adapters);
      for (const auto& g : merged.groups()) {
        if (result.adapters->find(g.name) != nullptr) merged_bias.add(g);
      }
      const std::string bias_path = a.out + ".merged-bias.pfrg";
      save_checkpoint(merged_bias, bias_path);
      manifest.output(bias_path);
      record["merged_bias"] = bias_path;
    }
  }
  manifest.write(a.out);
  std::cout << record.dump() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// merge

struct MergeArgs {
  std::string checkpoint;
  std::string adapter_weights;
  std::string kind;
  std::string f = "relu";
  double lora_scale = 1.0;
  std::string out;
};

int run_merge(const MergeArgs& a) {
  const ParameterStore base = load_checkpoint(a.checkpoint);
  const ParameterStore adapter_store = load_checkpoint(a.adapter_weights);
  const AdapterWeights weights = adapters_from_store(
      adapter_store, adapter_kind_from_name(a.kind), nonlinearity_from_name(a.f), a.lora_scale);
  const ParameterStore merged = merge_adapters(base, weights);
  save_checkpoint(merged, a.out);

  ManifestBuilder manifest("merge", 0);
  manifest.config("kind", a.kind);
  manifest.config("f", a.f);
  manifest.config("lora_scale", a.lora_scale);
  manifest.input("checkpoint", a.checkpoint);
  manifest.input("adapter_weights", a.adapter_weights);
  manifest.output(a.out);
  manifest.write(a.out);

  json record;
  record["checkpoint"] = a.out;
  record["groups"] = merged.size();
  record["sha256"] = file_sha256(a.out);
  std::cout << record.dump() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// count-params

struct CountArgs {
  std::string method = "all";
  std::uint64_t V = 0, n = 0, d = 0, L = 0;
  std::uint64_t r = 0, l = 0, m = 0;
  std::string format = "pretty";
};

int run_count_params(const CountArgs& a) {
  ModelDims dims;
  dims.V = a.V;
  dims.n = a.n;
  dims.d = a.d;
  dims.L = a.L;
  if (a.r > 0) dims.r = a.r;
  if (a.l > 0) dims.l = a.l;
  if (a.m > 0) dims.m = a.m;

  std::vector<Method> methods;
  if (a.method == "all") {
    methods.assign(kAllMethods.begin(), kAllMethods.end());
  } else {
    methods.push_back(method_from_name(a.method));
  }

  std::vector<CountReport> reports;
  reports.reserve(methods.size());
  for (Method m : methods) reports.push_back(count(m, dims));

  if (a.format == "tsv") {
    std::printf("method\ttuned\tstored\ttuned_pct\tstored_pct\n");
    for (const auto& rep : reports) {
      std::printf("%s\t%llu\t%llu\t%.6f\t%.6f\n", method_name(rep.method),
                  static_cast<unsigned long long>(rep.tuned),
                  static_cast<unsigned long long>(rep.stored), rep.tuned_pct, rep.stored_pct);
    }
  } else if (a.format == "pretty") {
    std::printf("%-18s %14s %14s %12s %12s\n", "method", "#tuned", "#stored", "tuned%", "stored%");
    for (const auto& rep : reports) {
      std::printf("%-18s %14llu %14llu %11.4f%% %11.4f%%\n", method_name(rep.method),
                  static_cast<unsigned long long>(rep.tuned),
                  static_cast<unsigned long long>(rep.stored), rep.tuned_pct, rep.stored_pct);
    }
  } else {
    throw ConfigError("--format must be tsv or pretty");
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// eval

struct EvalArgs {
  std::string checkpoint;
  std::string task = "classification";
  std::uint64_t task_seed = 1;
  std::size_t train_size = 256, dev_size = 128, seq_len = 16, plants = 3;
  std::string metric;  // default by task kind
  std::string split = "dev";
  std::string adapter_weights;
  std::string kind;
  std::string f = "relu";
  double lora_scale = 1.0;
};

int run_eval(const EvalArgs& a) {
  const ParameterStore store = load_checkpoint(a.checkpoint);
  ToyModel model = model_from_store(store);
  const TaskSpec spec = task_spec_of(a.task, a.task_seed, a.train_size, a.dev_size, a.seq_len,
                                     model.config.vocab, model.config.classes, a.plants);
  const TaskData task = make_task(spec);

  std::string metric_name = a.metric;
  if (metric_name.empty()) {
    metric_name = spec.kind == TaskKind::classification ? "accuracy" : "pearson";
  }
  if ((metric_name == "accuracy") != (spec.kind == TaskKind::classification)) {
    throw ConfigError("metric " + metric_name + " does not fit task kind " + a.task);
  }

  std::optional<AdapterWeights> adapters;
  if (!a.adapter_weights.empty()) {
    if (a.kind.empty()) throw ConfigError("--adapter-weights needs --kind");
    adapters = adapters_from_store(load_checkpoint(a.adapter_weights),
                                   adapter_kind_from_name(a.kind), nonlinearity_from_name(a.f),
                                   a.lora_scale);
  }

  const std::vector<Sample>& samples = a.split == "train" ? task.train : task.dev;
  const Metric metric =
      evaluate(model, samples, spec.kind, adapters.has_value() ? &*adapters : nullptr);
  if (metric.degenerate) std::cerr << "warning: zero-variance predictions, pearson defined as 0\n";

  json record;
  record["checkpoint"] = a.checkpoint;
  record["task"] = a.task;
  record["task_seed"] = a.task_seed;
  record["split"] = a.split;
  record["metric"] = metric_name;
  record["value"] = metric.value;
  record["degenerate"] = metric.degenerate;
  record["samples"] = samples.size();
  std::cout << record.dump() << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"parameter-efficient fine-tuning toolkit"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);

  MakeCheckpointArgs mc;
  auto* cmd_mc = app.add_subcommand("make-checkpoint", "build a toy transformer checkpoint");
  cmd_mc->add_option("--V,--vocab", mc.vocab, "vocabulary size");
  cmd_mc->add_option("--n,--max-seq", mc.max_seq, "maximum sequence length");
  cmd_mc->add_option("--d", mc.d, "hidden dimension");
  cmd_mc->add_option("--L,--layers", mc.layers, "encoder layers");
  cmd_mc->add_option("--heads", mc.heads, "attention heads");
  cmd_mc->add_option("--classes", mc.classes, "classifier classes");
  cmd_mc->add_option("--seed", mc.seed, "init seed");
  cmd_mc->add_option("--init", mc.init, "random | pretrained (default)");
  cmd_mc->add_option("--pretrain-task-seed", mc.pretrain_task_seed, "");
  cmd_mc->add_option("--pretrain-epochs", mc.pretrain_epochs, "");
  cmd_mc->add_option("--pretrain-train-size", mc.pretrain_train_size, "");
  cmd_mc->add_option("--pretrain-lr", mc.pretrain_lr, "");
  cmd_mc->add_option("--out", mc.out, "output checkpoint path")->required();

  MakeTaskArgs mt;
  auto* cmd_mt = app.add_subcommand("make-task", "dump a synthetic task to TSV");
  cmd_mt->add_option("--task", mt.task, "classification | regression");
  cmd_mt->add_option("--task-seed", mt.task_seed, "");
  cmd_mt->add_option("--train-size", mt.train_size, "");
  cmd_mt->add_option("--dev-size", mt.dev_size, "");
  cmd_mt->add_option("--seq-len", mt.seq_len, "");
  cmd_mt->add_option("--vocab", mt.vocab, "");
  cmd_mt->add_option("--classes", mt.classes, "");
  cmd_mt->add_option("--plants", mt.plants, "marker occurrences per present marker");
  cmd_mt->add_option("--out", mt.out, "output TSV path")->required();

  GenMaskArgs gm;
  auto* cmd_gm = app.add_subcommand("gen-mask", "generate a sparse mask from a checkpoint");
  cmd_gm->add_option("--checkpoint", gm.checkpoint, "source checkpoint")->required();
  cmd_gm->add_option("--sparsity", gm.sparsity, "fraction of the eligible pool (default 0.005)");
  cmd_gm->add_option("--scope", gm.scope, "group_wise (default) | global");
  cmd_gm->add_option("--selector", gm.selector, "smallest (default) | largest | middle | random");
  cmd_gm->add_flag("--tune-norm,!--no-tune-norm", gm.tune_norm,
                   "force-include normalization groups (default on)");
  cmd_gm->add_flag("--tune-embed,!--no-tune-embed", gm.tune_embed,
                   "include embedding groups in the pool (default off)");
  cmd_gm->add_option("--seed", gm.seed, "seed for the random selector");
  cmd_gm->add_option("--out", gm.out, "output mask path")->required();

  TrainArgs tr;
  auto* cmd_tr = app.add_subcommand("train", "fine-tune a checkpoint on a synthetic task");
  cmd_tr->add_option("--mode", tr.mode,
                     "full_ft | linear_ft | linear_ft_norm | bitfit | pafi | adapter")
      ->required();
  cmd_tr->add_option("--checkpoint", tr.checkpoint, "theta0 checkpoint")->required();
  cmd_tr->add_option("--mask", tr.mask, "PFMK mask (pafi mode)");
  cmd_tr->add_option("--adapter-kind", tr.adapter_kind,
                     "adapter | pfeiffer_adapter | lora | hiwi_bias | hiwi_weight");
  cmd_tr->add_option("--r", tr.r, "adapter bottleneck");
  cmd_tr->add_option("--f", tr.f, "adapter nonlinearity (identity | relu | gelu)");
  cmd_tr->add_option("--lora-scale", tr.lora_scale, "");
  cmd_tr->add_option("--task", tr.task, "classification | regression");
  cmd_tr->add_option("--task-seed", tr.task_seed, "");
  cmd_tr->add_option("--train-size", tr.train_size, "");
  cmd_tr->add_option("--dev-size", tr.dev_size, "");
  cmd_tr->add_option("--seq-len", tr.seq_len, "");
  cmd_tr->add_option("--plants", tr.plants, "marker occurrences per present marker");
  cmd_tr->add_option("--seed", tr.seed, "training seed");
  cmd_tr->add_option("--lr", tr.lr, "learning rate");
  cmd_tr->add_option("--epochs", tr.epochs, "");
  cmd_tr->add_option("--batch-size", tr.batch_size, "");
  cmd_tr->add_option("--optimizer", tr.optimizer, "adam (default) | sgd");
  cmd_tr->add_option("--grad-clip", tr.grad_clip, "global-norm clip, 0 = off");
  cmd_tr->add_option("--schedule", tr.schedule, "constant (default) | linear_decay");
  cmd_tr->add_option("--out", tr.out, "theta2 checkpoint path")->required();
  cmd_tr->add_option("--report", tr.report, "JSONL report path (default <out>.report.jsonl)");
  cmd_tr->add_option("--adapter-out", tr.adapter_out,
                     "adapter artifact path (default <out>.adapters.pfrg)");

  MergeArgs mg;
  auto* cmd_mg = app.add_subcommand("merge", "fold adapters into a plain checkpoint");
  cmd_mg->add_option("--checkpoint", mg.checkpoint, "")->required();
  cmd_mg->add_option("--adapter-weights", mg.adapter_weights, "")->required();
  cmd_mg->add_option("--kind", mg.kind, "lora | hiwi_bias | hiwi_weight")->required();
  cmd_mg->add_option("--f", mg.f, "adapter nonlinearity");
  cmd_mg->add_option("--lora-scale", mg.lora_scale, "");
  cmd_mg->add_option("--out", mg.out, "")->required();

  CountArgs cp;
  auto* cmd_cp = app.add_subcommand("count-params", "closed-form #tuned/#stored table");
  cmd_cp->add_option("--method", cp.method, "one method name or 'all' (default)");
  cmd_cp->add_option("--V", cp.V, "vocabulary size")->required();
  cmd_cp->add_option("--n", cp.n, "maximum sequence length")->required();
  cmd_cp->add_option("--d", cp.d, "hidden dimension")->required();
  cmd_cp->add_option("--L", cp.L, "encoder layers")->required();
  cmd_cp->add_option("--r", cp.r, "adapter bottleneck");
  cmd_cp->add_option("--l", cp.l, "prefix length");
  cmd_cp->add_option("--m", cp.m, "prefix-adapter bottleneck");
  cmd_cp->add_option("--format", cp.format, "pretty (default) | tsv");

  EvalArgs ev;
  auto* cmd_ev = app.add_subcommand("eval", "evaluate a checkpoint on a synthetic task");
  cmd_ev->add_option("--checkpoint", ev.checkpoint, "")->required();
  cmd_ev->add_option("--task", ev.task, "classification | regression");
  cmd_ev->add_option("--task-seed", ev.task_seed, "");
  cmd_ev->add_option("--train-size", ev.train_size, "");
  cmd_ev->add_option("--dev-size", ev.dev_size, "");
  cmd_ev->add_option("--seq-len", ev.seq_len, "");
  cmd_ev->add_option("--plants", ev.plants, "marker occurrences per present marker");
  cmd_ev->add_option("--metric", ev.metric, "accuracy | pearson (default by task)");
  cmd_ev->add_option("--split", ev.split, "dev (default) | train");
  cmd_ev->add_option("--adapter-weights", ev.adapter_weights, "evaluate in adapter form");
  cmd_ev->add_option("--kind", ev.kind, "adapter kind for --adapter-weights");
  cmd_ev->add_option("--f", ev.f, "");
  cmd_ev->add_option("--lora-scale", ev.lora_scale, "");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help / --version
    app.exit(e);
    return kExitBadArgs;
  }

  try {
    if (cmd_mc->parsed()) return run_make_checkpoint(mc);
    if (cmd_mt->parsed()) return run_make_task(mt);
    if (cmd_gm->parsed()) return run_gen_mask(gm);
    if (cmd_tr->parsed()) return run_train(tr);
    if (cmd_mg->parsed()) return run_merge(mg);
    if (cmd_cp->parsed()) return run_count_params(cp);
    if (cmd_ev->parsed()) return run_eval(ev);
  } catch (const LoadError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitLoadFailure;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitWriteFailure;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitBadArgs;
  } catch (const AlignmentError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitBadArgs;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return kExitBadArgs;
}
