// Command-line front end: suite generation, meta-training, task
// specialization, evaluation, case reports and embedding export.

#include <CLI11.hpp>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>

#include "metaprompt/experiment.hpp"
#include "metaprompt/train.hpp"
#include "metaprompt/serialize.hpp"
#include "metaprompt/specialize.hpp"

namespace {

using namespace mpt;
using nlohmann::json;

// Relative output paths live under $METAPROMPT_OUT when it is set.
std::string resolve_out(const std::string& path) {
  if (path.empty() || std::filesystem::path(path).is_absolute()) return path;
  const char* root = std::getenv("METAPROMPT_OUT");
  if (!root || !*root) return path;
  return (std::filesystem::path(root) / path).string();
}

ExperimentConfig load_config(const std::string& path) {
  if (path.empty()) return default_experiment_config();
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config: " + path);
  return experiment_config_from_json(json::parse(in));
}

void write_train_log(const std::string& path, const std::vector<EpochStats>& log) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write training log: " + path);
  for (const EpochStats& e : log) {
    json j;
    j["epoch"] = e.epoch;
    j["mean_loss"] = e.mean_loss;
    json per_task;
    for (const auto& [task, loss] : e.per_task_loss) per_task[std::to_string(task)] = loss;
    j["per_task_loss"] = std::move(per_task);
    j["grad_norm_mean"] = e.grad_norm_mean;
    j["grad_norm_max"] = e.grad_norm_max;
    j["dev_accuracy"] = e.dev_accuracy;
    out << j.dump() << '\n';
  }
}

int find_task(const SyntheticSuite& suite, const std::string& name) {
  for (const TaskSpec& t : suite.tasks)
    if (t.name == name) return t.task_id;
  throw std::runtime_error("no task named '" + name + "' in the suite");
}

const std::vector<Example>& split_of(const SyntheticSuite& suite, int task_id,
                                     const std::string& split) {
  if (split == "pool") return suite.pools[static_cast<std::size_t>(task_id)];
  if (split == "test") return suite.tests[static_cast<std::size_t>(task_id)];
  throw std::runtime_error("unknown split '" + split + "' (expected pool or test)");
}

int run(int argc, char** argv) {
  CLI::App app{"meta-trained continuous prompts for few-shot text classification"};
  app.require_subcommand(1);

  std::string config_path, suite_dir, out_path, task_name, desc_text, model_path;
  std::string split = "test", preset = "similar";
  std::uint64_t seed = 1;
  int k = 16, top_n = 5;
  double noise = 0.0;

  auto* synth = app.add_subcommand("synth", "generate a synthetic task suite");
  synth->add_option("--config", config_path, "experiment config (synthetic section)");
  synth->add_option("--preset", preset, "built-in suite: similar | distant");
  synth->add_option("--seed", seed, "generation seed");
  synth->add_option("--out", out_path, "output directory")->required();

  std::string task_filter;
  auto* train = app.add_subcommand("train-meta", "meta-train over suite tasks");
  train->add_option("--config", config_path, "experiment config file");
  train->add_option("--suite", suite_dir, "suite directory")->required();
  train->add_option("--tasks", task_filter,
                    "comma-separated task subset (default: all; use to hold tasks out)");
  train->add_option("--seed", seed, "few-shot split and training seed");
  train->add_option("--k", k, "examples per class (train and dev)");
  train->add_option("--noise", noise, "train label corruption rate");
  train->add_option("--out", out_path, "output directory")->required();

  auto* adapt_cmd = app.add_subcommand("adapt", "specialize the meta-learner to a seen task");
  adapt_cmd->add_option("--config", config_path, "experiment config file");
  adapt_cmd->add_option("--meta", model_path, "meta checkpoint")->required();
  adapt_cmd->add_option("--task", task_name, "target task name")->required();
  adapt_cmd->add_option("--suite", suite_dir, "suite directory")->required();
  adapt_cmd->add_option("--seed", seed, "few-shot split seed (must match train-meta)");
  adapt_cmd->add_option("--k", k, "examples per class");
  adapt_cmd->add_option("--noise", noise, "train label corruption rate");
  adapt_cmd->add_option("--out", out_path, "output directory")->required();

  auto* gen = app.add_subcommand("generalize", "fit a task unseen during meta-training");
  gen->add_option("--config", config_path, "experiment config file");
  gen->add_option("--meta", model_path, "meta checkpoint")->required();
  gen->add_option("--task", task_name, "new task name (from the suite)")->required();
  gen->add_option("--desc", desc_text, "type description text (default: the task group's)");
  gen->add_option("--suite", suite_dir, "suite directory")->required();
  gen->add_option("--seed", seed, "few-shot split seed");
  gen->add_option("--k", k, "examples per class");
  gen->add_option("--out", out_path, "output directory")->required();

  auto* eval_cmd = app.add_subcommand("eval", "accuracy of a checkpoint on a suite split");
  eval_cmd->add_option("--model", model_path, "checkpoint file")->required();
  eval_cmd->add_option("--suite", suite_dir, "suite directory")->required();
  eval_cmd->add_option("--task", task_name, "task name (required for meta checkpoints)");
  eval_cmd->add_option("--split", split, "pool | test (default test)");

  auto* cases = app.add_subcommand("report-cases", "highest/lowest prototype-score cases");
  cases->add_option("--model", model_path, "meta checkpoint")->required();
  cases->add_option("--suite", suite_dir, "suite directory")->required();
  cases->add_option("--top-n", top_n, "cases per direction per task");
  cases->add_option("--out", out_path, "output TSV path")->required();

  auto* emb = app.add_subcommand("emit-embeddings", "export MASK-position embeddings");
  emb->add_option("--model", model_path, "checkpoint file")->required();
  emb->add_option("--suite", suite_dir, "suite directory")->required();
  emb->add_option("--split", split, "pool | test (default test)");
  emb->add_option("--out", out_path, "output TSV path")->required();

  auto* exp = app.add_subcommand("experiment", "full multi-seed protocol");
  exp->add_option("--config", config_path, "experiment config file");
  exp->add_option("--protocol", preset, "transfer | generalize | ablation");
  exp->add_option("--out", out_path, "output directory");

  CLI11_PARSE(app, argc, argv);
  out_path = resolve_out(out_path);

  if (synth->parsed()) {
    ExperimentConfig cfg = load_config(config_path);
    SyntheticSuiteSpec spec = cfg.synthetic;
    if (config_path.empty())
      spec = preset == "distant" ? distant_suite_spec() : similar_suite_spec();
    SyntheticSuite suite = build_synthetic_suite(spec, seed);
    save_suite(out_path, suite);
    std::cout << "wrote suite '" << suite.name << "' (" << suite.tasks.size()
              << " tasks, vocab " << suite.vocab.size() << ") to " << out_path << "\n";
    return 0;
  }

  if (train->parsed()) {
    ExperimentConfig cfg = load_config(config_path);
    SyntheticSuite suite = load_suite(suite_dir);
    if (!task_filter.empty()) {
      std::vector<std::string> names;
      std::istringstream iss(task_filter);
      std::string name;
      while (std::getline(iss, name, ',')) names.push_back(name);
      suite = restrict_suite(suite, names);
    }
    const std::vector<FewShotSplit> splits = sample_suite_splits(suite, k, seed, noise);
    TrainData data;
    data.train.resize(suite.tasks.size());
    data.dev.resize(suite.tasks.size());
    for (std::size_t m = 0; m < suite.tasks.size(); ++m) {
      data.train[m] = splits[m].train;
      data.dev[m] = splits[m].dev;
    }
    TrainConfig tcfg = cfg.train;
    tcfg.mode = cfg.mode;
    tcfg.seed = seed;
    std::vector<EpochStats> log;
    MetaLearnerState meta =
        train_meta(cfg.model, suite.vocab, suite.tasks, suite.groups, data, tcfg, &log);
    std::filesystem::create_directories(out_path);
    save_checkpoint(out_path + "/meta.json", meta);
    export_scores_tsv(out_path + "/scores.tsv", meta.scores);
    write_train_log(out_path + "/train_log.jsonl", log);
    std::cout << "meta-learner trained for " << meta.epoch << " epochs; "
              << param_count(meta.params) << " parameters; checkpoint at " << out_path
              << "/meta.json\n";
    return 0;
  }

  if (adapt_cmd->parsed()) {
    ExperimentConfig cfg = load_config(config_path);
    SyntheticSuite suite = load_suite(suite_dir);
    LoadedCheckpoint ckpt = load_checkpoint(model_path);
    const int task_id = find_task(suite, task_name);
    FewShotSplit fs = few_shot_sample(suite.pools[static_cast<std::size_t>(task_id)], k,
                                      Rng::derive(seed, 0xD1F + task_id));
    if (noise > 0.0)
      apply_label_noise(fs.train, suite.tasks[static_cast<std::size_t>(task_id)], noise,
                        Rng::derive(seed, 0x90B + task_id));
    SpecializeConfig tcfg = cfg.specialize;
    tcfg.seed = seed;
    std::vector<EpochStats> log;
    SpecializedModel spec = adapt(ckpt.state, task_id, fs.train, fs.dev, tcfg, &log);
    std::filesystem::create_directories(out_path);
    save_checkpoint(out_path + "/adapted_" + task_name + ".json", spec);
    write_train_log(out_path + "/adapt_log.jsonl", log);
    std::cout << "adapted to " << task_name
              << "; dev accuracy: " << evaluate(spec, fs.dev) << "\n";
    return 0;
  }

  if (gen->parsed()) {
    ExperimentConfig cfg = load_config(config_path);
    SyntheticSuite suite = load_suite(suite_dir);
    LoadedCheckpoint ckpt = load_checkpoint(model_path);
    const int task_id = find_task(suite, task_name);
    const TaskSpec& suite_task = suite.tasks[static_cast<std::size_t>(task_id)];
    std::vector<std::string> desc;
    if (!desc_text.empty()) {
      std::istringstream iss(desc_text);
      std::string tok;
      while (iss >> tok) desc.push_back(tok);
    } else {
      desc = suite.groups[static_cast<std::size_t>(suite_task.group_id)].description_tokens;
    }
    FewShotSplit fs = few_shot_sample(suite.pools[static_cast<std::size_t>(task_id)], k,
                                      Rng::derive(seed, 0xD1F + task_id));
    TaskSpec new_task = suite_task;
    new_task.group_id = -1;
    SpecializeConfig tcfg = cfg.specialize;
    tcfg.seed = seed;
    std::vector<EpochStats> log;
    SpecializedModel spec = generalize(ckpt.state, new_task, desc, fs.train, fs.dev, tcfg, &log);
    std::filesystem::create_directories(out_path);
    save_checkpoint(out_path + "/generalized_" + task_name + ".json", spec);
    write_train_log(out_path + "/generalize_log.jsonl", log);
    std::cout << "generalized to " << task_name
              << "; dev accuracy: " << evaluate(spec, fs.dev) << "\n";
    return 0;
  }

  if (eval_cmd->parsed()) {
    SyntheticSuite suite = load_suite(suite_dir);
    LoadedCheckpoint ckpt = load_checkpoint(model_path);
    std::vector<Example> examples;
    double acc = 0.0, permap = 0.0;
    if (ckpt.kind == "specialized") {
      SpecializedModel model = ckpt.as_specialized();
      const std::string target = model.task().name;
      examples = split_of(suite, find_task(suite, target), split);
      acc = evaluate(model, examples);
      std::vector<Example> retargeted;
      for (const Example& ex : examples) {
        Example e = ex;
        e.task_id = model.target_task;
        retargeted.push_back(std::move(e));
      }
      const int kk = static_cast<int>(model.task().verbalizer.begin()->second.size());
      for (int j = 0; j < kk; ++j)
        permap += evaluate_accuracy_single_mapping(model.state, retargeted, j) / kk;
    } else {
      if (task_name.empty())
        throw std::runtime_error("eval: --task is required for meta checkpoints");
      const int task_id = find_task(suite, task_name);
      examples = split_of(suite, task_id, split);
      acc = evaluate(ckpt.state, examples);
      const int kk = static_cast<int>(
          ckpt.state.task(task_id).verbalizer.begin()->second.size());
      for (int j = 0; j < kk; ++j)
        permap += evaluate_accuracy_single_mapping(ckpt.state, examples, j) / kk;
    }
    std::cout << "accuracy (averaged label-word probabilities): " << acc << "\n"
              << "accuracy (mean over single label-word mappings): " << permap << "\n";
    return 0;
  }

  if (cases->parsed()) {
    SyntheticSuite suite = load_suite(suite_dir);
    LoadedCheckpoint ckpt = load_checkpoint(model_path);
    write_cases_tsv(out_path, report_cases(ckpt.state, suite.pools, top_n));
    std::cout << "wrote case report to " << out_path << "\n";
    return 0;
  }

  if (emb->parsed()) {
    SyntheticSuite suite = load_suite(suite_dir);
    LoadedCheckpoint ckpt = load_checkpoint(model_path);
    const auto& datasets = split == "pool" ? suite.pools : suite.tests;
    emit_embeddings(ckpt.state, datasets, out_path);
    std::cout << "wrote embeddings to " << out_path << "\n";
    return 0;
  }

  if (exp->parsed()) {
    ExperimentConfig cfg = load_config(config_path);
    if (exp->count("--protocol")) cfg.protocol = preset;
    if (!out_path.empty()) cfg.out_dir = out_path;
    RunReport report = run_experiment(cfg);
    std::cout << report.to_json().dump(2) << "\n";
    return 0;
  }
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
