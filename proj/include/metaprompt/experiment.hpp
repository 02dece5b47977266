#pragma once

#include <cstdint>
#include <map>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "metaprompt/data.hpp"
#include "metaprompt/train.hpp"
#include "metaprompt/model.hpp"
#include "metaprompt/serialize.hpp"
#include "metaprompt/specialize.hpp"

namespace mpt {

// Full experiment description: suite source, model/train settings, few-shot
// protocol and the experiment kind. Serializable to/from JSON so reports can
// echo the exact configuration they were produced from.
struct ExperimentConfig {
  std::string suite_dir;  // when set, load the suite from disk
  SyntheticSuiteSpec synthetic = similar_suite_spec();
  std::uint64_t suite_seed = 7;

  Mode mode = Mode::Similar;
  ModelConfig model;
  TrainConfig train;
  SpecializeConfig specialize;
  int single_task_epochs = 30;  // budget for the from-scratch baselines

  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  int k_shot = 16;
  double label_noise = 0.0;  // train-split corruption rate
  std::string protocol = "transfer";  // transfer | generalize | ablation
  std::string out_dir;

  void validate() const;
};

ExperimentConfig default_experiment_config();

// The shipped desk-scale experiment: the 3-task similar suite with train
// label noise, tuned so the transfer, generalization and ablation trends
// are measurable in minutes on one CPU. Used by the acceptance suite and
// mirrored in configs/similar.json.
ExperimentConfig shipped_similar_experiment();

// Distant-mode counterpart (adds the 3-label sentence-pair group).
ExperimentConfig shipped_distant_experiment();

nlohmann::json experiment_config_to_json(const ExperimentConfig& cfg);
ExperimentConfig experiment_config_from_json(const nlohmann::json& j);

// task name -> per-seed accuracies.
struct ArmResult {
  std::map<std::string, std::vector<double>> dev_acc;
  std::map<std::string, std::vector<double>> dev_acc_permap;

  double task_mean(const std::string& task) const;
  double mean() const;  // grand mean over tasks (equal task weight)
  double stddev() const;
};

struct RunReport {
  std::string protocol;
  std::vector<std::uint64_t> seeds;
  std::vector<std::string> task_names;
  std::map<std::string, ArmResult> arms;
  nlohmann::json config_echo;
  std::vector<std::string> checkpoint_paths;
  double wall_clock_sec = 0.0;

  nlohmann::json to_json() const;
  void save(const std::string& path) const;
};

// Few-shot splits for every task of a suite, with optional train-label noise.
std::vector<FewShotSplit> sample_suite_splits(const SyntheticSuite& suite, int k,
                                              std::uint64_t seed, double label_noise);

// Dense re-indexed restriction of a suite to the named tasks (groups without
// surviving members are dropped). Used for leave-one-task-out workflows.
SyntheticSuite restrict_suite(const SyntheticSuite& suite,
                              const std::vector<std::string>& task_names);

// evaluate: argmax accuracy of a model on a labeled set.
double evaluate(const MetaLearnerState& model, const std::vector<Example>& test_set);

// Orchestrates the configured protocol over all seeds.
RunReport run_experiment(const ExperimentConfig& cfg);

// Protocol pieces (also used directly by the acceptance suite):
//   transfer:   arms meta_adapted / meta_only / single
//   generalize: arms generalize / scratch (leave-one-task-out)
//   ablation:   arms full / no_prototype / no_entropy / none (meta+adapt)
RunReport protocol_transfer(const SyntheticSuite& suite, const ExperimentConfig& cfg);
RunReport protocol_generalize(const SyntheticSuite& suite, const ExperimentConfig& cfg);
RunReport protocol_ablation(const SyntheticSuite& suite, const ExperimentConfig& cfg);

// Prototype case listing: the top_n highest- and lowest-scored training
// instances per task (clamped, with a warning, when top_n exceeds the data).
struct CaseRow {
  std::string task;
  std::string kind;  // "high" or "low"
  std::string uid;
  double score;
  std::string label;
  std::string text;
};

std::vector<CaseRow> report_cases(const MetaLearnerState& state,
                                  const std::vector<std::vector<Example>>& datasets,
                                  int top_n);
void write_cases_tsv(const std::string& path, const std::vector<CaseRow>& rows);

// TSV export of MASK-position sentence embeddings: uid, task, label, then
// the d coordinates comma-joined. Byte-stable across re-runs in eval mode.
void emit_embeddings(const MetaLearnerState& state,
                     const std::vector<std::vector<Example>>& datasets,
                     const std::string& path);

}  // namespace mpt
