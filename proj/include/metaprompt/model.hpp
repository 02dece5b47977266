#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "metaprompt/backbone.hpp"
#include "metaprompt/data.hpp"
#include "metaprompt/debias.hpp"
#include "metaprompt/encoders.hpp"
#include "metaprompt/params.hpp"
#include "metaprompt/templates.hpp"
#include "metaprompt/vocab.hpp"

namespace mpt {

enum class Mode { Similar, Distant };

std::string mode_name(Mode mode);
Mode mode_from_name(const std::string& name);

struct ModelConfig {
  BackboneConfig backbone;
  int pseudo_count = 2;
  int split_point = 0;
  FusionConfig fusion;
  GateConfig gate;
};

// How a state turns an example into a prediction.
//  Meta: the mode-dependent fused path (task+universal fusion, or gated
//        intra/inter type embeddings) used during meta-training and adapt.
//  Solo: a single prompt encoder over its own template; used by models
//        produced through generalization.
enum class ForwardPath { Meta, Solo };

// The full trainable state: backbone, prompt encoders, gates, fusion query,
// score table, optimizer and templates. Specialized models reuse this
// container with a restricted trainable set.
struct MetaLearnerState {
  Mode mode = Mode::Similar;
  ForwardPath path = ForwardPath::Meta;
  ModelConfig cfg;

  Vocab vocab;
  std::vector<TaskSpec> tasks;
  std::vector<TaskGroup> groups;
  std::vector<PromptTemplate> task_templates;  // indexed by task_id
  std::vector<PromptTemplate> type_templates;  // indexed by group_id (may be empty slots)
  PromptTemplate universal_template;
  std::vector<std::string> shared_labels;  // similar mode label space

  ParamMap params;
  std::unique_ptr<BackboneApi> backbone;
  ScoreTable scores;
  Adam opt;
  int epoch = 0;

  double zeta = 0.5;
  double sim_temperature = 1.0;
  std::string train_config_echo;  // JSON text of the config that trained this state

  MetaLearnerState() = default;
  MetaLearnerState(const MetaLearnerState& other);
  MetaLearnerState& operator=(const MetaLearnerState& other);
  MetaLearnerState(MetaLearnerState&&) = default;
  MetaLearnerState& operator=(MetaLearnerState&&) = default;

  const TaskSpec& task(int task_id) const;
  const TaskGroup& group(int group_id) const;
  const std::vector<std::string>& label_space(int task_id) const;
  PromptEncoderConfig encoder_config() const {
    return {cfg.pseudo_count, cfg.backbone.dim};
  }
  std::uint64_t checksum() const { return params_checksum(params); }
};

// Builds a fresh meta-learner: validates the task/group roster for the mode,
// constructs all templates and registers every parameter tensor the mode
// uses. Deterministic for a fixed seed.
MetaLearnerState build_meta_state(Mode mode, const ModelConfig& cfg, Vocab vocab,
                                  std::vector<TaskSpec> tasks,
                                  std::vector<TaskGroup> groups, std::uint64_t seed);

struct InstanceOutput {
  Var yhat;       // 1 x |Y_*|
  Var mask_out;   // 1 x d sentence embedding E(x)
  int target;     // index of the gold label within Y_*, -1 if unlabeled
};

// Builds the full differentiable graph for one example: prompt encoding and
// fusion per mode/path, input assembly, backbone forward, verbalizer read-out.
InstanceOutput forward_instance(GraphCtx& ctx, const MetaLearnerState& state,
                                const Example& ex);

struct Prediction {
  int label_index;
  Eigen::RowVectorXd yhat;
  Eigen::RowVectorXd embedding;
};

// Inference convenience: runs forward_instance on a no-grad tape.
Prediction predict_one(const MetaLearnerState& state, const Example& ex);

// Pooled argmax accuracy over a labeled set.
double evaluate_accuracy(const MetaLearnerState& state, const std::vector<Example>& examples);

// Accuracy under a single verbalizer mapping index (top-k column j).
double evaluate_accuracy_single_mapping(const MetaLearnerState& state,
                                        const std::vector<Example>& examples,
                                        int mapping_index);

// Name-prefix trainable mask for optimizers and gradient audits.
struct TrainableMask {
  bool all = true;
  std::vector<std::string> prefixes;

  bool matches(const std::string& name) const {
    if (all) return true;
    for (const std::string& p : prefixes)
      if (name.rfind(p, 0) == 0) return true;
    return false;
  }
  std::function<bool(const std::string&)> fn() const {
    return [*this](const std::string& name) { return matches(name); };
  }
};

}  // namespace mpt
