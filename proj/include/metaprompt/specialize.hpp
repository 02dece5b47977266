#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "metaprompt/train.hpp"
#include "metaprompt/model.hpp"

namespace mpt {

struct SpecializeConfig {
  int epochs = 15;
  int batch_size = 6;
  double lr = 1e-3;
  double lambda1 = 0.01;
  std::uint64_t seed = 1;
  int early_stop_patience = 0;
  bool unfreeze_universal = false;      // adapt: also tune the universal encoder
  bool seed_from_group_encoder = false; // generalize: copy a matching type encoder
                                        // instead of the universal one
};

// A task-specialized model: the meta-learner container with one active
// (trainable) prompt encoder and a fixed target task.
struct SpecializedModel {
  MetaLearnerState state;
  int target_task = -1;
  std::string source_checkpoint;
  TrainableMask trainable;

  const TaskSpec& task() const { return state.task(target_task); }
};

// Continue-tunes the meta-learner on a seen task with the plain loss
// L^(m) = sum f(x,y) + lambda1 |Theta|. Only the task's own prompt encoder
// (its type encoder in distant mode), the gate and the backbone train;
// the universal encoder stays frozen unless unfreeze_universal is set.
SpecializedModel adapt(const MetaLearnerState& meta, int task_id,
                       const std::vector<Example>& train,
                       const std::vector<Example>& dev, const SpecializeConfig& cfg,
                       std::vector<EpochStats>* log = nullptr);

// Fits a previously unseen task: builds a fresh type-description template,
// initializes the new task's encoder from the universal encoder and trains
// on the new data with the plain loss. Errors if any training uid was seen
// during meta-training.
SpecializedModel generalize(const MetaLearnerState& meta, const TaskSpec& new_task,
                            const std::vector<std::string>& type_description,
                            const std::vector<Example>& train,
                            const std::vector<Example>& dev, const SpecializeConfig& cfg,
                            std::vector<EpochStats>* log = nullptr);

// Argmax predictions with class distributions; deterministic, order-stable.
// Examples must conform to the target task (labels, when present, must lie
// in its label set); they are re-targeted onto the model's task slot.
std::vector<Prediction> predict(const SpecializedModel& model,
                                const std::vector<Example>& examples);

double evaluate(const SpecializedModel& model, const std::vector<Example>& examples);

}  // namespace mpt
