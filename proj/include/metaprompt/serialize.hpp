#pragma once

#include <string>

#include "metaprompt/data.hpp"
#include "metaprompt/model.hpp"
#include "metaprompt/specialize.hpp"

namespace mpt {

// Checkpoints are JSON with a version header, a config echo, the score
// table, every parameter tensor and the optimizer moments. Specialized
// models share the container with a mode tag and their trainable mask.
inline constexpr int kCheckpointVersion = 1;

void save_checkpoint(const std::string& path, const MetaLearnerState& state,
                     const std::string& kind = "meta", int target_task = -1,
                     const TrainableMask& trainable = {});

void save_checkpoint(const std::string& path, const SpecializedModel& model);

struct LoadedCheckpoint {
  std::string kind;  // "meta" or "specialized"
  MetaLearnerState state;
  int target_task = -1;
  TrainableMask trainable;

  SpecializedModel as_specialized() const;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

// A suite directory holds suite.json plus one pool/test TSV per task.
void save_suite(const std::string& dir, const SyntheticSuite& suite);
SyntheticSuite load_suite(const std::string& dir);

// uid <TAB> s(x) <TAB> epoch rows, sorted by uid.
void export_scores_tsv(const std::string& path, const ScoreTable& table);

}  // namespace mpt
