#pragma once

#include <cstdint>
#include <map>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "metaprompt/data.hpp"
#include "metaprompt/debias.hpp"
#include "metaprompt/model.hpp"

namespace mpt {

enum class SamplerKind { Uniform, Stratified };

struct TrainConfig {
  Mode mode = Mode::Similar;
  int epochs = 20;
  int batch_size = 6;
  double lr = 1e-3;
  double zeta = 0.5;
  double gamma = 0.001;
  double lambda1 = 0.01;
  double lambda2 = 0.01;
  EntropySign entropy_sign = EntropySign::Literal;
  bool prototype_debias = true;
  bool entropy_debias = true;
  SamplerKind sampler = SamplerKind::Uniform;
  std::uint64_t seed = 1;
  int early_stop_patience = 0;  // 0 disables early stopping
  double sim_temperature = 1.0;

  void validate() const;
};

nlohmann::json train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);

// Per-task train (and optional dev) sets, indexed by task_id.
struct TrainData {
  std::vector<std::vector<Example>> train;
  std::vector<std::vector<Example>> dev;

  bool has_dev() const;
  std::vector<std::size_t> train_sizes() const;
};

struct EpochStats {
  int epoch = 0;
  double mean_loss = 0.0;
  std::map<int, double> per_task_loss;  // mean weighted cross-entropy per task
  double grad_norm_mean = 0.0;
  double grad_norm_max = 0.0;
  int batches = 0;
  double dev_accuracy = -1.0;  // pooled over all dev sets; -1 when absent
};

// One optimizer pass over the sampler's epoch with the score table held
// fixed. Throws (with the offending batch uids) if the loss goes non-finite.
EpochStats run_epoch(MetaLearnerState& state, BatchSampler& sampler,
                     const TrainData& data, const TrainConfig& cfg,
                     const TrainableMask& mask);

// Recomputes centroids and every training instance's prototype score from
// the current parameters (pure inference), then bumps the table epoch stamp.
void recompute_scores(MetaLearnerState& state, const TrainData& data);

// The meta-learner training loop: uniform score init, per-epoch optimization
// of the de-biased loss, post-epoch score recomputation, optional early
// stopping on pooled dev accuracy. Fully reproducible under cfg.seed.
MetaLearnerState train_meta(const ModelConfig& mcfg, Vocab vocab,
                            std::vector<TaskSpec> tasks, std::vector<TaskGroup> groups,
                            const TrainData& data, const TrainConfig& cfg,
                            std::vector<EpochStats>* log = nullptr);

// Same loop continuing from an existing state (used by specialization).
void train_loop(MetaLearnerState& state, const TrainData& data, const TrainConfig& cfg,
                const TrainableMask& mask, std::vector<EpochStats>* log = nullptr);

}  // namespace mpt
