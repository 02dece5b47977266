#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "metaprompt/data.hpp"
#include "metaprompt/params.hpp"
#include "metaprompt/tape.hpp"

namespace mpt {

// Per-(task, label) class centroids of sentence embeddings, plus the
// balance factor and similarity temperature. Centroids are constants for
// the epoch they were computed in; no gradient flows through them.
struct PrototypeStore {
  std::map<int, std::map<std::string, Eigen::RowVectorXd>> centroids;
  double zeta = 0.5;
  double temperature = 1.0;

  const Eigen::RowVectorXd& centroid(int task_id, const std::string& label) const;
  bool has(int task_id, const std::string& label) const;
};

// uid -> s(x). Initialized to 1 for every training uid; after a recompute
// all values lie strictly inside (0, 1).
struct ScoreTable {
  std::map<std::string, double> scores;
  int epoch = 0;

  void init_uniform(const std::vector<std::string>& uids);
  double at(const std::string& uid) const;
  std::uint64_t checksum() const;
};

// sim(a, b) = exp(cos(a, b) / temperature); strictly positive, so every
// ratio in the prototype score is a proper share.
double embedding_similarity(const Eigen::RowVectorXd& a, const Eigen::RowVectorXd& b,
                            double temperature);

struct TaskData {
  const TaskSpec* task;
  const std::vector<Example>* examples;
};

using EmbeddingFn = std::function<Eigen::RowVectorXd(const Example&)>;

// Arithmetic mean of E(x) over every (task, label) cell. Errors on an empty
// cell, naming the task and label.
PrototypeStore compute_centroids(const std::vector<TaskData>& data,
                                 const EmbeddingFn& embed, double zeta,
                                 double temperature);

// Cross-task prototype score for one instance. With a single task (or when
// no other task carries the label) only the within-task ratio remains. When
// require_shared_labels is set (similar setting), a missing label in any
// other task is an error.
double prototype_score(const Eigen::RowVectorXd& embedding, int task_id,
                       const std::string& label, const PrototypeStore& store,
                       bool require_shared_labels = false);

// H(D_m) = -(1/|D_m|) sum_x sum_y yhat log yhat, with 0 log 0 = 0.
double dataset_entropy(const std::vector<Eigen::RowVectorXd>& predictions);

// --------------------------------------------------------------------------
// de-biased loss
// --------------------------------------------------------------------------

enum class EntropySign {
  Literal,   // + lambda2/|D_m| * instance entropy, the formula as printed
  Maximize,  // - lambda2/|D_m| * instance entropy
};

struct LossInstance {
  Var yhat;          // 1 x |Y_*| class distribution
  int target = -1;   // gold label index within Y_*
  double score = 1;  // s(x), treated as a constant
  int task_id = -1;
};

struct LossConfig {
  double lambda1 = 0.01;
  double lambda2 = 0.01;
  EntropySign entropy_sign = EntropySign::Literal;
};

// L2 term: 0.5 * sum of squared entries over the given parameter tensors.
Var l2_penalty(GraphCtx& ctx, const std::vector<Var>& reg_params);

// L'(Theta) over one batch: sum_m sum_x [ s(x) f(x,y) +- lambda2/|D_m| H_x ]
// + lambda1 |Theta|, with f the cross-entropy against yhat.
Var debiased_loss(GraphCtx& ctx, const std::vector<LossInstance>& batch,
                  const std::map<int, std::size_t>& dataset_sizes,
                  const LossConfig& cfg, const std::vector<Var>& reg_params);

}  // namespace mpt
