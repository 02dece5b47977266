#include "metaprompt/debias.hpp"

#include <cmath>
#include <stdexcept>

namespace mpt {

const Eigen::RowVectorXd& PrototypeStore::centroid(int task_id,
                                                   const std::string& label) const {
  auto t = centroids.find(task_id);
  if (t == centroids.end())
    throw std::out_of_range("prototype store: no centroids for task " +
                            std::to_string(task_id));
  auto c = t->second.find(label);
  if (c == t->second.end())
    throw std::out_of_range("prototype store: no centroid for (task " +
                            std::to_string(task_id) + ", label '" + label + "')");
  return c->second;
}

bool PrototypeStore::has(int task_id, const std::string& label) const {
  auto t = centroids.find(task_id);
  return t != centroids.end() && t->second.count(label) > 0;
}

void ScoreTable::init_uniform(const std::vector<std::string>& uids) {
  scores.clear();
  for (const std::string& uid : uids) scores[uid] = 1.0;
  epoch = 0;
}

double ScoreTable::at(const std::string& uid) const {
  auto it = scores.find(uid);
  if (it == scores.end()) throw std::out_of_range("score table: unknown uid " + uid);
  return it->second;
}

std::uint64_t ScoreTable::checksum() const {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](const void* data, std::size_t len) {
    const unsigned char* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < len; ++i) {
      h ^= p[i];
      h *= 1099511628211ULL;
    }
  };
  for (const auto& [uid, s] : scores) {
    mix(uid.data(), uid.size());
    mix(&s, sizeof(s));
  }
  return h;
}

double embedding_similarity(const Eigen::RowVectorXd& a, const Eigen::RowVectorXd& b,
                            double temperature) {
  const double na = a.norm();
  const double nb = b.norm();
  const double cosine = (na < 1e-12 || nb < 1e-12) ? 0.0 : a.dot(b) / (na * nb);
  return std::exp(cosine / temperature);
}

PrototypeStore compute_centroids(const std::vector<TaskData>& data,
                                 const EmbeddingFn& embed, double zeta,
                                 double temperature) {
  if (zeta <= 0.0 || zeta >= 1.0)
    throw std::invalid_argument("compute_centroids: zeta must lie in (0, 1)");
  PrototypeStore store;
  store.zeta = zeta;
  store.temperature = temperature;
  for (const TaskData& td : data) {
    std::map<std::string, Eigen::RowVectorXd> sums;
    std::map<std::string, int> counts;
    for (const Example& ex : *td.examples) {
      Eigen::RowVectorXd e = embed(ex);
      auto it = sums.find(ex.label);
      if (it == sums.end()) {
        sums.emplace(ex.label, std::move(e));
        counts[ex.label] = 1;
      } else {
        it->second += e;
        counts[ex.label] += 1;
      }
    }
    for (const std::string& label : td.task->label_set) {
      auto it = sums.find(label);
      if (it == sums.end())
        throw std::runtime_error("compute_centroids: empty class cell (task " +
                                 td.task->name + ", label '" + label + "')");
      store.centroids[td.task->task_id][label] = it->second / counts[label];
    }
  }
  return store;
}

double prototype_score(const Eigen::RowVectorXd& embedding, int task_id,
                       const std::string& label, const PrototypeStore& store,
                       bool require_shared_labels) {
  auto ratio_for = [&](int m) {
    const auto& cents = store.centroids.at(m);
    double num = 0.0, denom = 0.0;
    for (const auto& [lbl, c] : cents) {
      const double s = embedding_similarity(embedding, c, store.temperature);
      denom += s;
      if (lbl == label) num = s;
    }
    return num / denom;
  };

  if (!store.has(task_id, label))
    throw std::out_of_range("prototype_score: no centroid for own (task " +
                            std::to_string(task_id) + ", label '" + label + "')");
  const double within = ratio_for(task_id);

  double cross_sum = 0.0;
  int cross_count = 0;
  for (const auto& [m, cents] : store.centroids) {
    if (m == task_id) continue;
    if (!cents.count(label)) {
      if (require_shared_labels)
        throw std::runtime_error("prototype_score: task " + std::to_string(m) +
                                 " lacks label '" + label +
                                 "' (similar tasks must share label spaces)");
      continue;  // distant setting: skip tasks without this label
    }
    cross_sum += ratio_for(m);
    ++cross_count;
  }
  if (cross_count == 0) return within;  // M = 1 degeneracy: within-task ratio only
  return store.zeta * within +
         (1.0 - store.zeta) / static_cast<double>(cross_count) * cross_sum;
}

double dataset_entropy(const std::vector<Eigen::RowVectorXd>& predictions) {
  if (predictions.empty())
    throw std::invalid_argument("dataset_entropy: empty prediction list");
  double total = 0.0;
  for (const Eigen::RowVectorXd& y : predictions) {
    for (Eigen::Index i = 0; i < y.size(); ++i)
      if (y(i) > 0.0) total -= y(i) * std::log(y(i));
  }
  return total / static_cast<double>(predictions.size());
}

Var l2_penalty(GraphCtx& ctx, const std::vector<Var>& reg_params) {
  Var acc = ctx.tape().constant(0.0);
  for (const Var& p : reg_params) acc = add(acc, half_square_sum(p));
  return acc;
}

Var debiased_loss(GraphCtx& ctx, const std::vector<LossInstance>& batch,
                  const std::map<int, std::size_t>& dataset_sizes,
                  const LossConfig& cfg, const std::vector<Var>& reg_params) {
  if (batch.empty()) throw std::invalid_argument("debiased_loss: empty batch");
  if (cfg.lambda1 < 0.0 || cfg.lambda2 < 0.0)
    throw std::invalid_argument("debiased_loss: lambdas must be >= 0");
  Var total = ctx.tape().constant(0.0);
  for (const LossInstance& inst : batch) {
    if (inst.target < 0 || inst.target >= inst.yhat.cols())
      throw std::invalid_argument("debiased_loss: target index out of range");
    Var ce = scale(log_v(entry(inst.yhat, 0, inst.target)), -1.0);
    total = add(total, scale(ce, inst.score));
    if (cfg.lambda2 > 0.0) {
      auto it = dataset_sizes.find(inst.task_id);
      if (it == dataset_sizes.end() || it->second == 0)
        throw std::invalid_argument("debiased_loss: missing dataset size for task " +
                                    std::to_string(inst.task_id));
      const double w = cfg.lambda2 / static_cast<double>(it->second);
      Var h = entropy_sum(inst.yhat);
      total = add(total, scale(h, cfg.entropy_sign == EntropySign::Literal ? w : -w));
    }
  }
  if (cfg.lambda1 > 0.0 && !reg_params.empty())
    total = add(total, scale(l2_penalty(ctx, reg_params), cfg.lambda1));
  return total;
}

}  // namespace mpt
