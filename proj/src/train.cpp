#include "metaprompt/train.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace mpt {

void TrainConfig::validate() const {
  if (epochs < 0) throw std::invalid_argument("train config: epochs must be >= 0");
  if (batch_size < 1) throw std::invalid_argument("train config: batch size must be >= 1");
  if (lr <= 0.0) throw std::invalid_argument("train config: learning rate must be > 0");
  if (zeta <= 0.0 || zeta >= 1.0)
    throw std::invalid_argument("train config: zeta must lie in (0, 1)");
  if (gamma <= 0.0) throw std::invalid_argument("train config: gamma must be > 0");
  if (lambda1 < 0.0 || lambda2 < 0.0)
    throw std::invalid_argument("train config: lambdas must be >= 0");
  if (sim_temperature <= 0.0)
    throw std::invalid_argument("train config: similarity temperature must be > 0");
}

nlohmann::json train_config_to_json(const TrainConfig& cfg) {
  nlohmann::json j;
  j["mode"] = mode_name(cfg.mode);
  j["epochs"] = cfg.epochs;
  j["batch_size"] = cfg.batch_size;
  j["lr"] = cfg.lr;
  j["zeta"] = cfg.zeta;
  j["gamma"] = cfg.gamma;
  j["lambda1"] = cfg.lambda1;
  j["lambda2"] = cfg.lambda2;
  j["entropy_sign"] = cfg.entropy_sign == EntropySign::Literal ? "literal" : "maximize";
  j["prototype_debias"] = cfg.prototype_debias;
  j["entropy_debias"] = cfg.entropy_debias;
  j["sampler"] = cfg.sampler == SamplerKind::Uniform ? "uniform" : "stratified";
  j["seed"] = cfg.seed;
  j["early_stop_patience"] = cfg.early_stop_patience;
  j["sim_temperature"] = cfg.sim_temperature;
  return j;
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig cfg;
  cfg.mode = mode_from_name(j.value("mode", mode_name(cfg.mode)));
  cfg.epochs = j.value("epochs", cfg.epochs);
  cfg.batch_size = j.value("batch_size", cfg.batch_size);
  cfg.lr = j.value("lr", cfg.lr);
  cfg.zeta = j.value("zeta", cfg.zeta);
  cfg.gamma = j.value("gamma", cfg.gamma);
  cfg.lambda1 = j.value("lambda1", cfg.lambda1);
  cfg.lambda2 = j.value("lambda2", cfg.lambda2);
  cfg.entropy_sign = j.value("entropy_sign", std::string("literal")) == "maximize"
                         ? EntropySign::Maximize
                         : EntropySign::Literal;
  cfg.prototype_debias = j.value("prototype_debias", cfg.prototype_debias);
  cfg.entropy_debias = j.value("entropy_debias", cfg.entropy_debias);
  cfg.sampler = j.value("sampler", std::string("uniform")) == "stratified"
                    ? SamplerKind::Stratified
                    : SamplerKind::Uniform;
  cfg.seed = j.value("seed", cfg.seed);
  cfg.early_stop_patience = j.value("early_stop_patience", cfg.early_stop_patience);
  cfg.sim_temperature = j.value("sim_temperature", cfg.sim_temperature);
  return cfg;
}

bool TrainData::has_dev() const {
  for (const auto& d : dev)
    if (!d.empty()) return true;
  return false;
}

std::vector<std::size_t> TrainData::train_sizes() const {
  std::vector<std::size_t> sizes;
  sizes.reserve(train.size());
  for (const auto& d : train) sizes.push_back(d.size());
  return sizes;
}

namespace {

std::unique_ptr<BatchSampler> make_sampler(const TrainData& data, const TrainConfig& cfg) {
  const std::vector<std::size_t> sizes = data.train_sizes();
  if (cfg.sampler == SamplerKind::Stratified)
    return std::make_unique<StratifiedSampler>(sizes, cfg.gamma, cfg.batch_size,
                                               Rng::derive(cfg.seed, 0xBA7C));
  return std::make_unique<UnionShuffleSampler>(sizes, cfg.batch_size,
                                               Rng::derive(cfg.seed, 0xBA7C));
}

double pooled_dev_accuracy(const MetaLearnerState& state, const TrainData& data) {
  std::vector<Example> pool;
  for (const auto& d : data.dev) pool.insert(pool.end(), d.begin(), d.end());
  if (pool.empty()) return -1.0;
  return evaluate_accuracy(state, pool);
}

std::string diagnostics_for(const std::vector<const Example*>& batch,
                            const std::map<std::string, Var>& bound) {
  std::ostringstream oss;
  oss << "batch uids:";
  for (const Example* ex : batch) oss << ' ' << ex->uid;
  oss << "; parameter norms:";
  for (const auto& [name, var] : bound) oss << ' ' << name << '=' << var.val().norm();
  return oss.str();
}

}  // namespace

EpochStats run_epoch(MetaLearnerState& state, BatchSampler& sampler,
                     const TrainData& data, const TrainConfig& cfg,
                     const TrainableMask& mask) {
  EpochStats stats;
  std::map<int, std::size_t> dataset_sizes;
  for (std::size_t m = 0; m < data.train.size(); ++m)
    dataset_sizes[static_cast<int>(m)] = data.train[m].size();

  LossConfig losscfg;
  losscfg.lambda1 = cfg.lambda1;
  losscfg.lambda2 = cfg.entropy_debias ? cfg.lambda2 : 0.0;
  losscfg.entropy_sign = cfg.entropy_sign;

  std::map<int, double> task_loss_sum;
  std::map<int, int> task_count;
  double grad_norm_sum = 0.0;

  const int n_batches = sampler.batches_per_epoch();
  for (int b = 0; b < n_batches; ++b) {
    const std::vector<BatchRef> refs = sampler.next_batch();
    if (refs.empty()) break;
    Tape tape;
    GraphCtx ctx(tape, state.params);
    std::vector<LossInstance> batch;
    std::vector<const Example*> batch_examples;
    batch.reserve(refs.size());
    for (const BatchRef& ref : refs) {
      const Example& ex =
          data.train[static_cast<std::size_t>(ref.task_id)][static_cast<std::size_t>(ref.index)];
      batch_examples.push_back(&ex);
      InstanceOutput out = forward_instance(ctx, state, ex);
      LossInstance inst;
      inst.yhat = out.yhat;
      inst.target = out.target;
      inst.score = cfg.prototype_debias ? state.scores.at(ex.uid) : 1.0;
      inst.task_id = ex.task_id;
      batch.push_back(inst);
      const double ce = -std::log(out.yhat.val()(0, out.target));
      task_loss_sum[ex.task_id] += inst.score * ce;
      task_count[ex.task_id] += 1;
    }
    // The L2 term covers the parameters participating in this batch, so
    // gradients to untouched encoders stay identically zero.
    std::vector<Var> reg;
    reg.reserve(ctx.bound().size());
    for (const auto& [name, var] : ctx.bound())
      if (mask.matches(name)) reg.push_back(var);
    Var loss = debiased_loss(ctx, batch, dataset_sizes, losscfg, reg);
    const double loss_value = loss.scalar();
    if (!std::isfinite(loss_value))
      throw std::runtime_error("run_epoch: non-finite loss; " +
                               diagnostics_for(batch_examples, ctx.bound()));
    tape.backward(loss);

    double gn2 = 0.0;
    for (const auto& [name, var] : ctx.bound())
      if (mask.matches(name)) gn2 += var.grad().squaredNorm();
    const double gn = std::sqrt(gn2);
    grad_norm_sum += gn;
    stats.grad_norm_max = std::max(stats.grad_norm_max, gn);

    state.opt.step(state.params, ctx.bound(), mask.fn());
    stats.mean_loss += loss_value;
    stats.batches += 1;
  }
  if (stats.batches > 0) {
    stats.mean_loss /= stats.batches;
    stats.grad_norm_mean = grad_norm_sum / stats.batches;
  }
  for (const auto& [task, sum] : task_loss_sum)
    stats.per_task_loss[task] = sum / task_count[task];
  return stats;
}

void recompute_scores(MetaLearnerState& state, const TrainData& data) {
  std::map<std::string, Eigen::RowVectorXd> embeddings;
  std::vector<TaskData> task_data;
  for (std::size_t m = 0; m < data.train.size(); ++m) {
    task_data.push_back({&state.task(static_cast<int>(m)), &data.train[m]});
    for (const Example& ex : data.train[m]) {
      Tape tape(/*grad=*/false);
      GraphCtx ctx(tape, state.params);
      embeddings[ex.uid] = forward_instance(ctx, state, ex).mask_out.val().row(0);
    }
  }
  const PrototypeStore store = compute_centroids(
      task_data, [&embeddings](const Example& ex) { return embeddings.at(ex.uid); },
      state.zeta, state.sim_temperature);
  const bool shared = state.mode == Mode::Similar;
  for (std::size_t m = 0; m < data.train.size(); ++m)
    for (const Example& ex : data.train[m])
      state.scores.scores[ex.uid] =
          prototype_score(embeddings.at(ex.uid), ex.task_id, ex.label, store, shared);
  state.scores.epoch += 1;
}

void train_loop(MetaLearnerState& state, const TrainData& data, const TrainConfig& cfg,
                const TrainableMask& mask, std::vector<EpochStats>* log) {
  cfg.validate();
  if (data.train.size() != state.tasks.size())
    throw std::invalid_argument("train: need one train set per task");
  for (std::size_t m = 0; m < data.train.size(); ++m)
    if (data.train[m].empty())
      throw std::runtime_error("train: task " + state.tasks[m].name + " has no training data");

  state.opt.set_lr(cfg.lr);
  if (cfg.epochs == 0) return;

  auto sampler = make_sampler(data, cfg);
  const bool early_stop = cfg.early_stop_patience > 0 && data.has_dev();
  double best_acc = -1.0;
  int since_best = 0;
  ParamMap best_params;
  ScoreTable best_scores;
  int best_epoch = 0;

  for (int e = 1; e <= cfg.epochs; ++e) {
    sampler->start_epoch(e);
    EpochStats stats = run_epoch(state, *sampler, data, cfg, mask);
    stats.epoch = e;
    if (cfg.prototype_debias) recompute_scores(state, data);
    if (data.has_dev()) stats.dev_accuracy = pooled_dev_accuracy(state, data);
    state.epoch = e;
    if (log) log->push_back(stats);

    if (early_stop) {
      if (stats.dev_accuracy > best_acc + 1e-12) {
        best_acc = stats.dev_accuracy;
        best_params = state.params;
        best_scores = state.scores;
        best_epoch = e;
        since_best = 0;
      } else if (++since_best >= cfg.early_stop_patience) {
        break;
      }
    }
  }
  if (early_stop && best_epoch > 0) {
    state.params = std::move(best_params);
    state.scores = std::move(best_scores);
    state.epoch = best_epoch;
  }
}

MetaLearnerState train_meta(const ModelConfig& mcfg, Vocab vocab,
                            std::vector<TaskSpec> tasks, std::vector<TaskGroup> groups,
                            const TrainData& data, const TrainConfig& cfg,
                            std::vector<EpochStats>* log) {
  cfg.validate();
  MetaLearnerState state = build_meta_state(cfg.mode, mcfg, std::move(vocab),
                                            std::move(tasks), std::move(groups), cfg.seed);
  state.zeta = cfg.zeta;
  state.sim_temperature = cfg.sim_temperature;
  state.train_config_echo = train_config_to_json(cfg).dump();
  state.opt = Adam({cfg.lr, 0.9, 0.999, 1e-8});

  std::vector<std::string> uids;
  for (const auto& d : data.train)
    for (const Example& ex : d) uids.push_back(ex.uid);
  state.scores.init_uniform(uids);

  TrainableMask all;
  train_loop(state, data, cfg, all, log);
  return state;
}

}  // namespace mpt
