#include "metaprompt/specialize.hpp"

#include <stdexcept>

namespace mpt {

namespace {

TrainConfig plain_train_config(const SpecializeConfig& cfg, Mode mode) {
  TrainConfig t;
  t.mode = mode;
  t.epochs = cfg.epochs;
  t.batch_size = cfg.batch_size;
  t.lr = cfg.lr;
  t.lambda1 = cfg.lambda1;
  t.lambda2 = 0.0;
  t.prototype_debias = false;  // plain loss: s == 1, no entropy term
  t.entropy_debias = false;
  t.seed = cfg.seed;
  t.early_stop_patience = cfg.early_stop_patience;
  return t;
}

// Re-targets batch refs from a single-dataset sampler onto a real task id.
class SingleTaskSampler : public BatchSampler {
 public:
  SingleTaskSampler(std::size_t n, int batch_size, std::uint64_t seed, int task_id)
      : inner_({n}, batch_size, seed), task_(task_id) {}
  void start_epoch(int epoch) override { inner_.start_epoch(epoch); }
  std::vector<BatchRef> next_batch() override {
    std::vector<BatchRef> b = inner_.next_batch();
    for (BatchRef& r : b) r.task_id = task_;
    return b;
  }
  int batches_per_epoch() const override { return inner_.batches_per_epoch(); }

 private:
  UnionShuffleSampler inner_;
  int task_;
};

// Plain-loss tuning on one task's data with early stopping on its dev set.
void tune_on_task(MetaLearnerState& st, int task_id, const std::vector<Example>& train,
                  const std::vector<Example>& dev, const TrainConfig& tcfg,
                  const TrainableMask& mask, std::vector<EpochStats>* log) {
  if (tcfg.epochs == 0) return;
  TrainData data;
  data.train.assign(st.tasks.size(), {});
  data.dev.assign(st.tasks.size(), {});
  data.train[static_cast<std::size_t>(task_id)] = train;
  data.dev[static_cast<std::size_t>(task_id)] = dev;

  SingleTaskSampler sampler(train.size(), tcfg.batch_size,
                            Rng::derive(tcfg.seed, 0xBA7C), task_id);
  const bool early = tcfg.early_stop_patience > 0 && !dev.empty();
  double best = -1.0;
  int since_best = 0;
  ParamMap best_params;
  int best_epoch = 0;
  for (int e = 1; e <= tcfg.epochs; ++e) {
    sampler.start_epoch(e);
    EpochStats stats = run_epoch(st, sampler, data, tcfg, mask);
    stats.epoch = e;
    if (!dev.empty()) stats.dev_accuracy = evaluate_accuracy(st, dev);
    st.epoch = e;
    if (log) log->push_back(stats);
    if (early) {
      if (stats.dev_accuracy > best + 1e-12) {
        best = stats.dev_accuracy;
        best_params = st.params;
        best_epoch = e;
        since_best = 0;
      } else if (++since_best >= tcfg.early_stop_patience) {
        break;
      }
    }
  }
  if (early && best_epoch > 0) {
    st.params = std::move(best_params);
    st.epoch = best_epoch;
  }
}

}  // namespace

SpecializedModel adapt(const MetaLearnerState& meta, int task_id,
                       const std::vector<Example>& train,
                       const std::vector<Example>& dev, const SpecializeConfig& cfg,
                       std::vector<EpochStats>* log) {
  const TaskSpec& task = meta.task(task_id);  // throws on unknown id
  if (train.empty()) throw std::runtime_error("adapt: no training data for " + task.name);

  SpecializedModel model;
  model.state = meta;
  model.target_task = task_id;
  model.state.opt = Adam({cfg.lr, 0.9, 0.999, 1e-8});

  model.trainable.all = false;
  model.trainable.prefixes = {"backbone."};
  if (meta.mode == Mode::Similar) {
    model.trainable.prefixes.push_back(trunk_prefix(PseudoOwner::task(task_id)));
    model.trainable.prefixes.push_back(pseudo_table_name(PseudoOwner::task(task_id)));
  } else {
    const int r = task.group_id;
    model.trainable.prefixes.push_back(trunk_prefix(PseudoOwner::type(r)));
    model.trainable.prefixes.push_back(pseudo_table_name(PseudoOwner::type(r)));
    model.trainable.prefixes.push_back(pseudo_table_name(PseudoOwner::task(task_id)));
    model.trainable.prefixes.push_back(gate_name(r));
  }
  if (cfg.unfreeze_universal) {
    model.trainable.prefixes.push_back(trunk_prefix(PseudoOwner::universal()));
    model.trainable.prefixes.push_back(pseudo_table_name(PseudoOwner::universal()));
    model.trainable.prefixes.push_back("fusion.");
  }

  tune_on_task(model.state, task_id, train, dev, plain_train_config(cfg, meta.mode),
               model.trainable, log);
  return model;
}

SpecializedModel generalize(const MetaLearnerState& meta, const TaskSpec& new_task,
                            const std::vector<std::string>& type_description,
                            const std::vector<Example>& train,
                            const std::vector<Example>& dev, const SpecializeConfig& cfg,
                            std::vector<EpochStats>* log) {
  if (train.empty()) throw std::runtime_error("generalize: no training data");
  if (type_description.empty())
    throw std::runtime_error("generalize: a type description is required");
  for (const TaskSpec& t : meta.tasks)
    if (t.name == new_task.name)
      throw std::runtime_error("generalize: task '" + new_task.name +
                               "' was seen during meta-training");
  for (const Example& ex : train)
    if (meta.scores.scores.count(ex.uid))
      throw std::runtime_error("generalize: training uid " + ex.uid +
                               " appeared during meta-training ('unseen' violated)");

  SpecializedModel model;
  model.state = meta;
  MetaLearnerState& st = model.state;
  st.path = ForwardPath::Solo;

  const int new_id = static_cast<int>(st.tasks.size());
  TaskSpec task = new_task;
  task.task_id = new_id;
  task.pseudo_count = st.cfg.pseudo_count;
  validate_task(task, st.vocab);

  std::vector<Example> tagged_train = train;
  std::vector<Example> tagged_dev = dev;
  for (Example& ex : tagged_train) ex.task_id = new_id;
  for (Example& ex : tagged_dev) ex.task_id = new_id;

  // Fresh template: type description tokens ahead of new pseudo tokens.
  // Built from the task's own settings so checkpoint reloads reconstruct it.
  st.tasks.push_back(task);
  st.task_templates.push_back(build_template(TemplateKind::Type, task.pseudo_count,
                                             task.split_point, PseudoOwner::task(new_id),
                                             type_description));

  // Initialize the new encoder from the universal one (or a matching type
  // encoder when requested and available).
  PseudoOwner source = PseudoOwner::universal();
  if (cfg.seed_from_group_encoder && new_task.group_id >= 0 &&
      st.params.count(pseudo_table_name(PseudoOwner::type(new_task.group_id))))
    source = PseudoOwner::type(new_task.group_id);
  const PseudoOwner dest = PseudoOwner::task(new_id);
  st.params[pseudo_table_name(dest)] = st.params.at(pseudo_table_name(source));
  const std::string src_prefix = trunk_prefix(source);
  const std::string dst_prefix = trunk_prefix(dest);
  for (const char* leafname :
       {"lstm.fw.W", "lstm.fw.U", "lstm.fw.b", "lstm.bw.W", "lstm.bw.U", "lstm.bw.b",
        "mlp.W1", "mlp.b1", "mlp.W2", "mlp.b2"})
    st.params[dst_prefix + leafname] = st.params.at(src_prefix + leafname);

  model.target_task = new_id;
  st.opt = Adam({cfg.lr, 0.9, 0.999, 1e-8});
  model.trainable.all = false;
  model.trainable.prefixes = {"backbone.", dst_prefix, pseudo_table_name(dest)};

  tune_on_task(st, new_id, tagged_train, tagged_dev, plain_train_config(cfg, st.mode),
               model.trainable, log);
  return model;
}

Example retarget(const SpecializedModel& model, const Example& ex) {
  const TaskSpec& task = model.task();
  if (!ex.label.empty() && task.label_index(ex.label) < 0)
    throw std::runtime_error("predict: example " + ex.uid + " label '" + ex.label +
                             "' does not conform to task " + task.name);
  Example e = ex;
  e.task_id = model.target_task;
  return e;
}

std::vector<Prediction> predict(const SpecializedModel& model,
                                const std::vector<Example>& examples) {
  std::vector<Prediction> out;
  out.reserve(examples.size());
  for (const Example& ex : examples) out.push_back(predict_one(model.state, retarget(model, ex)));
  return out;
}

double evaluate(const SpecializedModel& model, const std::vector<Example>& examples) {
  std::vector<Example> retargeted;
  retargeted.reserve(examples.size());
  for (const Example& ex : examples) retargeted.push_back(retarget(model, ex));
  return evaluate_accuracy(model.state, retargeted);
}

}  // namespace mpt
