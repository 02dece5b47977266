#include "metaprompt/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <stdexcept>

namespace mpt {

using nlohmann::json;

void ExperimentConfig::validate() const {
  if (seeds.empty()) throw std::invalid_argument("experiment: at least one seed required");
  if (k_shot < 0) throw std::invalid_argument("experiment: K must be >= 0");
  if (label_noise < 0.0 || label_noise >= 1.0)
    throw std::invalid_argument("experiment: label noise must lie in [0, 1)");
  if (protocol != "transfer" && protocol != "generalize" && protocol != "ablation")
    throw std::invalid_argument("experiment: unknown protocol '" + protocol + "'");
  if (!suite_dir.empty() && !std::filesystem::exists(suite_dir + "/suite.json"))
    throw std::invalid_argument("experiment: suite dir has no suite.json: " + suite_dir);
  train.validate();
}

ExperimentConfig default_experiment_config() {
  ExperimentConfig cfg;
  cfg.model.backbone.dim = 64;
  cfg.model.backbone.layers = 2;
  cfg.model.backbone.heads = 4;
  cfg.model.backbone.max_len = 64;
  cfg.train.epochs = 20;
  cfg.train.batch_size = 6;
  cfg.train.lr = 1e-3;
  cfg.train.early_stop_patience = 5;
  cfg.specialize.epochs = 15;
  cfg.specialize.batch_size = 6;
  cfg.specialize.lr = 1e-3;
  cfg.specialize.early_stop_patience = 5;
  return cfg;
}

ExperimentConfig shipped_similar_experiment() {
  ExperimentConfig cfg = default_experiment_config();
  cfg.synthetic = similar_suite_spec();
  cfg.synthetic.filler_vocab = 250;
  cfg.synthetic.sentence_len_lo = 3;
  cfg.synthetic.sentence_len_hi = 5;
  for (SyntheticGroupSpec& g : cfg.synthetic.groups) {
    g.markers_per_class = 6;
    g.fillers_per_task = 200;
  }
  cfg.suite_seed = 7;
  cfg.mode = Mode::Similar;
  cfg.train.epochs = 25;
  cfg.train.early_stop_patience = 6;
  cfg.train.lambda1 = 1e-4;
  cfg.train.lambda2 = 0.3;
  cfg.train.entropy_sign = EntropySign::Maximize;
  cfg.specialize.lambda1 = 1e-4;
  cfg.single_task_epochs = 40;
  cfg.label_noise = 0.15;
  return cfg;
}

ExperimentConfig shipped_distant_experiment() {
  ExperimentConfig cfg = shipped_similar_experiment();
  cfg.synthetic = distant_suite_spec();
  cfg.synthetic.filler_vocab = 250;
  cfg.synthetic.sentence_len_lo = 3;
  cfg.synthetic.sentence_len_hi = 5;
  for (SyntheticGroupSpec& g : cfg.synthetic.groups) {
    g.markers_per_class = 6;
    g.fillers_per_task = 200;
  }
  cfg.mode = Mode::Distant;
  return cfg;
}

json experiment_config_to_json(const ExperimentConfig& cfg) {
  json j;
  j["suite_dir"] = cfg.suite_dir;
  j["suite_seed"] = cfg.suite_seed;
  {
    json s;
    s["name"] = cfg.synthetic.name;
    s["filler_vocab"] = cfg.synthetic.filler_vocab;
    s["label_words_per_class"] = cfg.synthetic.label_words_per_class;
    s["pool_per_class"] = cfg.synthetic.pool_per_class;
    s["test_per_class"] = cfg.synthetic.test_per_class;
    s["sentence_len"] = {cfg.synthetic.sentence_len_lo, cfg.synthetic.sentence_len_hi};
    s["pseudo_count"] = cfg.synthetic.pseudo_count;
    s["split_point"] = cfg.synthetic.split_point;
    json groups = json::array();
    for (const SyntheticGroupSpec& g : cfg.synthetic.groups)
      groups.push_back({{"name", g.name},
                        {"description", g.description},
                        {"labels", g.labels},
                        {"tasks", g.tasks},
                        {"pair", g.pair},
                        {"markers_per_class", g.markers_per_class},
                        {"fillers_per_task", g.fillers_per_task}});
    s["groups"] = std::move(groups);
    j["synthetic"] = std::move(s);
  }
  j["mode"] = mode_name(cfg.mode);
  {
    json m;
    m["dim"] = cfg.model.backbone.dim;
    m["layers"] = cfg.model.backbone.layers;
    m["heads"] = cfg.model.backbone.heads;
    m["max_len"] = cfg.model.backbone.max_len;
    m["ffn_mult"] = cfg.model.backbone.ffn_mult;
    m["pseudo_count"] = cfg.model.pseudo_count;
    m["split_point"] = cfg.model.split_point;
    m["fusion"] =
        cfg.model.fusion.kind == FusionKind::PooledQuery ? "pooled_query" : "full_attention";
    m["vector_gate"] = cfg.model.gate.vector_gate;
    j["model"] = std::move(m);
  }
  {
    json t = train_config_to_json(cfg.train);
    t.erase("mode");  // carried at the top level
    t.erase("seed");  // carried by the seeds list
    j["train"] = std::move(t);
  }
  {
    json t;
    t["epochs"] = cfg.specialize.epochs;
    t["batch_size"] = cfg.specialize.batch_size;
    t["lr"] = cfg.specialize.lr;
    t["lambda1"] = cfg.specialize.lambda1;
    t["early_stop_patience"] = cfg.specialize.early_stop_patience;
    t["unfreeze_universal"] = cfg.specialize.unfreeze_universal;
    t["seed_from_group_encoder"] = cfg.specialize.seed_from_group_encoder;
    j["specialize"] = std::move(t);
  }
  j["single_task_epochs"] = cfg.single_task_epochs;
  j["seeds"] = cfg.seeds;
  j["k_shot"] = cfg.k_shot;
  j["label_noise"] = cfg.label_noise;
  j["protocol"] = cfg.protocol;
  j["out_dir"] = cfg.out_dir;
  return j;
}

ExperimentConfig experiment_config_from_json(const json& j) {
  ExperimentConfig cfg = default_experiment_config();
  cfg.suite_dir = j.value("suite_dir", cfg.suite_dir);
  cfg.suite_seed = j.value("suite_seed", cfg.suite_seed);
  if (j.contains("synthetic")) {
    const json& s = j.at("synthetic");
    SyntheticSuiteSpec spec;
    spec.name = s.value("name", spec.name);
    spec.filler_vocab = s.value("filler_vocab", spec.filler_vocab);
    spec.label_words_per_class = s.value("label_words_per_class", spec.label_words_per_class);
    spec.pool_per_class = s.value("pool_per_class", spec.pool_per_class);
    spec.test_per_class = s.value("test_per_class", spec.test_per_class);
    if (s.contains("sentence_len")) {
      spec.sentence_len_lo = s.at("sentence_len").at(0).get<int>();
      spec.sentence_len_hi = s.at("sentence_len").at(1).get<int>();
    }
    spec.pseudo_count = s.value("pseudo_count", spec.pseudo_count);
    spec.split_point = s.value("split_point", spec.split_point);
    if (s.contains("groups")) {
      spec.groups.clear();
      for (const json& gj : s.at("groups")) {
        SyntheticGroupSpec g;
        g.name = gj.at("name").get<std::string>();
        g.description = gj.at("description").get<std::string>();
        g.labels = gj.at("labels").get<std::vector<std::string>>();
        g.tasks = gj.at("tasks").get<std::vector<std::string>>();
        g.pair = gj.value("pair", false);
        g.markers_per_class = gj.value("markers_per_class", g.markers_per_class);
        g.fillers_per_task = gj.value("fillers_per_task", g.fillers_per_task);
        spec.groups.push_back(std::move(g));
      }
    }
    cfg.synthetic = std::move(spec);
  }
  cfg.mode = mode_from_name(j.value("mode", mode_name(cfg.mode)));
  if (j.contains("model")) {
    const json& m = j.at("model");
    cfg.model.backbone.dim = m.value("dim", cfg.model.backbone.dim);
    cfg.model.backbone.layers = m.value("layers", cfg.model.backbone.layers);
    cfg.model.backbone.heads = m.value("heads", cfg.model.backbone.heads);
    cfg.model.backbone.max_len = m.value("max_len", cfg.model.backbone.max_len);
    cfg.model.backbone.ffn_mult = m.value("ffn_mult", cfg.model.backbone.ffn_mult);
    cfg.model.pseudo_count = m.value("pseudo_count", cfg.model.pseudo_count);
    cfg.model.split_point = m.value("split_point", cfg.model.split_point);
    cfg.model.fusion.kind = m.value("fusion", std::string("pooled_query")) == "full_attention"
                                ? FusionKind::FullAttention
                                : FusionKind::PooledQuery;
    cfg.model.gate.vector_gate = m.value("vector_gate", cfg.model.gate.vector_gate);
  }
  if (j.contains("train")) {
    nlohmann::json t = train_config_to_json(cfg.train);  // defaults
    t.update(j.at("train"));
    t["mode"] = mode_name(cfg.mode);
    cfg.train = train_config_from_json(t);
  }
  if (j.contains("specialize")) {
    const json& t = j.at("specialize");
    cfg.specialize.epochs = t.value("epochs", cfg.specialize.epochs);
    cfg.specialize.batch_size = t.value("batch_size", cfg.specialize.batch_size);
    cfg.specialize.lr = t.value("lr", cfg.specialize.lr);
    cfg.specialize.lambda1 = t.value("lambda1", cfg.specialize.lambda1);
    cfg.specialize.early_stop_patience = t.value("early_stop_patience", cfg.specialize.early_stop_patience);
    cfg.specialize.unfreeze_universal = t.value("unfreeze_universal", cfg.specialize.unfreeze_universal);
    cfg.specialize.seed_from_group_encoder =
        t.value("seed_from_group_encoder", cfg.specialize.seed_from_group_encoder);
  }
  cfg.single_task_epochs = j.value("single_task_epochs", cfg.single_task_epochs);
  cfg.seeds = j.value("seeds", cfg.seeds);
  cfg.k_shot = j.value("k_shot", cfg.k_shot);
  cfg.label_noise = j.value("label_noise", cfg.label_noise);
  cfg.protocol = j.value("protocol", cfg.protocol);
  cfg.out_dir = j.value("out_dir", cfg.out_dir);
  return cfg;
}

double ArmResult::task_mean(const std::string& task) const {
  const auto it = dev_acc.find(task);
  if (it == dev_acc.end() || it->second.empty())
    throw std::out_of_range("no results for task " + task);
  double s = 0.0;
  for (double a : it->second) s += a;
  return s / static_cast<double>(it->second.size());
}

double ArmResult::mean() const {
  double s = 0.0;
  int n = 0;
  for (const auto& [task, accs] : dev_acc) {
    s += task_mean(task);
    ++n;
  }
  if (n == 0) throw std::runtime_error("empty arm");
  return s / n;
}

double ArmResult::stddev() const {
  std::vector<double> all;
  for (const auto& [task, accs] : dev_acc) all.insert(all.end(), accs.begin(), accs.end());
  if (all.size() < 2) return 0.0;
  double m = 0.0;
  for (double a : all) m += a;
  m /= static_cast<double>(all.size());
  double v = 0.0;
  for (double a : all) v += (a - m) * (a - m);
  return std::sqrt(v / static_cast<double>(all.size() - 1));
}

json RunReport::to_json() const {
  json j;
  j["protocol"] = protocol;
  j["seeds"] = seeds;
  j["tasks"] = task_names;
  json arms_j;
  for (const auto& [name, arm] : arms) {
    json a;
    a["dev_accuracy"] = arm.dev_acc;
    if (!arm.dev_acc_permap.empty()) a["dev_accuracy_per_mapping"] = arm.dev_acc_permap;
    json means;
    for (const auto& [task, accs] : arm.dev_acc) means[task] = arm.task_mean(task);
    a["task_means"] = std::move(means);
    a["mean"] = arm.mean();
    a["stddev"] = arm.stddev();
    arms_j[name] = std::move(a);
  }
  j["arms"] = std::move(arms_j);
  j["config"] = config_echo;
  j["checkpoints"] = checkpoint_paths;
  j["wall_clock_sec"] = wall_clock_sec;
  return j;
}

void RunReport::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write report: " + path);
  out << to_json().dump(2) << '\n';
}

std::vector<FewShotSplit> sample_suite_splits(const SyntheticSuite& suite, int k,
                                              std::uint64_t seed, double label_noise) {
  std::vector<FewShotSplit> splits;
  splits.reserve(suite.tasks.size());
  for (std::size_t m = 0; m < suite.tasks.size(); ++m) {
    FewShotSplit split =
        few_shot_sample(suite.pools[m], k, Rng::derive(seed, 0xD1F + m));
    if (label_noise > 0.0)
      apply_label_noise(split.train, suite.tasks[m], label_noise,
                        Rng::derive(seed, 0x90B + m));
    splits.push_back(std::move(split));
  }
  return splits;
}

double evaluate(const MetaLearnerState& model, const std::vector<Example>& test_set) {
  return evaluate_accuracy(model, test_set);
}

SyntheticSuite restrict_suite(const SyntheticSuite& suite,
                              const std::vector<std::string>& task_names) {
  SyntheticSuite sub;
  sub.name = suite.name;
  sub.vocab = suite.vocab;
  std::map<int, int> group_remap;
  for (const std::string& name : task_names) {
    int orig = -1;
    for (const TaskSpec& t : suite.tasks)
      if (t.name == name) orig = t.task_id;
    if (orig < 0) throw std::runtime_error("restrict_suite: no task named '" + name + "'");
    const TaskSpec& t = suite.tasks[static_cast<std::size_t>(orig)];
    if (!group_remap.count(t.group_id)) {
      const int gid = static_cast<int>(group_remap.size());
      group_remap[t.group_id] = gid;
      TaskGroup g = suite.groups[static_cast<std::size_t>(t.group_id)];
      g.group_id = gid;
      g.member_task_ids.clear();
      sub.groups.push_back(std::move(g));
    }
    TaskSpec nt = t;
    nt.task_id = static_cast<int>(sub.tasks.size());
    nt.group_id = group_remap[t.group_id];
    sub.groups[static_cast<std::size_t>(nt.group_id)].member_task_ids.push_back(nt.task_id);
    sub.pools.push_back(suite.pools[static_cast<std::size_t>(orig)]);
    sub.tests.push_back(suite.tests[static_cast<std::size_t>(orig)]);
    for (Example& ex : sub.pools.back()) ex.task_id = nt.task_id;
    for (Example& ex : sub.tests.back()) ex.task_id = nt.task_id;
    sub.tasks.push_back(std::move(nt));
  }
  return sub;
}

namespace {

// A dense re-indexed slice of a suite (tasks keep their name and data).
struct SubSuite {
  Vocab vocab;
  std::vector<TaskSpec> tasks;
  std::vector<TaskGroup> groups;
  std::vector<int> orig_task_ids;
};

SubSuite carve(const SyntheticSuite& suite, const std::vector<int>& task_ids) {
  SubSuite sub;
  sub.vocab = suite.vocab;
  std::map<int, int> group_remap;
  for (int orig : task_ids) {
    const TaskSpec& t = suite.tasks[static_cast<std::size_t>(orig)];
    if (!group_remap.count(t.group_id)) {
      const int new_gid = static_cast<int>(group_remap.size());
      group_remap[t.group_id] = new_gid;
      TaskGroup g = suite.groups[static_cast<std::size_t>(t.group_id)];
      g.group_id = new_gid;
      g.member_task_ids.clear();
      sub.groups.push_back(std::move(g));
    }
    TaskSpec nt = t;
    nt.task_id = static_cast<int>(sub.tasks.size());
    nt.group_id = group_remap[t.group_id];
    sub.groups[static_cast<std::size_t>(nt.group_id)].member_task_ids.push_back(nt.task_id);
    sub.tasks.push_back(std::move(nt));
    sub.orig_task_ids.push_back(orig);
  }
  return sub;
}

TrainData make_train_data(const SubSuite& sub, const std::vector<FewShotSplit>& splits) {
  TrainData data;
  data.train.resize(sub.tasks.size());
  data.dev.resize(sub.tasks.size());
  for (std::size_t i = 0; i < sub.tasks.size(); ++i) {
    const FewShotSplit& split = splits[static_cast<std::size_t>(sub.orig_task_ids[i])];
    data.train[i] = split.train;
    data.dev[i] = split.dev;
    for (Example& ex : data.train[i]) ex.task_id = static_cast<int>(i);
    for (Example& ex : data.dev[i]) ex.task_id = static_cast<int>(i);
  }
  return data;
}

TrainConfig seeded_train_config(const ExperimentConfig& cfg, std::uint64_t seed) {
  TrainConfig t = cfg.train;
  t.mode = cfg.mode;
  t.seed = seed;
  return t;
}

SpecializeConfig seeded_specialize_config(const ExperimentConfig& cfg, std::uint64_t seed) {
  SpecializeConfig t = cfg.specialize;
  t.seed = seed;
  return t;
}

double per_mapping_mean_accuracy(const MetaLearnerState& state,
                                 const std::vector<Example>& dev) {
  if (dev.empty()) return -1.0;
  int k = 0;
  for (const auto& [label, words] :
       state.task(dev.front().task_id).verbalizer) {
    k = static_cast<int>(words.size());
    break;
  }
  double sum = 0.0;
  for (int j = 0; j < k; ++j)
    sum += evaluate_accuracy_single_mapping(state, dev, j);
  return k > 0 ? sum / k : -1.0;
}

std::vector<int> all_task_ids(const SyntheticSuite& suite) {
  std::vector<int> ids(suite.tasks.size());
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<int>(i);
  return ids;
}

}  // namespace

RunReport protocol_transfer(const SyntheticSuite& suite, const ExperimentConfig& cfg) {
  RunReport report;
  report.protocol = "transfer";
  report.seeds = cfg.seeds;
  for (const TaskSpec& t : suite.tasks) report.task_names.push_back(t.name);

  for (std::uint64_t seed : cfg.seeds) {
    const std::vector<FewShotSplit> splits =
        sample_suite_splits(suite, cfg.k_shot, seed, cfg.label_noise);
    SubSuite sub = carve(suite, all_task_ids(suite));
    TrainData data = make_train_data(sub, splits);

    MetaLearnerState meta = train_meta(cfg.model, sub.vocab, sub.tasks, sub.groups, data,
                                       seeded_train_config(cfg, seed));
    if (!cfg.out_dir.empty()) {
      std::filesystem::create_directories(cfg.out_dir);
      const std::string path =
          cfg.out_dir + "/meta_seed" + std::to_string(seed) + ".json";
      save_checkpoint(path, meta);
      report.checkpoint_paths.push_back(path);
    }

    for (std::size_t m = 0; m < sub.tasks.size(); ++m) {
      const std::string& name = sub.tasks[m].name;
      report.arms["meta_only"].dev_acc[name].push_back(
          evaluate_accuracy(meta, data.dev[m]));
      SpecializedModel spec = adapt(meta, static_cast<int>(m), data.train[m], data.dev[m],
                                    seeded_specialize_config(cfg, seed));
      report.arms["meta_adapted"].dev_acc[name].push_back(evaluate(spec, data.dev[m]));
      report.arms["meta_adapted"].dev_acc_permap[name].push_back(
          per_mapping_mean_accuracy(spec.state, data.dev[m]));
    }

    for (std::size_t m = 0; m < suite.tasks.size(); ++m) {
      SubSuite sub1 = carve(suite, {static_cast<int>(m)});
      TrainData data1 = make_train_data(sub1, splits);
      TrainConfig t1 = seeded_train_config(cfg, seed);
      t1.epochs = cfg.single_task_epochs;
      t1.prototype_debias = false;
      t1.entropy_debias = false;
      MetaLearnerState solo =
          train_meta(cfg.model, sub1.vocab, sub1.tasks, sub1.groups, data1, t1);
      report.arms["single"].dev_acc[suite.tasks[m].name].push_back(
          evaluate_accuracy(solo, data1.dev[0]));
    }
  }
  return report;
}

RunReport protocol_generalize(const SyntheticSuite& suite, const ExperimentConfig& cfg) {
  RunReport report;
  report.protocol = "generalize";
  report.seeds = cfg.seeds;
  for (const TaskSpec& t : suite.tasks) report.task_names.push_back(t.name);

  for (std::size_t held = 0; held < suite.tasks.size(); ++held) {
    std::vector<int> rest;
    for (std::size_t m = 0; m < suite.tasks.size(); ++m)
      if (m != held) rest.push_back(static_cast<int>(m));
    const TaskSpec& held_task = suite.tasks[held];
    const std::vector<std::string>& desc =
        suite.groups[static_cast<std::size_t>(held_task.group_id)].description_tokens;

    for (std::uint64_t seed : cfg.seeds) {
      const std::vector<FewShotSplit> splits =
          sample_suite_splits(suite, cfg.k_shot, seed, cfg.label_noise);
      SubSuite sub = carve(suite, rest);
      TrainData data = make_train_data(sub, splits);
      MetaLearnerState meta = train_meta(cfg.model, sub.vocab, sub.tasks, sub.groups, data,
                                         seeded_train_config(cfg, seed));

      TaskSpec new_task = held_task;
      new_task.group_id = -1;  // fresh task: no roster group
      const FewShotSplit& held_split = splits[held];

      SpecializeConfig gen_cfg = seeded_specialize_config(cfg, seed);
      gen_cfg.epochs = cfg.single_task_epochs;  // same budget for both arms
      SpecializedModel gen =
          generalize(meta, new_task, desc, held_split.train, held_split.dev, gen_cfg);
      report.arms["generalize"].dev_acc[held_task.name].push_back(
          evaluate(gen, held_split.dev));

      MetaLearnerState fresh =
          build_meta_state(cfg.mode, cfg.model, sub.vocab, sub.tasks, sub.groups,
                           Rng::derive(seed, 0xF2E58));
      SpecializedModel scratch =
          generalize(fresh, new_task, desc, held_split.train, held_split.dev, gen_cfg);
      report.arms["scratch"].dev_acc[held_task.name].push_back(
          evaluate(scratch, held_split.dev));
    }
  }
  return report;
}

RunReport protocol_ablation(const SyntheticSuite& suite, const ExperimentConfig& cfg) {
  RunReport report;
  report.protocol = "ablation";
  report.seeds = cfg.seeds;
  for (const TaskSpec& t : suite.tasks) report.task_names.push_back(t.name);

  struct Variant {
    const char* name;
    bool prototype;
    bool entropy;
  };
  const Variant variants[] = {{"full", true, true},
                              {"no_prototype", false, true},
                              {"no_entropy", true, false},
                              {"none", false, false}};

  for (std::uint64_t seed : cfg.seeds) {
    const std::vector<FewShotSplit> splits =
        sample_suite_splits(suite, cfg.k_shot, seed, cfg.label_noise);
    SubSuite sub = carve(suite, all_task_ids(suite));
    TrainData data = make_train_data(sub, splits);

    for (const Variant& v : variants) {
      TrainConfig t = seeded_train_config(cfg, seed);
      t.prototype_debias = v.prototype;
      t.entropy_debias = v.entropy;
      MetaLearnerState meta =
          train_meta(cfg.model, sub.vocab, sub.tasks, sub.groups, data, t);
      for (std::size_t m = 0; m < sub.tasks.size(); ++m) {
        SpecializedModel spec = adapt(meta, static_cast<int>(m), data.train[m],
                                      data.dev[m], seeded_specialize_config(cfg, seed));
        report.arms[v.name].dev_acc[sub.tasks[m].name].push_back(
            evaluate(spec, data.dev[m]));
      }
    }
  }
  return report;
}

RunReport run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  const auto start = std::chrono::steady_clock::now();
  SyntheticSuite suite = cfg.suite_dir.empty()
                             ? build_synthetic_suite(cfg.synthetic, cfg.suite_seed)
                             : load_suite(cfg.suite_dir);

  RunReport report;
  if (cfg.protocol == "transfer") report = protocol_transfer(suite, cfg);
  else if (cfg.protocol == "generalize") report = protocol_generalize(suite, cfg);
  else report = protocol_ablation(suite, cfg);

  report.config_echo = experiment_config_to_json(cfg);
  report.wall_clock_sec =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (!cfg.out_dir.empty()) {
    std::filesystem::create_directories(cfg.out_dir);
    report.save(cfg.out_dir + "/report.json");
  }
  return report;
}

std::vector<CaseRow> report_cases(const MetaLearnerState& state,
                                  const std::vector<std::vector<Example>>& datasets,
                                  int top_n) {
  if (state.scores.scores.empty())
    throw std::runtime_error("report_cases: score table is empty");
  if (top_n < 1) throw std::invalid_argument("report_cases: top_n must be >= 1");
  std::vector<CaseRow> rows;
  for (std::size_t m = 0; m < datasets.size(); ++m) {
    std::vector<const Example*> ranked;
    for (const Example& ex : datasets[m])
      if (state.scores.scores.count(ex.uid)) ranked.push_back(&ex);
    if (ranked.empty()) continue;
    std::sort(ranked.begin(), ranked.end(), [&](const Example* a, const Example* b) {
      const double sa = state.scores.at(a->uid), sb = state.scores.at(b->uid);
      return sa != sb ? sa > sb : a->uid < b->uid;
    });
    int n = top_n;
    if (n > static_cast<int>(ranked.size())) {
      std::cerr << "report_cases: top_n " << top_n << " clamped to " << ranked.size()
                << " for task " << state.task(static_cast<int>(m)).name << "\n";
      n = static_cast<int>(ranked.size());
    }
    auto text_of = [](const Example& ex) {
      std::string s;
      for (std::size_t i = 0; i < ex.text_a.size(); ++i) {
        if (i) s += ' ';
        s += ex.text_a[i];
      }
      if (!ex.text_b.empty()) {
        s += " ||";
        for (const std::string& t : ex.text_b) s += ' ' + t;
      }
      return s;
    };
    const std::string task_name = state.task(static_cast<int>(m)).name;
    for (int i = 0; i < n; ++i)
      rows.push_back({task_name, "high", ranked[static_cast<std::size_t>(i)]->uid,
                      state.scores.at(ranked[static_cast<std::size_t>(i)]->uid),
                      ranked[static_cast<std::size_t>(i)]->label,
                      text_of(*ranked[static_cast<std::size_t>(i)])});
    for (int i = 0; i < n; ++i) {
      const Example* ex = ranked[ranked.size() - 1 - static_cast<std::size_t>(i)];
      rows.push_back({task_name, "low", ex->uid, state.scores.at(ex->uid), ex->label,
                      text_of(*ex)});
    }
  }
  return rows;
}

void write_cases_tsv(const std::string& path, const std::vector<CaseRow>& rows) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write case report: " + path);
  out << "task\tkind\tuid\tscore\tlabel\ttext\n";
  out.precision(17);
  for (const CaseRow& r : rows)
    out << r.task << '\t' << r.kind << '\t' << r.uid << '\t' << r.score << '\t' << r.label
        << '\t' << r.text << '\n';
}

void emit_embeddings(const MetaLearnerState& state,
                     const std::vector<std::vector<Example>>& datasets,
                     const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write embeddings file: " + path);
  out << "uid\ttask\tlabel\tembedding\n";
  char buf[32];
  for (std::size_t m = 0; m < datasets.size(); ++m) {
    const std::string task_name = state.task(static_cast<int>(m)).name;
    for (const Example& ex : datasets[m]) {
      const Prediction p = predict_one(state, ex);
      out << ex.uid << '\t' << task_name << '\t' << ex.label << '\t';
      for (Eigen::Index i = 0; i < p.embedding.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%.17g", p.embedding(i));
        if (i) out << ',';
        out << buf;
      }
      out << '\n';
    }
  }
}

}  // namespace mpt
