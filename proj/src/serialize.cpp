#include "metaprompt/serialize.hpp"

#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <stdexcept>

namespace mpt {

namespace {

using nlohmann::json;

json mat_to_json(const Mat& m) {
  json j;
  j["rows"] = m.rows();
  j["cols"] = m.cols();
  std::vector<double> data(static_cast<std::size_t>(m.size()));
  for (Eigen::Index i = 0; i < m.size(); ++i) data[static_cast<std::size_t>(i)] = m(i);
  j["data"] = std::move(data);
  return j;
}

Mat mat_from_json(const json& j) {
  const Eigen::Index rows = j.at("rows").get<Eigen::Index>();
  const Eigen::Index cols = j.at("cols").get<Eigen::Index>();
  const std::vector<double> data = j.at("data").get<std::vector<double>>();
  if (static_cast<Eigen::Index>(data.size()) != rows * cols)
    throw std::runtime_error("checkpoint: tensor size mismatch");
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = data[static_cast<std::size_t>(i)];
  return m;
}

json task_to_json(const TaskSpec& t) {
  json j;
  j["task_id"] = t.task_id;
  j["name"] = t.name;
  j["group_id"] = t.group_id;
  j["labels"] = t.label_set;
  j["verbalizer"] = t.verbalizer;
  j["pseudo_count"] = t.pseudo_count;
  j["split_point"] = t.split_point;
  j["pair"] = t.pair;
  return j;
}

TaskSpec task_from_json(const json& j) {
  TaskSpec t;
  t.task_id = j.at("task_id").get<int>();
  t.name = j.at("name").get<std::string>();
  t.group_id = j.at("group_id").get<int>();
  t.label_set = j.at("labels").get<std::vector<std::string>>();
  t.verbalizer = j.at("verbalizer").get<std::map<std::string, std::vector<int>>>();
  t.pseudo_count = j.at("pseudo_count").get<int>();
  t.split_point = j.at("split_point").get<int>();
  t.pair = j.at("pair").get<bool>();
  return t;
}

json group_to_json(const TaskGroup& g) {
  json j;
  j["group_id"] = g.group_id;
  j["name"] = g.name;
  j["description_tokens"] = g.description_tokens;
  j["member_task_ids"] = g.member_task_ids;
  return j;
}

TaskGroup group_from_json(const json& j) {
  TaskGroup g;
  g.group_id = j.at("group_id").get<int>();
  g.name = j.at("name").get<std::string>();
  g.description_tokens = j.at("description_tokens").get<std::vector<std::string>>();
  g.member_task_ids = j.at("member_task_ids").get<std::vector<int>>();
  return g;
}

json model_config_to_json(const ModelConfig& c) {
  json j;
  j["backbone"] = {{"kind", c.backbone.kind},         {"vocab_size", c.backbone.vocab_size},
                   {"dim", c.backbone.dim},           {"layers", c.backbone.layers},
                   {"heads", c.backbone.heads},       {"max_len", c.backbone.max_len},
                   {"ffn_mult", c.backbone.ffn_mult}, {"mask_token_id", c.backbone.mask_token_id}};
  j["pseudo_count"] = c.pseudo_count;
  j["split_point"] = c.split_point;
  j["fusion"] = c.fusion.kind == FusionKind::PooledQuery ? "pooled_query" : "full_attention";
  j["vector_gate"] = c.gate.vector_gate;
  return j;
}

ModelConfig model_config_from_json(const json& j) {
  ModelConfig c;
  const json& b = j.at("backbone");
  c.backbone.kind = b.at("kind").get<std::string>();
  c.backbone.vocab_size = b.at("vocab_size").get<int>();
  c.backbone.dim = b.at("dim").get<int>();
  c.backbone.layers = b.at("layers").get<int>();
  c.backbone.heads = b.at("heads").get<int>();
  c.backbone.max_len = b.at("max_len").get<int>();
  c.backbone.ffn_mult = b.at("ffn_mult").get<int>();
  c.backbone.mask_token_id = b.at("mask_token_id").get<int>();
  c.pseudo_count = j.at("pseudo_count").get<int>();
  c.split_point = j.at("split_point").get<int>();
  c.fusion.kind = j.at("fusion").get<std::string>() == "full_attention"
                      ? FusionKind::FullAttention
                      : FusionKind::PooledQuery;
  c.gate.vector_gate = j.at("vector_gate").get<bool>();
  return c;
}

json template_to_json(const PromptTemplate& t) {
  json j;
  switch (t.kind) {
    case TemplateKind::Task: j["kind"] = "task"; break;
    case TemplateKind::Universal: j["kind"] = "universal"; break;
    case TemplateKind::Type: j["kind"] = "type"; break;
  }
  j["description_tokens"] = t.description_tokens;
  return j;
}

}  // namespace

void save_checkpoint(const std::string& path, const MetaLearnerState& state,
                     const std::string& kind, int target_task,
                     const TrainableMask& trainable) {
  json j;
  j["version"] = kCheckpointVersion;
  j["kind"] = kind;
  j["mode"] = mode_name(state.mode);
  j["path"] = state.path == ForwardPath::Meta ? "meta" : "solo";
  j["epoch"] = state.epoch;
  j["zeta"] = state.zeta;
  j["sim_temperature"] = state.sim_temperature;
  j["target_task"] = target_task;
  j["trainable"] = {{"all", trainable.all}, {"prefixes", trainable.prefixes}};
  j["config"] = model_config_to_json(state.cfg);
  j["train_config"] = state.train_config_echo.empty()
                          ? json()
                          : json::parse(state.train_config_echo);
  j["vocab"] = state.vocab.tokens();

  json tasks = json::array();
  json task_templates = json::array();
  for (std::size_t i = 0; i < state.tasks.size(); ++i) {
    tasks.push_back(task_to_json(state.tasks[i]));
    task_templates.push_back(template_to_json(state.task_templates[i]));
  }
  j["tasks"] = std::move(tasks);
  j["task_templates"] = std::move(task_templates);
  json groups = json::array();
  for (const TaskGroup& g : state.groups) groups.push_back(group_to_json(g));
  j["groups"] = std::move(groups);

  j["scores"] = {{"epoch", state.scores.epoch}, {"values", state.scores.scores}};

  json params;
  for (const auto& [name, m] : state.params) params[name] = mat_to_json(m);
  j["params"] = std::move(params);

  json opt;
  opt["lr"] = state.opt.config().lr;
  json moments;
  for (const auto& [name, st] : state.opt.state())
    moments[name] = {{"t", st.t}, {"m", mat_to_json(st.m)}, {"v", mat_to_json(st.v)}};
  opt["moments"] = std::move(moments);
  j["opt"] = std::move(opt);

  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
  out << j.dump();
}

void save_checkpoint(const std::string& path, const SpecializedModel& model) {
  save_checkpoint(path, model.state, "specialized", model.target_task, model.trainable);
}

SpecializedModel LoadedCheckpoint::as_specialized() const {
  if (kind != "specialized")
    throw std::runtime_error("checkpoint is not a specialized model");
  SpecializedModel m;
  m.state = state;
  m.target_task = target_task;
  m.trainable = trainable;
  return m;
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  json j = json::parse(in);
  if (j.at("version").get<int>() != kCheckpointVersion)
    throw std::runtime_error("checkpoint: unsupported version");

  LoadedCheckpoint loaded;
  loaded.kind = j.at("kind").get<std::string>();
  loaded.target_task = j.at("target_task").get<int>();
  loaded.trainable.all = j.at("trainable").at("all").get<bool>();
  loaded.trainable.prefixes =
      j.at("trainable").at("prefixes").get<std::vector<std::string>>();

  MetaLearnerState& st = loaded.state;
  st.mode = mode_from_name(j.at("mode").get<std::string>());
  st.path = j.at("path").get<std::string>() == "solo" ? ForwardPath::Solo : ForwardPath::Meta;
  st.epoch = j.at("epoch").get<int>();
  st.zeta = j.at("zeta").get<double>();
  st.sim_temperature = j.at("sim_temperature").get<double>();
  st.cfg = model_config_from_json(j.at("config"));
  if (j.contains("train_config") && !j.at("train_config").is_null())
    st.train_config_echo = j.at("train_config").dump();

  for (const std::string& tok : j.at("vocab").get<std::vector<std::string>>())
    st.vocab.add(tok);

  for (const json& tj : j.at("tasks")) st.tasks.push_back(task_from_json(tj));
  for (const json& gj : j.at("groups")) st.groups.push_back(group_from_json(gj));
  if (st.mode == Mode::Similar && !st.tasks.empty())
    st.shared_labels = st.tasks.front().label_set;

  // Rebuild templates; generalized tasks carry type-style templates.
  const json& ttj = j.at("task_templates");
  for (std::size_t i = 0; i < st.tasks.size(); ++i) {
    const TaskSpec& t = st.tasks[i];
    const std::string kind = ttj.at(i).at("kind").get<std::string>();
    if (kind == "type") {
      st.task_templates.push_back(build_template(
          TemplateKind::Type, t.pseudo_count, t.split_point, PseudoOwner::task(t.task_id),
          ttj.at(i).at("description_tokens").get<std::vector<std::string>>()));
    } else {
      st.task_templates.push_back(build_template(TemplateKind::Task, t.pseudo_count,
                                                 t.split_point, PseudoOwner::task(t.task_id)));
    }
  }
  st.type_templates.resize(st.groups.size());
  for (const TaskGroup& g : st.groups)
    if (!g.description_tokens.empty())
      st.type_templates[static_cast<std::size_t>(g.group_id)] =
          build_template(TemplateKind::Type, st.cfg.pseudo_count, st.cfg.split_point,
                         PseudoOwner::type(g.group_id), g.description_tokens);
  st.universal_template = build_template(TemplateKind::Universal, st.cfg.pseudo_count,
                                         st.cfg.split_point, PseudoOwner::universal());

  st.scores.epoch = j.at("scores").at("epoch").get<int>();
  st.scores.scores = j.at("scores").at("values").get<std::map<std::string, double>>();

  for (const auto& [name, mj] : j.at("params").items()) st.params[name] = mat_from_json(mj);

  Adam::Config acfg;
  acfg.lr = j.at("opt").at("lr").get<double>();
  st.opt = Adam(acfg);
  for (const auto& [name, mj] : j.at("opt").at("moments").items()) {
    Adam::State s;
    s.t = mj.at("t").get<long>();
    s.m = mat_from_json(mj.at("m"));
    s.v = mat_from_json(mj.at("v"));
    st.opt.state()[name] = std::move(s);
  }

  st.backbone = make_backbone(st.cfg.backbone);
  st.backbone->validate_params(st.params);
  return loaded;
}

void save_suite(const std::string& dir, const SyntheticSuite& suite) {
  std::filesystem::create_directories(dir);
  json j;
  j["version"] = 1;
  j["name"] = suite.name;
  j["vocab"] = suite.vocab.tokens();
  json groups = json::array();
  for (const TaskGroup& g : suite.groups) groups.push_back(group_to_json(g));
  j["groups"] = std::move(groups);
  json tasks = json::array();
  for (const TaskSpec& t : suite.tasks) {
    json tj = task_to_json(t);
    tj["pool_file"] = t.name + ".pool.tsv";
    tj["test_file"] = t.name + ".test.tsv";
    tasks.push_back(std::move(tj));
  }
  j["tasks"] = std::move(tasks);
  {
    std::ofstream out(dir + "/suite.json");
    if (!out) throw std::runtime_error("cannot write suite.json in " + dir);
    out << j.dump(2) << '\n';
  }
  for (std::size_t i = 0; i < suite.tasks.size(); ++i) {
    write_dataset(dir + "/" + suite.tasks[i].name + ".pool.tsv", FileFormat::Tsv,
                  suite.pools[i]);
    write_dataset(dir + "/" + suite.tasks[i].name + ".test.tsv", FileFormat::Tsv,
                  suite.tests[i]);
  }
}

SyntheticSuite load_suite(const std::string& dir) {
  std::ifstream in(dir + "/suite.json");
  if (!in) throw std::runtime_error("cannot open " + dir + "/suite.json");
  json j = json::parse(in);
  SyntheticSuite suite;
  suite.name = j.at("name").get<std::string>();
  for (const std::string& tok : j.at("vocab").get<std::vector<std::string>>())
    suite.vocab.add(tok);
  for (const json& gj : j.at("groups")) suite.groups.push_back(group_from_json(gj));
  for (const json& tj : j.at("tasks")) {
    TaskSpec t = task_from_json(tj);
    validate_task(t, suite.vocab);
    suite.pools.push_back(load_dataset(dir + "/" + tj.at("pool_file").get<std::string>(),
                                       FileFormat::Tsv, t));
    suite.tests.push_back(load_dataset(dir + "/" + tj.at("test_file").get<std::string>(),
                                       FileFormat::Tsv, t));
    // Re-derive the generator's uid convention so a saved suite loads back
    // uid-identical: <task>:p:<row> for pools, <task>:t:<row> for tests.
    for (std::size_t i = 0; i < suite.pools.back().size(); ++i)
      suite.pools.back()[i].uid = t.name + ":p:" + std::to_string(i);
    for (std::size_t i = 0; i < suite.tests.back().size(); ++i)
      suite.tests.back()[i].uid = t.name + ":t:" + std::to_string(i);
    suite.tasks.push_back(std::move(t));
  }
  return suite;
}

void export_scores_tsv(const std::string& path, const ScoreTable& table) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write score table: " + path);
  out << "uid\tscore\tepoch\n";
  out.precision(17);
  for (const auto& [uid, s] : table.scores)
    out << uid << '\t' << s << '\t' << table.epoch << '\n';
}

}  // namespace mpt
