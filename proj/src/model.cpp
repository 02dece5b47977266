#include "metaprompt/model.hpp"

#include <algorithm>
#include <stdexcept>

namespace mpt {

std::string mode_name(Mode mode) { return mode == Mode::Similar ? "similar" : "distant"; }

Mode mode_from_name(const std::string& name) {
  if (name == "similar") return Mode::Similar;
  if (name == "distant") return Mode::Distant;
  throw std::invalid_argument("unknown mode: " + name);
}

MetaLearnerState::MetaLearnerState(const MetaLearnerState& other)
    : mode(other.mode),
      path(other.path),
      cfg(other.cfg),
      vocab(other.vocab),
      tasks(other.tasks),
      groups(other.groups),
      task_templates(other.task_templates),
      type_templates(other.type_templates),
      universal_template(other.universal_template),
      shared_labels(other.shared_labels),
      params(other.params),
      scores(other.scores),
      opt(other.opt),
      epoch(other.epoch),
      zeta(other.zeta),
      sim_temperature(other.sim_temperature),
      train_config_echo(other.train_config_echo) {
  backbone = make_backbone(cfg.backbone);
}

MetaLearnerState& MetaLearnerState::operator=(const MetaLearnerState& other) {
  if (this == &other) return *this;
  MetaLearnerState tmp(other);
  *this = std::move(tmp);
  return *this;
}

const TaskSpec& MetaLearnerState::task(int task_id) const {
  if (task_id < 0 || task_id >= static_cast<int>(tasks.size()))
    throw std::out_of_range("unknown task id " + std::to_string(task_id));
  return tasks[static_cast<std::size_t>(task_id)];
}

const TaskGroup& MetaLearnerState::group(int group_id) const {
  if (group_id < 0 || group_id >= static_cast<int>(groups.size()))
    throw std::out_of_range("unknown group id " + std::to_string(group_id));
  return groups[static_cast<std::size_t>(group_id)];
}

const std::vector<std::string>& MetaLearnerState::label_space(int task_id) const {
  if (mode == Mode::Similar && path == ForwardPath::Meta) return shared_labels;
  return task(task_id).label_set;
}

MetaLearnerState build_meta_state(Mode mode, const ModelConfig& cfg, Vocab vocab,
                                  std::vector<TaskSpec> tasks,
                                  std::vector<TaskGroup> groups, std::uint64_t seed) {
  if (tasks.empty()) throw std::invalid_argument("build_meta_state: no tasks");
  MetaLearnerState st;
  st.mode = mode;
  st.cfg = cfg;
  st.cfg.backbone.vocab_size = vocab.size();
  st.cfg.backbone.mask_token_id = vocab.mask_id();
  st.vocab = std::move(vocab);
  st.tasks = std::move(tasks);
  st.groups = std::move(groups);

  for (std::size_t i = 0; i < st.tasks.size(); ++i) {
    if (st.tasks[i].task_id != static_cast<int>(i))
      throw std::invalid_argument("build_meta_state: task ids must be dense and ordered");
    validate_task(st.tasks[i], st.vocab);
    if (st.tasks[i].pseudo_count != cfg.pseudo_count)
      throw std::invalid_argument(
          "build_meta_state: all templates must share the configured pseudo count");
  }
  for (std::size_t g = 0; g < st.groups.size(); ++g)
    if (st.groups[g].group_id != static_cast<int>(g))
      throw std::invalid_argument("build_meta_state: group ids must be dense and ordered");

  // Groups must partition the task roster.
  {
    std::vector<int> seen(st.tasks.size(), 0);
    for (const TaskGroup& g : st.groups)
      for (int m : g.member_task_ids) {
        if (m < 0 || m >= static_cast<int>(st.tasks.size()) ||
            st.tasks[static_cast<std::size_t>(m)].group_id != g.group_id)
          throw std::invalid_argument("build_meta_state: inconsistent group membership");
        seen[static_cast<std::size_t>(m)] += 1;
      }
    for (std::size_t m = 0; m < seen.size(); ++m)
      if (seen[m] != 1)
        throw std::invalid_argument("build_meta_state: groups must partition the tasks");
  }

  if (mode == Mode::Similar) {
    st.shared_labels = st.tasks.front().label_set;
    for (const TaskSpec& t : st.tasks)
      if (t.label_set != st.shared_labels)
        throw std::runtime_error(
            "build_meta_state: similar mode requires one shared label space; task '" +
            t.name + "' differs");
  }

  const PromptEncoderConfig ecfg{cfg.pseudo_count, cfg.backbone.dim};
  ecfg.validate();

  for (const TaskSpec& t : st.tasks)
    st.task_templates.push_back(build_template(TemplateKind::Task, cfg.pseudo_count,
                                               t.split_point, PseudoOwner::task(t.task_id)));
  st.type_templates.resize(st.groups.size());
  for (const TaskGroup& g : st.groups) {
    if (g.description_tokens.empty()) {
      if (mode == Mode::Distant)
        throw std::runtime_error("build_meta_state: distant mode needs a description for group '" +
                                 g.name + "'");
      continue;
    }
    st.type_templates[static_cast<std::size_t>(g.group_id)] =
        build_template(TemplateKind::Type, cfg.pseudo_count, cfg.split_point,
                       PseudoOwner::type(g.group_id), g.description_tokens);
  }
  st.universal_template = build_template(TemplateKind::Universal, cfg.pseudo_count,
                                         cfg.split_point, PseudoOwner::universal());

  Rng rng(Rng::derive(seed, 0x1417));
  st.backbone = make_backbone(st.cfg.backbone);
  st.backbone->register_params(st.params, rng);
  register_pseudo_table(st.params, rng, PseudoOwner::universal(), ecfg);
  register_encoder_trunk(st.params, rng, PseudoOwner::universal(), ecfg);
  for (const TaskSpec& t : st.tasks)
    register_pseudo_table(st.params, rng, PseudoOwner::task(t.task_id), ecfg);
  if (mode == Mode::Similar) {
    for (const TaskSpec& t : st.tasks)
      register_encoder_trunk(st.params, rng, PseudoOwner::task(t.task_id), ecfg);
  } else {
    for (const TaskGroup& g : st.groups) {
      register_pseudo_table(st.params, rng, PseudoOwner::type(g.group_id), ecfg);
      register_encoder_trunk(st.params, rng, PseudoOwner::type(g.group_id), ecfg);
      register_gate(st.params, g.group_id, cfg.backbone.dim, cfg.gate);
    }
  }
  register_fusion(st.params, rng, cfg.backbone.dim, cfg.fusion);
  return st;
}

InstanceOutput forward_instance(GraphCtx& ctx, const MetaLearnerState& state,
                                const Example& ex) {
  const TaskSpec& task = state.task(ex.task_id);
  const PromptEncoderConfig ecfg = state.encoder_config();

  Var prompt;
  const TokenLayout* assemble_layout = nullptr;
  TokenLayout task_layout, type_layout, universal_layout;
  std::vector<TokenLayout> member_layouts;

  if (state.path == ForwardPath::Solo) {
    task_layout = render(state.task_templates[static_cast<std::size_t>(ex.task_id)], ex,
                         state.vocab);
    prompt = encode(ctx, PseudoOwner::task(ex.task_id), task_layout, ecfg);
    assemble_layout = &task_layout;
  } else if (state.mode == Mode::Similar) {
    task_layout = render(state.task_templates[static_cast<std::size_t>(ex.task_id)], ex,
                         state.vocab);
    universal_layout = render(state.universal_template, ex, state.vocab);
    prompt = fuse_similar(ctx, task_layout, universal_layout, ecfg, state.cfg.fusion);
    assemble_layout = &task_layout;
  } else {
    const TaskGroup& grp = state.group(task.group_id);
    const PromptTemplate& type_tmpl =
        state.type_templates[static_cast<std::size_t>(task.group_id)];
    if (type_tmpl.kind != TemplateKind::Type)
      throw std::runtime_error("forward: group '" + grp.name + "' has no type template");
    type_layout = render(type_tmpl, ex, state.vocab);
    universal_layout = render(state.universal_template, ex, state.vocab);
    member_layouts.reserve(grp.member_task_ids.size());
    std::vector<const TokenLayout*> member_ptrs;
    for (int m : grp.member_task_ids)
      member_layouts.push_back(
          render(state.task_templates[static_cast<std::size_t>(m)], ex, state.vocab));
    for (const TokenLayout& l : member_layouts) member_ptrs.push_back(&l);
    Var h_intra = intra_type_embed(ctx, task.group_id, member_ptrs, type_layout, ecfg,
                                   state.cfg.fusion);
    Var h_inter = inter_type_embed(ctx, task.group_id, type_layout, universal_layout, ecfg,
                                   state.cfg.fusion);
    prompt = gate_combine(ctx, h_intra, h_inter, task.group_id, state.cfg.gate);
    assemble_layout = &type_layout;
  }

  Var input = assemble_input(ctx, *state.backbone, prompt, *assemble_layout);
  EncodedOutput enc = state.backbone->forward(ctx, input, assemble_layout->mask_position);
  Var logits = state.backbone->mlm_logits(ctx, enc.mask_output);
  const std::vector<std::string>& labels = state.label_space(ex.task_id);
  Var yhat = class_distribution(logits, task.verbalizer, labels);

  InstanceOutput out;
  out.yhat = yhat;
  out.mask_out = enc.mask_output;
  out.target = -1;
  if (!ex.label.empty()) {
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] == ex.label) out.target = static_cast<int>(i);
    if (out.target < 0)
      throw std::runtime_error("forward: label '" + ex.label + "' of " + ex.uid +
                               " not in the model label space");
  }
  return out;
}

Prediction predict_one(const MetaLearnerState& state, const Example& ex) {
  Tape tape(/*grad=*/false);
  GraphCtx ctx(tape, const_cast<ParamMap&>(state.params));
  InstanceOutput out = forward_instance(ctx, state, ex);
  Prediction p;
  p.yhat = out.yhat.val().row(0);
  p.embedding = out.mask_out.val().row(0);
  Eigen::Index best = 0;
  out.yhat.val().row(0).maxCoeff(&best);
  p.label_index = static_cast<int>(best);
  return p;
}

double evaluate_accuracy(const MetaLearnerState& state,
                         const std::vector<Example>& examples) {
  if (examples.empty()) throw std::invalid_argument("evaluate: empty example set");
  std::size_t correct = 0;
  for (const Example& ex : examples) {
    const std::vector<std::string>& labels = state.label_space(ex.task_id);
    const auto it = std::find(labels.begin(), labels.end(), ex.label);
    if (it == labels.end())
      throw std::runtime_error("evaluate: label '" + ex.label + "' of " + ex.uid +
                               " not in the model label space");
    const int gold = static_cast<int>(it - labels.begin());
    if (predict_one(state, ex).label_index == gold) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(examples.size());
}

double evaluate_accuracy_single_mapping(const MetaLearnerState& state,
                                        const std::vector<Example>& examples,
                                        int mapping_index) {
  if (examples.empty()) throw std::invalid_argument("evaluate: empty example set");
  std::size_t correct = 0;
  for (const Example& ex : examples) {
    Tape tape(/*grad=*/false);
    GraphCtx ctx(tape, const_cast<ParamMap&>(state.params));
    InstanceOutput out = forward_instance(ctx, state, ex);
    Var logits = state.backbone->mlm_logits(
        ctx, out.mask_out);  // reuse the mask vector for the restricted read-out
    Var yhat = class_distribution_single_mapping(
        logits, state.task(ex.task_id).verbalizer, state.label_space(ex.task_id),
        mapping_index);
    Eigen::Index best = 0;
    yhat.val().row(0).maxCoeff(&best);
    if (static_cast<int>(best) == out.target) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(examples.size());
}

}  // namespace mpt
