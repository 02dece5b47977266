#include "metaprompt/encoders.hpp"

#include <cmath>
#include <stdexcept>

namespace mpt {

void PromptEncoderConfig::validate() const {
  if (pseudo_count < 0) throw std::invalid_argument("prompt encoder: I must be >= 0");
  if (dim < 2 || dim % 2 != 0)
    throw std::invalid_argument("prompt encoder: dim must be even and >= 2");
}

std::string pseudo_table_name(const PseudoOwner& owner) {
  return "pseudo." + owner.str();
}

std::string trunk_prefix(const PseudoOwner& owner) {
  return "pe." + owner.str() + ".";
}

std::string gate_name(int group_id) { return "gate.type." + std::to_string(group_id); }

namespace {

Mat xavier(Rng& rng, int rows, int cols) {
  const double s = std::sqrt(2.0 / static_cast<double>(rows + cols));
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = rng.normal(0.0, s);
  return m;
}

void put_if_missing(ParamMap& params, const std::string& name, Mat m) {
  if (!params.count(name)) params.emplace(name, std::move(m));
}

}  // namespace

void register_pseudo_table(ParamMap& params, Rng& rng, const PseudoOwner& owner,
                           const PromptEncoderConfig& cfg) {
  cfg.validate();
  Mat table(cfg.pseudo_count, cfg.dim);
  for (Eigen::Index i = 0; i < table.size(); ++i) table(i) = rng.normal(0.0, 0.1);
  put_if_missing(params, pseudo_table_name(owner), std::move(table));
}

void register_encoder_trunk(ParamMap& params, Rng& rng, const PseudoOwner& owner,
                            const PromptEncoderConfig& cfg) {
  cfg.validate();
  const int d = cfg.dim;
  const int h = d / 2;
  const std::string p = trunk_prefix(owner);
  for (const char* dir : {"fw", "bw"}) {
    put_if_missing(params, p + "lstm." + dir + ".W", xavier(rng, d, 4 * h));
    put_if_missing(params, p + "lstm." + dir + ".U", xavier(rng, h, 4 * h));
    Mat b = Mat::Zero(1, 4 * h);
    b.middleCols(h, h).setOnes();  // forget-gate bias
    put_if_missing(params, p + "lstm." + dir + ".b", std::move(b));
  }
  put_if_missing(params, p + "mlp.W1", xavier(rng, d, d));
  put_if_missing(params, p + "mlp.b1", Mat::Zero(1, d));
  put_if_missing(params, p + "mlp.W2", xavier(rng, d, d));
  put_if_missing(params, p + "mlp.b2", Mat::Zero(1, d));
}

void register_fusion(ParamMap& params, Rng& rng, int dim, const FusionConfig& cfg) {
  Mat q(1, dim);
  for (Eigen::Index i = 0; i < q.size(); ++i) q(i) = rng.normal(0.0, 0.1);
  put_if_missing(params, "fusion.query", std::move(q));
  if (cfg.kind == FusionKind::FullAttention) {
    put_if_missing(params, "fusion.Wq", xavier(rng, dim, dim));
    put_if_missing(params, "fusion.Wk", xavier(rng, dim, dim));
    put_if_missing(params, "fusion.Wv", xavier(rng, dim, dim));
  }
}

void register_gate(ParamMap& params, int group_id, int dim, const GateConfig& cfg) {
  put_if_missing(params, gate_name(group_id),
                 cfg.vector_gate ? Mat::Zero(1, dim) : Mat::Zero(1, 1));
}

namespace {

// One direction of the recurrence over an I x d embedding sequence; returns
// the I hidden states as 1 x h row vars in input order.
std::vector<Var> lstm_direction(GraphCtx& ctx, const std::string& prefix, Var inputs,
                                bool backward) {
  const int steps = static_cast<int>(inputs.rows());
  const int h4 = static_cast<int>(ctx.P(prefix + "b").cols());
  const int h = h4 / 4;
  Var W = ctx.P(prefix + "W");
  Var U = ctx.P(prefix + "U");
  Var b = ctx.P(prefix + "b");
  Var hprev = ctx.tape().leaf(Mat::Zero(1, h));
  Var cprev = ctx.tape().leaf(Mat::Zero(1, h));
  std::vector<Var> states(static_cast<std::size_t>(steps));
  for (int s = 0; s < steps; ++s) {
    const int t = backward ? steps - 1 - s : s;
    Var x = rows_slice(inputs, t, 1);
    Var z = add(add(matmul(x, W), matmul(hprev, U)), b);
    Var ig = sigmoid_v(cols_slice(z, 0, h));
    Var fg = sigmoid_v(cols_slice(z, h, h));
    Var gg = tanh_v(cols_slice(z, 2 * h, h));
    Var og = sigmoid_v(cols_slice(z, 3 * h, h));
    Var c = add(cmul(fg, cprev), cmul(ig, gg));
    Var hh = cmul(og, tanh_v(c));
    states[static_cast<std::size_t>(t)] = hh;
    hprev = hh;
    cprev = c;
  }
  return states;
}

}  // namespace

Var encode_prompt(GraphCtx& ctx, const PseudoOwner& trunk_owner,
                  const PseudoOwner& table_owner, const PromptEncoderConfig& cfg) {
  cfg.validate();
  if (cfg.pseudo_count == 0) return ctx.tape().leaf(Mat::Zero(0, cfg.dim));
  Var table = ctx.P(pseudo_table_name(table_owner));
  if (table.rows() != cfg.pseudo_count || table.cols() != cfg.dim)
    throw std::invalid_argument("encode: pseudo table shape does not match config");
  const std::string p = trunk_prefix(trunk_owner);
  std::vector<Var> fw = lstm_direction(ctx, p + "lstm.fw.", table, false);
  std::vector<Var> bw = lstm_direction(ctx, p + "lstm.bw.", table, true);
  std::vector<Var> rows;
  rows.reserve(fw.size());
  for (std::size_t t = 0; t < fw.size(); ++t)
    rows.push_back(concat_cols({fw[t], bw[t]}));
  Var hidden = concat_rows(rows);
  Var proj = tanh_v(affine(hidden, ctx.P(p + "mlp.W1"), ctx.P(p + "mlp.b1")));
  return affine(proj, ctx.P(p + "mlp.W2"), ctx.P(p + "mlp.b2"));
}

Var encode(GraphCtx& ctx, const PseudoOwner& trunk_owner, const TokenLayout& layout,
           const PromptEncoderConfig& cfg) {
  const int n = layout.pseudo_slot_count();
  if (n != cfg.pseudo_count)
    throw std::invalid_argument("encode: layout pseudo count " + std::to_string(n) +
                                " does not match encoder I=" +
                                std::to_string(cfg.pseudo_count));
  if (n == 0) return ctx.tape().leaf(Mat::Zero(0, cfg.dim));
  const PseudoOwner* table_owner = nullptr;
  for (const Slot& s : layout.slots)
    if (s.kind == SlotKind::Pseudo) {
      table_owner = &s.owner;
      break;
    }
  return encode_prompt(ctx, trunk_owner, *table_owner, cfg);
}

Var self_att_fuse(GraphCtx& ctx, Var seq_a, Var seq_b, const FusionConfig& cfg) {
  if (seq_a.rows() != seq_b.rows() || seq_a.cols() != seq_b.cols())
    throw std::invalid_argument("self_att_fuse: sequence shapes differ");
  const Eigen::Index n = seq_a.rows();
  const Eigen::Index d = seq_a.cols();
  if (n == 0) return seq_a;
  if (cfg.kind == FusionKind::PooledQuery) {
    Var q = ctx.P("fusion.query");
    Var sa = matmul(seq_a, transpose(q));  // I x 1
    Var sb = matmul(seq_b, transpose(q));
    Var w = softmax_rows(scale(concat_cols({sa, sb}), 1.0 / std::sqrt(double(d))));
    return add(mul_colvec(seq_a, cols_slice(w, 0, 1)),
               mul_colvec(seq_b, cols_slice(w, 1, 1)));
  }
  Var c = concat_rows({seq_a, seq_b});
  Var att = softmax_rows(scale(
      matmul(matmul(c, ctx.P("fusion.Wq")), transpose(matmul(c, ctx.P("fusion.Wk")))),
      1.0 / std::sqrt(double(d))));
  Var o = matmul(att, matmul(c, ctx.P("fusion.Wv")));
  return scale(add(rows_slice(o, 0, n), rows_slice(o, n, n)), 0.5);
}

Var fuse_similar(GraphCtx& ctx, const TokenLayout& task_layout,
                 const TokenLayout& universal_layout, const PromptEncoderConfig& cfg,
                 const FusionConfig& fusion) {
  const PseudoOwner* task_owner = nullptr;
  for (const Slot& s : task_layout.slots)
    if (s.kind == SlotKind::Pseudo) {
      task_owner = &s.owner;
      break;
    }
  if (!task_owner && cfg.pseudo_count > 0)
    throw std::invalid_argument("fuse_similar: task layout has no pseudo slots");
  Var task_seq = encode(ctx, task_owner ? *task_owner : PseudoOwner::universal(),
                        task_layout, cfg);
  Var univ_seq = encode(ctx, PseudoOwner::universal(), universal_layout, cfg);
  return self_att_fuse(ctx, task_seq, univ_seq, fusion);
}

Var intra_type_embed(GraphCtx& ctx, int group_id,
                     const std::vector<const TokenLayout*>& member_layouts,
                     const TokenLayout& type_layout, const PromptEncoderConfig& cfg,
                     const FusionConfig& fusion) {
  if (member_layouts.empty())
    throw std::runtime_error("intra_type_embed: group " + std::to_string(group_id) +
                             " has no member tasks");
  const PseudoOwner type_owner = PseudoOwner::type(group_id);
  Var type_seq = encode(ctx, type_owner, type_layout, cfg);
  std::vector<Var> fused;
  fused.reserve(member_layouts.size());
  for (const TokenLayout* member : member_layouts) {
    Var member_seq = encode(ctx, type_owner, *member, cfg);
    fused.push_back(self_att_fuse(ctx, member_seq, type_seq, fusion));
  }
  return mean_of(fused);
}

Var inter_type_embed(GraphCtx& ctx, int group_id, const TokenLayout& type_layout,
                     const TokenLayout& universal_layout, const PromptEncoderConfig& cfg,
                     const FusionConfig& fusion) {
  Var type_seq = encode(ctx, PseudoOwner::type(group_id), type_layout, cfg);
  Var univ_seq = encode(ctx, PseudoOwner::universal(), universal_layout, cfg);
  return self_att_fuse(ctx, type_seq, univ_seq, fusion);
}

Var gate_combine(GraphCtx& ctx, Var h_intra, Var h_inter, int group_id,
                 const GateConfig& cfg) {
  if (h_intra.rows() != h_inter.rows() || h_intra.cols() != h_inter.cols())
    throw std::invalid_argument("gate_combine: shape mismatch");
  Var theta = ctx.P(gate_name(group_id));
  Var alpha = sigmoid_v(theta);
  if (!cfg.vector_gate) {
    Var one = ctx.tape().constant(1.0);
    return add(scale_by(h_intra, alpha), scale_by(h_inter, sub(one, alpha)));
  }
  if (alpha.cols() != h_intra.cols())
    throw std::invalid_argument("gate_combine: vector gate width mismatch");
  Var ones = ctx.tape().leaf(Mat::Ones(1, h_intra.cols()));
  return add(mul_rowvec(h_intra, alpha), mul_rowvec(h_inter, sub(ones, alpha)));
}

Var assemble_input(GraphCtx& ctx, const BackboneApi& backbone, Var prompt_seq,
                   const TokenLayout& layout) {
  if (prompt_seq.rows() != layout.pseudo_slot_count())
    throw std::invalid_argument("assemble_input: prompt sequence length " +
                                std::to_string(prompt_seq.rows()) +
                                " does not match layout pseudo slots");
  std::vector<Var> parts;
  parts.reserve(layout.slots.size());
  const std::vector<int> mask_ids = {backbone.config().mask_token_id};
  for (const Slot& s : layout.slots) {
    switch (s.kind) {
      case SlotKind::Pseudo:
        parts.push_back(rows_slice(prompt_seq, s.pseudo_index, 1));
        break;
      case SlotKind::Mask:
        parts.push_back(backbone.embed_tokens(ctx, mask_ids));
        break;
      default:
        parts.push_back(backbone.embed_tokens(ctx, s.token_ids));
        break;
    }
  }
  return concat_rows(parts);
}

}  // namespace mpt
