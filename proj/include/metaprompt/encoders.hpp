#pragma once

#include <string>
#include <vector>

#include "metaprompt/backbone.hpp"
#include "metaprompt/params.hpp"
#include "metaprompt/rng.hpp"
#include "metaprompt/tape.hpp"
#include "metaprompt/templates.hpp"

namespace mpt {

// Prompt encoder geometry: I pseudo tokens of width d, a bidirectional
// recurrence with d/2 hidden units per direction, and a two-layer tanh
// projection back to d.
struct PromptEncoderConfig {
  int pseudo_count = 2;  // I
  int dim = 64;          // d, must be even

  void validate() const;
};

enum class FusionKind { PooledQuery, FullAttention };

struct FusionConfig {
  FusionKind kind = FusionKind::PooledQuery;
};

struct GateConfig {
  bool vector_gate = false;  // per-dimension gate instead of a scalar
};

// Parameter names. Pseudo-token tables are owned by template owners; trunk
// (recurrence + projection) parameters are owned by encoder owners. The two
// differ in the distant setting, where the type encoder runs over member
// task templates.
std::string pseudo_table_name(const PseudoOwner& owner);
std::string trunk_prefix(const PseudoOwner& owner);
std::string gate_name(int group_id);

void register_pseudo_table(ParamMap& params, Rng& rng, const PseudoOwner& owner,
                           const PromptEncoderConfig& cfg);
void register_encoder_trunk(ParamMap& params, Rng& rng, const PseudoOwner& owner,
                            const PromptEncoderConfig& cfg);
void register_fusion(ParamMap& params, Rng& rng, int dim, const FusionConfig& cfg);
void register_gate(ParamMap& params, int group_id, int dim, const GateConfig& cfg);

// PE_trunk over the pseudo-token embeddings of table_owner: bidirectional
// recurrence then projection; returns an I x d prompt sequence.
Var encode_prompt(GraphCtx& ctx, const PseudoOwner& trunk_owner,
                  const PseudoOwner& table_owner, const PromptEncoderConfig& cfg);

// Layout-driven variant: the table owner and pseudo count come from the
// layout's pseudo slots, which must match cfg.pseudo_count.
Var encode(GraphCtx& ctx, const PseudoOwner& trunk_owner, const TokenLayout& layout,
           const PromptEncoderConfig& cfg);

// Position-wise attention pooling of two aligned I x d sequences with a
// learned query: w = softmax([q.a_i, q.b_i]/sqrt(d)), out_i = w1 a_i + w2 b_i.
// The FullAttention variant runs single-head self-attention over the
// concatenated 2I sequence and averages the two halves.
Var self_att_fuse(GraphCtx& ctx, Var seq_a, Var seq_b, const FusionConfig& cfg);

// H^m(x): fuse the task-specific and universal prompt encodings.
Var fuse_similar(GraphCtx& ctx, const TokenLayout& task_layout,
                 const TokenLayout& universal_layout, const PromptEncoderConfig& cfg,
                 const FusionConfig& fusion);

// H_intra: mean over member tasks of SelfAtt(PE_r(t^(m)), PE_r(t'^(r))).
Var intra_type_embed(GraphCtx& ctx, int group_id,
                     const std::vector<const TokenLayout*>& member_layouts,
                     const TokenLayout& type_layout, const PromptEncoderConfig& cfg,
                     const FusionConfig& fusion);

// H_inter: SelfAtt(PE_r(t'^(r)), PE_*(t^(*))).
Var inter_type_embed(GraphCtx& ctx, int group_id, const TokenLayout& type_layout,
                     const TokenLayout& universal_layout, const PromptEncoderConfig& cfg,
                     const FusionConfig& fusion);

// H^r = alpha_r H_intra + (1 - alpha_r) H_inter with alpha_r = sigmoid(theta_r).
Var gate_combine(GraphCtx& ctx, Var h_intra, Var h_inter, int group_id,
                 const GateConfig& cfg);

// Final input sequence: pseudo slots carry prompt_seq rows, text/description
// slots carry word embeddings, the MASK slot carries the mask embedding.
Var assemble_input(GraphCtx& ctx, const BackboneApi& backbone, Var prompt_seq,
                   const TokenLayout& layout);

}  // namespace mpt
