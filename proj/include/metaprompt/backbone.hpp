#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "metaprompt/params.hpp"
#include "metaprompt/rng.hpp"
#include "metaprompt/tape.hpp"

namespace mpt {

struct BackboneConfig {
  std::string kind = "transformer";
  int vocab_size = 0;
  int dim = 64;
  int layers = 2;
  int heads = 4;
  int max_len = 64;
  int ffn_mult = 4;
  int mask_token_id = 1;

  void validate() const;
};

struct EncodedOutput {
  Var sequence;     // one contextual vector per input position
  Var mask_output;  // the vector at the MASK position (O_MASK)
};

// Graph-building surface of a masked-LM backbone. Any implementation that
// honors these three contracts can drive the rest of the framework.
class BackboneApi {
 public:
  virtual ~BackboneApi() = default;
  virtual const BackboneConfig& config() const = 0;

  // Creates any missing parameter tensors under the "backbone." prefix.
  virtual void register_params(ParamMap& params, Rng& rng) const = 0;
  virtual void validate_params(const ParamMap& params) const = 0;

  // Token ids -> one d-vector per token (pure table lookup).
  virtual Var embed_tokens(GraphCtx& ctx, const std::vector<int>& ids) const = 0;

  // Contextual encoding of an already-embedded input sequence (T x d).
  virtual EncodedOutput forward(GraphCtx& ctx, Var input_seq, int mask_position) const = 0;

  // O_MASK -> vocabulary logits (1 x V).
  virtual Var mlm_logits(GraphCtx& ctx, Var mask_output) const = 0;
};

std::unique_ptr<BackboneApi> make_backbone(const BackboneConfig& config);

// Additional implementations can be registered by kind; config.kind routes
// construction (state copies and checkpoint loads go through the factory).
using BackboneFactory =
    std::function<std::unique_ptr<BackboneApi>(const BackboneConfig&)>;
void register_backbone_kind(const std::string& kind, BackboneFactory factory);

// Verbalizer-based class distribution at the MASK: per class, average the
// softmax-over-vocabulary probabilities of its label words, then renormalize
// across the label space.
Var class_distribution(Var logits,
                       const std::map<std::string, std::vector<int>>& verbalizer,
                       const std::vector<std::string>& label_space);

// Same reduction but restricted to the j-th label word of every class
// (per-mapping evaluation of a top-k verbalizer).
Var class_distribution_single_mapping(
    Var logits, const std::map<std::string, std::vector<int>>& verbalizer,
    const std::vector<std::string>& label_space, int mapping_index);

}  // namespace mpt
