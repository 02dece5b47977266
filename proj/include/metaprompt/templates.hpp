#pragma once

#include <string>
#include <vector>

#include "metaprompt/data.hpp"
#include "metaprompt/vocab.hpp"

namespace mpt {

enum class TemplateKind { Task, Universal, Type };

// An owner names the parameter set behind a template's pseudo tokens.
// Distinct owners are distinct (and disjoint) trainable identities.
struct PseudoOwner {
  enum class Kind { Task, Type, Universal } kind = Kind::Universal;
  int id = -1;  // task_id or group_id; unused for universal

  bool operator==(const PseudoOwner& o) const { return kind == o.kind && id == o.id; }
  std::string str() const {
    switch (kind) {
      case Kind::Task: return "task." + std::to_string(id);
      case Kind::Type: return "type." + std::to_string(id);
      default: return "universal";
    }
  }
  static PseudoOwner task(int id) { return {Kind::Task, id}; }
  static PseudoOwner type(int id) { return {Kind::Type, id}; }
  static PseudoOwner universal() { return {Kind::Universal, -1}; }
};

// Slot layout of a prompt: pseudo tokens split around the text, one MASK,
// and (for type templates) a leading block of description tokens.
struct PromptTemplate {
  TemplateKind kind = TemplateKind::Task;
  int pseudo_count = 0;  // I
  int split_point = 0;   // pseudo tokens rendered before the text
  std::vector<std::string> description_tokens;  // only for kind == Type
  PseudoOwner owner;
};

PromptTemplate build_template(TemplateKind kind, int pseudo_count, int split_point,
                              PseudoOwner owner,
                              std::vector<std::string> description_tokens = {});

enum class SlotKind { Pseudo, TextA, TextB, Desc, Mask };

struct Slot {
  SlotKind kind;
  int pseudo_index = -1;        // Pseudo slots
  PseudoOwner owner;            // Pseudo slots
  std::vector<int> token_ids;   // TextA / TextB / Desc slots (Desc holds one id)
};

// A rendered template: ordered slots plus flat token-position bookkeeping.
struct TokenLayout {
  std::vector<Slot> slots;
  int token_length = 0;  // total positions including pseudo and MASK
  int mask_position = -1;

  int pseudo_slot_count() const {
    int n = 0;
    for (const Slot& s : slots)
      if (s.kind == SlotKind::Pseudo) ++n;
    return n;
  }
};

// Renders a template around an example. Unknown text tokens map to [UNK].
// Sentence-pair text_b follows the MASK.
TokenLayout render(const PromptTemplate& tmpl, const Example& example, const Vocab& vocab);

}  // namespace mpt
