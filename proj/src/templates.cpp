#include "metaprompt/templates.hpp"

#include <stdexcept>

namespace mpt {

PromptTemplate build_template(TemplateKind kind, int pseudo_count, int split_point,
                              PseudoOwner owner,
                              std::vector<std::string> description_tokens) {
  if (pseudo_count < 0) throw std::invalid_argument("template: pseudo count must be >= 0");
  if (split_point < 0 || split_point > pseudo_count)
    throw std::invalid_argument("template: split point must lie in [0, pseudo count]");
  if (kind == TemplateKind::Type && description_tokens.empty())
    throw std::invalid_argument("template: type templates need description tokens");
  if (kind != TemplateKind::Type && !description_tokens.empty())
    throw std::invalid_argument("template: only type templates carry descriptions");
  PromptTemplate t;
  t.kind = kind;
  t.pseudo_count = pseudo_count;
  t.split_point = split_point;
  t.description_tokens = std::move(description_tokens);
  t.owner = owner;
  return t;
}

TokenLayout render(const PromptTemplate& tmpl, const Example& example, const Vocab& vocab) {
  if (example.text_a.empty())
    throw std::runtime_error("render: example " + example.uid + " has empty text_a");

  TokenLayout layout;
  auto push_pseudo = [&](int idx) {
    Slot s;
    s.kind = SlotKind::Pseudo;
    s.pseudo_index = idx;
    s.owner = tmpl.owner;
    layout.slots.push_back(std::move(s));
    ++layout.token_length;
  };
  auto push_text = [&](SlotKind kind, const std::vector<std::string>& toks) {
    Slot s;
    s.kind = kind;
    for (const std::string& tok : toks) s.token_ids.push_back(vocab.id_or_unk(tok));
    layout.token_length += static_cast<int>(s.token_ids.size());
    layout.slots.push_back(std::move(s));
  };

  if (tmpl.kind == TemplateKind::Type) {
    for (std::size_t i = 0; i < tmpl.description_tokens.size(); ++i) {
      Slot s;
      s.kind = SlotKind::Desc;
      s.pseudo_index = static_cast<int>(i);
      s.token_ids.push_back(vocab.id_or_unk(tmpl.description_tokens[i]));
      layout.slots.push_back(std::move(s));
      ++layout.token_length;
    }
  }
  for (int i = 0; i < tmpl.split_point; ++i) push_pseudo(i);
  push_text(SlotKind::TextA, example.text_a);
  for (int i = tmpl.split_point; i < tmpl.pseudo_count; ++i) push_pseudo(i);

  layout.mask_position = layout.token_length;
  {
    Slot s;
    s.kind = SlotKind::Mask;
    layout.slots.push_back(std::move(s));
    ++layout.token_length;
  }
  if (!example.text_b.empty()) push_text(SlotKind::TextB, example.text_b);
  return layout;
}

}  // namespace mpt
