#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "metaprompt/templates.hpp"

using namespace mpt;

namespace {

Vocab toy_vocab() {
  Vocab v;
  for (const char* w : {"a", "b", "c", "d", "judge", "the", "tone", "."}) v.add(w);
  return v;
}

Example make_example(std::vector<std::string> a, std::vector<std::string> b = {}) {
  Example ex;
  ex.text_a = std::move(a);
  ex.text_b = std::move(b);
  ex.label = "x";
  ex.task_id = 0;
  ex.uid = "toy:0";
  return ex;
}

std::vector<SlotKind> tags(const TokenLayout& layout) {
  std::vector<SlotKind> out;
  for (const Slot& s : layout.slots) out.push_back(s.kind);
  return out;
}

}  // namespace

TEST_CASE("default task template renders text, pseudo tokens, then MASK") {
  Vocab vocab = toy_vocab();
  PromptTemplate t = build_template(TemplateKind::Task, 1, 0, PseudoOwner::task(0));
  TokenLayout layout = render(t, make_example({"a", "b", "c"}), vocab);
  CHECK(tags(layout) ==
        std::vector<SlotKind>{SlotKind::TextA, SlotKind::Pseudo, SlotKind::Mask});
  CHECK(layout.token_length == 5);  // 3 text + 1 pseudo + 1 mask
  CHECK(layout.mask_position == 4);
  CHECK(layout.pseudo_slot_count() == 1);
}

TEST_CASE("a pseudo-free template is a plain cloze") {
  Vocab vocab = toy_vocab();
  PromptTemplate t = build_template(TemplateKind::Task, 0, 0, PseudoOwner::task(0));
  TokenLayout layout = render(t, make_example({"a"}), vocab);
  CHECK(tags(layout) == std::vector<SlotKind>{SlotKind::TextA, SlotKind::Mask});
}

TEST_CASE("split points move pseudo tokens around the text") {
  Vocab vocab = toy_vocab();
  PromptTemplate t = build_template(TemplateKind::Task, 3, 1, PseudoOwner::task(2));
  TokenLayout layout = render(t, make_example({"a", "b"}), vocab);
  CHECK(tags(layout) == std::vector<SlotKind>{SlotKind::Pseudo, SlotKind::TextA,
                                              SlotKind::Pseudo, SlotKind::Pseudo,
                                              SlotKind::Mask});
  CHECK(layout.slots[0].pseudo_index == 0);
  CHECK(layout.slots[2].pseudo_index == 1);
  CHECK(layout.slots[3].pseudo_index == 2);
}

TEST_CASE("type templates put description tokens ahead of everything") {
  Vocab vocab = toy_vocab();
  PromptTemplate t = build_template(TemplateKind::Type, 2, 0, PseudoOwner::type(1),
                                    {"judge", "the", "tone", "."});
  TokenLayout layout = render(t, make_example({"a", "b"}), vocab);
  auto got = tags(layout);
  CHECK(got == std::vector<SlotKind>{SlotKind::Desc, SlotKind::Desc, SlotKind::Desc,
                                     SlotKind::Desc, SlotKind::TextA, SlotKind::Pseudo,
                                     SlotKind::Pseudo, SlotKind::Mask});
  // description slots come before any pseudo slot
  std::size_t last_desc = 0, first_pseudo = got.size();
  for (std::size_t i = 0; i < got.size(); ++i) {
    if (got[i] == SlotKind::Desc) last_desc = i;
    if (got[i] == SlotKind::Pseudo && i < first_pseudo) first_pseudo = i;
  }
  CHECK(last_desc < first_pseudo);
  CHECK(layout.token_length == 4 + 2 + 2 + 1);
  CHECK(layout.slots[0].token_ids[0] == vocab.id("judge"));
}

TEST_CASE("sentence-pair text follows the MASK") {
  Vocab vocab = toy_vocab();
  PromptTemplate t = build_template(TemplateKind::Task, 2, 0, PseudoOwner::task(0));
  TokenLayout layout = render(t, make_example({"a"}, {"b", "c"}), vocab);
  CHECK(tags(layout) == std::vector<SlotKind>{SlotKind::TextA, SlotKind::Pseudo,
                                              SlotKind::Pseudo, SlotKind::Mask,
                                              SlotKind::TextB});
  CHECK(layout.token_length == 1 + 2 + 1 + 2);
  CHECK(layout.mask_position == 3);
}

TEST_CASE("unknown tokens map to UNK; empty text is an error") {
  Vocab vocab = toy_vocab();
  PromptTemplate t = build_template(TemplateKind::Task, 1, 0, PseudoOwner::task(0));
  TokenLayout layout = render(t, make_example({"zebra", "a"}), vocab);
  CHECK(layout.slots[0].token_ids[0] == vocab.unk_id());
  CHECK(layout.slots[0].token_ids[1] == vocab.id("a"));
  CHECK_THROWS_AS(render(t, make_example({}), vocab), std::runtime_error);
}

TEST_CASE("rendering is injective in slot structure across same-task examples") {
  Vocab vocab = toy_vocab();
  PromptTemplate t = build_template(TemplateKind::Task, 2, 1, PseudoOwner::task(0));
  TokenLayout la = render(t, make_example({"a", "b", "c"}), vocab);
  TokenLayout lb = render(t, make_example({"d", "c", "b"}), vocab);
  REQUIRE(la.slots.size() == lb.slots.size());
  for (std::size_t i = 0; i < la.slots.size(); ++i) {
    CHECK(la.slots[i].kind == lb.slots[i].kind);
    CHECK(la.slots[i].pseudo_index == lb.slots[i].pseudo_index);
    if (la.slots[i].kind != SlotKind::TextA)
      CHECK(la.slots[i].token_ids == lb.slots[i].token_ids);
  }
}

TEST_CASE("template owners give pseudo slots disjoint identities") {
  CHECK(PseudoOwner::task(0).str() != PseudoOwner::task(1).str());
  CHECK(PseudoOwner::task(1).str() != PseudoOwner::type(1).str());
  CHECK(PseudoOwner::type(1).str() != PseudoOwner::universal().str());
  Vocab vocab = toy_vocab();
  PromptTemplate t = build_template(TemplateKind::Universal, 2, 0, PseudoOwner::universal());
  TokenLayout layout = render(t, make_example({"a"}), vocab);
  for (const Slot& s : layout.slots)
    if (s.kind == SlotKind::Pseudo) CHECK(s.owner == PseudoOwner::universal());
}

TEST_CASE("invalid template arguments are rejected") {
  CHECK_THROWS_AS(build_template(TemplateKind::Task, 2, 3, PseudoOwner::task(0)),
                  std::invalid_argument);
  CHECK_THROWS_AS(build_template(TemplateKind::Task, -1, 0, PseudoOwner::task(0)),
                  std::invalid_argument);
  CHECK_THROWS_AS(build_template(TemplateKind::Type, 2, 0, PseudoOwner::type(0)),
                  std::invalid_argument);
  CHECK_THROWS_AS(
      build_template(TemplateKind::Task, 2, 0, PseudoOwner::task(0), {"stray"}),
      std::invalid_argument);
}
