#pragma once

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace mpt {

// Token/id table. Ids are dense and assigned in insertion order; [UNK] and
// [MASK] are always present at fixed positions 0 and 1.
class Vocab {
 public:
  static constexpr const char* kUnk = "[UNK]";
  static constexpr const char* kMask = "[MASK]";

  Vocab() {
    add(kUnk);
    add(kMask);
  }

  int add(const std::string& token) {
    auto it = tok2id_.find(token);
    if (it != tok2id_.end()) return it->second;
    const int id = static_cast<int>(id2tok_.size());
    id2tok_.push_back(token);
    tok2id_.emplace(token, id);
    return id;
  }

  int id(const std::string& token) const {
    auto it = tok2id_.find(token);
    return it == tok2id_.end() ? -1 : it->second;
  }

  int id_or_unk(const std::string& token) const {
    const int i = id(token);
    return i < 0 ? unk_id() : i;
  }

  bool contains(const std::string& token) const { return tok2id_.count(token) > 0; }

  const std::string& token(int id) const {
    if (id < 0 || id >= static_cast<int>(id2tok_.size()))
      throw std::out_of_range("vocab: bad id " + std::to_string(id));
    return id2tok_[static_cast<std::size_t>(id)];
  }

  int size() const { return static_cast<int>(id2tok_.size()); }
  int unk_id() const { return 0; }
  int mask_id() const { return 1; }

  const std::vector<std::string>& tokens() const { return id2tok_; }

 private:
  std::vector<std::string> id2tok_;
  std::map<std::string, int> tok2id_;
};

}  // namespace mpt
