#pragma once

#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "autoregembed/tinylm/model.hpp"

namespace are {

namespace special {
inline constexpr int kPad = 0;
inline constexpr int kBos = 1;
inline constexpr int kEos = 2;
inline constexpr int kSep = 3;
inline constexpr int kInstrNext = 4;
inline constexpr int kInstrSelf = 5;
inline constexpr int kCount = 6;
}  // namespace special

/// Bijective symbol <-> id table. Layout: specials, then e0..e{n-1}, then
/// a0..a{n-1} (the aliases).
class Tokenizer {
 public:
  explicit Tokenizer(std::vector<std::string> vocab) : vocab_(std::move(vocab)) {
    for (std::size_t i = 0; i < vocab_.size(); ++i) {
      if (!index_.emplace(vocab_[i], static_cast<int>(i)).second) {
        throw ArgumentError("duplicate vocabulary symbol '" + vocab_[i] + "'");
      }
    }
  }

  static Tokenizer for_world(int n_entities) {
    std::vector<std::string> v = {"<pad>", "<bos>", "<eos>", "<sep>", "<i_next>", "<i_self>"};
    for (int i = 0; i < n_entities; ++i) v.push_back("e" + std::to_string(i));
    for (int i = 0; i < n_entities; ++i) v.push_back("a" + std::to_string(i));
    return Tokenizer(std::move(v));
  }

  int size() const { return static_cast<int>(vocab_.size()); }
  const std::vector<std::string>& vocab() const { return vocab_; }

  int id(const std::string& symbol) const {
    auto it = index_.find(symbol);
    if (it == index_.end()) throw VocabularyError("unknown symbol '" + symbol + "'");
    return it->second;
  }

  std::vector<int> encode(std::span<const std::string> symbols) const {
    std::vector<int> out;
    out.reserve(symbols.size());
    for (const auto& s : symbols) out.push_back(id(s));
    return out;
  }

  std::vector<std::string> decode(std::span<const int> ids) const {
    std::vector<std::string> out;
    out.reserve(ids.size());
    for (int i : ids) {
      if (i < 0 || i >= size()) throw VocabularyError("id " + std::to_string(i) + " outside vocabulary");
      out.push_back(vocab_[static_cast<std::size_t>(i)]);
    }
    return out;
  }

 private:
  std::vector<std::string> vocab_;
  std::unordered_map<std::string, int> index_;
};

}  // namespace are
