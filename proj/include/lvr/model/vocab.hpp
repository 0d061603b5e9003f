#pragma once

#include <array>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "lvr/error.hpp"

namespace lvr {

/// Token strings <-> ids. The five specials always occupy ids 0..4.
class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kLvrStart = 3;
  static constexpr int kLvrEnd = 4;

  static constexpr std::array<std::string_view, 8> kColorNames{
      "red", "green", "blue", "yellow", "cyan", "magenta", "white", "black"};
  static constexpr int kMaxDigit = 9;

  Vocab() : Vocab(standard_tokens()) {}

  explicit Vocab(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
    static constexpr std::array<std::string_view, 5> specials{
        "<|pad|>", "<|bos|>", "<|eos|>", "<|lvr_start|>", "<|lvr_end|>"};
    require(tokens_.size() >= specials.size(), ErrorKind::kFormat, "vocab too small");
    for (std::size_t i = 0; i < specials.size(); ++i) {
      require(tokens_[i] == specials[i], ErrorKind::kFormat,
              "vocab special token " + std::string(specials[i]) + " not at id " +
                  std::to_string(i));
    }
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
      require(ids_.emplace(tokens_[i], static_cast<int>(i)).second, ErrorKind::kFormat,
              "duplicate vocab token " + tokens_[i]);
    }
  }

  // specials, 8 colour names, digits 0-9, and the question words.
  static std::vector<std::string> standard_tokens() {
    std::vector<std::string> t{"<|pad|>", "<|bos|>", "<|eos|>", "<|lvr_start|>",
                               "<|lvr_end|>"};
    for (auto c : kColorNames) t.emplace_back(c);
    for (int d = 0; d <= kMaxDigit; ++d) t.push_back(std::to_string(d));
    t.insert(t.end(), {"color", "count", "?"});
    return t;
  }

  std::size_t size() const noexcept { return tokens_.size(); }
  const std::vector<std::string>& tokens() const noexcept { return tokens_; }

  bool contains(std::string_view token) const { return ids_.count(std::string(token)) > 0; }

  int id(std::string_view token) const {
    auto it = ids_.find(std::string(token));
    require(it != ids_.end(), ErrorKind::kGeneration,
            "token '" + std::string(token) + "' not in vocabulary");
    return it->second;
  }

  const std::string& token(int id) const {
    require(id >= 0 && static_cast<std::size_t>(id) < tokens_.size(), ErrorKind::kContract,
            "token id " + std::to_string(id) + " out of range");
    return tokens_[static_cast<std::size_t>(id)];
  }

  // Like token(), but ids beyond the named vocabulary (the model's output
  // layer may be wider) render as "<id>".
  std::string display(int id) const {
    if (id >= 0 && static_cast<std::size_t>(id) < tokens_.size()) return tokens_[id];
    return "<" + std::to_string(id) + ">";
  }

  int color(int index) const {
    require(index >= 0 && static_cast<std::size_t>(index) < kColorNames.size(),
            ErrorKind::kGeneration, "colour index out of range");
    return id(kColorNames[static_cast<std::size_t>(index)]);
  }

  int digit(int value) const {
    require(value >= 0 && value <= kMaxDigit, ErrorKind::kGeneration,
            "vocabulary cannot express the number " + std::to_string(value));
    return id(std::to_string(value));
  }

  std::vector<int> encode(std::string_view text) const {
    std::vector<int> out;
    std::istringstream in{std::string(text)};
    std::string word;
    while (in >> word) out.push_back(id(word));
    return out;
  }

  std::string decode(std::span<const int> ids) const {
    std::string s;
    for (int t : ids) {
      if (!s.empty()) s += ' ';
      s += display(t);
    }
    return s;
  }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
};

}  // namespace lvr
