#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace storyviz::text {

inline constexpr std::int64_t kPadId = 0;
inline constexpr std::int64_t kUnkId = 1;

// Token <-> id table. Ids 0 and 1 are PAD and UNK; the remaining tokens are
// ordered by descending corpus frequency, ties broken lexicographically.
class Vocab {
 public:
  Vocab();

  static Vocab from_tokens(std::vector<std::string> tokens_in_id_order);

  std::int64_t id(std::string_view token) const;  // kUnkId when absent
  const std::string& token(std::int64_t id) const;
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  // JSON list of tokens in id order.
  void save(const std::filesystem::path& path) const;
  static Vocab load(const std::filesystem::path& path);

  friend bool operator==(const Vocab& a, const Vocab& b) { return a.tokens_ == b.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::int64_t> ids_;
};

std::vector<std::string> split_tokens(std::string_view sentence);

// Throws ConfigError on an empty corpus (no tokens at all).
Vocab build_vocab(const std::vector<std::string>& corpus);

struct TokenRow {
  std::vector<std::int64_t> ids;  // length L, right-padded with kPadId
  std::vector<std::uint8_t> mask;  // 1 for real tokens
};

// Throws ShapeError when the sentence has more than max_words tokens.
TokenRow tokenize(std::string_view sentence, const Vocab& vocab, int max_words);
std::string detokenize(const TokenRow& row, const Vocab& vocab);

}  // namespace storyviz::text
