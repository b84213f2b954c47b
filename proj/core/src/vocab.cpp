#include "storyviz/vocab.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

#include "storyviz/error.hpp"

namespace storyviz::text {

Vocab::Vocab() : tokens_{"<pad>", "<unk>"}, ids_{{"<pad>", kPadId}, {"<unk>", kUnkId}} {}

Vocab Vocab::from_tokens(std::vector<std::string> tokens_in_id_order) {
  Vocab v;
  std::size_t start = 0;
  if (tokens_in_id_order.size() >= 2 && tokens_in_id_order[0] == "<pad>" &&
      tokens_in_id_order[1] == "<unk>") {
    start = 2;
  }
  for (std::size_t i = start; i < tokens_in_id_order.size(); ++i) {
    auto& t = tokens_in_id_order[i];
    if (v.ids_.contains(t)) throw ConfigError("duplicate vocabulary token: " + t);
    v.ids_.emplace(t, static_cast<std::int64_t>(v.tokens_.size()));
    v.tokens_.push_back(std::move(t));
  }
  return v;
}

std::int64_t Vocab::id(std::string_view token) const {
  auto it = ids_.find(std::string(token));
  return it == ids_.end() ? kUnkId : it->second;
}

const std::string& Vocab::token(std::int64_t id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw BoundsError("token id out of range: " + std::to_string(id));
  }
  return tokens_[static_cast<std::size_t>(id)];
}

void Vocab::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out << nlohmann::json(tokens_).dump() << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

Vocab Vocab::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open for reading: " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed vocabulary " + path.string() + ": " + e.what());
  }
  return from_tokens(j.get<std::vector<std::string>>());
}

std::vector<std::string> split_tokens(std::string_view sentence) {
  std::vector<std::string> out;
  std::istringstream ss{std::string(sentence)};
  std::string tok;
  while (ss >> tok) out.push_back(tok);
  return out;
}

Vocab build_vocab(const std::vector<std::string>& corpus) {
  std::map<std::string, std::int64_t> counts;
  for (const auto& sentence : corpus) {
    for (auto& tok : split_tokens(sentence)) ++counts[tok];
  }
  if (counts.empty()) throw ConfigError("cannot build a vocabulary from an empty corpus");

  std::vector<std::pair<std::string, std::int64_t>> entries(counts.begin(), counts.end());
  std::stable_sort(entries.begin(), entries.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> tokens;
  tokens.reserve(entries.size());
  for (auto& [tok, n] : entries) tokens.push_back(tok);
  return Vocab::from_tokens(std::move(tokens));
}

TokenRow tokenize(std::string_view sentence, const Vocab& vocab, int max_words) {
  const auto toks = split_tokens(sentence);
  if (static_cast<int>(toks.size()) > max_words) {
    throw ShapeError("sentence has " + std::to_string(toks.size()) + " tokens, limit is " +
                     std::to_string(max_words) + ": \"" + std::string(sentence) + "\"");
  }
  TokenRow row;
  row.ids.assign(static_cast<std::size_t>(max_words), kPadId);
  row.mask.assign(static_cast<std::size_t>(max_words), 0);
  for (std::size_t i = 0; i < toks.size(); ++i) {
    row.ids[i] = vocab.id(toks[i]);
    row.mask[i] = 1;
  }
  return row;
}

std::string detokenize(const TokenRow& row, const Vocab& vocab) {
  std::string out;
  for (std::size_t i = 0; i < row.ids.size(); ++i) {
    if (!row.mask[i]) continue;
    if (!out.empty()) out += ' ';
    out += vocab.token(row.ids[i]);
  }
  return out;
}

}  // namespace storyviz::text
