#include "fairgrpo/text/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <map>

#include "fairgrpo/errors.hpp"
#include "fairgrpo/numerics/checkpoint.hpp"

namespace fairgrpo::text {
namespace {

const std::vector<std::string>& reserved_tokens() {
  static const std::vector<std::string> tokens{"<pad>", "<bos>", "<eos>", "<unk>"};
  return tokens;
}

bool is_word_char(unsigned char c) {
  return std::isalnum(c) || c == '\'' || c == '-' || c >= 0x80;
}

bool attaches_left(const std::string& w) {
  return w == "." || w == "," || w == "?" || w == "!" || w == ";" || w == ":" || w == ")";
}

}  // namespace

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> words;
  std::string current;
  for (unsigned char c : text) {
    if (is_word_char(c)) {
      current.push_back(static_cast<char>(c < 0x80 ? std::tolower(c) : c));
      continue;
    }
    if (!current.empty()) {
      words.push_back(std::move(current));
      current.clear();
    }
    if (!std::isspace(c)) words.emplace_back(1, static_cast<char>(c));
  }
  if (!current.empty()) words.push_back(std::move(current));
  return words;
}

std::string join_words(std::span<const std::string> words) {
  std::string out;
  for (const auto& w : words) {
    if (!out.empty() && !attaches_left(w) && out.back() != '(') out.push_back(' ');
    out += w;
  }
  return out;
}

Vocabulary::Vocabulary(std::size_t cap) : cap_(cap) {
  if (cap < kReservedCount) throw ContractError("vocabulary cap below reserved size");
  for (const auto& t : reserved_tokens()) {
    token_to_id_.emplace(t, static_cast<std::int32_t>(id_to_token_.size()));
    id_to_token_.push_back(t);
  }
}

Vocabulary Vocabulary::build(std::span<const std::string> texts, std::size_t cap) {
  std::map<std::string, std::size_t> counts;
  for (const auto& t : texts) {
    for (auto& w : split_words(t)) ++counts[w];
  }
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  Vocabulary vocab(cap);
  for (const auto& [word, count] : ranked) {
    if (vocab.size() >= cap) break;
    vocab.add(word);
  }
  return vocab;
}

std::int32_t Vocabulary::id(std::string_view token) const {
  const auto it = token_to_id_.find(std::string(token));
  return it == token_to_id_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(std::int32_t id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= id_to_token_.size()) {
    throw ContractError("vocabulary: id " + std::to_string(id) + " out of range");
  }
  return id_to_token_[static_cast<std::size_t>(id)];
}

bool Vocabulary::contains(std::string_view token) const {
  return token_to_id_.count(std::string(token)) != 0;
}

std::int32_t Vocabulary::add(const std::string& token) {
  if (const auto it = token_to_id_.find(token); it != token_to_id_.end()) return it->second;
  if (id_to_token_.size() >= cap_) {
    throw ContractError("vocabulary: cap of " + std::to_string(cap_) + " reached");
  }
  const auto id = static_cast<std::int32_t>(id_to_token_.size());
  token_to_id_.emplace(token, id);
  id_to_token_.push_back(token);
  return id;
}

nlohmann::json Vocabulary::to_json() const {
  nlohmann::ordered_json reserved;
  for (std::size_t i = 0; i < kReservedCount; ++i) reserved[id_to_token_[i]] = i;
  nlohmann::ordered_json map;
  for (std::size_t i = kReservedCount; i < id_to_token_.size(); ++i) map[id_to_token_[i]] = i;
  nlohmann::ordered_json j;
  j["version"] = "1";
  j["reserved"] = reserved;
  j["cap"] = cap_;
  j["token_to_id"] = map;
  return nlohmann::json::parse(j.dump());
}

Vocabulary Vocabulary::from_json(const nlohmann::json& j) {
  try {
    const auto& reserved = j.at("reserved");
    for (std::size_t i = 0; i < kReservedCount; ++i) {
      if (reserved.at(reserved_tokens()[i]).get<std::size_t>() != i) {
        throw DataError("vocabulary: reserved id mismatch for " + reserved_tokens()[i]);
      }
    }
    Vocabulary vocab(j.value("cap", kDefaultVocabCap));
    std::vector<std::pair<std::size_t, std::string>> entries;
    for (const auto& [token, id] : j.at("token_to_id").items()) {
      entries.emplace_back(id.get<std::size_t>(), token);
    }
    std::sort(entries.begin(), entries.end());
    for (const auto& [id, token] : entries) {
      if (id != vocab.size()) throw DataError("vocabulary: ids are not contiguous at " + token);
      vocab.add(token);
    }
    return vocab;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("vocabulary: malformed json: ") + e.what());
  }
}

void Vocabulary::save(const std::filesystem::path& path) const {
  num::write_file_atomic(path, to_json().dump(1) + "\n");
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) {
    throw MissingArtifactError("vocabulary not found: " + path.string());
  }
  try {
    return from_json(nlohmann::json::parse(num::read_file(path)));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("vocabulary: " + path.string() + ": " + e.what());
  }
}

std::size_t TokenSequence::pad_count() const {
  return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), std::uint8_t{0}));
}

std::vector<std::int32_t> TokenSequence::real_ids() const {
  std::vector<std::int32_t> out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (mask[i]) out.push_back(ids[i]);
  }
  return out;
}

TokenSequence TokenSequence::from_ids(std::vector<std::int32_t> ids) {
  TokenSequence seq;
  seq.mask.assign(ids.size(), 1);
  seq.ids = std::move(ids);
  return seq;
}

TokenSequence tokenize(std::string_view text, const Vocabulary& vocab, std::size_t max_len, bool pad) {
  if (max_len == 0) throw ContractError("tokenize: max_len must be at least 1");
  std::vector<std::int32_t> ids;
  for (const auto& w : split_words(text)) {
    if (ids.size() == max_len) break;
    ids.push_back(vocab.id(w));
  }
  TokenSequence seq = TokenSequence::from_ids(std::move(ids));
  return pad ? left_pad(seq, max_len) : seq;
}

TokenSequence left_pad(const TokenSequence& seq, std::size_t length) {
  if (seq.size() >= length) return seq;
  const std::size_t extra = length - seq.size();
  TokenSequence out;
  out.ids.assign(extra, kPad);
  out.mask.assign(extra, 0);
  out.ids.insert(out.ids.end(), seq.ids.begin(), seq.ids.end());
  out.mask.insert(out.mask.end(), seq.mask.begin(), seq.mask.end());
  return out;
}

std::string detokenize(std::span<const std::int32_t> ids, const Vocabulary& vocab) {
  std::vector<std::string> words;
  for (std::int32_t id : ids) {
    if (id < static_cast<std::int32_t>(kReservedCount)) continue;
    words.push_back(vocab.token(id));
  }
  return join_words(words);
}

}  // namespace fairgrpo::text
