#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

namespace fairgrpo::text {

inline constexpr std::int32_t kPad = 0;
inline constexpr std::int32_t kBos = 1;
inline constexpr std::int32_t kEos = 2;
inline constexpr std::int32_t kUnk = 3;
inline constexpr std::size_t kReservedCount = 4;
inline constexpr std::size_t kDefaultVocabCap = 4096;

// Lowercases ASCII and splits on whitespace; every punctuation character is
// its own token. Letters, digits, apostrophes, hyphens and non-ASCII bytes
// form words.
std::vector<std::string> split_words(std::string_view text);

// Inverse of split_words up to case and whitespace: words joined by single
// spaces, with closing punctuation attached to the preceding word.
std::string join_words(std::span<const std::string> words);

class Vocabulary {
 public:
  explicit Vocabulary(std::size_t cap = kDefaultVocabCap);

  // Tokens ordered by descending frequency, ties alphabetical, until the cap.
  static Vocabulary build(std::span<const std::string> texts, std::size_t cap = kDefaultVocabCap);

  // UNK for unknown tokens.
  std::int32_t id(std::string_view token) const;
  const std::string& token(std::int32_t id) const;
  bool contains(std::string_view token) const;
  std::size_t size() const { return id_to_token_.size(); }
  std::size_t cap() const { return cap_; }

  // Returns the existing id, or appends; throws ContractError past the cap.
  std::int32_t add(const std::string& token);

  nlohmann::json to_json() const;
  static Vocabulary from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

  bool operator==(const Vocabulary& other) const { return id_to_token_ == other.id_to_token_; }

 private:
  std::unordered_map<std::string, std::int32_t> token_to_id_;
  std::vector<std::string> id_to_token_;
  std::size_t cap_;
};

// Token ids with a realness mask (1 = token, 0 = pad). Padding is always a
// contiguous prefix.
struct TokenSequence {
  std::vector<std::int32_t> ids;
  std::vector<std::uint8_t> mask;

  std::size_t size() const { return ids.size(); }
  std::size_t pad_count() const;
  std::vector<std::int32_t> real_ids() const;
  bool operator==(const TokenSequence&) const = default;

  static TokenSequence from_ids(std::vector<std::int32_t> ids);
};

// Keeps the first max_len tokens; with `pad`, left-pads to exactly max_len.
TokenSequence tokenize(std::string_view text, const Vocabulary& vocab, std::size_t max_len, bool pad);

TokenSequence left_pad(const TokenSequence& seq, std::size_t length);

// Skips reserved ids.
std::string detokenize(std::span<const std::int32_t> ids, const Vocabulary& vocab);

}  // namespace fairgrpo::text
