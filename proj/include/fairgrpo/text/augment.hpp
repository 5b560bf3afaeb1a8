#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "fairgrpo/numerics/rng.hpp"
#include "fairgrpo/text/dataset.hpp"

namespace fairgrpo::text {

// ECMAScript regex over the whole lowercased prompt; `rewrite` may use $1..$n.
struct ParaphraseRule {
  std::string pattern;
  std::string rewrite;
  bool operator==(const ParaphraseRule&) const = default;
};

struct AugmentationConfig {
  std::map<std::string, std::vector<std::string>> synonyms;
  double replacement_probability = 0.1;
  double perturbation_probability = 0.02;
  // Chance of applying the first matching paraphrase rule.
  double paraphrase_probability = 0.0;
  std::vector<ParaphraseRule> paraphrase_templates;
  std::uint64_t rng_seed = 0;

  // Throws ContractError on probabilities outside [0,1], empty synonym lists
  // or rules whose pattern does not compile.
  void validate() const;
  bool operator==(const AugmentationConfig&) const = default;
};

// Synonym dictionary and paraphrase rules for the bundled corpus templates.
AugmentationConfig default_augmentation();

// Augments the prompt: optional template paraphrase, then independent per-word
// synonym swaps, then per-word character perturbation (swap two adjacent
// characters or drop one). Label, category and response are preserved; an
// untouched prompt is returned byte-for-byte.
DatasetRecord augment(const DatasetRecord& record, const AugmentationConfig& config, num::Rng& rng);
// Draws from a generator seeded with config.rng_seed.
DatasetRecord augment(const DatasetRecord& record, const AugmentationConfig& config);

// Record i uses substream derive_seed(rng_seed, {i}).
std::vector<DatasetRecord> augment_all(std::span<const DatasetRecord> records, const AugmentationConfig& config);

}  // namespace fairgrpo::text
