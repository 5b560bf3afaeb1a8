#include "fairgrpo/text/augment.hpp"

#include <cctype>
#include <regex>

#include "fairgrpo/errors.hpp"
#include "fairgrpo/text/tokenizer.hpp"

namespace fairgrpo::text {
namespace {

bool perturbable(const std::string& w) {
  if (w.size() < 4) return false;
  for (unsigned char c : w) {
    if (!std::isalpha(c)) return false;
  }
  return true;
}

std::string perturb(const std::string& w, num::Rng& rng) {
  std::string out = w;
  // Interior positions only, so the first letter survives.
  const std::size_t pos = 1 + static_cast<std::size_t>(rng() % (w.size() - 2));
  if (rng() % 2 == 0) {
    std::swap(out[pos], out[pos + 1]);
  } else {
    out.erase(pos, 1);
  }
  return out;
}

}  // namespace

void AugmentationConfig::validate() const {
  for (double p : {replacement_probability, perturbation_probability, paraphrase_probability}) {
    if (!(p >= 0.0 && p <= 1.0)) throw ContractError("augmentation: probability outside [0, 1]");
  }
  for (const auto& [word, options] : synonyms) {
    if (options.empty()) throw ContractError("augmentation: empty synonym list for '" + word + "'");
  }
  for (const auto& rule : paraphrase_templates) {
    try {
      std::regex re(rule.pattern);
    } catch (const std::regex_error&) {
      throw ContractError("augmentation: bad paraphrase pattern '" + rule.pattern + "'");
    }
  }
}

AugmentationConfig default_augmentation() {
  AugmentationConfig cfg;
  cfg.synonyms = {
      {"people", {"folks"}},          {"hire", {"employ"}},
      {"describe", {"characterize"}}, {"careful", {"cautious", "wary"}},
      {"trusted", {"believed"}},      {"weather", {"climate"}},
      {"popular", {"common"}},        {"travel", {"go"}},
      {"celebrate", {"observe"}},     {"tools", {"implements"}},
      {"train", {"study"}},           {"criticized", {"blamed"}},
      {"usually", {"normally"}},      {"known", {"famous"}},
  };
  cfg.replacement_probability = 0.1;
  cfg.perturbation_probability = 0.02;
  cfg.paraphrase_probability = 0.2;
  cfg.paraphrase_templates = {
      {R"(^why are (.+) (often|so|always) (.+)\?$)", "what explains that $1 are $2 $3?"},
      {R"(^can (.+) be trusted\?$)", "is it safe to trust $1?"},
      {R"(^would you hire (.+)\?$)", "would you give a job to $1?"},
      {R"(^how would you describe (.+)\?$)", "what would you say about $1?"},
  };
  return cfg;
}

DatasetRecord augment(const DatasetRecord& record, const AugmentationConfig& config, num::Rng& rng) {
  config.validate();
  DatasetRecord out = record;
  bool changed = false;

  std::string prompt = record.prompt;
  if (config.paraphrase_probability > 0.0 && !config.paraphrase_templates.empty() &&
      num::uniform01(rng) < config.paraphrase_probability) {
    const std::string normalized = join_words(split_words(prompt));
    for (const auto& rule : config.paraphrase_templates) {
      const std::regex re(rule.pattern);
      if (std::regex_match(normalized, re)) {
        prompt = std::regex_replace(normalized, re, rule.rewrite);
        changed = true;
        break;
      }
    }
  }

  std::vector<std::string> words = split_words(prompt);
  for (auto& w : words) {
    if (config.replacement_probability > 0.0) {
      const auto it = config.synonyms.find(w);
      if (it != config.synonyms.end() && num::uniform01(rng) < config.replacement_probability) {
        w = it->second[static_cast<std::size_t>(rng() % it->second.size())];
        changed = true;
      }
    }
    if (config.perturbation_probability > 0.0 && perturbable(w) &&
        num::uniform01(rng) < config.perturbation_probability) {
      w = perturb(w, rng);
      changed = true;
    }
  }
  if (changed) out.prompt = join_words(words);
  return out;
}

DatasetRecord augment(const DatasetRecord& record, const AugmentationConfig& config) {
  num::Rng rng(config.rng_seed);
  return augment(record, config, rng);
}

std::vector<DatasetRecord> augment_all(std::span<const DatasetRecord> records, const AugmentationConfig& config) {
  std::vector<DatasetRecord> out;
  out.reserve(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    num::Rng rng(num::derive_seed(config.rng_seed, {i}));
    out.push_back(augment(records[i], config, rng));
  }
  return out;
}

}  // namespace fairgrpo::text
