#pragma once

// Deterministic templated corpus about invented regions, peoples and trades.
// Topic prompts can be answered with a neutral or a stereotyping template;
// distractor prompts ask ordinary questions and only get neutral answers.

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fairgrpo/text/dataset.hpp"

namespace fairgrpo::text {

struct CorpusOptions {
  std::uint64_t seed = 7;
  std::size_t n_records = 2000;
  // Share of neutral records that are distractor questions.
  double distractor_fraction = 0.2;
};

// Labels alternate so the neutral share is exactly ceil(n/2)/n; the order is
// then shuffled.
std::vector<DatasetRecord> generate_synthetic_corpus(const CorpusOptions& options);
std::vector<DatasetRecord> generate_synthetic_corpus(std::uint64_t seed, std::size_t n_records);

enum class PromptSplit { train, eval };

// Unlabelled prompts for policy optimisation. Every (template, group) pair is
// assigned to exactly one split, so eval prompts never appear in train.
std::vector<DatasetRecord> generate_prompt_set(std::uint64_t seed, std::size_t n, PromptSplit split,
                                               double distractor_fraction = 0.2);

// The phrase every stereotyping response template carries.
std::span<const std::string_view> stereotype_markers();

// Real place, nationality and ethnicity names that must never be emitted.
std::span<const std::string_view> real_name_denylist();

}  // namespace fairgrpo::text
