#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "fairgrpo/model/inference.hpp"
#include "fairgrpo/model/transformer.hpp"
#include "fairgrpo/numerics/rng.hpp"

namespace fairgrpo::sampling {

struct SamplerConfig {
  double temperature = 0.7;
  double top_p = 0.9;
  std::size_t max_new_tokens = 64;
  std::size_t group_size = 4;
  std::uint64_t rng_seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static SamplerConfig from_json(const nlohmann::json& j);
};

// Below this temperature decoding is greedy.
inline constexpr double kGreedyTemperature = 1e-4;
// EOS stays in the nucleus while its unfiltered probability exceeds this.
inline constexpr double kEosFloor = 1e-6;

// Smallest prefix in descending-probability order (ties by ascending id)
// whose mass reaches p, renormalised. p = 1 returns the input unchanged.
std::vector<double> filter_top_p(std::span<const double> probs, double p);

// filter_top_p, with EOS added back (at its unfiltered mass, then
// renormalised) when it was cut but exceeds kEosFloor.
std::vector<double> sampling_distribution(std::span<const double> probs, double p);

// Categorical draw walking ids in ascending order.
std::int32_t draw_token(std::span<const double> probs, num::Rng& rng);

// log softmax(logits / temperature).
std::vector<double> scaled_log_softmax(std::span<const double> logits, double temperature);

struct Completion {
  std::vector<std::int32_t> ids;  // includes the closing EOS when one was drawn
  // Under the unfiltered temperature-scaled distribution.
  std::vector<double> log_probs;
  bool ended_with_eos = false;
};

// Continues from a session that has already consumed the prompt.
Completion sample_completion(model::InferenceSession session, const SamplerConfig& config, num::Rng& rng);
Completion sample_completion(const model::Transformer& model, const text::TokenSequence& prompt,
                             const SamplerConfig& config, num::Rng& rng);

// Per-token log-probs of `completion` read off incremental decoding.
std::vector<double> session_log_probs(model::InferenceSession session, std::span<const std::int32_t> completion,
                                      double temperature);

struct CandidateGroup {
  text::TokenSequence prompt;
  std::vector<std::vector<std::int32_t>> completions;
  std::vector<std::vector<double>> policy_logprobs;
  std::vector<std::vector<double>> reference_logprobs;
  std::vector<double> rewards;
  std::vector<double> advantages;

  std::size_t size() const { return completions.size(); }
};

// G draws; member g uses substream derive_seed(rng_seed, {prompt_index, g}).
// Reference log-probs use the same temperature. `reference` may be null.
CandidateGroup sample_group(const model::Transformer& policy, const model::Transformer* reference,
                            const text::TokenSequence& prompt, const SamplerConfig& config,
                            std::uint64_t prompt_index);

}  // namespace fairgrpo::sampling
