#include "fairgrpo/sampling/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>

#include "fairgrpo/errors.hpp"

namespace fairgrpo::sampling {

void SamplerConfig::validate() const {
  if (!(temperature > 0.0)) throw ContractError("sampler: temperature must be positive");
  if (!(top_p > 0.0 && top_p <= 1.0)) throw ContractError("sampler: top_p must lie in (0, 1]");
  if (group_size < 2) throw ContractError("sampler: group_size must be at least 2");
  if (max_new_tokens == 0) throw ContractError("sampler: max_new_tokens must be positive");
}

nlohmann::json SamplerConfig::to_json() const {
  return {{"temperature", temperature}, {"top_p", top_p}, {"max_new_tokens", max_new_tokens},
          {"group_size", group_size},   {"rng_seed", rng_seed}};
}

SamplerConfig SamplerConfig::from_json(const nlohmann::json& j) {
  SamplerConfig c;
  c.temperature = j.value("temperature", c.temperature);
  c.top_p = j.value("top_p", c.top_p);
  c.max_new_tokens = j.value("max_new_tokens", c.max_new_tokens);
  c.group_size = j.value("group_size", c.group_size);
  c.rng_seed = j.value("rng_seed", c.rng_seed);
  return c;
}

std::vector<double> filter_top_p(std::span<const double> probs, double p) {
  std::vector<double> out(probs.begin(), probs.end());
  if (p >= 1.0) return out;
  std::vector<std::size_t> order(probs.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return probs[a] > probs[b]; });
  double cum = 0.0;
  std::size_t keep = 0;
  while (keep < order.size() && cum < p) cum += probs[order[keep++]];
  for (std::size_t i = keep; i < order.size(); ++i) out[order[i]] = 0.0;
  for (double& v : out) v /= cum;
  return out;
}

std::vector<double> sampling_distribution(std::span<const double> probs, double p) {
  auto kept = filter_top_p(probs, p);
  if (kept.size() > static_cast<std::size_t>(text::kEos) && kept[text::kEos] == 0.0 &&
      probs[text::kEos] > kEosFloor) {
    double z = probs[text::kEos];
    for (std::size_t i = 0; i < kept.size(); ++i) {
      if (kept[i] > 0.0) z += probs[i];
    }
    for (std::size_t i = 0; i < kept.size(); ++i) kept[i] = kept[i] > 0.0 ? probs[i] / z : 0.0;
    kept[text::kEos] = probs[text::kEos] / z;
  }
  return kept;
}

std::int32_t draw_token(std::span<const double> probs, num::Rng& rng) {
  const double total = std::accumulate(probs.begin(), probs.end(), 0.0);
  const double u = num::uniform01(rng) * total;
  double cum = 0.0;
  std::int32_t last = -1;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (probs[i] <= 0.0) continue;
    cum += probs[i];
    last = static_cast<std::int32_t>(i);
    if (u < cum) return last;
  }
  if (last < 0) throw NumericalError("sampler: distribution has no mass");
  return last;
}

std::vector<double> scaled_log_softmax(std::span<const double> logits, double temperature) {
  std::vector<double> out(logits.size());
  double mx = -INFINITY;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = logits[i] / temperature;
    mx = std::max(mx, out[i]);
  }
  double z = 0.0;
  for (double v : out) z += std::exp(v - mx);
  const double lz = mx + std::log(z);
  for (double& v : out) v -= lz;
  return out;
}

Completion sample_completion(model::InferenceSession session, const SamplerConfig& config, num::Rng& rng) {
  config.validate();
  const bool greedy = config.temperature < kGreedyTemperature;
  const double temperature = std::max(config.temperature, kGreedyTemperature);
  Completion c;
  std::vector<double> probs;
  for (std::size_t step = 0; step < config.max_new_tokens; ++step) {
    const auto logp = scaled_log_softmax(session.logits(), temperature);
    std::int32_t token;
    if (greedy) {
      token = static_cast<std::int32_t>(std::max_element(logp.begin(), logp.end()) - logp.begin());
    } else {
      probs.resize(logp.size());
      for (std::size_t i = 0; i < logp.size(); ++i) probs[i] = std::exp(logp[i]);
      token = draw_token(sampling_distribution(probs, config.top_p), rng);
    }
    c.ids.push_back(token);
    c.log_probs.push_back(logp[static_cast<std::size_t>(token)]);
    if (token == text::kEos) {
      c.ended_with_eos = true;
      break;
    }
    if (step + 1 < config.max_new_tokens) session.push(token);
  }
  return c;
}

Completion sample_completion(const model::Transformer& model, const text::TokenSequence& prompt,
                             const SamplerConfig& config, num::Rng& rng) {
  model::InferenceSession session(model);
  session.push_prompt(prompt);
  return sample_completion(std::move(session), config, rng);
}

std::vector<double> session_log_probs(model::InferenceSession session, std::span<const std::int32_t> completion,
                                      double temperature) {
  std::vector<double> out;
  out.reserve(completion.size());
  for (std::size_t i = 0; i < completion.size(); ++i) {
    out.push_back(scaled_log_softmax(session.logits(), temperature)[static_cast<std::size_t>(completion[i])]);
    if (i + 1 < completion.size()) session.push(completion[i]);
  }
  return out;
}

CandidateGroup sample_group(const model::Transformer& policy, const model::Transformer* reference,
                            const text::TokenSequence& prompt, const SamplerConfig& config,
                            std::uint64_t prompt_index) {
  config.validate();
  CandidateGroup g;
  g.prompt = prompt;
  model::InferenceSession base(policy);
  base.push_prompt(prompt);
  std::optional<model::InferenceSession> ref_base;
  if (reference) {
    ref_base.emplace(*reference);
    ref_base->push_prompt(prompt);
  }
  const double temperature = std::max(config.temperature, kGreedyTemperature);
  for (std::size_t m = 0; m < config.group_size; ++m) {
    num::Rng rng(num::derive_seed(config.rng_seed, {prompt_index, m}));
    Completion c = sample_completion(base, config, rng);
    if (ref_base) g.reference_logprobs.push_back(session_log_probs(*ref_base, c.ids, temperature));
    g.completions.push_back(std::move(c.ids));
    g.policy_logprobs.push_back(std::move(c.log_probs));
  }
  g.rewards.assign(config.group_size, 0.0);
  g.advantages.assign(config.group_size, 0.0);
  return g;
}

}  // namespace fairgrpo::sampling
