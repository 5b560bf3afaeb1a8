#pragma once

// Six reward components, the fixed-coefficient Form aggregate, the
// weighted normalised composite and its piecewise schedule.

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fairgrpo/model/transformer.hpp"
#include "fairgrpo/numerics/rng.hpp"
#include "fairgrpo/scorer/classifier.hpp"
#include "fairgrpo/scorer/sentence.hpp"

namespace fairgrpo::rewards {

enum class EntropyMode { final_position, mean };
// Where sentence embeddings for the semantic reward come from.
enum class SemanticSource { reference_lm, classifier };

// Order: semantic, length, fluency, paraphrase, repetition.
inline constexpr std::array<double, 5> kFormCoefficients{0.30, 0.25, 0.15, 0.20, 0.10};

struct RewardConfig {
  double alpha_len = 0.02;
  std::size_t target_length = 48;
  double entropy_gate_a = 2.0;
  double entropy_gate_b = 2.5;
  double beta_flu = 1.0;
  std::size_t ngram_n = 3;
  double epsilon_rep = 1e-6;
  double noise_sigma = 0.05;
  bool noise_enabled = true;
  EntropyMode entropy_mode = EntropyMode::final_position;
  SemanticSource semantic_source = SemanticSource::reference_lm;
  std::size_t embedding_dim = 64;

  void validate() const;
  nlohmann::json to_json() const;
  static RewardConfig from_json(const nlohmann::json& j);
};

struct ScheduleState {
  double t = 0.0;
  double w_form = 1.0;
  double w_fair = 1.0;
};

// (1.2, 0.6) for t < 0.3, (1.0, 1.0) for 0.3 <= t <= 0.7, (0.8, 1.4) after.
// t outside [0, 1] is clamped with a warning.
ScheduleState schedule(double t);

double fairness_reward(const scorer::FairnessClassifier& classifier, const std::string& completion);

// (cos + 1) / 2; 0.5 when either side is degenerate or has zero norm.
double semantic_reward(const scorer::Embedding& prompt, const scorer::Embedding& completion);

struct Flagged {
  double value = 0.0;
  bool degenerate = false;
};

// 1 - rho^2 with rho the cosine of lowercased term-frequency vectors. An
// empty completion scores 1 and is flagged.
Flagged paraphrase_penalty(const std::string& prompt, const std::string& completion);

// exp(-alpha |L - L*|) * sigmoid(a (H - b)).
double length_reward(std::size_t length, double entropy, const RewardConfig& config);

// exp(-beta * nll).
double fluency_reward(double nll_per_token, const RewardConfig& config);

// 1 - (N - distinct)/(N + eps) over the N n-grams; 1 when N = 0.
double repetition_reward(std::span<const std::int32_t> tokens, const RewardConfig& config);

struct Components {
  double r_fair = 0.0, r_sem = 0.0, r_para = 0.0, r_len = 0.0, r_flu = 0.0, r_rep = 0.0;
};

double form_score(const Components& c);

struct RewardBreakdown {
  double r_fair = 0.0, r_sem = 0.0, r_para = 0.0, r_len = 0.0, r_flu = 0.0, r_rep = 0.0;
  double form = 0.0;
  double w_fair = 1.0, w_form = 1.0;
  double t = 0.0;
  double raw = 0.0;
  double final_pre_noise = 0.0;
  double noise_factor = 1.0;
  // final_pre_noise * noise_factor, clamped to [0, 1].
  double final = 0.0;
  std::vector<std::string> degenerate;

  nlohmann::ordered_json to_json() const;
};

// Clamps each component to [0, 1], then combines. `noise` is used only when
// config.noise_enabled; eta ~ N(1, sigma) clamped to [0.8, 1.2].
RewardBreakdown compose(const Components& components, const ScheduleState& weights, const RewardConfig& config,
                        num::Rng* noise = nullptr);

// Reference-model statistics of a completion at temperature 1.
struct ReferenceStats {
  double nll_per_token = 0.0;  // over content tokens (EOS excluded)
  double entropy = 0.0;        // nats
  std::size_t content_length = 0;
};

class RewardEngine {
 public:
  // Holds references; all three must outlive the engine.
  RewardEngine(const scorer::FairnessClassifier& classifier, const model::Transformer& reference,
               const text::Vocabulary& vocab, RewardConfig config);

  const RewardConfig& config() const { return config_; }
  const text::Vocabulary& vocab() const { return *vocab_; }

  ReferenceStats reference_stats(const text::TokenSequence& prompt, std::span<const std::int32_t> completion) const;

  // Completion ids may end in EOS. `noise` as for compose().
  RewardBreakdown score(const std::string& prompt_text, const text::TokenSequence& prompt,
                        std::span<const std::int32_t> completion, double t, num::Rng* noise = nullptr) const;

  // Scores text by tokenising both sides with the engine's vocabulary.
  RewardBreakdown score_text(const std::string& prompt, const std::string& completion, double t,
                             num::Rng* noise = nullptr) const;

 private:
  const scorer::FairnessClassifier* classifier_;
  const model::Transformer* reference_;
  const text::Vocabulary* vocab_;
  RewardConfig config_;
  std::optional<scorer::TokenMeanEncoder> lm_encoder_;
};

}  // namespace fairgrpo::rewards
