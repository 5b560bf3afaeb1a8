#include "fairgrpo/rewards/rewards.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "fairgrpo/errors.hpp"
#include "fairgrpo/log.hpp"
#include "fairgrpo/model/inference.hpp"
#include "fairgrpo/sampling/sampler.hpp"

namespace fairgrpo::rewards {
namespace {

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Prompt budget leaves one slot for BOS.
constexpr std::size_t kPromptTokens = 127;
constexpr std::size_t kCompletionTokens = 64;

}  // namespace

void RewardConfig::validate() const {
  if (!(alpha_len > 0.0)) throw ContractError("rewards: alpha_len must be positive");
  if (!(entropy_gate_a > 0.0)) throw ContractError("rewards: entropy_gate_a must be positive");
  if (!(beta_flu > 0.0)) throw ContractError("rewards: beta_flu must be positive");
  if (ngram_n == 0) throw ContractError("rewards: ngram_n must be positive");
  if (!(epsilon_rep > 0.0)) throw ContractError("rewards: epsilon_rep must be positive");
  if (!(noise_sigma >= 0.0)) throw ContractError("rewards: noise_sigma must be non-negative");
  if (embedding_dim == 0) throw ContractError("rewards: embedding_dim must be positive");
}

nlohmann::json RewardConfig::to_json() const {
  return {{"alpha_len", alpha_len},
          {"target_length", target_length},
          {"entropy_gate_a", entropy_gate_a},
          {"entropy_gate_b", entropy_gate_b},
          {"beta_flu", beta_flu},
          {"ngram_n", ngram_n},
          {"epsilon_rep", epsilon_rep},
          {"noise_sigma", noise_sigma},
          {"noise_enabled", noise_enabled},
          {"entropy_mode", entropy_mode == EntropyMode::mean ? "mean" : "final_position"},
          {"semantic_source", semantic_source == SemanticSource::classifier ? "classifier" : "reference_lm"},
          {"embedding_dim", embedding_dim}};
}

RewardConfig RewardConfig::from_json(const nlohmann::json& j) {
  RewardConfig c;
  c.alpha_len = j.value("alpha_len", c.alpha_len);
  c.target_length = j.value("target_length", c.target_length);
  c.entropy_gate_a = j.value("entropy_gate_a", c.entropy_gate_a);
  c.entropy_gate_b = j.value("entropy_gate_b", c.entropy_gate_b);
  c.beta_flu = j.value("beta_flu", c.beta_flu);
  c.ngram_n = j.value("ngram_n", c.ngram_n);
  c.epsilon_rep = j.value("epsilon_rep", c.epsilon_rep);
  c.noise_sigma = j.value("noise_sigma", c.noise_sigma);
  c.noise_enabled = j.value("noise_enabled", c.noise_enabled);
  const std::string mode = j.value("entropy_mode", std::string("final_position"));
  if (mode == "mean") {
    c.entropy_mode = EntropyMode::mean;
  } else if (mode != "final_position") {
    throw ContractError("rewards: unknown entropy_mode '" + mode + "'");
  }
  const std::string source = j.value("semantic_source", std::string("reference_lm"));
  if (source == "classifier") {
    c.semantic_source = SemanticSource::classifier;
  } else if (source != "reference_lm") {
    throw ContractError("rewards: unknown semantic_source '" + source + "'");
  }
  c.embedding_dim = j.value("embedding_dim", c.embedding_dim);
  return c;
}

ScheduleState schedule(double t) {
  if (std::isnan(t)) throw ContractError("schedule: t is NaN");
  if (t < 0.0 || t > 1.0) {
    warn("schedule: t=" + std::to_string(t) + " outside [0, 1], clamped");
    t = std::clamp(t, 0.0, 1.0);
  }
  if (t < 0.3) return {t, 1.2, 0.6};
  if (t <= 0.7) return {t, 1.0, 1.0};
  return {t, 0.8, 1.4};
}

double fairness_reward(const scorer::FairnessClassifier& classifier, const std::string& completion) {
  return clamp01(classifier.p_neutral(completion));
}

double semantic_reward(const scorer::Embedding& prompt, const scorer::Embedding& completion) {
  if (prompt.degenerate || completion.degenerate) return 0.5;
  if (prompt.values.size() != completion.values.size()) throw DimensionError("semantic_reward: width mismatch");
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < prompt.values.size(); ++i) {
    ab += prompt.values[i] * completion.values[i];
    aa += prompt.values[i] * prompt.values[i];
    bb += completion.values[i] * completion.values[i];
  }
  if (aa == 0.0 || bb == 0.0) return 0.5;
  const double c = std::clamp(ab / std::sqrt(aa * bb), -1.0, 1.0);
  return clamp01((c + 1.0) / 2.0);
}

Flagged paraphrase_penalty(const std::string& prompt, const std::string& completion) {
  std::map<std::string, double> x, y;
  for (auto& w : text::split_words(prompt)) x[w] += 1.0;
  for (auto& w : text::split_words(completion)) y[w] += 1.0;
  if (y.empty()) return {1.0, true};
  if (x.empty()) return {1.0, false};
  double xy = 0.0, xx = 0.0, yy = 0.0;
  for (const auto& [w, c] : x) {
    xx += c * c;
    if (const auto it = y.find(w); it != y.end()) xy += c * it->second;
  }
  for (const auto& [w, c] : y) yy += c * c;
  const double rho = std::min(1.0, xy / std::sqrt(xx * yy));
  return {clamp01(1.0 - rho * rho), false};
}

double length_reward(std::size_t length, double entropy, const RewardConfig& config) {
  const double gap = std::abs(static_cast<double>(length) - static_cast<double>(config.target_length));
  const double gate = sigmoid(config.entropy_gate_a * (entropy - config.entropy_gate_b));
  return clamp01(std::exp(-config.alpha_len * gap) * gate);
}

double fluency_reward(double nll_per_token, const RewardConfig& config) {
  return clamp01(std::exp(-config.beta_flu * std::max(0.0, nll_per_token)));
}

double repetition_reward(std::span<const std::int32_t> tokens, const RewardConfig& config) {
  const std::size_t n = config.ngram_n;
  if (tokens.size() < n) return 1.0;
  const std::size_t total = tokens.size() - n + 1;
  std::set<std::vector<std::int32_t>> distinct;
  for (std::size_t i = 0; i < total; ++i) distinct.emplace(tokens.begin() + i, tokens.begin() + i + n);
  const double rep = static_cast<double>(total - distinct.size());
  return clamp01(1.0 - rep / (static_cast<double>(total) + config.epsilon_rep));
}

double form_score(const Components& c) {
  return kFormCoefficients[0] * c.r_sem + kFormCoefficients[1] * c.r_len + kFormCoefficients[2] * c.r_flu +
         kFormCoefficients[3] * c.r_para + kFormCoefficients[4] * c.r_rep;
}

nlohmann::ordered_json RewardBreakdown::to_json() const {
  nlohmann::ordered_json j;
  j["r_fair"] = r_fair;
  j["r_sem"] = r_sem;
  j["r_para"] = r_para;
  j["r_len"] = r_len;
  j["r_flu"] = r_flu;
  j["r_rep"] = r_rep;
  j["form"] = form;
  j["w_fair"] = w_fair;
  j["w_form"] = w_form;
  j["t"] = t;
  j["raw"] = raw;
  j["final_pre_noise"] = final_pre_noise;
  j["noise_factor"] = noise_factor;
  j["final"] = final;
  j["degenerate"] = degenerate;
  return j;
}

RewardBreakdown compose(const Components& components, const ScheduleState& weights, const RewardConfig& config,
                        num::Rng* noise) {
  if (!(weights.w_fair > 0.0 && weights.w_form > 0.0)) throw ContractError("compose: weights must be positive");
  RewardBreakdown b;
  b.r_fair = clamp01(components.r_fair);
  b.r_sem = clamp01(components.r_sem);
  b.r_para = clamp01(components.r_para);
  b.r_len = clamp01(components.r_len);
  b.r_flu = clamp01(components.r_flu);
  b.r_rep = clamp01(components.r_rep);
  b.form = form_score({b.r_fair, b.r_sem, b.r_para, b.r_len, b.r_flu, b.r_rep});
  b.w_fair = weights.w_fair;
  b.w_form = weights.w_form;
  b.t = weights.t;
  b.raw = b.w_fair * b.r_fair + b.w_form * b.form;
  b.final_pre_noise = b.raw / (b.w_fair + b.w_form);
  if (config.noise_enabled && noise) {
    std::normal_distribution<double> eta(1.0, config.noise_sigma);
    b.noise_factor = std::clamp(eta(*noise), 0.8, 1.2);
  }
  b.final = clamp01(b.final_pre_noise * b.noise_factor);
  return b;
}

RewardEngine::RewardEngine(const scorer::FairnessClassifier& classifier, const model::Transformer& reference,
                           const text::Vocabulary& vocab, RewardConfig config)
    : classifier_(&classifier), reference_(&reference), vocab_(&vocab), config_(config) {
  config_.validate();
  if (reference.config().vocab_size != vocab.size()) {
    throw IncompatibleError("reward engine: reference model vocabulary does not match");
  }
  if (config_.semantic_source == SemanticSource::reference_lm) lm_encoder_.emplace(reference, vocab, config_.embedding_dim);
}

ReferenceStats RewardEngine::reference_stats(const text::TokenSequence& prompt,
                                             std::span<const std::int32_t> completion) const {
  std::size_t content = completion.size();
  if (content > 0 && completion.back() == text::kEos) --content;
  model::InferenceSession session(*reference_);
  session.push_prompt(prompt);
  auto entropy_now = [&] {
    const auto logp = sampling::scaled_log_softmax(session.logits(), 1.0);
    double h = 0.0;
    for (double lp : logp) h -= std::exp(lp) * lp;
    return h;
  };
  ReferenceStats s;
  s.content_length = content;
  double nll = 0.0, entropy_sum = 0.0;
  for (std::size_t i = 0; i < content; ++i) {
    if (config_.entropy_mode == EntropyMode::mean) entropy_sum += entropy_now();
    const auto logp = sampling::scaled_log_softmax(session.logits(), 1.0);
    nll -= logp[static_cast<std::size_t>(completion[i])];
    session.push(completion[i]);
  }
  const double final_entropy = entropy_now();
  s.entropy = config_.entropy_mode == EntropyMode::mean
                  ? (entropy_sum + final_entropy) / static_cast<double>(content + 1)
                  : final_entropy;
  s.nll_per_token = content == 0 ? 0.0 : nll / static_cast<double>(content);
  return s;
}

RewardBreakdown RewardEngine::score(const std::string& prompt_text, const text::TokenSequence& prompt,
                                    std::span<const std::int32_t> completion, double t, num::Rng* noise) const {
  std::size_t content = completion.size();
  if (content > 0 && completion.back() == text::kEos) --content;
  const auto content_ids = completion.first(content);
  const std::string completion_text = text::detokenize(content_ids, *vocab_);
  const ReferenceStats stats = reference_stats(prompt, completion);

  std::vector<std::string> degenerate;
  Components c;
  c.r_fair = fairness_reward(*classifier_, completion_text);
  const auto ex = lm_encoder_ ? lm_encoder_->embed(prompt_text) : classifier_->embed(prompt_text);
  const auto ey = lm_encoder_ ? lm_encoder_->embed(completion_text) : classifier_->embed(completion_text);
  c.r_sem = semantic_reward(ex, ey);
  if (ex.degenerate || ey.degenerate) degenerate.push_back("r_sem");
  const Flagged para = paraphrase_penalty(prompt_text, completion_text);
  c.r_para = para.value;
  if (para.degenerate) degenerate.push_back("r_para");
  c.r_len = length_reward(content, stats.entropy, config_);
  if (content == 0) {
    c.r_flu = 0.0;
    degenerate.push_back("r_flu");
  } else {
    c.r_flu = fluency_reward(stats.nll_per_token, config_);
  }
  c.r_rep = repetition_reward(content_ids, config_);
  RewardBreakdown b = compose(c, schedule(t), config_, noise);
  b.degenerate = std::move(degenerate);
  return b;
}

RewardBreakdown RewardEngine::score_text(const std::string& prompt, const std::string& completion, double t,
                                         num::Rng* noise) const {
  const auto p = text::tokenize(prompt, *vocab_, kPromptTokens, false);
  auto c = text::tokenize(completion, *vocab_, kCompletionTokens, false);
  return score(prompt, p, c.ids, t, noise);
}

}  // namespace fairgrpo::rewards
