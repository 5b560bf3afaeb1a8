#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fairgrpo/model/transformer.hpp"
#include "fairgrpo/rewards/rewards.hpp"
#include "fairgrpo/sampling/sampler.hpp"
#include "fairgrpo/scorer/classifier.hpp"
#include "fairgrpo/text/dataset.hpp"

namespace fairgrpo::grpo {

struct GrpoConfig {
  std::size_t group_size = 4;
  double clip_epsilon = 0.2;
  double kl_coefficient = 0.04;
  double learning_rate = 2e-5;
  double weight_decay = 0.0;
  // Global gradient-norm clip over the adapters; 0 disables.
  double max_grad_norm = 1.0;
  std::size_t epochs = 4;
  std::size_t batch_prompts = 8;
  std::size_t grad_accum_steps = 2;
  double advantage_std_epsilon = 1e-6;
  std::size_t log_every = 10;
  // Periodic checkpoint interval in optimizer steps; 0 disables.
  std::size_t checkpoint_every = 100;
  // Halt when the step mean reward stays below fraction * best for this many
  // consecutive steps.
  std::size_t divergence_patience = 200;
  double divergence_fraction = 0.5;

  void validate() const;
  nlohmann::json to_json() const;
  static GrpoConfig from_json(const nlohmann::json& j);
};

// lr 2e-5, 8 prompts, accumulation 2 (LoRA 16/32).
GrpoConfig methods_preset();
// lr 5e-5, 4 prompts, accumulation 1 (LoRA 8/16).
GrpoConfig experiments_preset();

// (r - mean) / (population std + eps).
std::vector<double> compute_advantages(std::span<const double> rewards, double std_epsilon = 1e-6);

struct LossStats {
  double loss = 0.0;
  double surrogate = 0.0;
  double kl = 0.0;            // mean per-token estimate
  double clip_fraction = 0.0;  // tokens with ratio outside [1-eps, 1+eps]
  std::size_t tokens = 0;
};

struct LossResult {
  num::Tensor loss;
  LossStats stats;
};

// Token-mean within each completion, mean over each group's completions,
// mean over groups. Groups must carry advantages and both log-prob sets.
LossResult grpo_loss(std::span<const sampling::CandidateGroup> groups, const model::Transformer& policy,
                     const GrpoConfig& config, double temperature, const model::ForwardOptions& options = {});

struct LogRecord {
  std::size_t step = 0;
  double t = 0.0;
  double w_form = 0.0, w_fair = 0.0;
  double mean_reward = 0.0;
  double r_fair = 0.0, r_sem = 0.0, r_para = 0.0, r_len = 0.0, r_flu = 0.0, r_rep = 0.0;
  double loss = 0.0, kl = 0.0, clip_fraction = 0.0;
};

// step,t,w_form,w_fair,mean_reward,r_fair,r_sem,r_para,r_len,r_flu,r_rep,loss,kl,clip_fraction
std::string log_csv_header();
std::string log_csv_row(const LogRecord& record);

struct TrainOptions {
  GrpoConfig grpo;
  sampling::SamplerConfig sampler;
  std::uint64_t seed = 0;
  // Optional directory for log.csv and checkpoints.
  std::optional<std::filesystem::path> out_dir;
  // Completions per validation prompt at epoch ends.
  std::size_t validation_samples = 2;
};

struct TrainResult {
  std::vector<LogRecord> logs;
  std::size_t steps = 0;
  std::size_t total_steps = 0;
  bool diverged = false;
  // Mean training reward over the first and the last epoch.
  double first_epoch_reward = 0.0;
  double last_epoch_reward = 0.0;
  // Validation reward before training and after each epoch.
  std::vector<double> validation_rewards;
  double best_validation_reward = 0.0;
};

// Fine-tunes the policy's adapters. `reference` must be the frozen step-0
// copy. Prompts use their `prompt` field only.
TrainResult train(model::Transformer& policy, const model::Transformer& reference,
                  const rewards::RewardEngine& engine, const text::Vocabulary& vocab,
                  std::span<const text::DatasetRecord> train_prompts,
                  std::span<const text::DatasetRecord> validation_prompts, const TrainOptions& options,
                  const std::function<void(const LogRecord&)>& on_log = {});

struct EvalMetrics {
  double fairness = 0.0;
  double fluency = 0.0;
  double relevance = 0.0;
  std::size_t completions = 0;
};

// Noise-free scoring of seeded samples; completion j of prompt i uses
// substream derive_seed(seed, {i, j}) for every model alike.
EvalMetrics evaluate(const model::Transformer& model, std::span<const text::DatasetRecord> prompts,
                     const rewards::RewardEngine& engine, const sampling::SamplerConfig& sampler, std::uint64_t seed,
                     std::size_t samples_per_prompt = 4);

// Mean noise-free composite reward at fixed t.
double validation_reward(const model::Transformer& model, std::span<const text::DatasetRecord> prompts,
                         const rewards::RewardEngine& engine, const sampling::SamplerConfig& sampler,
                         std::uint64_t seed, std::size_t samples_per_prompt, double t = 0.5);

}  // namespace fairgrpo::grpo
