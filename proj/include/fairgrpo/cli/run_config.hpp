#pragma once

// Everything a CLI invocation needs, stored as one JSON file. The `preset`
// field picks the GRPO and LoRA hyperparameters; any field present in the
// file overrides the preset value.

#include <cstdint>
#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "fairgrpo/grpo/grpo.hpp"
#include "fairgrpo/model/pretrain.hpp"
#include "fairgrpo/model/transformer.hpp"
#include "fairgrpo/rewards/rewards.hpp"
#include "fairgrpo/sampling/sampler.hpp"
#include "fairgrpo/scorer/classifier.hpp"

namespace fairgrpo::cli {

enum class Preset { methods, experiments };

std::string_view to_string(Preset preset);
// Throws ContractError on an unknown name.
Preset parse_preset(std::string_view name);

// Empty paths resolve to fixed names under out_dir.
struct PathsConfig {
  std::filesystem::path out_dir = "runs";
  std::filesystem::path corpus;
  std::filesystem::path train_prompts;
  std::filesystem::path validation_prompts;
  std::filesystem::path eval_prompts;
  std::filesystem::path base_model;
  std::filesystem::path classifier;
  std::filesystem::path tuned_model;

  std::filesystem::path resolved_corpus() const;
  std::filesystem::path resolved_train_prompts() const;
  std::filesystem::path resolved_validation_prompts() const;
  std::filesystem::path resolved_eval_prompts() const;
  std::filesystem::path resolved_base_model() const;
  std::filesystem::path resolved_classifier() const;
  std::filesystem::path resolved_tuned_model() const;
  std::filesystem::path grpo_dir() const { return out_dir / "grpo"; }
};

struct DataConfig {
  std::size_t n_records = 2000;
  double distractor_fraction = 0.2;
  std::size_t n_train_prompts = 500;
  std::size_t n_validation_prompts = 32;
  std::size_t n_eval_prompts = 100;
  // Synonym/perturbation/paraphrase augmentation of corpus prompts.
  bool augment = false;
  double replacement_probability = 0.1;
  double perturbation_probability = 0.02;
  double paraphrase_probability = 0.2;
};

struct EvalConfig {
  std::size_t samples_per_prompt = 4;
};

struct RunConfig {
  Preset preset = Preset::experiments;
  std::uint64_t seed = 0;
  PathsConfig paths;
  DataConfig data;
  model::ModelConfig model;  // vocab_size is filled in by pretraining
  model::PretrainOptions pretrain;
  scorer::ClassifierConfig classifier;
  scorer::ClassifierTrainOptions classifier_train;
  model::LoraConfig lora;
  grpo::GrpoConfig grpo;
  sampling::SamplerConfig sampler;
  rewards::RewardConfig rewards;
  EvalConfig eval;

  // Defaults with the preset's GRPO and LoRA hyperparameters.
  static RunConfig for_preset(Preset preset);

  void validate() const;
  nlohmann::json to_json() const;
  static RunConfig from_json(const nlohmann::json& j);
  // As from_json, but layered over `preset` instead of the file's own field.
  static RunConfig from_json(const nlohmann::json& j, Preset preset);

  void save(const std::filesystem::path& path) const;
  // Throws MissingArtifactError when absent, DataError on malformed JSON.
  static RunConfig load(const std::filesystem::path& path);
};

}  // namespace fairgrpo::cli
