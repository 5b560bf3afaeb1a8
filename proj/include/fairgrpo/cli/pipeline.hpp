#pragma once

// Pipeline stages shared by the CLI subcommands and the acceptance run.

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fairgrpo/cli/run_config.hpp"
#include "fairgrpo/grpo/grpo.hpp"
#include "fairgrpo/model/pretrain.hpp"
#include "fairgrpo/scorer/classifier.hpp"
#include "fairgrpo/text/dataset.hpp"

namespace fairgrpo::cli {

enum class Stage : std::uint64_t {
  corpus = 1,
  train_prompts,
  validation_prompts,
  eval_prompts,
  augmentation,
  model_init,
  pretrain,
  classifier,
  lora,
  grpo,
  validation,
  eval,
  generate,
};

std::uint64_t stage_seed(std::uint64_t seed, Stage stage);

struct DataBundle {
  std::vector<text::DatasetRecord> corpus;
  std::vector<text::DatasetRecord> train_prompts;
  std::vector<text::DatasetRecord> validation_prompts;
  std::vector<text::DatasetRecord> eval_prompts;
};

// Validation prompts come from the training split under their own seed;
// eval prompts come from the disjoint eval split.
DataBundle generate_data(const DataConfig& config, std::uint64_t seed);

// Counts per label and per category for each file.
nlohmann::ordered_json data_summary(const DataBundle& data);

// Vocabulary over corpus prompts and responses plus the GRPO prompts.
text::Vocabulary lm_vocabulary(std::span<const text::DatasetRecord> corpus,
                               std::span<const text::DatasetRecord> prompts);

// (prompt, response) pairs of the records that carry a response.
std::vector<model::LmExample> lm_examples(std::span<const text::DatasetRecord> corpus, const text::Vocabulary& vocab);

struct BaseModel {
  model::Transformer model;
  text::Vocabulary vocab;
  std::vector<model::PretrainEpoch> history;
};

BaseModel pretrain_base(const RunConfig& config, std::span<const text::DatasetRecord> corpus,
                        std::span<const text::DatasetRecord> train_prompts,
                        const std::function<void(const model::PretrainEpoch&)>& on_epoch = {});

scorer::TrainedClassifier train_classifier(const RunConfig& config, std::span<const text::DatasetRecord> corpus,
                                           const std::function<void(std::size_t, double)>& on_epoch = {});

// Attaches fresh adapters to `policy` and runs GRPO against the frozen base.
grpo::TrainResult tune(const RunConfig& config, model::Transformer& policy, const model::Transformer& base,
                       const scorer::FairnessClassifier& classifier, const text::Vocabulary& vocab,
                       std::span<const text::DatasetRecord> train_prompts,
                       std::span<const text::DatasetRecord> validation_prompts,
                       const std::optional<std::filesystem::path>& out_dir,
                       const std::function<void(const grpo::LogRecord&)>& on_log = {});

struct Comparison {
  grpo::EvalMetrics base;
  grpo::EvalMetrics tuned;
};

// Both models are scored against the base model as reference, noise off.
Comparison compare(const RunConfig& config, const model::Transformer& base, const model::Transformer& tuned,
                   const scorer::FairnessClassifier& classifier, const text::Vocabulary& vocab,
                   std::span<const text::DatasetRecord> eval_prompts);

// Two rows (base, tuned) by three metrics.
nlohmann::ordered_json comparison_json(const Comparison& c);
std::string comparison_csv(const Comparison& c);
// Per-metric bar series: labels and values taken from the same numbers.
nlohmann::ordered_json plot_data_json(const Comparison& c);
std::string plot_data_csv(const Comparison& c);

}  // namespace fairgrpo::cli
