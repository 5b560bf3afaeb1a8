#pragma once

// Binary fairness judge and the sentence embedder that shares its encoder.
// Class 0 is "biased" (discriminatory), class 1 is "neutral".

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fairgrpo/model/transformer.hpp"
#include "fairgrpo/text/dataset.hpp"
#include "fairgrpo/text/tokenizer.hpp"

namespace fairgrpo::scorer {

using num::Tensor;

enum class EncoderKind { transformer, bag };

struct ClassifierConfig {
  EncoderKind kind = EncoderKind::transformer;
  std::size_t d_model = 64;
  std::size_t n_layers = 2;
  std::size_t n_heads = 4;
  std::size_t d_ff = 256;
  std::size_t max_len = 128;
  // Hashed bigram buckets of the bag encoder.
  std::size_t bigram_buckets = 2048;
  // Width of sentence embeddings; a fixed random projection is used when it
  // differs from d_model.
  std::size_t embedding_dim = 64;

  void validate() const;
  nlohmann::json to_json() const;
  static ClassifierConfig from_json(const nlohmann::json& j);
};

struct Embedding {
  std::vector<double> values;
  // Empty input: the vector is all zeros.
  bool degenerate = false;
};

class FairnessClassifier {
 public:
  FairnessClassifier(const ClassifierConfig& config, text::Vocabulary vocab, std::uint64_t seed);
  FairnessClassifier(FairnessClassifier&&) = default;
  FairnessClassifier& operator=(FairnessClassifier&&) = default;

  const ClassifierConfig& config() const { return config_; }
  const text::Vocabulary& vocab() const { return vocab_; }

  // Pooled encoder output [batch, d_model].
  Tensor pooled(std::span<const std::string> texts) const;
  // Two-class logits [batch, 2].
  Tensor logits(std::span<const std::string> texts) const;

  double p_neutral(const std::string& text) const;
  std::vector<double> p_neutral(std::span<const std::string> texts) const;

  Embedding embed(const std::string& text) const;

  std::vector<num::NamedTensor> parameters() const;
  Tensor& head_weight() { return head_w_; }
  Tensor& head_bias() { return head_b_; }

  void save(const std::filesystem::path& path, const nlohmann::json& extra = nlohmann::json::object()) const;
  static FairnessClassifier load(const std::filesystem::path& path);

 private:
  std::vector<std::int32_t> features(const std::string& text) const;

  ClassifierConfig config_;
  text::Vocabulary vocab_;
  std::shared_ptr<model::Transformer> encoder_;  // transformer kind
  Tensor bag_table_;                             // bag kind: [features, d_model]
  Tensor head_w_, head_b_;                       // [2, d_model], [2]
  std::vector<double> projection_;               // [embedding_dim, d_model] or empty
};

// Validation metrics with "discriminatory" as the positive class.
struct ClassifierMetrics {
  double loss = 0.0;
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double training_loss = 0.0;

  nlohmann::ordered_json to_json() const;
};

// Metrics from predictions and gold labels (1 = neutral) plus mean losses.
ClassifierMetrics metrics_from_predictions(std::span<const int> predicted, std::span<const int> gold,
                                           double loss, double training_loss);

struct ClassifierTrainOptions {
  std::size_t epochs = 5;
  std::size_t batch_size = 16;
  double learning_rate = 1e-3;
  double weight_decay = 0.01;
  double validation_fraction = 0.1;
  std::uint64_t seed = 0;
};

// lr 2e-5, batch 16, five epochs.
ClassifierTrainOptions classifier_reference_preset();

struct TrainedClassifier {
  FairnessClassifier classifier;
  ClassifierMetrics metrics;
};

// Texts are responses (the prompt when a record has none). Throws DataError
// when either label is absent.
TrainedClassifier train_fairness_classifier(std::span<const text::DatasetRecord> records, const ClassifierConfig& config,
                                            const ClassifierTrainOptions& options,
                                            const std::function<void(std::size_t, double)>& on_epoch = {});

}  // namespace fairgrpo::scorer
