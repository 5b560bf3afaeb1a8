#pragma once

// Pre-LN transformer with learned absolute positions. The causal variant is
// the language model (policy and reference); the bidirectional variant is
// the encoder under the fairness classifier.

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fairgrpo/numerics/checkpoint.hpp"
#include "fairgrpo/numerics/rng.hpp"
#include "fairgrpo/numerics/tensor.hpp"
#include "fairgrpo/text/tokenizer.hpp"

namespace fairgrpo::model {

using num::Tensor;

struct ModelConfig {
  std::size_t vocab_size = 0;
  std::size_t d_model = 128;
  std::size_t n_layers = 4;
  std::size_t n_heads = 4;
  std::size_t d_ff = 512;
  // 128 prompt + 64 completion; the prompt budget includes BOS.
  std::size_t max_position = 192;
  bool causal = true;
  bool lm_head = true;

  void validate() const;
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
  bool operator==(const ModelConfig&) const = default;
};

struct LoraConfig {
  std::size_t rank = 16;
  double alpha = 32.0;
  double dropout = 0.05;

  double scaling() const { return alpha / static_cast<double>(rank); }
  void validate() const;
  nlohmann::json to_json() const;
  static LoraConfig from_json(const nlohmann::json& j);
  bool operator==(const LoraConfig&) const = default;
};

// r=16, alpha=32 and r=8, alpha=16.
LoraConfig lora_methods_preset();
LoraConfig lora_experiments_preset();

// Low-rank update on a [d_out, d_in] weight: delta = scaling * B A.
struct LoraAdapter {
  Tensor A;  // [r, d_in], gaussian
  Tensor B;  // [d_out, r], zero
  double scaling = 1.0;
  double dropout = 0.0;

  static LoraAdapter create(std::size_t d_in, std::size_t d_out, const LoraConfig& config, num::Rng& rng);
  std::size_t rank() const { return A.dim(0); }
};

// W + scaling * B A as a fresh tensor; `weight` is not touched.
Tensor lora_merge_view(const Tensor& weight, const LoraAdapter& adapter);

// Left-padded id matrix [batch, seq] with its realness mask.
struct Batch {
  std::vector<std::int32_t> ids;
  std::vector<std::uint8_t> mask;
  std::size_t batch = 0;
  std::size_t seq = 0;

  // Left-pads every sequence to the longest one.
  static Batch from(std::span<const text::TokenSequence> sequences);
};

struct ForwardOptions {
  // Enables LoRA dropout.
  bool training = false;
  std::uint64_t dropout_seed = 0;
};

enum class Projection { query = 0, key = 1, value = 2, output = 3 };

class Transformer {
 public:
  Transformer(const ModelConfig& config, std::uint64_t seed);
  Transformer(Transformer&&) = default;
  Transformer& operator=(Transformer&&) = default;
  Transformer(const Transformer&) = delete;
  Transformer& operator=(const Transformer&) = delete;

  // Deep copy; tensors do not alias the original.
  Transformer clone() const;

  const ModelConfig& config() const { return config_; }

  // Adds fresh adapters (B = 0) on the four attention projections of every
  // layer. Base weights stop requiring gradients.
  void attach_lora(const LoraConfig& config, std::uint64_t seed);
  bool has_lora() const { return lora_.has_value(); }
  const std::optional<LoraConfig>& lora_config() const { return lora_; }
  const LoraAdapter& adapter(std::size_t layer, Projection p) const;
  LoraAdapter& adapter(std::size_t layer, Projection p);

  // Final-normalised hidden states [batch*seq, d_model].
  Tensor hidden(const Batch& batch, const ForwardOptions& options = {}) const;
  // LM logits for selected rows of `hidden` -> [rows, vocab].
  Tensor logits_for_rows(const Tensor& hidden, std::span<const std::size_t> rows) const;
  // Logits [batch, seq, vocab].
  Tensor forward(const Batch& batch, const ForwardOptions& options = {}) const;

  std::vector<num::NamedTensor> base_parameters() const;
  std::vector<num::NamedTensor> lora_parameters() const;
  std::vector<num::NamedTensor> all_parameters() const;
  void set_base_trainable(bool trainable);
  void set_lora_trainable(bool trainable);

  // Copies values by name; IncompatibleError on a missing name or shape.
  void load_parameters(const num::Checkpoint& checkpoint, bool with_lora);

  // Raw parameters for the inference path.
  struct Layer {
    Tensor ln1_gamma, ln1_beta;
    std::array<Tensor, 4> w;  // q, k, v, o: [d, d]
    std::array<Tensor, 4> b;
    Tensor ln2_gamma, ln2_beta;
    Tensor w_in, b_in;    // [d_ff, d], [d_ff]
    Tensor w_out, b_out;  // [d, d_ff], [d]
  };
  const std::vector<Layer>& layers() const { return layers_; }
  const Tensor& token_embedding() const { return tok_emb_; }
  const Tensor& position_embedding() const { return pos_emb_; }
  const Tensor& final_gamma() const { return lnf_gamma_; }
  const Tensor& final_beta() const { return lnf_beta_; }
  const Tensor& head() const { return head_; }
  Tensor& mutable_head() { return head_; }

 private:
  Transformer() = default;
  Tensor project(const Tensor& x, std::size_t layer, Projection p, const ForwardOptions& options) const;

  ModelConfig config_;
  Tensor tok_emb_, pos_emb_;
  std::vector<Layer> layers_;
  Tensor lnf_gamma_, lnf_beta_;
  Tensor head_;  // [vocab, d]; undefined without an LM head
  std::optional<LoraConfig> lora_;
  std::vector<std::array<LoraAdapter, 4>> adapters_;
};

// Deep copy with every gradient switched off.
Transformer freeze_reference(const Transformer& model);

// Prompt + completion sequences laid out as BOS, prompt tokens, completion
// tokens, left-padded. rows[i] is the hidden row whose logits predict
// targets[i]; completion c owns targets [offsets[c], offsets[c+1]).
struct LmBatch {
  Batch batch;
  std::vector<std::size_t> rows;
  std::vector<std::int32_t> targets;
  std::vector<std::size_t> offsets;

  static LmBatch build(std::span<const text::TokenSequence> prompts,
                       std::span<const std::vector<std::int32_t>> completions);
};

// Per-token log-probs of every completion under softmax(logits / temperature).
struct CompletionLogProbs {
  Tensor log_probs;  // [total completion tokens]
  std::vector<std::size_t> offsets;
};
CompletionLogProbs completion_log_probs(const Transformer& model, const LmBatch& lm, double temperature = 1.0,
                                        const ForwardOptions& options = {});

// Single completion, no graph recorded. Empty completion gives an empty list.
std::vector<double> log_prob_of_completion(const Transformer& model, const text::TokenSequence& prompt,
                                           std::span<const std::int32_t> completion, double temperature = 1.0);

// Checkpoint with config, adapter config and vocabulary in the metadata.
void save_model(const std::filesystem::path& path, const Transformer& model, const text::Vocabulary& vocab,
                const nlohmann::json& extra = nlohmann::json::object());
struct LoadedModel {
  Transformer model;
  text::Vocabulary vocab;
  nlohmann::json metadata;
};
LoadedModel load_model(const std::filesystem::path& path);

}  // namespace fairgrpo::model
