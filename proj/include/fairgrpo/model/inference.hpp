#pragma once

// Incremental decoding with a key/value cache over LoRA-merged weights. No
// graph is recorded. Logits agree with Transformer::forward up to rounding.

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "fairgrpo/model/transformer.hpp"

namespace fairgrpo::model {

struct MergedWeights;

class InferenceSession {
 public:
  // Snapshots the model's current weights; later updates are not seen.
  explicit InferenceSession(const Transformer& model);

  // Appends one token and returns the next-token logits.
  std::span<const double> push(std::int32_t token);
  // Pushes BOS followed by the prompt's real tokens.
  std::span<const double> push_prompt(const text::TokenSequence& prompt);

  std::size_t length() const { return length_; }
  std::span<const double> logits() const { return logits_; }
  std::size_t vocab_size() const;

 private:
  std::shared_ptr<const MergedWeights> weights_;
  // Per layer [max_position, d].
  std::vector<std::vector<double>> keys_, values_;
  std::vector<double> logits_;
  std::size_t length_ = 0;
};

}  // namespace fairgrpo::model
