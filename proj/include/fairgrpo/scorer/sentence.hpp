#pragma once

// Sentence embeddings from a language model's input token vectors: the mean
// of the embedding rows of the text's tokens, optionally projected.

#include <cstdint>
#include <string>
#include <vector>

#include "fairgrpo/model/transformer.hpp"
#include "fairgrpo/scorer/classifier.hpp"
#include "fairgrpo/text/tokenizer.hpp"

namespace fairgrpo::scorer {

class TokenMeanEncoder {
 public:
  // Copies the embedding table; `vocab` must outlive the encoder. A fixed
  // random projection is applied when dim differs from the model width.
  TokenMeanEncoder(const model::Transformer& lm, const text::Vocabulary& vocab, std::size_t dim = 64);

  // Empty text gives a zero vector flagged degenerate.
  Embedding embed(const std::string& text) const;
  std::size_t dim() const { return dim_; }

 private:
  const text::Vocabulary* vocab_;
  std::vector<double> table_;
  std::size_t width_;
  std::size_t dim_;
  std::vector<double> projection_;  // [dim, width] or empty
};

}  // namespace fairgrpo::scorer
