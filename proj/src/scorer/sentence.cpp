#include "fairgrpo/scorer/sentence.hpp"

#include <cmath>
#include <random>

#include "fairgrpo/errors.hpp"
#include "fairgrpo/numerics/rng.hpp"

namespace fairgrpo::scorer {

TokenMeanEncoder::TokenMeanEncoder(const model::Transformer& lm, const text::Vocabulary& vocab, std::size_t dim)
    : vocab_(&vocab), width_(lm.config().d_model), dim_(dim) {
  if (lm.config().vocab_size != vocab.size()) {
    throw IncompatibleError("sentence encoder: model vocabulary does not match");
  }
  if (dim == 0) throw ContractError("sentence encoder: dim must be positive");
  const auto t = lm.token_embedding().values();
  table_.assign(t.begin(), t.end());
  if (dim_ != width_) {
    num::Rng rng(num::derive_seed(0x5e47u, {dim_, width_}));
    std::normal_distribution<double> pd(0.0, 1.0 / std::sqrt(static_cast<double>(dim_)));
    projection_.resize(dim_ * width_);
    for (double& v : projection_) v = pd(rng);
  }
}

Embedding TokenMeanEncoder::embed(const std::string& text) const {
  Embedding e;
  const auto seq = text::tokenize(text, *vocab_, 128, false);
  if (seq.ids.empty()) {
    e.values.assign(dim_, 0.0);
    e.degenerate = true;
    return e;
  }
  std::vector<double> mean(width_, 0.0);
  for (const std::int32_t id : seq.ids) {
    const double* row = table_.data() + static_cast<std::size_t>(id) * width_;
    for (std::size_t k = 0; k < width_; ++k) mean[k] += row[k];
  }
  for (double& v : mean) v /= static_cast<double>(seq.ids.size());
  if (projection_.empty()) {
    e.values = std::move(mean);
    return e;
  }
  e.values.assign(dim_, 0.0);
  for (std::size_t i = 0; i < dim_; ++i) {
    for (std::size_t k = 0; k < width_; ++k) e.values[i] += projection_[i * width_ + k] * mean[k];
  }
  return e;
}

}  // namespace fairgrpo::scorer
