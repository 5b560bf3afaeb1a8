#pragma once

// Next-token training of the base language model on prompt/response pairs.
// Loss covers the response tokens and the closing EOS only.

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "fairgrpo/model/transformer.hpp"

namespace fairgrpo::model {

struct LmExample {
  text::TokenSequence prompt;
  std::vector<std::int32_t> response;  // without EOS
};

struct PretrainOptions {
  std::size_t epochs = 6;
  std::size_t batch_size = 16;
  double learning_rate = 3e-3;
  double weight_decay = 0.01;
  std::uint64_t seed = 0;
};

struct PretrainEpoch {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
};

// Trains every base parameter. Returns the per-epoch mean loss.
std::vector<PretrainEpoch> pretrain_language_model(Transformer& model, std::span<const LmExample> examples,
                                                   const PretrainOptions& options,
                                                   const std::function<void(const PretrainEpoch&)>& on_epoch = {});

}  // namespace fairgrpo::model
