#include "fairgrpo/model/pretrain.hpp"

#include <algorithm>
#include <numeric>

#include "fairgrpo/errors.hpp"
#include "fairgrpo/numerics/adamw.hpp"
#include "fairgrpo/numerics/ops.hpp"

namespace fairgrpo::model {

std::vector<PretrainEpoch> pretrain_language_model(Transformer& model, std::span<const LmExample> examples,
                                                   const PretrainOptions& options,
                                                   const std::function<void(const PretrainEpoch&)>& on_epoch) {
  if (examples.empty()) throw ContractError("pretrain: no examples");
  if (options.batch_size == 0) throw ContractError("pretrain: batch_size must be positive");
  model.set_base_trainable(true);
  std::vector<Tensor> params;
  for (auto& p : model.base_parameters()) params.push_back(p.tensor);
  num::AdamW opt(params, {.learning_rate = options.learning_rate, .weight_decay = options.weight_decay});

  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), 0);
  num::Rng rng(num::derive_seed(options.seed, {0x9e7u}));
  std::vector<PretrainEpoch> history;
  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += options.batch_size) {
      const std::size_t end = std::min(order.size(), start + options.batch_size);
      std::vector<text::TokenSequence> prompts;
      std::vector<std::vector<std::int32_t>> completions;
      for (std::size_t i = start; i < end; ++i) {
        const LmExample& ex = examples[order[i]];
        prompts.push_back(ex.prompt);
        auto c = ex.response;
        c.push_back(text::kEos);
        completions.push_back(std::move(c));
      }
      const LmBatch lm = LmBatch::build(prompts, completions);
      const Tensor h = model.hidden(lm.batch);
      const Tensor loss = num::cross_entropy(model.logits_for_rows(h, lm.rows), lm.targets);
      opt.zero_grad();
      num::backward(loss);
      opt.step();
      total += loss.item();
      ++batches;
    }
    history.push_back({epoch, total / static_cast<double>(batches)});
    if (on_epoch) on_epoch(history.back());
  }
  return history;
}

}  // namespace fairgrpo::model
