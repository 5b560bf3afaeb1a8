#include "fairgrpo/cli/pipeline.hpp"

#include <cstdio>
#include <map>

#include "fairgrpo/errors.hpp"
#include "fairgrpo/numerics/rng.hpp"
#include "fairgrpo/text/augment.hpp"
#include "fairgrpo/text/corpus.hpp"

namespace fairgrpo::cli {
namespace {

// Enough digits to read the same double back.
std::string exact(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

nlohmann::ordered_json counts(std::span<const text::DatasetRecord> records) {
  std::map<std::string, std::size_t> labels, categories;
  for (const auto& r : records) {
    if (r.label) ++labels[std::string(text::to_string(*r.label))];
    ++categories[std::string(text::to_string(r.category))];
  }
  nlohmann::ordered_json j;
  j["records"] = records.size();
  j["labels"] = nlohmann::ordered_json::object();
  for (const auto& [k, v] : labels) j["labels"][k] = v;
  j["categories"] = nlohmann::ordered_json::object();
  for (const auto& [k, v] : categories) j["categories"][k] = v;
  return j;
}

constexpr const char* kMetricNames[] = {"fairness", "fluency", "relevance"};

double metric(const grpo::EvalMetrics& m, std::size_t i) {
  return i == 0 ? m.fairness : i == 1 ? m.fluency : m.relevance;
}

}  // namespace

std::uint64_t stage_seed(std::uint64_t seed, Stage stage) {
  return num::derive_seed(seed, {static_cast<std::uint64_t>(stage)});
}

DataBundle generate_data(const DataConfig& config, std::uint64_t seed) {
  DataBundle d;
  text::CorpusOptions co;
  co.seed = stage_seed(seed, Stage::corpus);
  co.n_records = config.n_records;
  co.distractor_fraction = config.distractor_fraction;
  d.corpus = text::generate_synthetic_corpus(co);
  if (config.augment) {
    auto aug = text::default_augmentation();
    aug.replacement_probability = config.replacement_probability;
    aug.perturbation_probability = config.perturbation_probability;
    aug.paraphrase_probability = config.paraphrase_probability;
    aug.rng_seed = stage_seed(seed, Stage::augmentation);
    d.corpus = text::augment_all(d.corpus, aug);
  }
  d.train_prompts = text::generate_prompt_set(stage_seed(seed, Stage::train_prompts), config.n_train_prompts,
                                              text::PromptSplit::train, config.distractor_fraction);
  d.validation_prompts =
      text::generate_prompt_set(stage_seed(seed, Stage::validation_prompts), config.n_validation_prompts,
                                text::PromptSplit::train, config.distractor_fraction);
  d.eval_prompts = text::generate_prompt_set(stage_seed(seed, Stage::eval_prompts), config.n_eval_prompts,
                                             text::PromptSplit::eval, config.distractor_fraction);
  return d;
}

nlohmann::ordered_json data_summary(const DataBundle& data) {
  nlohmann::ordered_json j;
  j["corpus"] = counts(data.corpus);
  j["train_prompts"] = counts(data.train_prompts);
  j["validation_prompts"] = counts(data.validation_prompts);
  j["eval_prompts"] = counts(data.eval_prompts);
  return j;
}

text::Vocabulary lm_vocabulary(std::span<const text::DatasetRecord> corpus,
                               std::span<const text::DatasetRecord> prompts) {
  std::vector<std::string> texts;
  for (const auto& r : corpus) {
    texts.push_back(r.prompt);
    if (r.response) texts.push_back(*r.response);
  }
  for (const auto& r : prompts) texts.push_back(r.prompt);
  return text::Vocabulary::build(texts);
}

std::vector<model::LmExample> lm_examples(std::span<const text::DatasetRecord> corpus, const text::Vocabulary& vocab) {
  std::vector<model::LmExample> out;
  for (const auto& r : corpus) {
    if (!r.response) continue;
    model::LmExample e;
    e.prompt = text::tokenize(r.prompt, vocab, 127, false);
    e.response = text::tokenize(*r.response, vocab, 63, false).ids;
    out.push_back(std::move(e));
  }
  return out;
}

BaseModel pretrain_base(const RunConfig& config, std::span<const text::DatasetRecord> corpus,
                        std::span<const text::DatasetRecord> train_prompts,
                        const std::function<void(const model::PretrainEpoch&)>& on_epoch) {
  auto vocab = lm_vocabulary(corpus, train_prompts);
  const auto examples = lm_examples(corpus, vocab);
  if (examples.empty()) throw DataError("pretrain: the corpus has no responses");
  model::ModelConfig mc = config.model;
  mc.vocab_size = vocab.size();
  model::Transformer m(mc, stage_seed(config.seed, Stage::model_init));
  model::PretrainOptions po = config.pretrain;
  po.seed = stage_seed(config.seed, Stage::pretrain);
  auto history = model::pretrain_language_model(m, examples, po, on_epoch);
  return {std::move(m), std::move(vocab), std::move(history)};
}

scorer::TrainedClassifier train_classifier(const RunConfig& config, std::span<const text::DatasetRecord> corpus,
                                           const std::function<void(std::size_t, double)>& on_epoch) {
  scorer::ClassifierTrainOptions opts = config.classifier_train;
  opts.seed = stage_seed(config.seed, Stage::classifier);
  return scorer::train_fairness_classifier(corpus, config.classifier, opts, on_epoch);
}

grpo::TrainResult tune(const RunConfig& config, model::Transformer& policy, const model::Transformer& base,
                       const scorer::FairnessClassifier& classifier, const text::Vocabulary& vocab,
                       std::span<const text::DatasetRecord> train_prompts,
                       std::span<const text::DatasetRecord> validation_prompts,
                       const std::optional<std::filesystem::path>& out_dir,
                       const std::function<void(const grpo::LogRecord&)>& on_log) {
  const auto reference = model::freeze_reference(base);
  policy.attach_lora(config.lora, stage_seed(config.seed, Stage::lora));
  const rewards::RewardEngine engine(classifier, reference, vocab, config.rewards);
  grpo::TrainOptions opts;
  opts.grpo = config.grpo;
  opts.sampler = config.sampler;
  opts.seed = stage_seed(config.seed, Stage::grpo);
  opts.out_dir = out_dir;
  return grpo::train(policy, reference, engine, vocab, train_prompts, validation_prompts, opts, on_log);
}

Comparison compare(const RunConfig& config, const model::Transformer& base, const model::Transformer& tuned,
                   const scorer::FairnessClassifier& classifier, const text::Vocabulary& vocab,
                   std::span<const text::DatasetRecord> eval_prompts) {
  if (base.config().vocab_size != vocab.size() || tuned.config().vocab_size != vocab.size()) {
    throw IncompatibleError("eval: base and tuned models use different vocabularies");
  }
  rewards::RewardConfig rc = config.rewards;
  rc.noise_enabled = false;
  const rewards::RewardEngine engine(classifier, base, vocab, rc);
  const std::uint64_t seed = stage_seed(config.seed, Stage::eval);
  Comparison c;
  c.base = grpo::evaluate(base, eval_prompts, engine, config.sampler, seed, config.eval.samples_per_prompt);
  c.tuned = grpo::evaluate(tuned, eval_prompts, engine, config.sampler, seed, config.eval.samples_per_prompt);
  return c;
}

nlohmann::ordered_json comparison_json(const Comparison& c) {
  nlohmann::ordered_json j;
  j["metrics"] = {"fairness", "fluency", "relevance"};
  j["rows"] = nlohmann::ordered_json::array();
  for (const auto& [name, m] : {std::pair{"base", &c.base}, std::pair{"tuned", &c.tuned}}) {
    nlohmann::ordered_json row;
    row["model"] = name;
    for (std::size_t i = 0; i < 3; ++i) row[kMetricNames[i]] = metric(*m, i);
    j["rows"].push_back(row);
  }
  j["completions_per_model"] = c.base.completions;
  return j;
}

std::string comparison_csv(const Comparison& c) {
  std::string out = "model,fairness,fluency,relevance\n";
  for (const auto& [name, m] : {std::pair{"base", &c.base}, std::pair{"tuned", &c.tuned}}) {
    out += name;
    for (std::size_t i = 0; i < 3; ++i) out += "," + exact(metric(*m, i));
    out += "\n";
  }
  return out;
}

nlohmann::ordered_json plot_data_json(const Comparison& c) {
  nlohmann::ordered_json j;
  j["series"] = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < 3; ++i) {
    nlohmann::ordered_json s;
    s["metric"] = kMetricNames[i];
    s["labels"] = {"base", "tuned"};
    s["values"] = {metric(c.base, i), metric(c.tuned, i)};
    j["series"].push_back(s);
  }
  return j;
}

std::string plot_data_csv(const Comparison& c) {
  std::string out = "metric,label,value\n";
  for (std::size_t i = 0; i < 3; ++i) {
    out += std::string(kMetricNames[i]) + ",base," + exact(metric(c.base, i)) + "\n";
    out += std::string(kMetricNames[i]) + ",tuned," + exact(metric(c.tuned, i)) + "\n";
  }
  return out;
}

}  // namespace fairgrpo::cli
