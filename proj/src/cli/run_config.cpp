#include "fairgrpo/cli/run_config.hpp"

#include <fstream>

#include "fairgrpo/errors.hpp"
#include "fairgrpo/numerics/checkpoint.hpp"

namespace fairgrpo::cli {
namespace {

std::filesystem::path or_default(const std::filesystem::path& p, const std::filesystem::path& dir, const char* name) {
  return p.empty() ? dir / name : p;
}

// Fields present in `overrides` replace those in `base`.
nlohmann::json layered(nlohmann::json base, const nlohmann::json& j, const char* key) {
  if (j.contains(key)) {
    if (!j.at(key).is_object()) throw DataError(std::string("config: '") + key + "' must be an object");
    base.update(j.at(key));
  }
  return base;
}

nlohmann::json paths_json(const PathsConfig& p) {
  return {{"out_dir", p.out_dir.string()},
          {"corpus", p.corpus.string()},
          {"train_prompts", p.train_prompts.string()},
          {"validation_prompts", p.validation_prompts.string()},
          {"eval_prompts", p.eval_prompts.string()},
          {"base_model", p.base_model.string()},
          {"classifier", p.classifier.string()},
          {"tuned_model", p.tuned_model.string()}};
}

PathsConfig paths_from(const nlohmann::json& j) {
  PathsConfig p;
  auto get = [&](const char* k, std::filesystem::path& dst) { dst = j.value(k, dst.string()); };
  get("out_dir", p.out_dir);
  get("corpus", p.corpus);
  get("train_prompts", p.train_prompts);
  get("validation_prompts", p.validation_prompts);
  get("eval_prompts", p.eval_prompts);
  get("base_model", p.base_model);
  get("classifier", p.classifier);
  get("tuned_model", p.tuned_model);
  return p;
}

nlohmann::json data_json(const DataConfig& d) {
  return {{"n_records", d.n_records},
          {"distractor_fraction", d.distractor_fraction},
          {"n_train_prompts", d.n_train_prompts},
          {"n_validation_prompts", d.n_validation_prompts},
          {"n_eval_prompts", d.n_eval_prompts},
          {"augment", d.augment},
          {"replacement_probability", d.replacement_probability},
          {"perturbation_probability", d.perturbation_probability},
          {"paraphrase_probability", d.paraphrase_probability}};
}

DataConfig data_from(const nlohmann::json& j) {
  DataConfig d;
  d.n_records = j.value("n_records", d.n_records);
  d.distractor_fraction = j.value("distractor_fraction", d.distractor_fraction);
  d.n_train_prompts = j.value("n_train_prompts", d.n_train_prompts);
  d.n_validation_prompts = j.value("n_validation_prompts", d.n_validation_prompts);
  d.n_eval_prompts = j.value("n_eval_prompts", d.n_eval_prompts);
  d.augment = j.value("augment", d.augment);
  d.replacement_probability = j.value("replacement_probability", d.replacement_probability);
  d.perturbation_probability = j.value("perturbation_probability", d.perturbation_probability);
  d.paraphrase_probability = j.value("paraphrase_probability", d.paraphrase_probability);
  return d;
}

nlohmann::json pretrain_json(const model::PretrainOptions& o) {
  return {{"epochs", o.epochs},
          {"batch_size", o.batch_size},
          {"learning_rate", o.learning_rate},
          {"weight_decay", o.weight_decay}};
}

model::PretrainOptions pretrain_from(const nlohmann::json& j) {
  model::PretrainOptions o;
  o.epochs = j.value("epochs", o.epochs);
  o.batch_size = j.value("batch_size", o.batch_size);
  o.learning_rate = j.value("learning_rate", o.learning_rate);
  o.weight_decay = j.value("weight_decay", o.weight_decay);
  return o;
}

nlohmann::json classifier_train_json(const scorer::ClassifierTrainOptions& o) {
  return {{"epochs", o.epochs},
          {"batch_size", o.batch_size},
          {"learning_rate", o.learning_rate},
          {"weight_decay", o.weight_decay},
          {"validation_fraction", o.validation_fraction}};
}

scorer::ClassifierTrainOptions classifier_train_from(const nlohmann::json& j) {
  scorer::ClassifierTrainOptions o;
  o.epochs = j.value("epochs", o.epochs);
  o.batch_size = j.value("batch_size", o.batch_size);
  o.learning_rate = j.value("learning_rate", o.learning_rate);
  o.weight_decay = j.value("weight_decay", o.weight_decay);
  o.validation_fraction = j.value("validation_fraction", o.validation_fraction);
  return o;
}

}  // namespace

std::string_view to_string(Preset preset) { return preset == Preset::methods ? "methods" : "experiments"; }

Preset parse_preset(std::string_view name) {
  if (name == "methods") return Preset::methods;
  if (name == "experiments") return Preset::experiments;
  throw ContractError("unknown preset '" + std::string(name) + "' (expected methods or experiments)");
}

std::filesystem::path PathsConfig::resolved_corpus() const { return or_default(corpus, out_dir, "corpus.jsonl"); }
std::filesystem::path PathsConfig::resolved_train_prompts() const {
  return or_default(train_prompts, out_dir, "train_prompts.jsonl");
}
std::filesystem::path PathsConfig::resolved_validation_prompts() const {
  return or_default(validation_prompts, out_dir, "validation_prompts.jsonl");
}
std::filesystem::path PathsConfig::resolved_eval_prompts() const {
  return or_default(eval_prompts, out_dir, "eval_prompts.jsonl");
}
std::filesystem::path PathsConfig::resolved_base_model() const { return or_default(base_model, out_dir, "base.ckpt"); }
std::filesystem::path PathsConfig::resolved_classifier() const {
  return or_default(classifier, out_dir, "classifier.ckpt");
}
std::filesystem::path PathsConfig::resolved_tuned_model() const {
  return tuned_model.empty() ? grpo_dir() / "best.ckpt" : tuned_model;
}

RunConfig RunConfig::for_preset(Preset preset) {
  RunConfig c;
  c.preset = preset;
  if (preset == Preset::methods) {
    c.grpo = grpo::methods_preset();
    c.lora = model::lora_methods_preset();
  } else {
    c.grpo = grpo::experiments_preset();
    c.lora = model::lora_experiments_preset();
  }
  c.sampler.group_size = c.grpo.group_size;
  return c;
}

void RunConfig::validate() const {
  if (data.n_records < 2) throw ContractError("config: data.n_records must be at least 2");
  if (data.n_train_prompts == 0) throw ContractError("config: data.n_train_prompts must be positive");
  if (eval.samples_per_prompt == 0) throw ContractError("config: eval.samples_per_prompt must be positive");
  model::ModelConfig m = model;
  if (m.vocab_size == 0) m.vocab_size = 16;
  m.validate();
  classifier.validate();
  lora.validate();
  grpo.validate();
  sampler.validate();
  rewards.validate();
  if (sampler.group_size != grpo.group_size) {
    throw ContractError("config: sampler.group_size must equal grpo.group_size");
  }
}

nlohmann::json RunConfig::to_json() const {
  return {{"preset", std::string(to_string(preset))},
          {"seed", seed},
          {"paths", paths_json(paths)},
          {"data", data_json(data)},
          {"model", model.to_json()},
          {"pretrain", pretrain_json(pretrain)},
          {"classifier", classifier.to_json()},
          {"classifier_train", classifier_train_json(classifier_train)},
          {"lora", lora.to_json()},
          {"grpo", grpo.to_json()},
          {"sampler", sampler.to_json()},
          {"rewards", rewards.to_json()},
          {"eval", {{"samples_per_prompt", eval.samples_per_prompt}}}};
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
  return from_json(j, parse_preset(j.value("preset", std::string("experiments"))));
}

RunConfig RunConfig::from_json(const nlohmann::json& j, Preset preset) {
  if (!j.is_object()) throw DataError("config: top level must be an object");
  try {
    const RunConfig base = for_preset(preset);
    RunConfig c = base;
    c.seed = j.value("seed", base.seed);
    c.paths = paths_from(layered(paths_json(base.paths), j, "paths"));
    c.data = data_from(layered(data_json(base.data), j, "data"));
    c.model = model::ModelConfig::from_json(layered(base.model.to_json(), j, "model"));
    c.pretrain = pretrain_from(layered(pretrain_json(base.pretrain), j, "pretrain"));
    c.classifier = scorer::ClassifierConfig::from_json(layered(base.classifier.to_json(), j, "classifier"));
    c.classifier_train =
        classifier_train_from(layered(classifier_train_json(base.classifier_train), j, "classifier_train"));
    c.lora = model::LoraConfig::from_json(layered(base.lora.to_json(), j, "lora"));
    c.grpo = grpo::GrpoConfig::from_json(layered(base.grpo.to_json(), j, "grpo"));
    c.sampler = sampling::SamplerConfig::from_json(layered(base.sampler.to_json(), j, "sampler"));
    c.rewards = rewards::RewardConfig::from_json(layered(base.rewards.to_json(), j, "rewards"));
    c.eval.samples_per_prompt =
        layered({{"samples_per_prompt", base.eval.samples_per_prompt}}, j, "eval").at("samples_per_prompt");
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("config: ") + e.what());
  }
}

void RunConfig::save(const std::filesystem::path& path) const { num::write_file_atomic(path, to_json().dump(2) + "\n"); }

RunConfig RunConfig::load(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw MissingArtifactError("config not found: " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(num::read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  return from_json(j);
}

}  // namespace fairgrpo::cli
