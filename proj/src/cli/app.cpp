#include "fairgrpo/cli/app.hpp"

#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "fairgrpo/cli/pipeline.hpp"
#include "fairgrpo/cli/run_config.hpp"
#include "fairgrpo/errors.hpp"
#include "fairgrpo/log.hpp"
#include "fairgrpo/numerics/checkpoint.hpp"
#include "fairgrpo/numerics/rng.hpp"
#include "fairgrpo/sampling/sampler.hpp"

namespace fairgrpo::cli {
namespace {

namespace fs = std::filesystem;

struct Globals {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string preset;
  std::string out_dir;
};

RunConfig resolve_config(const Globals& g) {
  RunConfig c;
  if (!g.config_path.empty()) {
    if (!fs::exists(g.config_path)) throw MissingArtifactError("config not found: " + g.config_path);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(num::read_file(g.config_path));
    } catch (const nlohmann::json::parse_error& e) {
      throw DataError(g.config_path + ": " + e.what());
    }
    c = g.preset.empty() ? RunConfig::from_json(j) : RunConfig::from_json(j, parse_preset(g.preset));
  } else {
    c = RunConfig::for_preset(g.preset.empty() ? Preset::experiments : parse_preset(g.preset));
  }
  if (g.seed) c.seed = *g.seed;
  if (!g.out_dir.empty()) c.paths.out_dir = g.out_dir;
  c.validate();
  return c;
}

void save_text(const fs::path& path, const std::string& contents) { num::write_file_atomic(path, contents); }

void record_config(const RunConfig& c, const char* command) {
  c.save(c.paths.out_dir / (std::string(command) + ".config.json"));
}

int cmd_gen_data(RunConfig c, std::optional<std::size_t> n, std::ostream& out) {
  if (n) c.data.n_records = *n;
  c.validate();
  const DataBundle d = generate_data(c.data, c.seed);
  text::save_dataset(c.paths.resolved_corpus(), d.corpus);
  text::save_dataset(c.paths.resolved_train_prompts(), d.train_prompts);
  text::save_dataset(c.paths.resolved_validation_prompts(), d.validation_prompts);
  text::save_dataset(c.paths.resolved_eval_prompts(), d.eval_prompts);
  const auto summary = data_summary(d);
  save_text(c.paths.out_dir / "data_summary.json", summary.dump(2) + "\n");
  record_config(c, "gen-data");
  out << summary.dump(2) << "\n";
  return kExitOk;
}

int cmd_pretrain(const RunConfig& c, std::ostream& out, std::ostream& err) {
  const auto corpus = text::load_dataset(c.paths.resolved_corpus());
  const auto prompts = text::load_dataset(c.paths.resolved_train_prompts());
  std::string log = "epoch,mean_loss\n";
  const auto base = pretrain_base(c, corpus, prompts, [&](const model::PretrainEpoch& e) {
    err << "pretrain epoch " << e.epoch + 1 << " loss " << e.mean_loss << "\n";
    log += std::to_string(e.epoch + 1) + "," + nlohmann::json(e.mean_loss).dump() + "\n";
  });
  model::save_model(c.paths.resolved_base_model(), base.model, base.vocab, {{"stage", "pretrain"}});
  save_text(c.paths.out_dir / "pretrain_log.csv", log);
  record_config(c, "pretrain");
  out << c.paths.resolved_base_model().string() << "\n";
  return kExitOk;
}

int cmd_train_classifier(const RunConfig& c, std::ostream& out, std::ostream& err) {
  const auto corpus = text::load_dataset(c.paths.resolved_corpus());
  const auto trained = train_classifier(c, corpus, [&](std::size_t epoch, double loss) {
    err << "classifier epoch " << epoch + 1 << " loss " << loss << "\n";
  });
  const auto metrics = trained.metrics.to_json();
  trained.classifier.save(c.paths.resolved_classifier(), {{"metrics", nlohmann::json::parse(metrics.dump())}});
  save_text(c.paths.out_dir / "classifier_metrics.json", metrics.dump(2) + "\n");
  record_config(c, "train-classifier");
  out << metrics.dump(2) << "\n";
  return kExitOk;
}

int cmd_train_grpo(const RunConfig& c, std::ostream& out, std::ostream& err) {
  auto base = model::load_model(c.paths.resolved_base_model());
  const auto classifier = scorer::FairnessClassifier::load(c.paths.resolved_classifier());
  const auto train_prompts = text::load_dataset(c.paths.resolved_train_prompts());
  const auto validation_prompts = text::load_dataset(c.paths.resolved_validation_prompts());
  if (base.model.has_lora()) throw IncompatibleError("train-grpo: the base checkpoint already carries adapters");
  auto policy = base.model.clone();
  const auto result = tune(c, policy, base.model, classifier, base.vocab, train_prompts, validation_prompts,
                           c.paths.grpo_dir(), [&](const grpo::LogRecord& r) {
                             err << "step " << r.step << " t " << r.t << " reward " << r.mean_reward << " kl " << r.kl
                                 << "\n";
                           });
  record_config(c, "train-grpo");
  nlohmann::ordered_json summary;
  summary["steps"] = result.steps;
  summary["total_steps"] = result.total_steps;
  summary["diverged"] = result.diverged;
  summary["first_epoch_reward"] = result.first_epoch_reward;
  summary["last_epoch_reward"] = result.last_epoch_reward;
  summary["validation_rewards"] = result.validation_rewards;
  summary["best_validation_reward"] = result.best_validation_reward;
  save_text(c.paths.grpo_dir() / "summary.json", summary.dump(2) + "\n");
  out << summary.dump(2) << "\n";
  return kExitOk;
}

int cmd_score(const RunConfig& c, const std::string& input, const std::string& output, std::ostream& out) {
  const auto reference = model::load_model(c.paths.resolved_base_model());
  const auto classifier = scorer::FairnessClassifier::load(c.paths.resolved_classifier());
  const auto frozen = model::freeze_reference(reference.model);
  const rewards::RewardEngine engine(classifier, frozen, reference.vocab, c.rewards);
  std::string text;
  if (input.empty() || input == "-") {
    std::stringstream ss;
    ss << std::cin.rdbuf();
    text = ss.str();
  } else {
    if (!fs::exists(input)) throw MissingArtifactError("input not found: " + input);
    text = num::read_file(input);
  }
  std::istringstream lines(text);
  std::string line, result;
  std::size_t lineno = 0, index = 0;
  while (std::getline(lines, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
      if (!j.is_object() || !j.at("prompt").is_string() || !j.at("completion").is_string()) {
        throw DataError("expected an object with string prompt and completion");
      }
    } catch (const nlohmann::json::exception& e) {
      throw DataError(input + ":" + std::to_string(lineno) + ": " + e.what());
    } catch (const DataError& e) {
      throw DataError(input + ":" + std::to_string(lineno) + ": " + e.what());
    }
    const double t = j.value("t", 0.0);
    num::Rng noise(num::derive_seed(c.seed, {static_cast<std::uint64_t>(Stage::eval), 0x73636fULL, index++}));
    const auto b = engine.score_text(j.at("prompt").get<std::string>(), j.at("completion").get<std::string>(), t,
                                     &noise);
    result += b.to_json().dump() + "\n";
  }
  if (output.empty() || output == "-") {
    out << result;
  } else {
    save_text(output, result);
  }
  return kExitOk;
}

int cmd_eval(const RunConfig& c, const std::string& base_path, const std::string& tuned_path, std::ostream& out) {
  const auto base = model::load_model(base_path.empty() ? c.paths.resolved_base_model() : fs::path(base_path));
  const auto tuned = model::load_model(tuned_path.empty() ? c.paths.resolved_tuned_model() : fs::path(tuned_path));
  if (!(base.vocab == tuned.vocab)) throw IncompatibleError("eval: base and tuned checkpoints use different vocabularies");
  const auto classifier = scorer::FairnessClassifier::load(c.paths.resolved_classifier());
  const auto prompts = text::load_dataset(c.paths.resolved_eval_prompts());
  const auto cmp = compare(c, base.model, tuned.model, classifier, base.vocab, prompts);
  const auto report = comparison_json(cmp);
  save_text(c.paths.out_dir / "eval_report.json", report.dump(2) + "\n");
  save_text(c.paths.out_dir / "eval_report.csv", comparison_csv(cmp));
  save_text(c.paths.out_dir / "eval_plot.json", plot_data_json(cmp).dump(2) + "\n");
  save_text(c.paths.out_dir / "eval_plot.csv", plot_data_csv(cmp));
  record_config(c, "eval");
  out << report.dump(2) << "\n";
  return kExitOk;
}

int cmd_generate(const RunConfig& c, const std::string& model_path, const std::vector<std::string>& prompts,
                 const std::string& input, std::size_t samples, std::ostream& out) {
  const auto m = model::load_model(model_path.empty() ? c.paths.resolved_tuned_model() : fs::path(model_path));
  std::vector<std::string> all = prompts;
  if (!input.empty()) {
    for (const auto& r : text::load_dataset(input)) all.push_back(r.prompt);
  }
  if (all.empty()) throw DataError("generate: no prompts given (use --prompt or --input)");
  const std::uint64_t seed = stage_seed(c.seed, Stage::generate);
  for (std::size_t i = 0; i < all.size(); ++i) {
    const auto prompt = text::tokenize(all[i], m.vocab, 127, false);
    for (std::size_t s = 0; s < samples; ++s) {
      num::Rng rng(num::derive_seed(seed, {i, s}));
      const auto comp = sampling::sample_completion(m.model, prompt, c.sampler, rng);
      std::size_t n = comp.ids.size();
      if (n > 0 && comp.ids.back() == text::kEos) --n;
      nlohmann::ordered_json j;
      j["prompt"] = all[i];
      j["completion"] = text::detokenize(std::span(comp.ids).first(n), m.vocab);
      j["ended_with_eos"] = comp.ended_with_eos;
      out << j.dump() << "\n";
    }
  }
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"GRPO fine-tuning of a toy language model with a multi-component fairness reward", "fairgrpo"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config_path, "Run configuration (JSON)");
  app.add_option("--seed", g.seed, "Global seed");
  app.add_option("--preset", g.preset, "Hyperparameter preset")->check(CLI::IsMember({"methods", "experiments"}));
  app.add_option("--out", g.out_dir, "Output directory");

  std::optional<std::size_t> n_records;
  auto* gen = app.add_subcommand("gen-data", "Write the synthetic corpus and prompt sets");
  gen->add_option("--n", n_records, "Number of corpus records");
  auto* pre = app.add_subcommand("pretrain", "Pretrain the base language model on the corpus");
  auto* clf = app.add_subcommand("train-classifier", "Train the fairness classifier");
  auto* tg = app.add_subcommand("train-grpo", "Fine-tune LoRA adapters with GRPO");
  std::string input, output;
  auto* sc = app.add_subcommand("score", "Score NDJSON {prompt, completion, t} lines");
  sc->add_option("--input", input, "Input file (default stdin)");
  sc->add_option("--output", output, "Output file (default stdout)");
  std::string base_path, tuned_path;
  auto* ev = app.add_subcommand("eval", "Compare the base and tuned models");
  ev->add_option("--base", base_path, "Base model checkpoint");
  ev->add_option("--tuned", tuned_path, "Tuned model checkpoint");
  std::string model_path, prompt_file;
  std::vector<std::string> prompts;
  std::size_t samples = 1;
  auto* gn = app.add_subcommand("generate", "Sample completions from a model");
  gn->add_option("--model", model_path, "Model checkpoint (default: tuned)");
  gn->add_option("--prompt", prompts, "Prompt text (repeatable)");
  gn->add_option("--input", prompt_file, "NDJSON prompt file");
  gn->add_option("--samples", samples, "Completions per prompt")->check(CLI::PositiveNumber);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitIo;
  }

  set_warning_sink([&err](const std::string& msg) { err << "warning: " << msg << "\n"; });
  struct SinkReset {
    ~SinkReset() { set_warning_sink({}); }
  } reset;
  try {
    const RunConfig c = resolve_config(g);
    if (gen->parsed()) return cmd_gen_data(c, n_records, out);
    if (pre->parsed()) return cmd_pretrain(c, out, err);
    if (clf->parsed()) return cmd_train_classifier(c, out, err);
    if (tg->parsed()) return cmd_train_grpo(c, out, err);
    if (sc->parsed()) return cmd_score(c, input, output, out);
    if (ev->parsed()) return cmd_eval(c, base_path, tuned_path, out);
    if (gn->parsed()) return cmd_generate(c, model_path, prompts, prompt_file, samples, out);
    return kExitFailure;
  } catch (const IoError& e) {
    err << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const DataError& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const ContractError& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const MissingArtifactError& e) {
    err << "error: " << e.what() << "\n";
    return kExitMissing;
  } catch (const IncompatibleError& e) {
    err << "error: " << e.what() << "\n";
    return kExitIncompatible;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
}

}  // namespace fairgrpo::cli
