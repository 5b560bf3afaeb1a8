#include "fairgrpo/grpo/grpo.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "fairgrpo/errors.hpp"
#include "fairgrpo/log.hpp"
#include "fairgrpo/numerics/adamw.hpp"
#include "fairgrpo/numerics/ops.hpp"

namespace fairgrpo::grpo {
namespace {

constexpr std::size_t kPromptTokens = 127;

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

struct Window {
  std::size_t steps = 0;
  LogRecord sum;

  void add(const LogRecord& r) {
    ++steps;
    sum.mean_reward += r.mean_reward;
    sum.r_fair += r.r_fair;
    sum.r_sem += r.r_sem;
    sum.r_para += r.r_para;
    sum.r_len += r.r_len;
    sum.r_flu += r.r_flu;
    sum.r_rep += r.r_rep;
    sum.loss += r.loss;
    sum.kl += r.kl;
    sum.clip_fraction += r.clip_fraction;
  }

  LogRecord flush(const LogRecord& last) {
    const double n = static_cast<double>(steps);
    LogRecord out = last;
    out.mean_reward = sum.mean_reward / n;
    out.r_fair = sum.r_fair / n;
    out.r_sem = sum.r_sem / n;
    out.r_para = sum.r_para / n;
    out.r_len = sum.r_len / n;
    out.r_flu = sum.r_flu / n;
    out.r_rep = sum.r_rep / n;
    out.loss = sum.loss / n;
    out.kl = sum.kl / n;
    out.clip_fraction = sum.clip_fraction / n;
    *this = Window{};
    return out;
  }
};

void clip_grad_norm(const std::vector<num::Tensor>& params, double max_norm) {
  if (max_norm <= 0.0) return;
  double sq = 0.0;
  for (const auto& p : params) {
    for (double g : p.grad()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (!(norm > max_norm)) return;
  const double factor = max_norm / norm;
  for (auto p : params) {
    for (double& g : p.mutable_grad()) g *= factor;
  }
}

}  // namespace

void GrpoConfig::validate() const {
  if (group_size < 2) throw ContractError("grpo: group_size must be at least 2");
  if (!(clip_epsilon > 0.0 && clip_epsilon < 1.0)) throw ContractError("grpo: clip_epsilon must lie in (0, 1)");
  if (!(kl_coefficient >= 0.0)) throw ContractError("grpo: kl_coefficient must be non-negative");
  if (!(learning_rate > 0.0)) throw ContractError("grpo: learning_rate must be positive");
  if (epochs == 0 || batch_prompts == 0 || grad_accum_steps == 0 || log_every == 0) {
    throw ContractError("grpo: epochs, batch_prompts, grad_accum_steps and log_every must be positive");
  }
  if (!(advantage_std_epsilon > 0.0)) throw ContractError("grpo: advantage_std_epsilon must be positive");
}

nlohmann::json GrpoConfig::to_json() const {
  return {{"group_size", group_size},
          {"clip_epsilon", clip_epsilon},
          {"kl_coefficient", kl_coefficient},
          {"learning_rate", learning_rate},
          {"weight_decay", weight_decay},
          {"max_grad_norm", max_grad_norm},
          {"epochs", epochs},
          {"batch_prompts", batch_prompts},
          {"grad_accum_steps", grad_accum_steps},
          {"advantage_std_epsilon", advantage_std_epsilon},
          {"log_every", log_every},
          {"checkpoint_every", checkpoint_every},
          {"divergence_patience", divergence_patience},
          {"divergence_fraction", divergence_fraction}};
}

GrpoConfig GrpoConfig::from_json(const nlohmann::json& j) {
  GrpoConfig c;
  c.group_size = j.value("group_size", c.group_size);
  c.clip_epsilon = j.value("clip_epsilon", c.clip_epsilon);
  c.kl_coefficient = j.value("kl_coefficient", c.kl_coefficient);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.max_grad_norm = j.value("max_grad_norm", c.max_grad_norm);
  c.epochs = j.value("epochs", c.epochs);
  c.batch_prompts = j.value("batch_prompts", c.batch_prompts);
  c.grad_accum_steps = j.value("grad_accum_steps", c.grad_accum_steps);
  c.advantage_std_epsilon = j.value("advantage_std_epsilon", c.advantage_std_epsilon);
  c.log_every = j.value("log_every", c.log_every);
  c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
  c.divergence_patience = j.value("divergence_patience", c.divergence_patience);
  c.divergence_fraction = j.value("divergence_fraction", c.divergence_fraction);
  return c;
}

GrpoConfig methods_preset() {
  GrpoConfig c;
  c.learning_rate = 2e-5;
  c.batch_prompts = 8;
  c.grad_accum_steps = 2;
  return c;
}

GrpoConfig experiments_preset() {
  GrpoConfig c;
  c.learning_rate = 5e-5;
  c.batch_prompts = 4;
  c.grad_accum_steps = 1;
  return c;
}

std::vector<double> compute_advantages(std::span<const double> rewards, double std_epsilon) {
  if (rewards.size() < 2) throw ContractError("advantages: a group needs at least two rewards");
  const double n = static_cast<double>(rewards.size());
  const double mean = std::accumulate(rewards.begin(), rewards.end(), 0.0) / n;
  double var = 0.0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  const double sd = std::sqrt(var / n);
  std::vector<double> out(rewards.size(), 0.0);
  // Rounding in the mean must not turn an all-equal group into noise.
  if (std::all_of(rewards.begin(), rewards.end(), [&](double r) { return r == rewards[0]; })) return out;
  for (std::size_t i = 0; i < rewards.size(); ++i) out[i] = sd == 0.0 ? 0.0 : (rewards[i] - mean) / (sd + std_epsilon);
  return out;
}

LossResult grpo_loss(std::span<const sampling::CandidateGroup> groups, const model::Transformer& policy,
                     const GrpoConfig& config, double temperature, const model::ForwardOptions& options) {
  std::vector<text::TokenSequence> prompts;
  std::vector<std::vector<std::int32_t>> completions;
  std::vector<double> old_lp, ref_lp, adv, weight;
  std::size_t live_groups = 0;
  for (const auto& g : groups) {
    if (g.advantages.size() != g.size() || g.policy_logprobs.size() != g.size() ||
        g.reference_logprobs.size() != g.size()) {
      throw ContractError("grpo_loss: group is missing advantages or log-probs");
    }
    std::size_t live = 0;
    for (const auto& c : g.completions) live += !c.empty();
    if (live > 0) ++live_groups;
  }
  if (live_groups == 0) throw ContractError("grpo_loss: no tokens to train on");
  for (const auto& g : groups) {
    std::size_t live = 0;
    for (const auto& c : g.completions) live += !c.empty();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const auto& c = g.completions[i];
      if (c.empty()) continue;
      if (g.policy_logprobs[i].size() != c.size() || g.reference_logprobs[i].size() != c.size()) {
        throw DimensionError("grpo_loss: log-prob count does not match completion length");
      }
      prompts.push_back(g.prompt);
      completions.push_back(c);
      const double w = 1.0 / (static_cast<double>(c.size()) * static_cast<double>(live) * static_cast<double>(live_groups));
      for (std::size_t j = 0; j < c.size(); ++j) {
        old_lp.push_back(g.policy_logprobs[i][j]);
        ref_lp.push_back(g.reference_logprobs[i][j]);
        adv.push_back(g.advantages[i]);
        weight.push_back(w);
      }
    }
  }
  const std::size_t n = old_lp.size();
  const auto lm = model::LmBatch::build(prompts, completions);
  const num::Tensor now = model::completion_log_probs(policy, lm, temperature, options).log_probs;
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(now.values()[i])) {
      throw NumericalError("grpo_loss: non-finite policy log-prob at token " + std::to_string(i) + " of " +
                           std::to_string(n) + " (sampled log-prob " + fmt(old_lp[i]) + ")");
    }
  }
  const num::Shape shape{n};
  const num::Tensor old_t = num::Tensor::from_data(shape, old_lp);
  const num::Tensor ref_t = num::Tensor::from_data(shape, ref_lp);
  const num::Tensor adv_t = num::Tensor::from_data(shape, adv);
  const num::Tensor w_t = num::Tensor::from_data(shape, weight);

  const num::Tensor ratio = num::exp(num::sub(now, old_t));
  const num::Tensor clipped = num::clamp(ratio, 1.0 - config.clip_epsilon, 1.0 + config.clip_epsilon);
  const num::Tensor surrogate = num::minimum(num::mul(ratio, adv_t), num::mul(clipped, adv_t));
  const num::Tensor diff = num::sub(ref_t, now);
  const num::Tensor kl = num::add_scalar(num::sub(num::exp(diff), diff), -1.0);
  const num::Tensor per_token = num::sub(num::scale(kl, config.kl_coefficient), surrogate);
  LossResult result;
  result.loss = num::sum(num::mul(per_token, w_t));

  LossStats& s = result.stats;
  s.tokens = n;
  s.loss = result.loss.item();
  std::size_t clipped_count = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = ratio.values()[i];
    if (!std::isfinite(r)) throw NumericalError("grpo_loss: non-finite ratio at token " + std::to_string(i));
    clipped_count += r < 1.0 - config.clip_epsilon || r > 1.0 + config.clip_epsilon;
    s.surrogate += surrogate.values()[i] * weight[i];
    s.kl += kl.values()[i];
  }
  s.kl /= static_cast<double>(n);
  s.clip_fraction = static_cast<double>(clipped_count) / static_cast<double>(n);
  return result;
}

std::string log_csv_header() {
  return "step,t,w_form,w_fair,mean_reward,r_fair,r_sem,r_para,r_len,r_flu,r_rep,loss,kl,clip_fraction";
}

std::string log_csv_row(const LogRecord& r) {
  std::string out = std::to_string(r.step);
  for (double v : {r.t, r.w_form, r.w_fair, r.mean_reward, r.r_fair, r.r_sem, r.r_para, r.r_len, r.r_flu, r.r_rep,
                   r.loss, r.kl, r.clip_fraction}) {
    out += ',';
    out += fmt(v);
  }
  return out;
}

namespace {

struct Scored {
  double total = 0.0, fair = 0.0, flu = 0.0, sem = 0.0;
  std::size_t count = 0;
};

Scored score_samples(const model::Transformer& model, std::span<const text::DatasetRecord> prompts,
                     const rewards::RewardEngine& engine, const sampling::SamplerConfig& sampler, std::uint64_t seed,
                     std::size_t samples_per_prompt, double t) {
  Scored s;
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    const auto prompt = text::tokenize(prompts[i].prompt, engine.vocab(), kPromptTokens, false);
    for (std::size_t j = 0; j < samples_per_prompt; ++j) {
      num::Rng rng(num::derive_seed(seed, {i, j}));
      const auto c = sampling::sample_completion(model, prompt, sampler, rng);
      const auto b = engine.score(prompts[i].prompt, prompt, c.ids, t, nullptr);
      s.total += b.final;
      s.fair += b.r_fair;
      s.flu += b.r_flu;
      s.sem += b.r_sem;
      ++s.count;
    }
  }
  return s;
}

}  // namespace

double validation_reward(const model::Transformer& model, std::span<const text::DatasetRecord> prompts,
                         const rewards::RewardEngine& engine, const sampling::SamplerConfig& sampler,
                         std::uint64_t seed, std::size_t samples_per_prompt, double t) {
  const Scored s = score_samples(model, prompts, engine, sampler, seed, samples_per_prompt, t);
  return s.count == 0 ? 0.0 : s.total / static_cast<double>(s.count);
}

EvalMetrics evaluate(const model::Transformer& model, std::span<const text::DatasetRecord> prompts,
                     const rewards::RewardEngine& engine, const sampling::SamplerConfig& sampler, std::uint64_t seed,
                     std::size_t samples_per_prompt) {
  const Scored s = score_samples(model, prompts, engine, sampler, seed, samples_per_prompt, 1.0);
  EvalMetrics m;
  m.completions = s.count;
  if (s.count == 0) return m;
  const double n = static_cast<double>(s.count);
  m.fairness = s.fair / n;
  m.fluency = s.flu / n;
  m.relevance = s.sem / n;
  return m;
}

TrainResult train(model::Transformer& policy, const model::Transformer& reference,
                  const rewards::RewardEngine& engine, const text::Vocabulary& vocab,
                  std::span<const text::DatasetRecord> train_prompts,
                  std::span<const text::DatasetRecord> validation_prompts, const TrainOptions& options,
                  const std::function<void(const LogRecord&)>& on_log) {
  const GrpoConfig& cfg = options.grpo;
  cfg.validate();
  options.sampler.validate();
  if (!policy.has_lora()) throw ContractError("grpo: the policy has no adapters attached");
  if (train_prompts.empty()) throw DataError("grpo: no training prompts");
  if (options.sampler.temperature < sampling::kGreedyTemperature) {
    throw ContractError("grpo: training needs a sampling temperature of at least 1e-4");
  }
  if (policy.config().vocab_size != vocab.size() || reference.config().vocab_size != vocab.size()) {
    throw IncompatibleError("grpo: policy, reference and vocabulary disagree on vocabulary size");
  }

  policy.set_base_trainable(false);
  policy.set_lora_trainable(true);
  std::vector<num::Tensor> params;
  for (auto& p : policy.lora_parameters()) params.push_back(p.tensor);
  num::AdamW opt(params, {cfg.learning_rate, 0.9, 0.999, 1e-8, cfg.weight_decay});

  std::vector<text::TokenSequence> tokens;
  tokens.reserve(train_prompts.size());
  for (const auto& r : train_prompts) tokens.push_back(text::tokenize(r.prompt, vocab, kPromptTokens, false));

  const std::size_t per_step = cfg.batch_prompts * cfg.grad_accum_steps;
  const std::size_t steps_per_epoch = (train_prompts.size() + per_step - 1) / per_step;
  TrainResult result;
  result.total_steps = steps_per_epoch * cfg.epochs;

  std::ofstream csv;
  if (options.out_dir) {
    std::filesystem::create_directories(*options.out_dir);
    csv.open(*options.out_dir / "log.csv");
    if (!csv) throw IoError("grpo: cannot write " + (*options.out_dir / "log.csv").string());
    csv << log_csv_header() << '\n';
  }
  auto checkpoint = [&](const std::string& name, const nlohmann::json& extra) {
    if (options.out_dir) model::save_model(*options.out_dir / name, policy, vocab, extra);
  };

  sampling::SamplerConfig sampler = options.sampler;
  sampler.group_size = cfg.group_size;
  const std::uint64_t validation_seed = num::derive_seed(options.seed, {0x76616cULL});
  result.best_validation_reward = -1.0;
  auto validate_now = [&](std::size_t step) {
    if (validation_prompts.empty()) return;
    const double v =
        validation_reward(policy, validation_prompts, engine, sampler, validation_seed, options.validation_samples);
    result.validation_rewards.push_back(v);
    if (v > result.best_validation_reward) {
      result.best_validation_reward = v;
      checkpoint("best.ckpt", {{"stage", "grpo"}, {"step", step}, {"validation_reward", v}});
    }
  };
  validate_now(0);

  Window window;
  LogRecord last;
  auto emit = [&] {
    if (window.steps == 0) return;
    const LogRecord rec = window.flush(last);
    result.logs.push_back(rec);
    if (csv.is_open()) csv << log_csv_row(rec) << '\n' << std::flush;
    if (on_log) on_log(rec);
  };

  double best_step_reward = 0.0;
  std::size_t below = 0;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs && !result.diverged; ++epoch) {
    std::vector<std::size_t> order(train_prompts.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    num::Rng shuffle(num::derive_seed(options.seed, {0x73687566ULL, epoch}));
    std::shuffle(order.begin(), order.end(), shuffle);

    double epoch_reward = 0.0;
    std::size_t epoch_steps = 0;
    for (std::size_t s = 0; s < steps_per_epoch; ++s) {
      const double t = static_cast<double>(step) / static_cast<double>(result.total_steps);
      const auto weights = rewards::schedule(t);
      const std::size_t begin = s * per_step;
      const std::size_t end = std::min(order.size(), begin + per_step);
      const std::size_t n_micro = (end - begin + cfg.batch_prompts - 1) / cfg.batch_prompts;

      LogRecord rec;
      rec.step = step + 1;
      rec.t = weights.t;
      rec.w_form = weights.w_form;
      rec.w_fair = weights.w_fair;
      std::size_t scored = 0;
      for (std::size_t micro = 0; micro < n_micro; ++micro) {
        const std::size_t mb = begin + micro * cfg.batch_prompts;
        const std::size_t me = std::min(end, mb + cfg.batch_prompts);
        sampler.rng_seed = num::derive_seed(options.seed, {step, micro});
        std::vector<sampling::CandidateGroup> groups;
        for (std::size_t k = mb; k < me; ++k) {
          const std::size_t idx = order[k];
          auto g = sampling::sample_group(policy, &reference, tokens[idx], sampler, k - mb);
          g.rewards.resize(g.size());
          for (std::size_t m = 0; m < g.size(); ++m) {
            num::Rng noise(num::derive_seed(options.seed, {0x6e6f6973ULL, step, micro, k - mb, m}));
            const auto b = engine.score(train_prompts[idx].prompt, tokens[idx], g.completions[m], t, &noise);
            g.rewards[m] = b.final;
            rec.mean_reward += b.final;
            rec.r_fair += b.r_fair;
            rec.r_sem += b.r_sem;
            rec.r_para += b.r_para;
            rec.r_len += b.r_len;
            rec.r_flu += b.r_flu;
            rec.r_rep += b.r_rep;
            ++scored;
          }
          g.advantages = compute_advantages(g.rewards, cfg.advantage_std_epsilon);
          groups.push_back(std::move(g));
        }
        model::ForwardOptions fwd;
        fwd.training = true;
        fwd.dropout_seed = num::derive_seed(options.seed, {0x64726f70ULL, step, micro});
        auto loss = grpo_loss(groups, policy, cfg, sampler.temperature, fwd);
        num::backward(num::scale(loss.loss, 1.0 / static_cast<double>(n_micro)));
        rec.loss += loss.stats.loss / static_cast<double>(n_micro);
        rec.kl += loss.stats.kl / static_cast<double>(n_micro);
        rec.clip_fraction += loss.stats.clip_fraction / static_cast<double>(n_micro);
      }
      const double ns = static_cast<double>(scored);
      rec.mean_reward /= ns;
      rec.r_fair /= ns;
      rec.r_sem /= ns;
      rec.r_para /= ns;
      rec.r_len /= ns;
      rec.r_flu /= ns;
      rec.r_rep /= ns;

      clip_grad_norm(params, cfg.max_grad_norm);
      opt.step();
      opt.zero_grad();
      ++step;
      result.steps = step;
      epoch_reward += rec.mean_reward;
      ++epoch_steps;

      window.add(rec);
      last = rec;
      if (step % cfg.log_every == 0) emit();
      if (cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0) {
        checkpoint("step_" + std::to_string(step) + ".ckpt", {{"stage", "grpo"}, {"step", step}});
      }

      best_step_reward = std::max(best_step_reward, rec.mean_reward);
      below = rec.mean_reward < cfg.divergence_fraction * best_step_reward ? below + 1 : 0;
      if (cfg.divergence_patience > 0 && below >= cfg.divergence_patience) {
        warn("grpo: mean reward stayed below " + fmt(cfg.divergence_fraction) + " of its best for " +
             std::to_string(below) + " steps; halting at step " + std::to_string(step));
        result.diverged = true;
        checkpoint("diverged.ckpt", {{"stage", "grpo"}, {"step", step}, {"diverged", true}});
        break;
      }
    }
    const double mean_epoch = epoch_steps == 0 ? 0.0 : epoch_reward / static_cast<double>(epoch_steps);
    if (epoch == 0) result.first_epoch_reward = mean_epoch;
    result.last_epoch_reward = mean_epoch;
    if (!result.diverged) validate_now(step);
  }
  emit();
  checkpoint("final.ckpt", {{"stage", "grpo"}, {"step", step}, {"diverged", result.diverged}});
  if (result.best_validation_reward < 0.0) result.best_validation_reward = 0.0;
  return result;
}

}  // namespace fairgrpo::grpo
