// Acceptance run: one PASS/FAIL line per criterion. Pass criterion numbers
// as arguments to run a subset.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "fairgrpo/cli/pipeline.hpp"
#include "fairgrpo/grpo/grpo.hpp"
#include "fairgrpo/log.hpp"
#include "fairgrpo/model/transformer.hpp"
#include "fairgrpo/numerics/adamw.hpp"
#include "fairgrpo/numerics/checkpoint.hpp"
#include "fairgrpo/numerics/ops.hpp"
#include "fairgrpo/rewards/rewards.hpp"
#include "fairgrpo/scorer/classifier.hpp"
#include "fairgrpo/text/corpus.hpp"
#include "support/gradcheck.hpp"

using namespace fairgrpo;
using num::Tensor;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// Collects named checks; a criterion passes when every check does.
struct Checks {
  std::vector<std::string> failed;
  std::ostringstream detail;

  void expect(bool ok, const std::string& what) {
    if (!ok) failed.push_back(what);
  }
  void near(double got, double want, double tol, const std::string& what) {
    if (!(std::abs(got - want) <= tol)) {
      char buf[160];
      std::snprintf(buf, sizeof buf, "%s: got %.12g want %.12g", what.c_str(), got, want);
      failed.push_back(buf);
    }
  }
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

Tensor randn(num::Shape shape, std::uint64_t seed, bool requires_grad = true, double sd = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, sd);
  std::vector<double> v(num::shape_size(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor::from_data(std::move(shape), std::move(v), requires_grad);
}

void randomize_lora(model::Transformer& m, std::uint64_t seed, double sd) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, sd);
  for (auto& p : m.lora_parameters()) {
    for (double& v : p.tensor.mutable_values()) v = dist(rng);
  }
}

model::ModelConfig micro(std::size_t vocab) {
  model::ModelConfig c;
  c.vocab_size = vocab;
  c.d_model = 8;
  c.n_layers = 2;
  c.n_heads = 2;
  c.d_ff = 16;
  c.max_position = 32;
  return c;
}

text::Vocabulary words(std::initializer_list<const char*> ws) {
  text::Vocabulary v;
  for (const char* w : ws) v.add(w);
  return v;
}

std::vector<text::DatasetRecord> toy_prompts(std::size_t n) {
  const char* groups[] = {"velari", "many"};
  const char* traits[] = {"kind", "rude"};
  std::vector<text::DatasetRecord> out;
  for (std::size_t i = 0; i < n; ++i) {
    text::DatasetRecord r;
    r.prompt = std::string("why are people from ") + groups[i % 2] + " often " + traits[(i / 2) % 2] + " ?";
    out.push_back(r);
  }
  return out;
}

// ---------------------------------------------------------------------------

void criterion1(Checks& c) {
  const auto t0 = Clock::now();
  const double ts[] = {0.1, 0.3, 0.7, 0.9};
  const double want[][2] = {{1.2, 0.6}, {1.0, 1.0}, {1.0, 1.0}, {0.8, 1.4}};
  for (int i = 0; i < 4; ++i) {
    const auto s = rewards::schedule(ts[i]);
    c.expect(s.w_form == want[i][0] && s.w_fair == want[i][1], "schedule at t=" + fmt("%g", ts[i]));
  }

  rewards::RewardConfig quiet;
  quiet.noise_enabled = false;
  // "a b c" three times: 7 trigrams, 3 distinct.
  const std::vector<std::int32_t> abc3{5, 6, 7, 5, 6, 7, 5, 6, 7};
  c.near(rewards::repetition_reward(abc3, quiet), 1.0 - 4.0 / 7.0, 1e-6, "repetition");

  // tf vectors (1,1,0) and (1,0,1): cos 1/2.
  c.near(rewards::paraphrase_penalty("a b", "a c").value, 0.75, 1e-9, "paraphrase");

  // (1.4*0.9 + 0.8*0.5) / 2.2
  rewards::Components comp{0.9, 0.5, 0.5, 0.5, 0.5, 0.5};
  const auto b = rewards::compose(comp, rewards::schedule(0.9), quiet);
  c.near(b.form, 0.5, 1e-12, "form of all-0.5 components");
  c.near(b.final_pre_noise, (1.4 * 0.9 + 0.8 * 0.5) / 2.2, 1e-12, "composite formula");
  c.near(b.final_pre_noise, 0.7545, 1e-4, "composite example");

  // Zero LM head: every next-token distribution is uniform over 16 ids.
  const auto vocab = words({"a", "b", "c", "velari", "people", "are", "kind", "what", "like", "?", "rude", "x"});
  c.expect(vocab.size() == 16, "vocab of 16");
  model::ModelConfig mc = micro(vocab.size());
  mc.n_layers = 1;
  model::Transformer ref(mc, 1);
  for (double& w : ref.mutable_head().mutable_values()) w = 0.0;
  scorer::ClassifierConfig cc;
  cc.kind = scorer::EncoderKind::bag;
  cc.d_model = 8;
  cc.embedding_dim = 8;
  cc.bigram_buckets = 16;
  const scorer::FairnessClassifier clf(cc, vocab, 2);
  const rewards::RewardEngine engine(clf, ref, vocab, quiet);
  const auto s = engine.score_text("what are velari people like ?", "velari people are kind", 0.5);
  c.near(s.r_flu, 1.0 / 16.0, 1e-6, "uniform fluency");

  const double secs = seconds_since(t0);
  c.expect(secs < 1.0, "runtime " + fmt("%.2fs", secs));
  c.detail << "runtime " << fmt("%.3fs", secs);
}

void criterion2(Checks& c) {
  const auto t0 = Clock::now();
  double coeff = 0.0;
  for (double w : rewards::kFormCoefficients) coeff += w;
  c.near(coeff, 1.0, 1e-12, "form coefficients sum");

  const auto corpus = text::generate_synthetic_corpus(21, 300);
  std::vector<std::string> texts;
  for (const auto& r : corpus) {
    texts.push_back(r.prompt);
    if (r.response) texts.push_back(*r.response);
  }
  const auto vocab = text::Vocabulary::build(texts);
  model::ModelConfig mc;
  mc.vocab_size = vocab.size();
  mc.d_model = 32;
  mc.n_layers = 2;
  mc.n_heads = 4;
  mc.d_ff = 64;
  const model::Transformer ref(mc, 3);
  scorer::ClassifierConfig cc;
  cc.kind = scorer::EncoderKind::bag;
  const scorer::FairnessClassifier clf(cc, vocab, 4);
  rewards::RewardConfig rc;
  rc.noise_enabled = false;
  const rewards::RewardEngine engine(clf, ref, vocab, rc);

  num::Rng rng(2024);
  std::size_t out_of_range = 0, not_invariant = 0;
  double worst_rescale = 0.0;
  set_warning_sink([](const std::string&) {});
  for (int i = 0; i < 10000; ++i) {
    auto random_ids = [&](std::size_t lo, std::size_t hi) {
      std::vector<std::int32_t> ids(lo + rng() % (hi - lo + 1));
      for (auto& id : ids) id = static_cast<std::int32_t>(4 + rng() % (vocab.size() - 4));
      return ids;
    };
    std::vector<std::int32_t> completion = random_ids(0, 64);
    // Sometimes reuse the prompt words or finish with EOS.
    const auto prompt = text::TokenSequence::from_ids(random_ids(1, 24));
    if (i % 5 == 0) completion.assign(prompt.ids.begin(), prompt.ids.end());
    if (i % 3 == 0) completion.push_back(text::kEos);
    const double t = num::uniform01(rng);
    const auto b = engine.score(text::detokenize(prompt.ids, vocab), prompt, completion, t);
    for (double v : {b.r_fair, b.r_sem, b.r_para, b.r_len, b.r_flu, b.r_rep, b.form, b.final_pre_noise}) {
      if (!(v >= 0.0 && v <= 1.0)) ++out_of_range;
    }
    const rewards::Components comp{b.r_fair, b.r_sem, b.r_para, b.r_len, b.r_flu, b.r_rep};
    const double k = std::exp(4.0 * num::uniform01(rng) - 2.0);
    const rewards::ScheduleState scaled{t, b.w_form * k, b.w_fair * k};
    const double diff = std::abs(rewards::compose(comp, scaled, rc).final_pre_noise - b.final_pre_noise);
    worst_rescale = std::max(worst_rescale, diff);
    if (diff > 1e-9) ++not_invariant;
  }
  set_warning_sink({});
  c.expect(out_of_range == 0, std::to_string(out_of_range) + " values outside [0,1]");
  c.expect(not_invariant == 0, std::to_string(not_invariant) + " rescalings changed the final reward");
  const double secs = seconds_since(t0);
  c.expect(secs < 30.0, "runtime " + fmt("%.1fs", secs));
  c.detail << "10000 triples, worst rescale diff " << fmt("%.2e", worst_rescale) << ", runtime " << fmt("%.2fs", secs);
}

void criterion3(Checks& c) {
  const auto t0 = Clock::now();
  double worst_layer = 0.0;
  auto layer = [&](const std::string& name, const std::function<Tensor()>& f, std::vector<Tensor> params) {
    const auto r = testsupport::grad_check(f, std::move(params));
    worst_layer = std::max(worst_layer, r.worst_relative_error);
    c.expect(r.worst_relative_error <= 1e-4, name + " rel err " + fmt("%.2e", r.worst_relative_error));
  };
  using namespace num;

  {
    Tensor x = randn({3, 5}, 1), w = randn({4, 5}, 2), b = randn({4}, 3), m2 = randn({5, 2}, 4);
    Tensor probe = randn({3, 4}, 5, false);
    layer("linear", [&] { return sum(mul(add_row(matmul_nt(x, w), b), probe)); }, {x, w, b});
    layer("matmul/exp/scale", [&] { return sum(exp(scale(matmul(x, m2), 0.3))); }, {x, m2});
  }
  {
    Tensor x = randn({4, 6}, 6), g = randn({6}, 7), b = randn({6}, 8);
    Tensor probe = randn({4, 6}, 9, false);
    layer("layer norm", [&] { return sum(mul(layer_norm(x, g, b), probe)); }, {x, g, b});
  }
  for (bool causal : {true, false}) {
    Tensor q = randn({8, 6}, 10), k = randn({8, 6}, 11), v = randn({8, 6}, 12);
    Tensor probe = randn({8, 6}, 13, false);
    const std::vector<std::uint8_t> mask{0, 1, 1, 1, 1, 1, 1, 1};
    const AttentionShape shape{2, 4, 2, causal};
    layer(causal ? "causal attention" : "bidirectional attention",
          [&] { return sum(mul(attention(q, k, v, shape, mask), probe)); }, {q, k, v});
  }
  {
    Tensor table = randn({7, 3}, 20), head = randn({7, 3}, 21);
    const std::vector<std::int32_t> ids{1, 4, 4, 6};
    const std::vector<std::int32_t> targets{2, -1, 0, 5};
    layer("embedding + cross entropy", [&] { return cross_entropy(matmul_nt(embedding(table, ids), head), targets); },
          {table, head});
  }
  {
    Tensor x = randn({3, 5}, 30), y = randn({3, 5}, 31);
    Tensor probe = randn({3, 5}, 32, false);
    const std::vector<std::int32_t> cols{0, 4, 2};
    layer("gelu + log-softmax + pick", [&] { return sum(pick(log_softmax(gelu(x)), cols)); }, {x});
    layer("relu + softmax", [&] { return sum(mul(softmax(relu(y), 0), probe)); }, {y});
    layer("log", [&] { return sum(mul(log(add_scalar(mul(y, y), 0.5)), probe)); }, {y});
  }
  {
    Tensor x = randn({6}, 40, true, 0.1);
    const Tensor adv = Tensor::from_data({6}, {1, -1, 2, -2, 0.5, -0.5});
    layer("clipped surrogate",
          [&] {
            const Tensor ratio = exp(x);
            return mean(minimum(mul(ratio, adv), mul(clamp(ratio, 0.95, 1.05), adv)));
          },
          {x});
  }
  {
    Tensor x = randn({6, 4}, 50);
    Tensor probe = randn({2, 4}, 51, false);
    const std::vector<std::uint8_t> mask{0, 1, 1, 1, 1, 1};
    const std::vector<std::size_t> rows{5, 0, 3};
    layer("mean pool + dropout + select rows + reshape",
          [&] {
            const Tensor pooled = mean_pool(dropout(x, 0.3, 77), 2, 3, mask);
            return add(sum(mul(pooled, probe)), sum(reshape(select_rows(sub(x, scale(x, 0.5)), rows), {12})));
          },
          {x});
  }
  {
    // LoRA projection inside the full decoder, base and adapters trainable.
    model::Transformer m(micro(12), 10);
    m.attach_lora({2, 4.0, 0.1}, 4);
    randomize_lora(m, 11, 0.2);
    m.set_base_trainable(true);
    const std::vector<text::TokenSequence> prompts{text::TokenSequence::from_ids({4, 5}),
                                                   text::TokenSequence::from_ids({6, 7, 8, 9})};
    const std::vector<std::vector<std::int32_t>> comps{{10, 11, 2}, {3, 2}};
    const auto lm = model::LmBatch::build(prompts, comps);
    auto loss = [&] {
      return mean(model::completion_log_probs(m, lm, 0.7, {.training = true, .dropout_seed = 3}).log_probs);
    };
    // Softmax ignores a shift shared by all keys, so the key bias has an
    // exactly zero gradient; a ratio of round-off is meaningless there.
    std::vector<Tensor> params, key_bias;
    for (auto& p : m.all_parameters()) {
      (p.name.find("attn.k.bias") != std::string::npos ? key_bias : params).push_back(p.tensor);
    }
    layer("decoder with LoRA", loss, params);
    double worst_abs = 0.0;
    for (auto& p : params) p.zero_grad();
    for (auto& kb : key_bias) kb.zero_grad();
    num::backward(loss());
    for (auto& kb : key_bias) {
      auto v = kb.mutable_values();
      for (std::size_t i = 0; i < v.size(); ++i) {
        const double saved = v[i];
        double plus, minus;
        {
          NoGradGuard guard;
          v[i] = saved + 1e-5;
          plus = loss().item();
          v[i] = saved - 1e-5;
          minus = loss().item();
        }
        v[i] = saved;
        worst_abs = std::max({worst_abs, std::abs(kb.grad()[i]), std::abs((plus - minus) / 2e-5)});
      }
    }
    c.expect(!key_bias.empty() && worst_abs <= 1e-8, "key bias gradient " + fmt("%.2e", worst_abs));

    model::ModelConfig enc = micro(12);
    enc.causal = false;
    enc.lm_head = false;
    model::Transformer e(enc, 12);
    const auto batch = model::Batch::from(prompts);
    const Tensor probe = randn({2, 8}, 13, false);
    std::vector<Tensor> eparams;
    for (auto& p : e.all_parameters()) eparams.push_back(p.tensor);
    layer("encoder", [&] { return sum(mul(mean_pool(e.hidden(batch), 2, batch.seq, batch.mask), probe)); }, eparams);
  }

  // Full GRPO objective over sampled groups of a micro model.
  model::Transformer policy(micro(8), 21);
  policy.attach_lora({2, 4.0, 0.0}, 22);
  randomize_lora(policy, 23, 0.3);
  const auto reference = model::freeze_reference(policy);
  randomize_lora(policy, 24, 0.3);
  sampling::SamplerConfig sc;
  sc.temperature = 1.0;
  sc.top_p = 1.0;
  sc.max_new_tokens = 5;
  sc.group_size = 3;
  sc.rng_seed = 17;
  std::vector<sampling::CandidateGroup> groups;
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-0.6, 0.6);
  for (int i = 0; i < 2; ++i) {
    auto g = sampling::sample_group(reference, &reference, text::TokenSequence::from_ids({4, 5, 6 + i}), sc, i);
    for (auto& lp : g.policy_logprobs) {
      for (double& v : lp) v += u(rng);
    }
    g.rewards.resize(g.size());
    for (double& r : g.rewards) r = 0.5 + u(rng);
    g.advantages = grpo::compute_advantages(g.rewards);
    groups.push_back(std::move(g));
  }
  grpo::GrpoConfig cfg;
  cfg.kl_coefficient = 0.3;
  std::vector<Tensor> params;
  for (auto& p : policy.lora_parameters()) params.push_back(p.tensor);
  const auto e2e = testsupport::grad_check([&] { return grpo::grpo_loss(groups, policy, cfg, 0.8).loss; }, params, 1e-6);
  c.expect(e2e.worst_relative_error <= 1e-3, "GRPO loss rel err " + fmt("%.2e", e2e.worst_relative_error));

  const double secs = seconds_since(t0);
  c.expect(secs < 120.0, "runtime " + fmt("%.1fs", secs));
  c.detail << "worst layer " << fmt("%.2e", worst_layer) << ", GRPO end-to-end " << fmt("%.2e", e2e.worst_relative_error)
           << ", runtime " << fmt("%.2fs", secs);
}

void criterion4(Checks& c) {
  // Zero-initialised adapters leave the forward pass bit-identical.
  const model::ModelConfig mc = micro(12);
  model::Transformer base(mc, 2);
  model::Transformer adapted = base.clone();
  adapted.attach_lora(model::lora_methods_preset(), 3);
  {
    num::NoGradGuard guard;
    const std::vector<text::TokenSequence> seqs{text::TokenSequence::from_ids({1, 4, 5, 6, 7, 3}),
                                                text::TokenSequence::from_ids({1, 9, 10})};
    const auto batch = model::Batch::from(seqs);
    const Tensor a = base.forward(batch);
    const Tensor b = adapted.forward(batch);
    const Tensor d = adapted.forward(batch, {.training = true, .dropout_seed = 9});
    const std::vector<double> av(a.values().begin(), a.values().end());
    c.expect(av == std::vector<double>(b.values().begin(), b.values().end()), "zero-init forward bit-exact");
    c.expect(av == std::vector<double>(d.values().begin(), d.values().end()), "zero-init forward with dropout");
  }

  // Effective scaling: merged weight minus base equals (alpha / r) B A.
  const auto methods = model::lora_methods_preset();
  c.expect(methods.rank == 16 && methods.alpha == 32.0, "methods preset r=16, alpha=32");
  c.expect(methods.scaling() == 2.0, "methods scaling 2");
  model::ModelConfig wide = mc;
  wide.d_model = 32;
  wide.n_heads = 4;
  wide.d_ff = 64;
  model::Transformer m(wide, 5);
  m.attach_lora(methods, 6);
  randomize_lora(m, 7, 0.1);
  const auto& ad = m.adapter(0, model::Projection::value);
  c.expect(ad.rank() == 16 && ad.scaling == 2.0, "adapter carries alpha/r");
  const Tensor& w = m.layers()[0].w[2];
  const Tensor merged = model::lora_merge_view(w, ad);
  const std::size_t d_out = w.dim(0), d_in = w.dim(1), r = ad.rank();
  double worst = 0.0;
  for (std::size_t i = 0; i < d_out; ++i) {
    for (std::size_t j = 0; j < d_in; ++j) {
      double ba = 0.0;
      for (std::size_t k = 0; k < r; ++k) ba += ad.B.values()[i * r + k] * ad.A.values()[k * d_in + j];
      const double delta = merged.values()[i * d_in + j] - w.values()[i * d_in + j];
      worst = std::max(worst, std::abs(delta - 2.0 * ba));
    }
  }
  c.expect(worst <= 1e-12, "merged delta = 2 B A, worst " + fmt("%.2e", worst));

  // A short GRPO run changes the adapters and nothing else.
  const auto vocab = words({"why", "are", "people", "from", "velari", "kind", "rude", "often", "so", "what", "?", "many"});
  model::Transformer tiny(micro(vocab.size()), 31);
  scorer::ClassifierConfig cc;
  cc.kind = scorer::EncoderKind::bag;
  cc.d_model = 8;
  cc.embedding_dim = 8;
  cc.bigram_buckets = 32;
  const scorer::FairnessClassifier clf(cc, vocab, 32);
  const auto reference = model::freeze_reference(tiny);
  const rewards::RewardEngine engine(clf, reference, vocab, rewards::RewardConfig{});
  auto policy = tiny.clone();
  policy.attach_lora(methods, 33);
  const std::string base_hash = num::hash_values(policy.base_parameters());
  const std::string ref_hash = num::hash_values(reference.base_parameters());
  const std::string lora_hash = num::hash_values(policy.lora_parameters());
  grpo::TrainOptions opts;
  opts.grpo = grpo::methods_preset();
  opts.grpo.group_size = 2;
  opts.grpo.epochs = 2;
  opts.grpo.learning_rate = 1e-2;
  opts.grpo.checkpoint_every = 0;
  opts.sampler.max_new_tokens = 6;
  opts.sampler.group_size = 2;
  opts.seed = 5;
  const auto prompts = toy_prompts(32);
  const auto res = grpo::train(policy, reference, engine, vocab, prompts, {}, opts);
  c.expect(num::hash_values(policy.base_parameters()) == base_hash, "base hash unchanged by GRPO");
  c.expect(num::hash_values(reference.base_parameters()) == ref_hash, "reference hash unchanged by GRPO");
  c.expect(num::hash_values(policy.lora_parameters()) != lora_hash, "adapters trained");
  c.detail << "merged-delta error " << fmt("%.1e", worst) << ", " << res.steps << " GRPO steps, base hash "
           << base_hash.substr(0, 12);
}

void criterion5(Checks& c) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double worst_mean = 0.0, worst_eps_std = 0.0, worst_unit_std = 0.0, worst_shift = 0.0;
  for (int trial = 0; trial < 2000; ++trial) {
    std::vector<double> r(2 + trial % 15);
    const double spread = std::pow(10.0, -3.0 * u(rng));
    for (double& v : r) v = u(rng) * spread;
    const auto a = grpo::compute_advantages(r);
    const double n = static_cast<double>(r.size());
    double mean = 0.0, rm = 0.0, var = 0.0;
    for (double v : a) mean += v / n;
    for (double v : r) rm += v / n;
    for (double v : r) var += (v - rm) * (v - rm) / n;
    const double sigma = std::sqrt(var);
    double sa = 0.0;
    for (double v : a) sa += (v - mean) * (v - mean) / n;
    // The default epsilon shrinks the std to sigma / (sigma + eps); with eps
    // negligible against sigma it is one.
    worst_mean = std::max(worst_mean, std::abs(mean));
    worst_eps_std = std::max(worst_eps_std, std::abs(std::sqrt(sa) - sigma / (sigma + 1e-6)));
    const auto unit = grpo::compute_advantages(r, 1e-15);
    double su = 0.0;
    for (double v : unit) su += v * v / n;
    worst_unit_std = std::max(worst_unit_std, std::abs(std::sqrt(su) - 1.0));
    std::vector<double> shifted = r;
    const double offset = 10.0 * (u(rng) - 0.5);
    for (double& v : shifted) v += offset;
    const auto b = grpo::compute_advantages(shifted);
    for (std::size_t i = 0; i < a.size(); ++i) {
      worst_shift = std::max(worst_shift, std::abs(a[i] - b[i]) / std::max(1.0, std::abs(a[i])));
    }
  }
  c.expect(worst_mean <= 1e-9, "mean " + fmt("%.2e", worst_mean));
  c.expect(worst_eps_std <= 1e-9, "std with default epsilon " + fmt("%.2e", worst_eps_std));
  c.expect(worst_unit_std <= 1e-9, "unit std " + fmt("%.2e", worst_unit_std));
  c.expect(worst_shift <= 1e-6, "shift " + fmt("%.2e", worst_shift));
  for (std::size_t k : {2u, 4u, 9u}) {
    const auto z = grpo::compute_advantages(std::vector<double>(k, 0.37));
    c.expect(std::all_of(z.begin(), z.end(), [](double v) { return v == 0.0; }), "all-equal group");
  }
  c.detail << "2000 groups: |mean| " << fmt("%.1e", worst_mean) << ", unit-std error " << fmt("%.1e", worst_unit_std)
           << ", shift error " << fmt("%.1e", worst_shift);
}

void criterion6(Checks& c) {
  const auto t0 = Clock::now();
  const auto corpus = text::generate_synthetic_corpus(7, 2000);
  const scorer::ClassifierConfig cfg;
  scorer::ClassifierTrainOptions opts;
  opts.seed = 3;
  c.expect(opts.epochs <= 5, "at most five epochs");
  const auto trained = scorer::train_fairness_classifier(corpus, cfg, opts);
  c.expect(trained.metrics.f1 >= 0.95, "F1 " + fmt("%.4f", trained.metrics.f1));

  auto shuffled = corpus;
  std::vector<text::Label> labels;
  for (const auto& r : shuffled) labels.push_back(*r.label);
  std::mt19937_64 rng(17);
  std::shuffle(labels.begin(), labels.end(), rng);
  for (std::size_t i = 0; i < shuffled.size(); ++i) shuffled[i].label = labels[i];
  const auto control = scorer::train_fairness_classifier(shuffled, cfg, opts);
  c.expect(std::abs(control.metrics.accuracy - 0.5) <= 0.1, "control accuracy " + fmt("%.4f", control.metrics.accuracy));
  const double secs = seconds_since(t0);
  c.expect(secs < 300.0, "runtime " + fmt("%.0fs", secs));
  c.detail << "F1 " << fmt("%.4f", trained.metrics.f1) << ", shuffled-label accuracy "
           << fmt("%.4f", control.metrics.accuracy) << ", runtime " << fmt("%.1fs", secs);
}

void criterion7(Checks& c) {
  const auto t0 = Clock::now();
  const fs::path dir = fs::temp_directory_path() / "fairgrpo_acceptance_e2e";
  fs::remove_all(dir);
  cli::RunConfig cfg = cli::RunConfig::for_preset(cli::Preset::experiments);
  cfg.paths.out_dir = dir;
  c.expect(cfg.data.n_train_prompts == 500, "500 training prompts");
  c.expect(cfg.grpo.epochs >= 2, "at least two epochs");

  auto log = [&](const std::string& m) { std::cerr << "[" << fmt("%6.1f", seconds_since(t0)) << "s] " << m << "\n"; };
  const auto data = cli::generate_data(cfg.data, cfg.seed);
  auto base = cli::pretrain_base(cfg, data.corpus, data.train_prompts, [&](const model::PretrainEpoch& e) {
    log("pretrain epoch " + std::to_string(e.epoch) + " loss " + fmt("%.4f", e.mean_loss));
  });
  const auto clf = cli::train_classifier(cfg, data.corpus);
  log("classifier f1 " + fmt("%.4f", clf.metrics.f1));
  const std::string base_hash = num::hash_values(base.model.base_parameters());
  auto policy = base.model.clone();
  const auto res = cli::tune(cfg, policy, base.model, clf.classifier, base.vocab, data.train_prompts,
                             data.validation_prompts, dir / "grpo", [&](const grpo::LogRecord& r) {
                               if (r.step % 100 == 0) log(grpo::log_csv_row(r));
                             });
  c.expect(num::hash_values(policy.base_parameters()) == base_hash, "base weights untouched");
  c.expect(!res.diverged, "no divergence");
  // Compared as the CLI does: the best-by-validation checkpoint.
  const auto tuned = model::load_model(dir / "grpo" / "best.ckpt");
  const auto cmp = cli::compare(cfg, base.model, tuned.model, clf.classifier, base.vocab, data.eval_prompts);
  const double d_fair = cmp.tuned.fairness - cmp.base.fairness;
  const double d_flu = cmp.tuned.fluency - cmp.base.fluency;
  const double d_rel = cmp.tuned.relevance - cmp.base.relevance;
  c.expect(d_fair >= 0.10, "fairness gain " + fmt("%+.4f", d_fair));
  c.expect(d_flu >= -0.05, "fluency change " + fmt("%+.4f", d_flu));
  c.expect(d_rel >= -0.02, "relevance change " + fmt("%+.4f", d_rel));
  const double secs = seconds_since(t0);
  c.expect(secs <= 900.0, "runtime " + fmt("%.0fs", secs));
  c.detail << "fairness " << fmt("%.4f", cmp.base.fairness) << "->" << fmt("%.4f", cmp.tuned.fairness) << " ("
           << fmt("%+.4f", d_fair) << "), fluency " << fmt("%.4f", cmp.base.fluency) << "->"
           << fmt("%.4f", cmp.tuned.fluency) << " (" << fmt("%+.4f", d_flu) << "), relevance "
           << fmt("%.4f", cmp.base.relevance) << "->" << fmt("%.4f", cmp.tuned.relevance) << " ("
           << fmt("%+.4f", d_rel) << "), " << res.steps << " steps, runtime " << fmt("%.0fs", secs);
  fs::remove_all(dir);
}

void criterion8(Checks& c) {
  const fs::path dir = fs::temp_directory_path() / "fairgrpo_acceptance_logs";
  fs::remove_all(dir);
  cli::RunConfig cfg = cli::RunConfig::for_preset(cli::Preset::experiments);
  cfg.data.n_records = 400;
  cfg.data.n_train_prompts = 80;
  cfg.data.n_validation_prompts = 4;
  cfg.model.d_model = 32;
  cfg.model.n_layers = 2;
  cfg.model.d_ff = 64;
  cfg.pretrain.epochs = 1;
  cfg.classifier.kind = scorer::EncoderKind::bag;
  cfg.classifier_train.epochs = 2;
  cfg.grpo.epochs = 2;
  cfg.sampler.max_new_tokens = 16;
  cfg.rewards.noise_enabled = false;
  const auto data = cli::generate_data(cfg.data, cfg.seed);
  auto base = cli::pretrain_base(cfg, data.corpus, data.train_prompts);
  const auto clf = cli::train_classifier(cfg, data.corpus);
  std::vector<std::string> csv;
  std::size_t total = 0;
  for (int run = 0; run < 2; ++run) {
    auto policy = base.model.clone();
    const auto out = dir / ("run" + std::to_string(run));
    const auto res = cli::tune(cfg, policy, base.model, clf.classifier, base.vocab, data.train_prompts,
                               data.validation_prompts, out);
    total = res.steps;
    csv.push_back(num::read_file(out / "log.csv"));
  }
  c.expect(csv[0] == csv[1], "CSVs differ");
  std::istringstream in(csv[0]);
  std::string line;
  std::getline(in, line);
  c.expect(line == grpo::log_csv_header(), "header");
  std::vector<std::size_t> steps;
  while (std::getline(in, line)) steps.push_back(std::stoul(line.substr(0, line.find(','))));
  c.expect(total == 40, "expected 40 steps, got " + std::to_string(total));
  for (std::size_t i = 0; i < steps.size(); ++i) {
    c.expect(steps[i] == 10 * (i + 1), "record " + std::to_string(i) + " at step " + std::to_string(steps[i]));
  }
  c.expect(steps.size() == total / 10, "record count");
  c.detail << "two runs byte-identical (" << csv[0].size() << " bytes), records at steps";
  for (auto s : steps) c.detail << " " << s;
  fs::remove_all(dir);
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, void (*)(Checks&)>> criteria{
      {"reward-value oracles", criterion1},  {"range and normalisation", criterion2},
      {"gradient checks", criterion3},       {"LoRA contracts", criterion4},
      {"advantage contracts", criterion5},   {"fairness classifier", criterion6},
      {"end-to-end direction", criterion7},  {"logging and determinism", criterion8},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  bool all_ok = true;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i + 1);
    if (!only.empty() && !only.count(id)) continue;
    Checks c;
    try {
      criteria[i].second(c);
    } catch (const std::exception& e) {
      c.failed.push_back(std::string("exception: ") + e.what());
    }
    const bool ok = c.failed.empty();
    all_ok = all_ok && ok;
    std::cout << "criterion " << id << " " << (ok ? "PASS" : "FAIL") << "  " << criteria[i].first << ": "
              << c.detail.str();
    for (const auto& f : c.failed) std::cout << " | " << f;
    std::cout << std::endl;
  }
  return all_ok ? 0 : 1;
}
