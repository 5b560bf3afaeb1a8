#include "fairgrpo/model/transformer.hpp"

#include <algorithm>
#include <cmath>

#include "fairgrpo/errors.hpp"
#include "fairgrpo/numerics/ops.hpp"

namespace fairgrpo::model {
namespace {

constexpr std::array<const char*, 4> kProjNames{"q", "k", "v", "o"};
constexpr double kInitStd = 0.02;

Tensor gaussian(num::Shape shape, double stddev, num::Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> values(num::shape_size(shape));
  for (double& v : values) v = dist(rng);
  return Tensor::from_data(std::move(shape), std::move(values), true);
}

Tensor deep_copy(const Tensor& t) {
  if (!t.defined()) return t;
  Tensor c = t.detach();
  c.set_requires_grad(t.requires_grad());
  return c;
}

std::string layer_prefix(std::size_t l) { return "layers." + std::to_string(l) + "."; }

}  // namespace

void ModelConfig::validate() const {
  if (vocab_size < text::kReservedCount) throw ContractError("model: vocab_size below the reserved ids");
  if (d_model == 0 || n_heads == 0 || d_model % n_heads != 0) {
    throw ContractError("model: d_model must be a positive multiple of n_heads");
  }
  if (n_layers == 0 || d_ff == 0 || max_position == 0) throw ContractError("model: empty dimension");
}

nlohmann::json ModelConfig::to_json() const {
  return {{"vocab_size", vocab_size}, {"d_model", d_model}, {"n_layers", n_layers}, {"n_heads", n_heads},
          {"d_ff", d_ff},           {"max_position", max_position}, {"causal", causal}, {"lm_head", lm_head}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.vocab_size = j.at("vocab_size").get<std::size_t>();
  c.d_model = j.value("d_model", c.d_model);
  c.n_layers = j.value("n_layers", c.n_layers);
  c.n_heads = j.value("n_heads", c.n_heads);
  c.d_ff = j.value("d_ff", c.d_ff);
  c.max_position = j.value("max_position", c.max_position);
  c.causal = j.value("causal", c.causal);
  c.lm_head = j.value("lm_head", c.lm_head);
  return c;
}

void LoraConfig::validate() const {
  if (rank == 0) throw ContractError("lora: rank must be positive");
  if (!(alpha > 0.0)) throw ContractError("lora: alpha must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ContractError("lora: dropout must lie in [0, 1)");
}

nlohmann::json LoraConfig::to_json() const { return {{"rank", rank}, {"alpha", alpha}, {"dropout", dropout}}; }

LoraConfig LoraConfig::from_json(const nlohmann::json& j) {
  LoraConfig c;
  c.rank = j.value("rank", c.rank);
  c.alpha = j.value("alpha", c.alpha);
  c.dropout = j.value("dropout", c.dropout);
  return c;
}

LoraConfig lora_methods_preset() { return LoraConfig{16, 32.0, 0.05}; }
LoraConfig lora_experiments_preset() { return LoraConfig{8, 16.0, 0.05}; }

LoraAdapter LoraAdapter::create(std::size_t d_in, std::size_t d_out, const LoraConfig& config, num::Rng& rng) {
  config.validate();
  LoraAdapter a;
  a.A = gaussian({config.rank, d_in}, 1.0 / std::sqrt(static_cast<double>(d_in)), rng);
  a.B = Tensor::zeros({d_out, config.rank}, true);
  a.scaling = config.scaling();
  a.dropout = config.dropout;
  return a;
}

Tensor lora_merge_view(const Tensor& weight, const LoraAdapter& adapter) {
  if (weight.rank() != 2 || adapter.A.rank() != 2 || adapter.B.rank() != 2) {
    throw ContractError("lora_merge_view: expected matrices");
  }
  const std::size_t d_out = weight.dim(0), d_in = weight.dim(1), r = adapter.A.dim(0);
  if (adapter.B.dim(1) != r) {
    throw ContractError("lora_merge_view: rank mismatch, A has " + std::to_string(r) + " rows but B has " +
                        std::to_string(adapter.B.dim(1)) + " columns");
  }
  if (adapter.A.dim(1) != d_in || adapter.B.dim(0) != d_out) {
    throw ContractError("lora_merge_view: adapter " + num::shape_to_string(adapter.B.shape()) + " x " +
                        num::shape_to_string(adapter.A.shape()) + " does not fit weight " +
                        num::shape_to_string(weight.shape()));
  }
  num::NoGradGuard guard;
  const Tensor delta = num::matmul(adapter.B, adapter.A);
  std::vector<double> out(weight.values().begin(), weight.values().end());
  const auto dv = delta.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += adapter.scaling * dv[i];
  return Tensor::from_data(weight.shape(), std::move(out));
}

Batch Batch::from(std::span<const text::TokenSequence> sequences) {
  Batch b;
  b.batch = sequences.size();
  for (const auto& s : sequences) b.seq = std::max(b.seq, s.size());
  b.ids.reserve(b.batch * b.seq);
  b.mask.reserve(b.batch * b.seq);
  for (const auto& s : sequences) {
    const auto padded = text::left_pad(s, b.seq);
    b.ids.insert(b.ids.end(), padded.ids.begin(), padded.ids.end());
    b.mask.insert(b.mask.end(), padded.mask.begin(), padded.mask.end());
  }
  return b;
}

Transformer::Transformer(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  num::Rng rng(num::derive_seed(seed, {0x30de1u}));
  const std::size_t d = config_.d_model;
  tok_emb_ = gaussian({config_.vocab_size, d}, kInitStd, rng);
  pos_emb_ = gaussian({config_.max_position, d}, kInitStd, rng);
  for (std::size_t l = 0; l < config_.n_layers; ++l) {
    Layer layer;
    layer.ln1_gamma = Tensor::full({d}, 1.0, true);
    layer.ln1_beta = Tensor::zeros({d}, true);
    for (std::size_t p = 0; p < 4; ++p) {
      layer.w[p] = gaussian({d, d}, kInitStd, rng);
      layer.b[p] = Tensor::zeros({d}, true);
    }
    layer.ln2_gamma = Tensor::full({d}, 1.0, true);
    layer.ln2_beta = Tensor::zeros({d}, true);
    layer.w_in = gaussian({config_.d_ff, d}, kInitStd, rng);
    layer.b_in = Tensor::zeros({config_.d_ff}, true);
    layer.w_out = gaussian({d, config_.d_ff}, kInitStd, rng);
    layer.b_out = Tensor::zeros({d}, true);
    layers_.push_back(std::move(layer));
  }
  lnf_gamma_ = Tensor::full({d}, 1.0, true);
  lnf_beta_ = Tensor::zeros({d}, true);
  if (config_.lm_head) head_ = gaussian({config_.vocab_size, d}, kInitStd, rng);
}

Transformer Transformer::clone() const {
  Transformer c;
  c.config_ = config_;
  c.tok_emb_ = deep_copy(tok_emb_);
  c.pos_emb_ = deep_copy(pos_emb_);
  for (const auto& src : layers_) {
    Layer l;
    l.ln1_gamma = deep_copy(src.ln1_gamma);
    l.ln1_beta = deep_copy(src.ln1_beta);
    for (std::size_t p = 0; p < 4; ++p) {
      l.w[p] = deep_copy(src.w[p]);
      l.b[p] = deep_copy(src.b[p]);
    }
    l.ln2_gamma = deep_copy(src.ln2_gamma);
    l.ln2_beta = deep_copy(src.ln2_beta);
    l.w_in = deep_copy(src.w_in);
    l.b_in = deep_copy(src.b_in);
    l.w_out = deep_copy(src.w_out);
    l.b_out = deep_copy(src.b_out);
    c.layers_.push_back(std::move(l));
  }
  c.lnf_gamma_ = deep_copy(lnf_gamma_);
  c.lnf_beta_ = deep_copy(lnf_beta_);
  c.head_ = deep_copy(head_);
  c.lora_ = lora_;
  for (const auto& group : adapters_) {
    std::array<LoraAdapter, 4> copy;
    for (std::size_t p = 0; p < 4; ++p) {
      copy[p] = group[p];
      copy[p].A = deep_copy(group[p].A);
      copy[p].B = deep_copy(group[p].B);
    }
    c.adapters_.push_back(std::move(copy));
  }
  return c;
}

void Transformer::attach_lora(const LoraConfig& config, std::uint64_t seed) {
  config.validate();
  num::Rng rng(num::derive_seed(seed, {0x10aau}));
  const std::size_t d = config_.d_model;
  adapters_.clear();
  for (std::size_t l = 0; l < config_.n_layers; ++l) {
    std::array<LoraAdapter, 4> group;
    for (auto& a : group) a = LoraAdapter::create(d, d, config, rng);
    adapters_.push_back(std::move(group));
  }
  lora_ = config;
  set_base_trainable(false);
}

const LoraAdapter& Transformer::adapter(std::size_t layer, Projection p) const {
  if (!lora_ || layer >= adapters_.size()) throw ContractError("model: no adapter at that position");
  return adapters_[layer][static_cast<std::size_t>(p)];
}

LoraAdapter& Transformer::adapter(std::size_t layer, Projection p) {
  if (!lora_ || layer >= adapters_.size()) throw ContractError("model: no adapter at that position");
  return adapters_[layer][static_cast<std::size_t>(p)];
}

Tensor Transformer::project(const Tensor& x, std::size_t layer, Projection p, const ForwardOptions& options) const {
  const auto i = static_cast<std::size_t>(p);
  Tensor y = num::add_row(num::matmul_nt(x, layers_[layer].w[i]), layers_[layer].b[i]);
  if (!lora_) return y;
  const LoraAdapter& a = adapters_[layer][i];
  Tensor in = x;
  if (options.training && a.dropout > 0.0) {
    in = num::dropout(x, a.dropout, num::derive_seed(options.dropout_seed, {layer, i}));
  }
  return num::add(y, num::scale(num::matmul_nt(num::matmul_nt(in, a.A), a.B), a.scaling));
}

Tensor Transformer::hidden(const Batch& batch, const ForwardOptions& options) const {
  const std::size_t B = batch.batch, T = batch.seq;
  if (batch.ids.size() != B * T || batch.mask.size() != B * T) throw DimensionError("model: malformed batch");
  if (T > config_.max_position) {
    throw ContractError("model: sequence length " + std::to_string(T) + " exceeds max_position " +
                        std::to_string(config_.max_position));
  }
  std::vector<std::int32_t> positions(B * T, 0);
  for (std::size_t b = 0; b < B; ++b) {
    std::int32_t pos = 0;
    for (std::size_t t = 0; t < T; ++t) {
      const std::size_t i = b * T + t;
      const std::int32_t id = batch.ids[i];
      if (id < 0 || static_cast<std::size_t>(id) >= config_.vocab_size) {
        throw ContractError("model: token id " + std::to_string(id) + " outside vocabulary of " +
                            std::to_string(config_.vocab_size));
      }
      if (batch.mask[i]) positions[i] = pos++;
    }
  }
  Tensor x = num::add(num::embedding(tok_emb_, batch.ids), num::embedding(pos_emb_, positions));
  const num::AttentionShape shape{B, T, config_.n_heads, config_.causal};
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const Layer& L = layers_[l];
    const Tensor h = num::layer_norm(x, L.ln1_gamma, L.ln1_beta);
    const Tensor q = project(h, l, Projection::query, options);
    const Tensor k = project(h, l, Projection::key, options);
    const Tensor v = project(h, l, Projection::value, options);
    const Tensor att = num::attention(q, k, v, shape, batch.mask);
    x = num::add(x, project(att, l, Projection::output, options));
    const Tensor h2 = num::layer_norm(x, L.ln2_gamma, L.ln2_beta);
    const Tensor f = num::gelu(num::add_row(num::matmul_nt(h2, L.w_in), L.b_in));
    x = num::add(x, num::add_row(num::matmul_nt(f, L.w_out), L.b_out));
  }
  return num::layer_norm(x, lnf_gamma_, lnf_beta_);
}

Tensor Transformer::logits_for_rows(const Tensor& hidden, std::span<const std::size_t> rows) const {
  if (!head_.defined()) throw ContractError("model: no LM head");
  return num::matmul_nt(num::select_rows(hidden, rows), head_);
}

Tensor Transformer::forward(const Batch& batch, const ForwardOptions& options) const {
  if (!head_.defined()) throw ContractError("model: no LM head");
  const Tensor h = hidden(batch, options);
  return num::reshape(num::matmul_nt(h, head_), {batch.batch, batch.seq, config_.vocab_size});
}

std::vector<num::NamedTensor> Transformer::base_parameters() const {
  std::vector<num::NamedTensor> out{{"tok_emb", tok_emb_}, {"pos_emb", pos_emb_}};
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const std::string p = layer_prefix(l);
    const Layer& L = layers_[l];
    out.push_back({p + "ln1.gamma", L.ln1_gamma});
    out.push_back({p + "ln1.beta", L.ln1_beta});
    for (std::size_t i = 0; i < 4; ++i) {
      out.push_back({p + "attn." + kProjNames[i] + ".weight", L.w[i]});
      out.push_back({p + "attn." + kProjNames[i] + ".bias", L.b[i]});
    }
    out.push_back({p + "ln2.gamma", L.ln2_gamma});
    out.push_back({p + "ln2.beta", L.ln2_beta});
    out.push_back({p + "ffn.in.weight", L.w_in});
    out.push_back({p + "ffn.in.bias", L.b_in});
    out.push_back({p + "ffn.out.weight", L.w_out});
    out.push_back({p + "ffn.out.bias", L.b_out});
  }
  out.push_back({"ln_f.gamma", lnf_gamma_});
  out.push_back({"ln_f.beta", lnf_beta_});
  if (head_.defined()) out.push_back({"head.weight", head_});
  return out;
}

std::vector<num::NamedTensor> Transformer::lora_parameters() const {
  std::vector<num::NamedTensor> out;
  for (std::size_t l = 0; l < adapters_.size(); ++l) {
    for (std::size_t i = 0; i < 4; ++i) {
      const std::string p = layer_prefix(l) + "attn." + kProjNames[i] + ".lora_";
      out.push_back({p + "A", adapters_[l][i].A});
      out.push_back({p + "B", adapters_[l][i].B});
    }
  }
  return out;
}

std::vector<num::NamedTensor> Transformer::all_parameters() const {
  auto out = base_parameters();
  for (auto& t : lora_parameters()) out.push_back(std::move(t));
  return out;
}

void Transformer::set_base_trainable(bool trainable) {
  for (auto& p : base_parameters()) p.tensor.set_requires_grad(trainable);
}

void Transformer::set_lora_trainable(bool trainable) {
  for (auto& p : lora_parameters()) p.tensor.set_requires_grad(trainable);
}

void Transformer::load_parameters(const num::Checkpoint& checkpoint, bool with_lora) {
  auto targets = with_lora ? all_parameters() : base_parameters();
  for (auto& p : targets) {
    const Tensor& src = checkpoint.get(p.name);
    if (src.shape() != p.tensor.shape()) {
      throw IncompatibleError("checkpoint tensor " + p.name + " has shape " + num::shape_to_string(src.shape()) +
                              ", model expects " + num::shape_to_string(p.tensor.shape()));
    }
    std::copy(src.values().begin(), src.values().end(), p.tensor.mutable_values().begin());
  }
}

Transformer freeze_reference(const Transformer& model) {
  Transformer ref = model.clone();
  ref.set_base_trainable(false);
  ref.set_lora_trainable(false);
  return ref;
}

LmBatch LmBatch::build(std::span<const text::TokenSequence> prompts,
                       std::span<const std::vector<std::int32_t>> completions) {
  if (prompts.size() != completions.size()) throw DimensionError("lm batch: prompt/completion count mismatch");
  std::vector<text::TokenSequence> seqs;
  seqs.reserve(prompts.size());
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    std::vector<std::int32_t> ids{text::kBos};
    const auto real = prompts[i].real_ids();
    ids.insert(ids.end(), real.begin(), real.end());
    ids.insert(ids.end(), completions[i].begin(), completions[i].end());
    seqs.push_back(text::TokenSequence::from_ids(std::move(ids)));
  }
  LmBatch lm;
  lm.batch = Batch::from(seqs);
  const std::size_t T = lm.batch.seq;
  lm.offsets.push_back(0);
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    const std::size_t n = completions[i].size();
    // Token at absolute column (T - n + j) is predicted from the column before it.
    for (std::size_t j = 0; j < n; ++j) {
      lm.rows.push_back(i * T + (T - n + j) - 1);
      lm.targets.push_back(completions[i][j]);
    }
    lm.offsets.push_back(lm.targets.size());
  }
  return lm;
}

CompletionLogProbs completion_log_probs(const Transformer& model, const LmBatch& lm, double temperature,
                                        const ForwardOptions& options) {
  if (!(temperature > 0.0)) throw ContractError("log-probs: temperature must be positive");
  CompletionLogProbs out;
  out.offsets = lm.offsets;
  if (lm.targets.empty()) {
    out.log_probs = Tensor::zeros({0});
    return out;
  }
  const Tensor h = model.hidden(lm.batch, options);
  Tensor logits = model.logits_for_rows(h, lm.rows);
  if (temperature != 1.0) logits = num::scale(logits, 1.0 / temperature);
  out.log_probs = num::pick(num::log_softmax(logits, -1), lm.targets);
  return out;
}

std::vector<double> log_prob_of_completion(const Transformer& model, const text::TokenSequence& prompt,
                                           std::span<const std::int32_t> completion, double temperature) {
  if (completion.empty()) return {};
  num::NoGradGuard guard;
  const std::vector<std::vector<std::int32_t>> comps{{completion.begin(), completion.end()}};
  const auto lm = LmBatch::build(std::span(&prompt, 1), comps);
  const auto lp = completion_log_probs(model, lm, temperature);
  return {lp.log_probs.values().begin(), lp.log_probs.values().end()};
}

void save_model(const std::filesystem::path& path, const Transformer& model, const text::Vocabulary& vocab,
                const nlohmann::json& extra) {
  nlohmann::json meta = extra;
  meta["model"] = model.config().to_json();
  meta["lora"] = model.lora_config() ? model.lora_config()->to_json() : nlohmann::json();
  meta["vocab"] = vocab.to_json();
  num::save_checkpoint(path, model.all_parameters(), meta);
}

LoadedModel load_model(const std::filesystem::path& path) {
  const num::Checkpoint ck = num::load_checkpoint(path);
  if (!ck.metadata.contains("model") || !ck.metadata.contains("vocab")) {
    throw IncompatibleError(path.string() + " is not a model checkpoint");
  }
  text::Vocabulary vocab = text::Vocabulary::from_json(ck.metadata.at("vocab"));
  const ModelConfig config = ModelConfig::from_json(ck.metadata.at("model"));
  if (config.vocab_size != vocab.size()) {
    throw IncompatibleError(path.string() + ": model vocabulary size " + std::to_string(config.vocab_size) +
                            " does not match stored vocabulary of " + std::to_string(vocab.size()));
  }
  Transformer model(config, 0);
  const auto& lora = ck.metadata.at("lora");
  if (!lora.is_null()) model.attach_lora(LoraConfig::from_json(lora), 0);
  model.load_parameters(ck, !lora.is_null());
  if (!lora.is_null()) {
    model.set_base_trainable(false);
  }
  return {std::move(model), std::move(vocab), ck.metadata};
}

}  // namespace fairgrpo::model
