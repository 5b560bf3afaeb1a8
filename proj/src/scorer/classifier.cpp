#include "fairgrpo/scorer/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fairgrpo/errors.hpp"
#include "fairgrpo/numerics/adamw.hpp"
#include "fairgrpo/numerics/checkpoint.hpp"
#include "fairgrpo/numerics/ops.hpp"

namespace fairgrpo::scorer {
namespace {

constexpr int kBiased = 0;
constexpr int kNeutral = 1;

const char* kind_name(EncoderKind k) { return k == EncoderKind::bag ? "bag" : "transformer"; }

EncoderKind parse_kind(const std::string& s) {
  if (s == "bag") return EncoderKind::bag;
  if (s == "transformer") return EncoderKind::transformer;
  throw IncompatibleError("unknown classifier encoder kind '" + s + "'");
}

model::ModelConfig encoder_config(const ClassifierConfig& c, std::size_t vocab_size) {
  model::ModelConfig m;
  m.vocab_size = vocab_size;
  m.d_model = c.d_model;
  m.n_layers = c.n_layers;
  m.n_heads = c.n_heads;
  m.d_ff = c.d_ff;
  m.max_position = c.max_len;
  m.causal = false;
  m.lm_head = false;
  return m;
}

std::string record_text(const text::DatasetRecord& r) { return r.response ? *r.response : r.prompt; }

}  // namespace

void ClassifierConfig::validate() const {
  if (d_model == 0 || embedding_dim == 0 || max_len == 0) throw ContractError("classifier: empty dimension");
  if (kind == EncoderKind::transformer && (n_heads == 0 || d_model % n_heads != 0 || n_layers == 0)) {
    throw ContractError("classifier: d_model must be a positive multiple of n_heads");
  }
  if (kind == EncoderKind::bag && bigram_buckets == 0) throw ContractError("classifier: bigram_buckets must be positive");
}

nlohmann::json ClassifierConfig::to_json() const {
  return {{"kind", kind_name(kind)}, {"d_model", d_model},       {"n_layers", n_layers},
          {"n_heads", n_heads},      {"d_ff", d_ff},             {"max_len", max_len},
          {"bigram_buckets", bigram_buckets}, {"embedding_dim", embedding_dim}};
}

ClassifierConfig ClassifierConfig::from_json(const nlohmann::json& j) {
  ClassifierConfig c;
  if (j.contains("kind")) c.kind = parse_kind(j.at("kind").get<std::string>());
  c.d_model = j.value("d_model", c.d_model);
  c.n_layers = j.value("n_layers", c.n_layers);
  c.n_heads = j.value("n_heads", c.n_heads);
  c.d_ff = j.value("d_ff", c.d_ff);
  c.max_len = j.value("max_len", c.max_len);
  c.bigram_buckets = j.value("bigram_buckets", c.bigram_buckets);
  c.embedding_dim = j.value("embedding_dim", c.embedding_dim);
  return c;
}

FairnessClassifier::FairnessClassifier(const ClassifierConfig& config, text::Vocabulary vocab, std::uint64_t seed)
    : config_(config), vocab_(std::move(vocab)) {
  config_.validate();
  num::Rng rng(num::derive_seed(seed, {0xc1a5u}));
  std::normal_distribution<double> dist(0.0, 0.02);
  const std::size_t d = config_.d_model;
  if (config_.kind == EncoderKind::transformer) {
    encoder_ = std::make_shared<model::Transformer>(encoder_config(config_, vocab_.size()), rng());
  } else {
    std::vector<double> table((vocab_.size() + config_.bigram_buckets) * d);
    for (double& v : table) v = dist(rng);
    bag_table_ = Tensor::from_data({vocab_.size() + config_.bigram_buckets, d}, std::move(table), true);
  }
  std::vector<double> hw(2 * d);
  for (double& v : hw) v = dist(rng);
  head_w_ = Tensor::from_data({2, d}, std::move(hw), true);
  head_b_ = Tensor::zeros({2}, true);
  if (config_.embedding_dim != d) {
    num::Rng prng(num::derive_seed(seed, {0x9e0u}));
    std::normal_distribution<double> pd(0.0, 1.0 / std::sqrt(static_cast<double>(config_.embedding_dim)));
    projection_.resize(config_.embedding_dim * d);
    for (double& v : projection_) v = pd(prng);
  }
}

std::vector<std::int32_t> FairnessClassifier::features(const std::string& text) const {
  const auto seq = text::tokenize(text, vocab_, config_.max_len, false);
  if (config_.kind == EncoderKind::transformer) return seq.ids;
  std::vector<std::int32_t> out(seq.ids.begin(), seq.ids.end());
  const auto V = static_cast<std::uint64_t>(vocab_.size());
  for (std::size_t i = 0; i + 1 < seq.ids.size(); ++i) {
    const std::uint64_t h =
        num::splitmix64((static_cast<std::uint64_t>(seq.ids[i]) << 32) ^ static_cast<std::uint64_t>(seq.ids[i + 1]));
    out.push_back(static_cast<std::int32_t>(V + h % config_.bigram_buckets));
  }
  return out;
}

Tensor FairnessClassifier::pooled(std::span<const std::string> texts) const {
  std::vector<text::TokenSequence> seqs;
  seqs.reserve(texts.size());
  for (const auto& t : texts) seqs.push_back(text::TokenSequence::from_ids(features(t)));
  model::Batch batch = model::Batch::from(seqs);
  if (batch.seq == 0) {
    // Only empty texts: one all-pad column keeps shapes valid.
    batch.seq = 1;
    batch.ids.assign(batch.batch, text::kPad);
    batch.mask.assign(batch.batch, 0);
  }
  const Tensor h = config_.kind == EncoderKind::transformer ? encoder_->hidden(batch)
                                                            : num::embedding(bag_table_, batch.ids);
  return num::mean_pool(h, batch.batch, batch.seq, batch.mask);
}

Tensor FairnessClassifier::logits(std::span<const std::string> texts) const {
  return num::add_row(num::matmul_nt(pooled(texts), head_w_), head_b_);
}

std::vector<double> FairnessClassifier::p_neutral(std::span<const std::string> texts) const {
  if (texts.empty()) return {};
  num::NoGradGuard guard;
  const Tensor p = num::softmax(logits(texts), -1);
  std::vector<double> out(texts.size());
  for (std::size_t i = 0; i < texts.size(); ++i) out[i] = p.values()[i * 2 + kNeutral];
  return out;
}

double FairnessClassifier::p_neutral(const std::string& text) const {
  return p_neutral(std::span<const std::string>(&text, 1)).front();
}

Embedding FairnessClassifier::embed(const std::string& text) const {
  Embedding e;
  if (text::split_words(text).empty()) {
    e.values.assign(config_.embedding_dim, 0.0);
    e.degenerate = true;
    return e;
  }
  num::NoGradGuard guard;
  const Tensor p = pooled(std::span<const std::string>(&text, 1));
  const auto v = p.values();
  if (projection_.empty()) {
    e.values.assign(v.begin(), v.end());
  } else {
    const std::size_t d = config_.d_model;
    e.values.assign(config_.embedding_dim, 0.0);
    for (std::size_t i = 0; i < config_.embedding_dim; ++i) {
      for (std::size_t k = 0; k < d; ++k) e.values[i] += projection_[i * d + k] * v[k];
    }
  }
  return e;
}

std::vector<num::NamedTensor> FairnessClassifier::parameters() const {
  std::vector<num::NamedTensor> out;
  if (encoder_) {
    for (auto& p : encoder_->base_parameters()) out.push_back({"encoder." + p.name, p.tensor});
  } else {
    out.push_back({"bag.table", bag_table_});
  }
  out.push_back({"head.weight", head_w_});
  out.push_back({"head.bias", head_b_});
  return out;
}

void FairnessClassifier::save(const std::filesystem::path& path, const nlohmann::json& extra) const {
  nlohmann::json meta = extra;
  meta["kind"] = "fairness-classifier";
  meta["classifier"] = config_.to_json();
  meta["vocab"] = vocab_.to_json();
  num::save_checkpoint(path, parameters(), meta);
}

FairnessClassifier FairnessClassifier::load(const std::filesystem::path& path) {
  const num::Checkpoint ck = num::load_checkpoint(path);
  if (ck.metadata.value("kind", "") != "fairness-classifier") {
    throw IncompatibleError(path.string() + " is not a fairness classifier checkpoint");
  }
  FairnessClassifier clf(ClassifierConfig::from_json(ck.metadata.at("classifier")),
                         text::Vocabulary::from_json(ck.metadata.at("vocab")), 0);
  for (auto& p : clf.parameters()) {
    const Tensor& src = ck.get(p.name);
    if (src.shape() != p.tensor.shape()) {
      throw IncompatibleError("classifier tensor " + p.name + " has shape " + num::shape_to_string(src.shape()));
    }
    std::copy(src.values().begin(), src.values().end(), p.tensor.mutable_values().begin());
  }
  return clf;
}

nlohmann::ordered_json ClassifierMetrics::to_json() const {
  nlohmann::ordered_json j;
  j["loss"] = loss;
  j["accuracy"] = accuracy;
  j["precision"] = precision;
  j["recall"] = recall;
  j["f1"] = f1;
  j["training_loss"] = training_loss;
  return j;
}

ClassifierMetrics metrics_from_predictions(std::span<const int> predicted, std::span<const int> gold, double loss,
                                           double training_loss) {
  if (predicted.size() != gold.size()) throw DimensionError("metrics: prediction/label count mismatch");
  std::size_t tp = 0, fp = 0, fn = 0, correct = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    const bool pred_pos = predicted[i] == kBiased, gold_pos = gold[i] == kBiased;
    correct += predicted[i] == gold[i];
    tp += pred_pos && gold_pos;
    fp += pred_pos && !gold_pos;
    fn += !pred_pos && gold_pos;
  }
  ClassifierMetrics m;
  m.loss = loss;
  m.training_loss = training_loss;
  m.accuracy = gold.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(gold.size());
  m.precision = tp + fp == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
  m.recall = tp + fn == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fn);
  m.f1 = m.precision + m.recall == 0.0 ? 0.0 : 2.0 * m.precision * m.recall / (m.precision + m.recall);
  return m;
}

ClassifierTrainOptions classifier_reference_preset() {
  ClassifierTrainOptions o;
  o.learning_rate = 2e-5;
  return o;
}

TrainedClassifier train_fairness_classifier(std::span<const text::DatasetRecord> records, const ClassifierConfig& config,
                                            const ClassifierTrainOptions& options,
                                            const std::function<void(std::size_t, double)>& on_epoch) {
  std::vector<std::string> texts;
  std::vector<int> labels;
  for (const auto& r : records) {
    if (!r.label) continue;
    texts.push_back(record_text(r));
    labels.push_back(*r.label == text::Label::neutral ? kNeutral : kBiased);
  }
  const auto n_neutral = std::count(labels.begin(), labels.end(), kNeutral);
  if (n_neutral == 0 || n_neutral == static_cast<std::ptrdiff_t>(labels.size())) {
    throw DataError("classifier training needs both labels; found " + std::to_string(n_neutral) + " neutral and " +
                    std::to_string(labels.size() - static_cast<std::size_t>(n_neutral)) + " discriminatory records");
  }
  if (options.batch_size == 0) throw ContractError("classifier: batch_size must be positive");
  if (!(options.validation_fraction > 0.0 && options.validation_fraction < 1.0)) {
    throw ContractError("classifier: validation_fraction must lie in (0, 1)");
  }

  std::vector<std::size_t> order(texts.size());
  std::iota(order.begin(), order.end(), 0);
  num::Rng split_rng(num::derive_seed(options.seed, {0x5b17u}));
  std::shuffle(order.begin(), order.end(), split_rng);
  const auto n_val = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(options.validation_fraction * static_cast<double>(order.size()))));
  const std::vector<std::size_t> val(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::vector<std::size_t> train(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
  if (train.empty()) throw DataError("classifier training: too few records for a validation split");

  const text::Vocabulary vocab = text::Vocabulary::build(texts);
  FairnessClassifier clf(config, vocab, num::derive_seed(options.seed, {0x1417u}));
  std::vector<Tensor> params;
  for (auto& p : clf.parameters()) params.push_back(p.tensor);
  num::AdamW opt(params, {.learning_rate = options.learning_rate, .weight_decay = options.weight_decay});

  num::Rng rng(num::derive_seed(options.seed, {0xe90cu}));
  double last_epoch_loss = 0.0;
  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    std::shuffle(train.begin(), train.end(), rng);
    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t start = 0; start < train.size(); start += options.batch_size) {
      const std::size_t end = std::min(train.size(), start + options.batch_size);
      std::vector<std::string> bt;
      std::vector<std::int32_t> by;
      for (std::size_t i = start; i < end; ++i) {
        bt.push_back(texts[train[i]]);
        by.push_back(labels[train[i]]);
      }
      const Tensor loss = num::cross_entropy(clf.logits(bt), by);
      opt.zero_grad();
      num::backward(loss);
      opt.step();
      total += loss.item() * static_cast<double>(end - start);
      count += end - start;
    }
    last_epoch_loss = total / static_cast<double>(count);
    if (on_epoch) on_epoch(epoch, last_epoch_loss);
  }

  std::vector<std::string> vt;
  std::vector<std::int32_t> vy;
  std::vector<int> gold;
  for (std::size_t i : val) {
    vt.push_back(texts[i]);
    vy.push_back(labels[i]);
    gold.push_back(labels[i]);
  }
  double val_loss = 0.0;
  std::vector<int> predicted;
  {
    num::NoGradGuard guard;
    const Tensor lg = clf.logits(vt);
    val_loss = num::cross_entropy(lg, vy).item();
    for (std::size_t i = 0; i < vt.size(); ++i) {
      predicted.push_back(lg.values()[i * 2 + kNeutral] > lg.values()[i * 2 + kBiased] ? kNeutral : kBiased);
    }
  }
  ClassifierMetrics metrics = metrics_from_predictions(predicted, gold, val_loss, last_epoch_loss);
  for (auto& p : clf.parameters()) p.tensor.set_requires_grad(false);
  return {std::move(clf), metrics};
}

}  // namespace fairgrpo::scorer
